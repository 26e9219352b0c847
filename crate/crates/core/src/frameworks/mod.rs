//! Distributed per-agent controllers synthesized from a centralized one.

mod baselines;
mod history;
mod message;
mod onevision;
mod plan;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

pub use baselines::{Baseline, BaselineKind};
pub use history::Knowledge;
pub use message::{Message, Segment, SegmentKind};
pub use onevision::{
    forward_predict, self_estimate, Anchor, FleetDisturbances, IdealPrediction, OneVision,
    PredictionInputs,
};
pub use plan::{local_plan, plan_loss, LocalPlan, PlanProblem};

use crate::controllers::CentralController;
use crate::dynamics::{DynamicsModel, ObservationModel};
use crate::error::{Error, Result};
use crate::fleet::FleetLayout;
use crate::optim::{LbfgsOptions, Real};
use crate::timeline::{DelaySpec, Tick, Trajectory};

/// Everything an agent knows about how the fleet evolves: modeled dynamics
/// `f̂_j`, `ĥ_j` for every agent and the shared centralized controller.
#[derive(Clone)]
pub struct FleetModel {
    pub layout: FleetLayout,
    pub dynamics: Vec<Arc<dyn DynamicsModel>>,
    pub observation: Vec<Arc<dyn ObservationModel>>,
    pub controller: Arc<dyn CentralController>,
}

impl fmt::Debug for FleetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FleetModel")
            .field("layout", &self.layout)
            .field("controller", &self.controller)
            .finish_non_exhaustive()
    }
}

impl FleetModel {
    pub fn new(
        dynamics: Vec<Arc<dyn DynamicsModel>>,
        observation: Vec<Arc<dyn ObservationModel>>,
        controller: Arc<dyn CentralController>,
    ) -> Result<Self> {
        let layout = controller.layout();
        let mismatch =
            |context: &'static str, expected: usize, got: usize| Error::DimensionMismatch {
                expected,
                got,
                context,
            };
        if dynamics.len() != layout.n_agents {
            return Err(mismatch(
                "number of dynamics models",
                layout.n_agents,
                dynamics.len(),
            ));
        }
        if observation.len() != layout.n_agents {
            return Err(mismatch(
                "number of observation models",
                layout.n_agents,
                observation.len(),
            ));
        }
        for m in &dynamics {
            if m.state_dim() != layout.state_dim {
                return Err(mismatch(
                    "model state dimension",
                    layout.state_dim,
                    m.state_dim(),
                ));
            }
            if m.input_dim() != layout.input_dim {
                return Err(mismatch(
                    "model input dimension",
                    layout.input_dim,
                    m.input_dim(),
                ));
            }
        }
        for h in &observation {
            if h.obs_dim() != layout.obs_dim {
                return Err(mismatch(
                    "observation dimension",
                    layout.obs_dim,
                    h.obs_dim(),
                ));
            }
        }
        Ok(Self {
            layout,
            dynamics,
            observation,
            controller,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.layout.n_agents
    }

    /// One modeled step of the whole fleet, plus optional per-agent
    /// disturbances.
    pub fn step_states(
        &self,
        x: &[f64],
        u: &[f64],
        t: Tick,
        dx: &dyn Fn(usize) -> Option<Vec<f64>>,
    ) -> Vec<f64> {
        let l = &self.layout;
        let mut out = Vec::with_capacity(x.len());
        for (j, m) in self.dynamics.iter().enumerate() {
            let next = m.step(&x[l.state_block(j)], &u[l.input_block(j)], t);
            match dx(j) {
                Some(d) => out.extend(m.perturb(&next, &d)),
                None => out.extend(next),
            }
        }
        out
    }

    pub fn step_observations(
        &self,
        z: &[f64],
        t: Tick,
        dz: &dyn Fn(usize) -> Option<Vec<f64>>,
    ) -> Vec<f64> {
        let l = &self.layout;
        let mut out = Vec::with_capacity(z.len());
        for (j, h) in self.observation.iter().enumerate() {
            let next = h.step(&z[l.obs_block(j)], t);
            match dz(j) {
                Some(d) => out.extend(next.iter().zip(&d).map(|(a, b)| a + b)),
                None => out.extend(next),
            }
        }
        out
    }
}

/// Positive semi-definite quadratic form with a diagonal fast path.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    m: DMatrix<f64>,
    diag: Option<Vec<f64>>,
}

impl QuadForm {
    fn new(m: DMatrix<f64>) -> Self {
        let is_diag = (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0));
        let diag = is_diag.then(|| m.diagonal().iter().copied().collect());
        Self { m, diag }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// `dᵀ Q d`.
    pub fn eval<S: Real>(&self, d: &[S]) -> S {
        let mut acc = S::zero();
        match &self.diag {
            Some(w) => {
                for (&di, &wi) in d.iter().zip(w) {
                    if wi != 0.0 {
                        acc += (di * di).scale(wi);
                    }
                }
            }
            None => {
                for (i, &di) in d.iter().enumerate() {
                    let mut row = S::zero();
                    for (j, &dj) in d.iter().enumerate() {
                        let q = self.m[(i, j)];
                        if q != 0.0 {
                            row += dj.scale(q);
                        }
                    }
                    acc += di * row;
                }
            }
        }
        acc
    }
}

/// Per-agent weights `Q_x ⪰ 0`, `Q_u ≻ 0` of the regret loss; the fleet
/// weight is block-diagonal with these blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretWeights {
    qx: QuadForm,
    qu: QuadForm,
}

const WEIGHT_TOL: f64 = 1e-12;

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidWeights(format!(
            "{name} is {:?}, not square",
            m.shape()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidWeights(format!(
            "{name} has non-finite entries"
        )));
    }
    let asym = (m - m.transpose()).amax();
    if asym > WEIGHT_TOL * (1.0 + m.amax()) {
        return Err(Error::InvalidWeights(format!(
            "{name} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

impl RegretWeights {
    pub fn new(qx: DMatrix<f64>, qu: DMatrix<f64>) -> Result<Self> {
        check_symmetric("Q_x", &qx)?;
        check_symmetric("Q_u", &qu)?;
        let lx = min_eigenvalue(&qx);
        if lx < -WEIGHT_TOL * (1.0 + qx.amax()) {
            return Err(Error::InvalidWeights(format!(
                "Q_x has negative eigenvalue {lx:e}"
            )));
        }
        let lu = min_eigenvalue(&qu);
        if lu <= 0.0 {
            return Err(Error::InvalidWeights(format!(
                "Q_u must be positive definite, min eigenvalue {lu:e}"
            )));
        }
        Ok(Self {
            qx: QuadForm::new(qx),
            qu: QuadForm::new(qu),
        })
    }

    /// `Q_x = qx·I`, `Q_u = qu·I`.
    pub fn scaled_identity(state_dim: usize, input_dim: usize, qx: f64, qu: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(state_dim, state_dim) * qx,
            DMatrix::identity(input_dim, input_dim) * qu,
        )
    }

    pub fn qx(&self) -> &QuadForm {
        &self.qx
    }

    pub fn qu(&self) -> &QuadForm {
        &self.qu
    }

    /// Regret of one agent at one tick, `‖x ⊖ x*‖²_Qx + ‖u − u*‖²_Qu`.
    pub fn agent_loss(
        &self,
        model: &dyn DynamicsModel,
        x: &[f64],
        x_ideal: &[f64],
        u: &[f64],
        u_ideal: &[f64],
    ) -> f64 {
        let dx = model.difference(x, x_ideal);
        let du: Vec<f64> = u.iter().zip(u_ideal).map(|(a, b)| a - b).collect();
        self.qx.eval(&dx) + self.qu.eval(&du)
    }

    /// Fleet regret at one tick.
    pub fn fleet_loss(
        &self,
        model: &FleetModel,
        x: &[f64],
        x_ideal: &[f64],
        u: &[f64],
        u_ideal: &[f64],
    ) -> f64 {
        let l = &model.layout;
        (0..l.n_agents)
            .map(|j| {
                let (sb, ib) = (l.state_block(j), l.input_block(j));
                self.agent_loss(
                    model.dynamics[j].as_ref(),
                    &x[sb.clone()],
                    &x_ideal[sb],
                    &u[ib.clone()],
                    &u_ideal[ib],
                )
            })
            .sum()
    }
}

/// Settings shared by all agents of a run.
#[derive(Debug, Clone)]
pub struct FrameworkConfig {
    pub delays: DelaySpec,
    pub weights: RegretWeights,
    /// Planning horizon in control intervals.
    pub horizon: usize,
    pub optimizer: LbfgsOptions,
    /// Keep a [`ReplanRecord`] for every replan.
    pub record_replans: bool,
}

/// What every agent is given before the run starts.
#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub agent: usize,
    pub model: Arc<FleetModel>,
    pub config: Arc<FrameworkConfig>,
    /// Initial fleet condition, known to every agent.
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
}

/// First slot that is decided by a replan; earlier slots come from the
/// initial plan.
pub fn first_replanned_slot(delays: &DelaySpec) -> u64 {
    let ci = delays.control_interval();
    delays.act().max(ci).div_ceil(ci) * ci
}

/// Fleet actuation for ticks before the first replanned slot: the modeled
/// centralized loop rolled from the initial condition without disturbance.
/// Every agent computes the same values.
pub fn initial_plan(model: &FleetModel, delays: &DelaySpec, x0: &[f64], z0: &[f64]) -> Trajectory {
    let ci = delays.control_interval();
    let end = first_replanned_slot(delays);
    let mut out = Trajectory::with_capacity(Tick(0), model.layout.fleet_input_dim(), end as usize);
    let (mut x, mut z) = (x0.to_vec(), z0.to_vec());
    let mut u = Vec::new();
    for t in 0..end {
        if t % ci == 0 {
            u = model.controller.act(&x, &z, Tick(t));
        }
        out.push(&u);
        x = model.step_states(&x, &u, Tick(t), &|_| None);
        z = model.step_observations(&z, Tick(t), &|_| None);
    }
    out
}

/// Own measurement delivered at `now`, taken at `tick = now − T^x`.
#[derive(Debug, Clone, Copy)]
pub struct Measurement<'a> {
    pub tick: Tick,
    pub x: &'a [f64],
    pub z: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct TickInput<'a> {
    pub now: Tick,
    pub measurement: Option<Measurement<'a>>,
    /// Messages whose delivery tick is `now`.
    pub inbox: &'a [Message],
}

/// Actuation to hold over `[slot, slot + control_interval)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub slot: Tick,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TickOutput {
    pub decision: Option<Decision>,
    pub message: Message,
}

/// Per-replan internals kept for verification.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplanRecord {
    pub now: Tick,
    pub slot: Tick,
    /// Tick and fleet state of the prediction anchor.
    pub anchor_tick: Tick,
    pub anchor_x: Vec<f64>,
    /// Self estimate at the slot start.
    pub estimate: Vec<f64>,
    /// Predicted ideal own state and actuation at the slot start.
    pub predicted_x: Vec<f64>,
    pub predicted_u: Vec<f64>,
    pub u: Vec<f64>,
    pub plan_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub replans: u64,
    /// Replans where the optimizer stopped before meeting its tolerance.
    pub unconverged: u64,
    pub causality_violations: u64,
}

/// `π_d,i`: one agent's distributed controller, stepped once per tick.
pub trait AgentController: Send {
    fn agent(&self) -> usize;
    /// Own actuation for ticks before the first replanned slot.
    fn initial_actuation(&self) -> &Trajectory;
    fn step(&mut self, input: TickInput<'_>) -> Result<TickOutput>;
    fn stats(&self) -> AgentStats;
    fn replans(&self) -> &[ReplanRecord] {
        &[]
    }
}

/// Registered distributed-controller frameworks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameworkKind {
    OneVision,
    Naive,
    Local,
    ConstU,
}

impl FrameworkKind {
    pub const ALL: [FrameworkKind; 4] = [Self::OneVision, Self::Naive, Self::Local, Self::ConstU];

    pub fn id(self) -> &'static str {
        match self {
            Self::OneVision => "onevision",
            Self::Naive => "naive",
            Self::Local => "local",
            Self::ConstU => "constu",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| Error::UnknownId {
                kind: "framework",
                id: id.to_string(),
                registered: Self::ALL
                    .iter()
                    .map(|k| k.id())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    pub fn build(self, setup: AgentSetup) -> Result<Box<dyn AgentController>> {
        Ok(match self {
            Self::OneVision => Box::new(OneVision::new(setup)?),
            Self::Naive => Box::new(Baseline::new(BaselineKind::Naive, setup)?),
            Self::Local => Box::new(Baseline::new(BaselineKind::Local, setup)?),
            Self::ConstU => Box::new(Baseline::new(BaselineKind::ConstU, setup)?),
        })
    }
}

impl fmt::Display for FrameworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}
