//! Forward prediction of the ideal fleet trajectory, self state estimation
//! and local planning, composed into one agent controller.

use std::sync::Arc;

use super::history::Knowledge;
use super::plan::{local_plan, PlanProblem};
use super::{
    initial_plan, AgentController, AgentSetup, AgentStats, Decision, FleetModel, FrameworkConfig,
    ReplanRecord, TickInput, TickOutput,
};
use crate::dynamics::DynamicsModel;
use crate::error::Result;
use crate::timeline::{Tick, Trajectory};

/// The carried-over initial condition of the forward prediction: the
/// predicted fleet at `tick`, and the slot actuation last evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub tick: u64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

impl Anchor {
    pub fn initial(x0: &[f64], z0: &[f64]) -> Self {
        Self {
            tick: 0,
            x: x0.to_vec(),
            z: z0.to_vec(),
            u: Vec::new(),
        }
    }

    /// One tick of the modeled closed loop, with the centralized controller
    /// evaluated at slot starts.
    fn advance(
        &mut self,
        model: &FleetModel,
        control_interval: u64,
        dx: &dyn Fn(usize) -> Option<Vec<f64>>,
        dz: &dyn Fn(usize) -> Option<Vec<f64>>,
    ) {
        let t = Tick(self.tick);
        if self.tick.is_multiple_of(control_interval) {
            self.u = model.controller.act(&self.x, &self.z, t);
        }
        self.x = model.step_states(&self.x, &self.u, t, dx);
        self.z = model.step_observations(&self.z, t, dz);
        self.tick += 1;
    }
}

/// Per-agent state and observation disturbances at one tick.
pub type FleetDisturbances = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Disturbances injected into one forward prediction.
#[derive(Debug, Clone, Default)]
pub struct PredictionInputs {
    pub agent: usize,
    /// Own measured disturbances for consecutive ticks from the anchor on.
    pub own_dx: Vec<Vec<f64>>,
    pub own_dz: Vec<Vec<f64>>,
    /// Every agent's disturbances at the anchor tick, present when the
    /// anchor sits at `τ − T^x − T^c − 1`.
    pub fleet_at_anchor: Option<FleetDisturbances>,
}

/// Predicted ideal fleet trajectory from the anchor tick on.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealPrediction {
    /// States and observations over `[anchor, end]`.
    pub x: Trajectory,
    pub z: Trajectory,
    /// Actuations over `[anchor, end)`.
    pub u: Trajectory,
}

/// Rolls the modeled closed loop from `anchor` to `end`. Disturbances are
/// zero except where `inputs` provides measured ones.
pub fn forward_predict(
    model: &FleetModel,
    control_interval: u64,
    anchor: &Anchor,
    inputs: &PredictionInputs,
    end: Tick,
) -> IdealPrediction {
    let l = model.layout;
    let a = anchor.tick;
    let n = (end.0 - a) as usize;
    let mut x = Trajectory::with_capacity(Tick(a), l.fleet_state_dim(), n + 1);
    let mut z = Trajectory::with_capacity(Tick(a), l.fleet_obs_dim(), n + 1);
    let mut u = Trajectory::with_capacity(Tick(a), l.fleet_input_dim(), n);
    let mut cur = anchor.clone();
    x.push(&cur.x);
    z.push(&cur.z);
    for t in a..end.0 {
        let k = (t - a) as usize;
        let at_anchor = if k == 0 {
            inputs.fleet_at_anchor.as_ref()
        } else {
            None
        };
        let dx = |j: usize| match at_anchor {
            Some((dx, _)) => Some(dx[j].clone()),
            None if j == inputs.agent => inputs.own_dx.get(k).cloned(),
            None => None,
        };
        let dz = |j: usize| match at_anchor {
            Some((_, dz)) => Some(dz[j].clone()),
            None if j == inputs.agent => inputs.own_dz.get(k).cloned(),
            None => None,
        };
        if t % control_interval == 0 {
            cur.u = model.controller.act(&cur.x, &cur.z, Tick(t));
        }
        u.push(&cur.u);
        cur.x = model.step_states(&cur.x, &cur.u, Tick(t), &dx);
        cur.z = model.step_observations(&cur.z, Tick(t), &dz);
        cur.tick += 1;
        x.push(&cur.x);
        z.push(&cur.z);
    }
    IdealPrediction { x, z, u }
}

/// Dead-reckons the own state from `x` at tick `from` through the committed
/// `actuations`, one per tick.
pub fn self_estimate(
    model: &dyn DynamicsModel,
    x: &[f64],
    from: Tick,
    actuations: &[Vec<f64>],
) -> Vec<f64> {
    let mut est = x.to_vec();
    for (k, u) in actuations.iter().enumerate() {
        est = model.step(&est, u, from + k as u64);
    }
    est
}

#[derive(Debug)]
pub struct OneVision {
    know: Knowledge,
    config: Arc<FrameworkConfig>,
    model: Arc<FleetModel>,
    anchor: Anchor,
    warm: Option<Vec<f64>>,
    initial_u: Trajectory,
    stats: AgentStats,
    records: Vec<ReplanRecord>,
}

impl OneVision {
    pub fn new(setup: AgentSetup) -> Result<Self> {
        let AgentSetup {
            agent,
            model,
            config,
            x0,
            z0,
        } = setup;
        let fleet_u = initial_plan(&model, &config.delays, &x0, &z0);
        let block = model.layout.input_block(agent);
        let mut initial_u = Trajectory::new(Tick(0), model.layout.input_dim);
        for (_, u) in fleet_u.iter() {
            initial_u.push(&u[block.clone()]);
        }
        let know = Knowledge::new(
            agent,
            model.clone(),
            config.delays,
            &x0,
            &z0,
            initial_u.clone(),
        );
        Ok(Self {
            know,
            anchor: Anchor::initial(&x0, &z0),
            config,
            model,
            warm: None,
            initial_u,
            stats: AgentStats::default(),
            records: Vec::new(),
        })
    }

    pub fn anchor(&self) -> &Anchor {
        &self.anchor
    }

    fn replan(&mut self, now: Tick) -> Decision {
        let i = self.know.agent();
        let d = self.config.delays;
        let ci = d.control_interval();
        let n = self.model.n_agents();
        let slot = now + d.act();
        let end = slot + self.config.horizon as u64 * ci;
        let tau_init = now.signed() - (d.obs() + d.comm() + 1) as i64;

        // carry the anchor forward with everyone's measured disturbances
        while (self.anchor.tick as i64) < tau_init {
            let t = self.anchor.tick;
            let dx: Vec<Vec<f64>> = (0..n).map(|j| self.know.state_disturbance(j, t)).collect();
            let dz: Vec<Vec<f64>> = (0..n)
                .map(|j| self.know.observation_disturbance(j, t))
                .collect();
            self.anchor
                .advance(&self.model, ci, &|j| Some(dx[j].clone()), &|j| {
                    Some(dz[j].clone())
                });
        }

        let a = self.anchor.tick;
        let own_end = now.signed() - d.obs() as i64;
        let mut inputs = PredictionInputs {
            agent: i,
            ..Default::default()
        };
        for t in a as i64..own_end {
            inputs.own_dx.push(self.know.state_disturbance(i, t as u64));
            inputs
                .own_dz
                .push(self.know.observation_disturbance(i, t as u64));
        }
        if tau_init >= 0 {
            let dx = (0..n).map(|j| self.know.state_disturbance(j, a)).collect();
            let dz = (0..n)
                .map(|j| self.know.observation_disturbance(j, a))
                .collect();
            inputs.fleet_at_anchor = Some((dx, dz));
        }
        let prediction = forward_predict(&self.model, ci, &self.anchor, &inputs, end);

        let own_model = self.model.dynamics[i].as_ref();
        let (from, x_meas) = match now.back(d.obs()) {
            Some(q) => (q, self.know.state(i, q.signed())),
            None => (Tick(0), self.know.initial_x(i).to_vec()),
        };
        let committed: Vec<Vec<f64>> = (from.0..slot.0)
            .map(|t| self.know.actuation(i, t))
            .collect();
        let estimate = self_estimate(own_model, &x_meas, from, &committed);

        let l = self.model.layout;
        let (sb, ib) = (l.state_block(i), l.input_block(i));
        let mut target_x = Vec::with_capacity((end - slot) as usize * l.state_dim);
        let mut target_u = Vec::with_capacity((end - slot) as usize * l.input_dim);
        for t in slot.0..end.0 {
            target_x.extend(&prediction.x.at(Tick(t))[sb.clone()]);
            target_u.extend(&prediction.u.at(Tick(t))[ib.clone()]);
        }
        let problem = PlanProblem {
            model: own_model,
            weights: &self.config.weights,
            start: slot,
            control_interval: ci,
            horizon: self.config.horizon,
            estimate: &estimate,
            target_x: &target_x,
            target_u: &target_u,
        };
        let result = local_plan(&problem, self.warm.as_deref(), &self.config.optimizer);
        let u = own_model.saturate(result.first(l.input_dim));

        self.stats.replans += 1;
        let converged = result.diagnostics.converged();
        if !converged {
            self.stats.unconverged += 1;
            log::debug!(
                "agent {i} at {now}: optimizer stopped with {:?} after {} iterations",
                result.diagnostics.termination,
                result.diagnostics.iterations
            );
        }
        if self.config.record_replans {
            self.records.push(ReplanRecord {
                now,
                slot,
                anchor_tick: Tick(a),
                anchor_x: self.anchor.x.clone(),
                estimate: estimate.clone(),
                predicted_x: target_x[..l.state_dim].to_vec(),
                predicted_u: target_u[..l.input_dim].to_vec(),
                u: u.clone(),
                plan_loss: result.loss,
                converged,
            });
        }
        let mut warm = result.plan[l.input_dim..].to_vec();
        warm.extend_from_slice(&result.plan[result.plan.len() - l.input_dim..]);
        self.warm = Some(warm);
        self.know.commit(slot, &u, ci);
        Decision { slot, u }
    }
}

impl AgentController for OneVision {
    fn agent(&self) -> usize {
        self.know.agent()
    }

    fn initial_actuation(&self) -> &Trajectory {
        &self.initial_u
    }

    fn step(&mut self, input: TickInput<'_>) -> Result<TickOutput> {
        self.know.set_now(input.now);
        for m in input.inbox {
            self.know.ingest(m)?;
        }
        if let Some(m) = input.measurement {
            self.know.record_measurement(m.tick, m.x, m.z)?;
        }
        let decision = self
            .config
            .delays
            .is_replan_tick(input.now)
            .then(|| self.replan(input.now));
        Ok(TickOutput {
            decision,
            message: self.know.outgoing(),
        })
    }

    fn stats(&self) -> AgentStats {
        AgentStats {
            causality_violations: self.know.violations(),
            ..self.stats
        }
    }

    fn replans(&self) -> &[ReplanRecord] {
        &self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{LeaderFollowerPid, PidGains};
    use crate::dynamics::{
        DoubleIntegrator, DoubleIntegratorParams, HoldObservation, ObservationModel,
    };
    use crate::timeline::DelaySpec;

    fn pid_model() -> FleetModel {
        let car: Arc<dyn DynamicsModel> =
            Arc::new(DoubleIntegrator::new(DoubleIntegratorParams::default()));
        let hold: Arc<dyn ObservationModel> = Arc::new(HoldObservation { dim: 1 });
        FleetModel::new(
            vec![car.clone(), car],
            vec![hold.clone(), hold],
            Arc::new(LeaderFollowerPid {
                gains: PidGains::default(),
            }),
        )
        .unwrap()
    }

    #[test]
    fn undisturbed_prediction_is_the_modeled_closed_loop() {
        let m = pid_model();
        let x0 = [0.0, 0.0, -1.5, 0.0];
        let z0 = [2.0, 0.0];
        let anchor = Anchor::initial(&x0, &z0);
        let p = forward_predict(&m, 5, &anchor, &PredictionInputs::default(), Tick(200));
        // independent loop written out with zero-order hold
        let car = DoubleIntegrator::new(DoubleIntegratorParams::default());
        let c = LeaderFollowerPid {
            gains: PidGains::default(),
        };
        use crate::controllers::CentralController;
        let mut x = x0.to_vec();
        let mut u = vec![];
        for t in 0..200u64 {
            if t % 5 == 0 {
                u = c.act(&x, &z0, Tick(t));
            }
            assert_eq!(p.u.at(Tick(t)), &u[..]);
            let a = car.step(&x[0..2], &u[0..1], Tick(t));
            let b = car.step(&x[2..4], &u[1..2], Tick(t));
            x = [a, b].concat();
        }
        assert_eq!(p.x.at(Tick(200)), &x[..]);
    }

    #[test]
    fn injected_own_disturbance_shifts_own_state() {
        let m = pid_model();
        let anchor = Anchor::initial(&[0.0, 2.0, -1.5, 2.0], &[2.0, 0.0]);
        let inputs = PredictionInputs {
            agent: 1,
            own_dx: vec![vec![0.0, 0.0], vec![0.1, 0.0]],
            own_dz: vec![vec![0.0], vec![0.0]],
            fleet_at_anchor: None,
        };
        let p = forward_predict(&m, 5, &anchor, &inputs, Tick(3));
        // leader untouched; follower moved by 0.1 at tick 2
        assert!((p.x.at(Tick(2))[0] - 0.04).abs() < 1e-15);
        assert!((p.x.at(Tick(2))[2] - (-1.5 + 0.04 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn self_estimate_exact_without_error() {
        let car = DoubleIntegrator::new(DoubleIntegratorParams::default());
        let us: Vec<Vec<f64>> = (0..2).map(|k| vec![0.5 * k as f64]).collect();
        let est = self_estimate(&car, &[1.0, 1.0], Tick(3), &us);
        let mut x = vec![1.0, 1.0];
        for (k, u) in us.iter().enumerate() {
            x = car.step(&x, u, Tick(3 + k as u64));
        }
        assert!(est.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn self_estimate_error_grows_linearly_under_constant_push() {
        // constant δv per tick: the velocity error after k ticks is k·δv and
        // the position error is dt·δv·k(k−1)/2
        let car = DoubleIntegrator::new(DoubleIntegratorParams::default());
        let dv = 0.01;
        let us = vec![vec![0.0]; 7];
        let mut truth = vec![0.0, 1.0];
        for (k, u) in us.iter().enumerate() {
            truth = car.step(&truth, u, Tick(k as u64));
            truth[1] += dv;
        }
        let est = self_estimate(&car, &[0.0, 1.0], Tick(0), &us);
        assert!(((truth[1] - est[1]) - 7.0 * dv).abs() < 1e-12);
        assert!(((truth[0] - est[0]) - 0.01 * dv * 21.0).abs() < 1e-12);
    }

    #[test]
    fn initial_slot_uses_centralized_law() {
        let m = pid_model();
        let d = DelaySpec::default_ticks();
        let plan = initial_plan(&m, &d, &[0.0, 0.0, -1.5, 0.0], &[2.0, 0.0]);
        assert_eq!(plan.len(), 5);
        assert_eq!(plan.at(Tick(0)), &[3.0, 0.0]);
    }
}
