use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::controllers::LinearFeedback;
use crate::dynamics::{Drift, DynamicsModel, LtiDynamics, LtiObservation, ObservationModel};
use crate::error::{Error, Result};
use crate::fleet::FleetLayout;
use crate::frameworks::FleetModel;
use crate::optim::{solve_dare, spectral_radius, DareOptions};
use crate::sim::{ModelObservations, Scenario};

const EIG_TOL: f64 = 1e-9;

/// A fleet of LTI agents under a linear centralized law.
#[derive(Debug, Clone)]
pub struct LtiTestSystem {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub kx: DMatrix<f64>,
    pub kz: DMatrix<f64>,
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
    /// Drift of the true dynamics per agent; the agents' models have none.
    pub truth_drift: Vec<Drift>,
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|m| m.nrows()).sum();
    let cols = blocks.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for m in blocks {
        out.view_mut((r, c), m.shape()).copy_from(m);
        r += m.nrows();
        c += m.ncols();
    }
    out
}

/// Per-agent double integrator in the plane: state (pₓ, p_y, vₓ, v_y).
pub fn planar_double_integrator(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let mut a = DMatrix::identity(4, 4);
    a.view_mut((0, 2), (2, 2)).copy_from(&(&i2 * dt));
    let mut b = DMatrix::zeros(4, 2);
    b.view_mut((0, 0), (2, 2))
        .copy_from(&(&i2 * (dt * dt / 2.0)));
    b.view_mut((2, 0), (2, 2)).copy_from(&(&i2 * dt));
    (a, b)
}

fn random_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    scale: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random square matrix scaled into spectral radius `[0.5, 1]`.
fn random_marginal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    let rho = spectral_radius(&m);
    let target = rng.random_range(0.5..1.0);
    if rho > 0.0 {
        m * (target / rho)
    } else {
        m
    }
}

impl LtiTestSystem {
    pub fn n_agents(&self) -> usize {
        self.a.len()
    }

    pub fn layout(&self) -> FleetLayout {
        FleetLayout::new(
            self.n_agents(),
            self.a[0].nrows(),
            self.c[0].nrows(),
            self.b[0].ncols(),
        )
    }

    pub fn fleet_a(&self) -> DMatrix<f64> {
        block_diag(&self.a)
    }

    pub fn fleet_b(&self) -> DMatrix<f64> {
        block_diag(&self.b)
    }

    /// `ρ(Aᵢ) ≤ 1`, `ρ(Cᵢ) ≤ 1` and `ρ(A − B K_x) < 1`.
    pub fn check(&self) -> Result<()> {
        for (i, (a, c)) in self.a.iter().zip(&self.c).enumerate() {
            for (name, m) in [("A", a), ("C", c)] {
                let rho = spectral_radius(m);
                if rho > 1.0 + EIG_TOL {
                    return Err(Error::InvalidModel(format!(
                        "agent {i}: spectral radius of {name} is {rho}"
                    )));
                }
            }
        }
        let closed = self.fleet_a() - self.fleet_b() * &self.kx;
        let rho = spectral_radius(&closed);
        if rho >= 1.0 - EIG_TOL {
            return Err(Error::InvalidModel(format!(
                "A − B K_x has spectral radius {rho}"
            )));
        }
        Ok(())
    }

    /// Spectral radius of the closed loop when the law is evaluated every
    /// `control_interval` ticks and held in between.
    pub fn held_radius(&self, control_interval: u64) -> f64 {
        let a = self.fleet_a();
        let bk = self.fleet_b() * &self.kx;
        let n = a.nrows();
        let mut power = DMatrix::<f64>::identity(n, n);
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for _ in 0..control_interval {
            acc += &power * &bk;
            power = &a * power;
        }
        spectral_radius(&(power - acc))
    }

    pub fn controller(&self) -> Result<LinearFeedback> {
        LinearFeedback::new(self.layout(), self.kx.clone(), self.kz.clone())
    }

    /// Exact models for the agents; the truth adds `truth_drift`.
    pub fn scenario(&self) -> Result<Scenario> {
        self.check()?;
        let l = self.layout();
        let mut truth: Vec<Arc<dyn DynamicsModel>> = Vec::new();
        let mut modeled: Vec<Arc<dyn DynamicsModel>> = Vec::new();
        let mut obs: Vec<Arc<dyn ObservationModel>> = Vec::new();
        for i in 0..self.n_agents() {
            let drift = self.truth_drift.get(i).cloned().unwrap_or_default();
            truth.push(Arc::new(LtiDynamics::new(
                self.a[i].clone(),
                self.b[i].clone(),
                drift,
            )?));
            modeled.push(Arc::new(LtiDynamics::new(
                self.a[i].clone(),
                self.b[i].clone(),
                Drift::Zero,
            )?));
            obs.push(Arc::new(LtiObservation::new(
                self.c[i].clone(),
                Drift::Zero,
            )?));
        }
        let model = FleetModel::new(modeled, obs.clone(), Arc::new(self.controller()?))?;
        Ok(Scenario {
            name: "lti".into(),
            truth,
            model: Arc::new(model),
            observations: Arc::new(ModelObservations { models: obs }),
            x0: self.x0.clone(),
            z0: self.z0.clone(),
            disturbed_states: (0..l.state_dim).collect(),
            disturbed_observations: (0..l.obs_dim).collect(),
        })
    }

    /// Two planar double integrators at `dt = 0.01` holding reference
    /// positions carried in their observations. `K_x` is the LQR gain of
    /// the centralized plant with a penalty on the agents' relative
    /// position; `K_z = K_x M` with `M` lifting a reference position to a
    /// resting state.
    pub fn canonical() -> Self {
        let (a, b) = planar_double_integrator(0.01);
        let fa = block_diag(&[a.clone(), a.clone()]);
        let fb = block_diag(&[b.clone(), b.clone()]);
        let mut q = DMatrix::<f64>::identity(8, 8);
        // coupling: ‖p₁ − p₂‖² with weight 0.25
        for k in 0..2 {
            q[(k, k)] += 0.25;
            q[(k + 4, k + 4)] += 0.25;
            q[(k, k + 4)] -= 0.25;
            q[(k + 4, k)] -= 0.25;
        }
        let r = DMatrix::<f64>::identity(4, 4) * 0.1;
        let kx = solve_dare(&fa, &fb, &q, &r, &DareOptions::default())
            .expect("double integrator fleet is stabilizable")
            .k;
        let mut m = DMatrix::<f64>::zeros(8, 4);
        for k in 0..2 {
            m[(k, k)] = 1.0;
            m[(k + 4, k + 2)] = 1.0;
        }
        let kz = &kx * m;
        Self {
            a: vec![a.clone(), a],
            b: vec![b.clone(), b],
            c: vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
            kx,
            kz,
            x0: vec![0.0; 8],
            z0: vec![1.0, 0.5, -1.0, 0.5],
            truth_drift: Vec::new(),
        }
    }

    /// Random fleet of 1 to 3 agents with `ρ(A) ∈ [0.5, 1]`, `ρ(C) ∈
    /// [0.5, 1]` and `K_x` from a DARE on the fleet, so the closed loop is
    /// stable.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let n_agents = rng.random_range(1..=3);
        let nx = rng.random_range(1..=4);
        let nu = rng.random_range(1..=2);
        let nz = rng.random_range(1..=2);
        let a: Vec<_> = (0..n_agents).map(|_| random_marginal(rng, nx)).collect();
        let b: Vec<_> = (0..n_agents)
            .map(|_| random_matrix(rng, nx, nu, 1.0))
            .collect();
        let c: Vec<_> = (0..n_agents).map(|_| random_marginal(rng, nz)).collect();
        let fa = block_diag(&a);
        let fb = block_diag(&b);
        let (n, m) = (fa.nrows(), fb.ncols());
        let kx = solve_dare(
            &fa,
            &fb,
            &DMatrix::identity(n, n),
            &DMatrix::identity(m, m),
            &DareOptions::default(),
        )?
        .k;
        let kz = random_matrix(rng, m, n_agents * nz, 0.5);
        let x0 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z0 = (0..n_agents * nz)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let sys = Self {
            a,
            b,
            c,
            kx,
            kz,
            x0,
            z0,
            truth_drift: Vec::new(),
        };
        sys.check()?;
        Ok(sys)
    }
}
