use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::system::LtiTestSystem;
use crate::error::Result;
use crate::frameworks::{
    forward_predict, Anchor, FrameworkConfig, FrameworkKind, PredictionInputs, RegretWeights,
    ReplanRecord,
};
use crate::optim::{solve_dare, DareOptions, LbfgsOptions};
use crate::sim::{
    ideal_oracle, par_map, simulate, NoiseSpec, Realization, SimSettings, Simulation,
};
use crate::timeline::{DelaySpec, Tick};

/// One OneVision run on an LTI system with every replan recorded.
#[derive(Debug, Clone)]
pub struct LtiRun {
    pub delays: DelaySpec,
    pub weights: RegretWeights,
    pub horizon: usize,
    pub optimizer: LbfgsOptions,
    pub noise: NoiseSpec,
    pub n_ticks: usize,
    pub seed: u64,
    pub initial_offset: Option<Vec<f64>>,
    pub belief_offset: Option<Vec<f64>>,
}

impl LtiRun {
    pub fn new(sys: &LtiTestSystem, delays: DelaySpec, n_ticks: usize, seed: u64) -> Result<Self> {
        let l = sys.layout();
        Ok(Self {
            delays,
            weights: RegretWeights::scaled_identity(l.state_dim, l.input_dim, 1.0, 0.1)?,
            horizon: 20,
            optimizer: LbfgsOptions::default(),
            noise: NoiseSpec::NONE,
            n_ticks,
            seed,
            initial_offset: None,
            belief_offset: None,
        })
    }

    pub fn simulate(&self, sys: &LtiTestSystem) -> Result<Simulation> {
        let scenario = sys.scenario()?;
        let realization =
            Realization::sample(&scenario, self.noise, 100.0, self.n_ticks, self.seed);
        let settings = SimSettings {
            framework: FrameworkKind::OneVision,
            config: Arc::new(FrameworkConfig {
                delays: self.delays,
                weights: self.weights.clone(),
                horizon: self.horizon,
                optimizer: self.optimizer,
                record_replans: true,
            }),
            n_ticks: self.n_ticks,
            initial_offset: self.initial_offset.clone(),
            belief_offset: self.belief_offset.clone(),
        };
        simulate(&scenario, &settings, &realization)
    }
}

pub(super) fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn records(sim: &Simulation) -> impl Iterator<Item = &ReplanRecord> {
    sim.replans.iter().flatten()
}

/// Largest `‖x̃(τ_init|τ) − x*(τ_init)‖` over all agents and replans.
pub fn anchor_error(sim: &Simulation) -> f64 {
    records(sim)
        .map(|r| diff_norm(&r.anchor_x, sim.ideal.x.at(r.anchor_tick)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorReport {
    pub systems: usize,
    pub replans: usize,
    pub max_error: f64,
    /// Same check with the agents told a corrupted initial state.
    pub corrupted_error: f64,
}

fn random_delays<R: Rng + ?Sized>(rng: &mut R) -> DelaySpec {
    let ci = [1, 2, 5][rng.random_range(0..3)];
    DelaySpec::new(
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=10),
        ci,
    )
    .expect("positive delays")
}

/// Anchor exactness over `n_systems` random systems, delays and
/// disturbance realizations, with zero sensor noise.
pub fn verify_anchor_exactness(n_systems: usize, seed: u64) -> Result<AnchorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(n_systems);
    for k in 0..n_systems {
        let delays = random_delays(&mut rng);
        let sys = loop {
            let s = LtiTestSystem::random(&mut rng)?;
            if s.held_radius(delays.control_interval()) < 0.99 {
                break s;
            }
        };
        let mut run = LtiRun::new(&sys, delays, 300, seed.wrapping_add(k as u64))?;
        run.horizon = 10;
        run.optimizer.max_iters = 30;
        run.noise = NoiseSpec {
            sensor: 0.0,
            disturbance: 0.01,
            observation_disturbance: 0.01,
        };
        jobs.push((sys, run));
    }
    let results = par_map(&jobs, |(sys, run)| -> Result<(f64, usize)> {
        let sim = run.simulate(sys)?;
        Ok((anchor_error(&sim), records(&sim).count()))
    });
    let mut max_error = 0.0f64;
    let mut replans = 0;
    for r in results {
        let (e, n) = r?;
        max_error = max_error.max(e);
        replans += n;
    }

    let (sys, run) = &jobs[0];
    let mut bad = run.clone();
    bad.belief_offset = Some(vec![0.1; sys.layout().fleet_state_dim()]);
    let corrupted_error = anchor_error(&bad.simulate(sys)?);
    Ok(AnchorReport {
        systems: n_systems,
        replans,
        max_error,
        corrupted_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcLqrReport {
    pub horizon: usize,
    pub replans: usize,
    /// Largest `‖u_MPC − (ũ − K^L(x̄ − x̃))‖`.
    pub max_discrepancy: f64,
    /// Largest `‖x̄ − x̃‖`, showing the check is not vacuous.
    pub max_deviation: f64,
}

/// Weights under which a 50-tick horizon is effectively infinite for the
/// canonical double integrators.
pub fn mpc_lqr_weights() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_diagonal(&DVector::from_vec(vec![1e6, 1e6, 1e3, 1e3])),
        DMatrix::identity(2, 2),
    )
}

/// Compares every replanned actuation with the LQR law around the
/// predicted ideal trajectory, at one tick per control interval.
pub fn verify_mpc_lqr(
    sys: &LtiTestSystem,
    qx: &DMatrix<f64>,
    qu: &DMatrix<f64>,
    horizon: usize,
    seed: u64,
) -> Result<MpcLqrReport> {
    let mut run = LtiRun::new(sys, DelaySpec::new(3, 4, 5, 1)?, 30, seed)?;
    run.weights = RegretWeights::new(qx.clone(), qu.clone())?;
    run.horizon = horizon;
    run.noise = NoiseSpec {
        sensor: 0.0,
        disturbance: 1e-3,
        observation_disturbance: 0.0,
    };
    run.optimizer = LbfgsOptions {
        g_tol: 1e-11,
        x_tol: 0.0,
        max_iters: 400,
        memory: 30,
        ..Default::default()
    };
    let sim = run.simulate(sys)?;
    let gains: Vec<DMatrix<f64>> = sys
        .a
        .iter()
        .zip(&sys.b)
        .map(|(a, b)| solve_dare(a, b, qx, qu, &DareOptions::default()).map(|s| s.k))
        .collect::<Result<_>>()?;
    let mut report = MpcLqrReport {
        horizon,
        replans: 0,
        max_discrepancy: 0.0,
        max_deviation: 0.0,
    };
    for (agent, recs) in sim.replans.iter().enumerate() {
        for r in recs {
            let dev = DVector::from_iterator(
                r.estimate.len(),
                r.estimate.iter().zip(&r.predicted_x).map(|(a, b)| a - b),
            );
            let lqr = DVector::from_column_slice(&r.predicted_u) - &gains[agent] * &dev;
            report.max_discrepancy = report.max_discrepancy.max(diff_norm(&r.u, lqr.as_slice()));
            report.max_deviation = report.max_deviation.max(dev.norm());
            report.replans += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    /// Lookahead in ticks and the mean squared prediction error over all
    /// anchors.
    pub envelope: Vec<(usize, f64)>,
    /// Quadratic fit of the envelope, constant term first.
    pub coefficients: [f64; 3],
    pub r2: f64,
}

/// Error of undisturbed forward predictions started from exact anchors,
/// as a function of lookahead.
pub fn verify_prediction_growth(
    sys: &LtiTestSystem,
    lookahead: usize,
    seed: u64,
) -> Result<PredictionReport> {
    let scenario = sys.scenario()?;
    let n_ticks = 600;
    let noise = NoiseSpec {
        sensor: 0.0,
        disturbance: 1e-3,
        observation_disturbance: 0.0,
    };
    let realization = Realization::sample(&scenario, noise, 100.0, n_ticks, seed);
    let ci = 5;
    let ideal = ideal_oracle(&scenario, ci, &realization, n_ticks);
    let mut envelope: Vec<(usize, f64)> = (0..=lookahead).map(|k| (k, 0.0)).collect();
    let mut anchors = 0usize;
    for a in (0..n_ticks - lookahead).step_by(ci as usize) {
        anchors += 1;
        let t = Tick(a as u64);
        let anchor = Anchor {
            tick: t.0,
            x: ideal.x.at(t).to_vec(),
            z: ideal.z.at(t).to_vec(),
            u: ideal.u.at(t).to_vec(),
        };
        let p = forward_predict(
            &scenario.model,
            ci,
            &anchor,
            &PredictionInputs::default(),
            t + lookahead as u64,
        );
        for (k, e) in envelope.iter_mut() {
            let at = t + *k as u64;
            *e += diff_norm(p.x.at(at), ideal.x.at(at)).powi(2);
        }
    }
    for (_, e) in envelope.iter_mut() {
        *e /= anchors as f64;
    }
    let (coefficients, r2) = polyfit2(&envelope);
    Ok(PredictionReport {
        envelope,
        coefficients,
        r2,
    })
}

/// Least-squares `c₀ + c₁k + c₂k²` and its coefficient of determination.
fn polyfit2(points: &[(usize, f64)]) -> ([f64; 3], f64) {
    let n = points.len();
    let a = DMatrix::from_fn(n, 3, |i, j| (points[i].0 as f64).powi(j as i32));
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let c = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .expect("svd with both factors");
    let fit = &a * &c;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fit.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    ([c[0], c[1], c[2]], r2)
}
