//! Local regret-minimizing planning over slot-held actuations.

use super::RegretWeights;
use crate::dynamics::{DynamicsModel, ModelScalar};
use crate::optim::{lbfgs_minimize, AutoDiff, ChunkDual, Diagnostics, LbfgsOptions, Program};
use crate::timeline::Tick;

/// Track the predicted ideal own trajectory from the self estimate.
///
/// The decision is one actuation per control slot, held for
/// `control_interval` ticks; the loss sums over the ticks of all slots.
#[derive(Debug, Clone, Copy)]
pub struct PlanProblem<'a> {
    pub model: &'a dyn DynamicsModel,
    pub weights: &'a RegretWeights,
    /// First tick of the plan (the slot being decided).
    pub start: Tick,
    pub control_interval: u64,
    pub horizon: usize,
    /// State estimate at `start`.
    pub estimate: &'a [f64],
    /// Predicted ideal own states and actuations, one row per tick of
    /// `[start, start + horizon·control_interval)`.
    pub target_x: &'a [f64],
    pub target_u: &'a [f64],
}

impl PlanProblem<'_> {
    fn n_ticks(&self) -> usize {
        self.horizon * self.control_interval as usize
    }

    fn rollout<S: ModelScalar>(&self, plan: &[S]) -> S {
        let nx = self.model.state_dim();
        let nu = self.model.input_dim();
        let ci = self.control_interval as usize;
        let mut x: Vec<S> = self.estimate.iter().map(|&v| S::cst(v)).collect();
        let mut total = S::zero();
        let mut target = vec![S::zero(); nx];
        let mut du = vec![S::zero(); nu];
        for k in 0..self.n_ticks() {
            let u = &plan[(k / ci) * nu..(k / ci + 1) * nu];
            for (t, &v) in target.iter_mut().zip(&self.target_x[k * nx..(k + 1) * nx]) {
                *t = S::cst(v);
            }
            let dx = S::model_difference(self.model, &x, &target);
            total += self.weights.qx().eval(&dx);
            for ((d, &a), &b) in du
                .iter_mut()
                .zip(u)
                .zip(&self.target_u[k * nu..(k + 1) * nu])
            {
                *d = a.shift(-b);
            }
            total += self.weights.qu().eval(&du);
            if k + 1 < self.n_ticks() {
                x = S::model_step(self.model, &x, u, self.start + k as u64);
            }
        }
        total
    }

    /// The "copy ũ" plan: the predicted ideal actuation of every slot.
    pub fn copy_plan(&self) -> Vec<f64> {
        let nu = self.model.input_dim();
        let ci = self.control_interval as usize;
        (0..self.horizon)
            .flat_map(|k| {
                self.target_u[k * ci * nu..(k * ci + 1) * nu]
                    .iter()
                    .copied()
            })
            .collect()
    }
}

impl Program for PlanProblem<'_> {
    fn dim(&self) -> usize {
        self.horizon * self.model.input_dim()
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.rollout(x)
    }
    fn evaluate_dual(&self, x: &[ChunkDual]) -> ChunkDual {
        self.rollout(x)
    }
}

/// Loss of a candidate plan.
pub fn plan_loss(problem: &PlanProblem<'_>, plan: &[f64]) -> f64 {
    problem.rollout(plan)
}

#[derive(Debug, Clone)]
pub struct LocalPlan {
    /// `horizon · n_u` slot actuations.
    pub plan: Vec<f64>,
    pub loss: f64,
    pub diagnostics: Diagnostics,
}

impl LocalPlan {
    pub fn first(&self, input_dim: usize) -> &[f64] {
        &self.plan[..input_dim]
    }
}

/// Starts from the better of the warm start and the copy plan; the
/// optimizer never increases the loss, so the result dominates both.
pub fn local_plan(
    problem: &PlanProblem<'_>,
    warm_start: Option<&[f64]>,
    options: &LbfgsOptions,
) -> LocalPlan {
    assert!(
        problem.horizon >= 1,
        "planning horizon must be at least one slot"
    );
    let copy = problem.copy_plan();
    let mut start = copy;
    let mut best = plan_loss(problem, &start);
    if let Some(w) = warm_start {
        let lw = plan_loss(problem, w);
        if lw < best {
            best = lw;
            start = w.to_vec();
        }
    }
    let min = lbfgs_minimize(&AutoDiff(problem), &start, options);
    if min.loss.is_finite() && min.loss <= best {
        LocalPlan {
            plan: min.x,
            loss: min.loss,
            diagnostics: min.diagnostics,
        }
    } else {
        LocalPlan {
            plan: start,
            loss: best,
            diagnostics: min.diagnostics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Bicycle, BicycleParams, Drift, LtiDynamics};
    use crate::optim::{central_difference, forward_grad};
    use nalgebra::DMatrix;

    fn scalar_integrator() -> LtiDynamics {
        LtiDynamics::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            Drift::Zero,
        )
        .unwrap()
    }

    #[test]
    fn zero_deviation_keeps_prediction() {
        let m = scalar_integrator();
        let w = RegretWeights::scaled_identity(1, 1, 1.0, 1.0).unwrap();
        // target: x̃ = 0, ũ = 0
        let zeros = vec![0.0; 10];
        let p = PlanProblem {
            model: &m,
            weights: &w,
            start: Tick(0),
            control_interval: 1,
            horizon: 10,
            estimate: &[0.0],
            target_x: &zeros,
            target_u: &zeros,
        };
        let r = local_plan(&p, None, &LbfgsOptions::default());
        assert_eq!(r.loss, 0.0);
        assert!(r.plan.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_lqr_first_correction() {
        // x' = x + u, unit weights: infinite-horizon gain (√5 − 1)/2
        let m = scalar_integrator();
        let w = RegretWeights::scaled_identity(1, 1, 1.0, 1.0).unwrap();
        let h = 40;
        let zeros = vec![0.0; h];
        let p = PlanProblem {
            model: &m,
            weights: &w,
            start: Tick(0),
            control_interval: 1,
            horizon: h,
            estimate: &[1.0],
            target_x: &zeros,
            target_u: &zeros,
        };
        let r = local_plan(&p, None, &LbfgsOptions::default());
        let k = 2.0 / (1.0 + 5f64.sqrt());
        assert!((r.plan[0] + k).abs() < 1e-6, "{}", r.plan[0]);
    }

    #[test]
    fn nonlinear_plan_dominates_copy() {
        let car = Bicycle::new(BicycleParams::default());
        let w = RegretWeights::scaled_identity(5, 2, 1.0, 0.1).unwrap();
        let h = 20;
        let ci = 5;
        let mut tx = Vec::new();
        let mut x = vec![0.0, 0.0, 0.0, 1.0, 0.0];
        for t in 0..h * ci {
            tx.extend(&x);
            x = car.step(&x, &[0.5, 0.2], Tick(t as u64));
        }
        let tu: Vec<f64> = (0..h * ci).flat_map(|_| [0.5, 0.2]).collect();
        let p = PlanProblem {
            model: &car,
            weights: &w,
            start: Tick(0),
            control_interval: ci as u64,
            horizon: h,
            estimate: &[0.1, -0.2, 0.1, 0.9, 0.0],
            target_x: &tx,
            target_u: &tu,
        };
        let copy = plan_loss(&p, &p.copy_plan());
        let r = local_plan(&p, None, &LbfgsOptions::default());
        assert!(r.loss < copy, "{} vs {copy}", r.loss);

        let mut g = vec![0.0; p.dim()];
        forward_grad(&p, &r.plan, &mut g);
        let fd = central_difference(&p, &r.plan, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}
