//! System and observation dynamics, disturbances and noise.

mod lti;
mod noise;
mod vehicle;

use std::fmt::Debug;

pub use lti::{Drift, LtiDynamics, LtiObservation};
pub use noise::{sample_noise, DisturbanceRealization};
pub use vehicle::{wrap_angle, Bicycle, BicycleParams, DoubleIntegrator, DoubleIntegratorParams};

use crate::optim::{ChunkDual, Real};
use crate::timeline::Tick;

/// Per-agent discrete-time dynamics `x(t+1) = f(x(t), u(t), t)`.
///
/// Object-safe; models are usually written once against [`GenericDynamics`]
/// and pick this up through the blanket impl.
pub trait DynamicsModel: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64], t: Tick) -> Vec<f64>;
    fn step_dual(&self, x: &[ChunkDual], u: &[ChunkDual], t: Tick) -> Vec<ChunkDual>;
    /// `a ⊖ b`; plain subtraction except for angular components.
    fn difference(&self, a: &[f64], b: &[f64]) -> Vec<f64>;
    fn difference_dual(&self, a: &[ChunkDual], b: &[ChunkDual]) -> Vec<ChunkDual>;
    /// `x ⊕ dx`, the inverse of [`difference`](Self::difference).
    fn perturb(&self, x: &[f64], dx: &[f64]) -> Vec<f64>;
    /// Clamps an actuation to the model's admissible box.
    fn saturate(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

/// Dynamics written once for any scalar type.
pub trait GenericDynamics: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step_with<S: Real>(&self, x: &[S], u: &[S], t: Tick) -> Vec<S>;
    fn difference_with<S: Real>(&self, a: &[S], b: &[S]) -> Vec<S> {
        a.iter().zip(b).map(|(&p, &q)| p - q).collect()
    }
    fn perturb(&self, x: &[f64], dx: &[f64]) -> Vec<f64> {
        x.iter().zip(dx).map(|(a, b)| a + b).collect()
    }
    fn saturate(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

impl<M: GenericDynamics> DynamicsModel for M {
    fn state_dim(&self) -> usize {
        GenericDynamics::state_dim(self)
    }
    fn input_dim(&self) -> usize {
        GenericDynamics::input_dim(self)
    }
    fn step(&self, x: &[f64], u: &[f64], t: Tick) -> Vec<f64> {
        self.step_with(x, u, t)
    }
    fn step_dual(&self, x: &[ChunkDual], u: &[ChunkDual], t: Tick) -> Vec<ChunkDual> {
        self.step_with(x, u, t)
    }
    fn difference(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.difference_with(a, b)
    }
    fn difference_dual(&self, a: &[ChunkDual], b: &[ChunkDual]) -> Vec<ChunkDual> {
        self.difference_with(a, b)
    }
    fn perturb(&self, x: &[f64], dx: &[f64]) -> Vec<f64> {
        GenericDynamics::perturb(self, x, dx)
    }
    fn saturate(&self, u: &[f64]) -> Vec<f64> {
        GenericDynamics::saturate(self, u)
    }
}

/// Scalars a [`DynamicsModel`] trait object can be evaluated on.
pub trait ModelScalar: Real {
    fn model_step(model: &dyn DynamicsModel, x: &[Self], u: &[Self], t: Tick) -> Vec<Self>;
    fn model_difference(model: &dyn DynamicsModel, a: &[Self], b: &[Self]) -> Vec<Self>;
}

impl ModelScalar for f64 {
    fn model_step(model: &dyn DynamicsModel, x: &[Self], u: &[Self], t: Tick) -> Vec<Self> {
        model.step(x, u, t)
    }
    fn model_difference(model: &dyn DynamicsModel, a: &[Self], b: &[Self]) -> Vec<Self> {
        model.difference(a, b)
    }
}

impl ModelScalar for ChunkDual {
    fn model_step(model: &dyn DynamicsModel, x: &[Self], u: &[Self], t: Tick) -> Vec<Self> {
        model.step_dual(x, u, t)
    }
    fn model_difference(model: &dyn DynamicsModel, a: &[Self], b: &[Self]) -> Vec<Self> {
        model.difference_dual(a, b)
    }
}

/// Per-agent observation dynamics `z(t+1) = h(z(t), t)`; observations are
/// state-independent quantities.
pub trait ObservationModel: Send + Sync + Debug {
    fn obs_dim(&self) -> usize;
    fn step(&self, z: &[f64], t: Tick) -> Vec<f64>;
}

/// Observations expected to stay constant; every change is a disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HoldObservation {
    pub dim: usize,
}

impl ObservationModel for HoldObservation {
    fn obs_dim(&self) -> usize {
        self.dim
    }
    fn step(&self, z: &[f64], _t: Tick) -> Vec<f64> {
        z.to_vec()
    }
}

/// True dynamics: the model plus the realized state disturbance.
pub fn step_true(
    model: &dyn DynamicsModel,
    dist: &DisturbanceRealization,
    agent: usize,
    x: &[f64],
    u: &[f64],
    t: Tick,
) -> Vec<f64> {
    let dx = dist.dx[agent]
        .get(t)
        .unwrap_or_else(|| panic!("tick {t} outside disturbance realization"));
    model.perturb(&model.step(x, u, t), dx)
}

/// `δx(t) = x(t+1) ⊖ f̂(x(t), u(t), t)`.
pub fn measure_disturbance(
    model: &dyn DynamicsModel,
    x_next: &[f64],
    x: &[f64],
    u: &[f64],
    t: Tick,
) -> Vec<f64> {
    model.difference(x_next, &model.step(x, u, t))
}

/// `δz(t) = z(t+1) − ĥ(z(t), t)`.
pub fn measure_observation_disturbance(
    model: &dyn ObservationModel,
    z_next: &[f64],
    z: &[f64],
    t: Tick,
) -> Vec<f64> {
    z_next
        .iter()
        .zip(model.step(z, t))
        .map(|(a, b)| a - b)
        .collect()
}
