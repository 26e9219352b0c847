//! Linear time-invariant dynamics with an affine time-varying drift.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{GenericDynamics, ObservationModel};
use crate::error::{Error, Result};
use crate::optim::{spectral_radius, Real};
use crate::timeline::Tick;

const EIG_TOL: f64 = 1e-9;

/// Time-dependent affine term.
#[derive(Clone, Default)]
pub enum Drift {
    #[default]
    Zero,
    Constant(Vec<f64>),
    Schedule(Arc<dyn Fn(Tick) -> Vec<f64> + Send + Sync>),
}

impl Drift {
    fn add_to<S: Real>(&self, out: &mut [S], t: Tick) {
        match self {
            Drift::Zero => {}
            Drift::Constant(w) => {
                for (o, &v) in out.iter_mut().zip(w) {
                    *o = o.shift(v);
                }
            }
            Drift::Schedule(f) => {
                for (o, v) in out.iter_mut().zip(f(t)) {
                    *o = o.shift(v);
                }
            }
        }
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::Constant(w) => f.debug_tuple("Constant").field(w).finish(),
            Drift::Schedule(_) => write!(f, "Schedule(..)"),
        }
    }
}

fn matvec_add<S: Real>(m: &DMatrix<f64>, v: &[S], out: &mut [S]) {
    for j in 0..m.ncols() {
        let vj = v[j];
        for (i, o) in out.iter_mut().enumerate() {
            let c = m[(i, j)];
            if c != 0.0 {
                *o += vj.scale(c);
            }
        }
    }
}

/// `x(t+1) = A x + B u + w(t)`.
#[derive(Debug, Clone)]
pub struct LtiDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    drift: Drift,
}

impl LtiDynamics {
    /// Rejects `A` with spectral radius above 1 (exponentially unstable).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, drift: Drift) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(Error::InvalidModel(format!(
                "A {:?} / B {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let rho = spectral_radius(&a);
        if rho > 1.0 + EIG_TOL {
            return Err(Error::InvalidModel(format!(
                "spectral radius of A is {rho} > 1"
            )));
        }
        Ok(Self { a, b, drift })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

impl GenericDynamics for LtiDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn step_with<S: Real>(&self, x: &[S], u: &[S], t: Tick) -> Vec<S> {
        let mut out = vec![S::zero(); self.a.nrows()];
        matvec_add(&self.a, x, &mut out);
        matvec_add(&self.b, u, &mut out);
        self.drift.add_to(&mut out, t);
        out
    }
}

/// `z(t+1) = C z + μ(t)`.
#[derive(Debug, Clone)]
pub struct LtiObservation {
    c: DMatrix<f64>,
    drift: Drift,
}

impl LtiObservation {
    pub fn new(c: DMatrix<f64>, drift: Drift) -> Result<Self> {
        if !c.is_square() {
            return Err(Error::InvalidModel(format!(
                "C {:?} is not square",
                c.shape()
            )));
        }
        let rho = spectral_radius(&c);
        if rho > 1.0 + EIG_TOL {
            return Err(Error::InvalidModel(format!(
                "spectral radius of C is {rho} > 1"
            )));
        }
        Ok(Self { c, drift })
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
}

impl ObservationModel for LtiObservation {
    fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    fn step(&self, z: &[f64], t: Tick) -> Vec<f64> {
        let mut out = vec![0.0; self.c.nrows()];
        matvec_add(&self.c, z, &mut out);
        self.drift.add_to(&mut out, t);
        out
    }
}
