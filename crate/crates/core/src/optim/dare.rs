//! Discrete-time algebraic Riccati equation and the LQR gain it yields.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100_000,
        }
    }
}

/// Stabilizing solution of `P = Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA` and the
/// gain `K = (R + BᵀPB)⁻¹ BᵀPA`.
#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
}

impl DareSolution {
    /// Spectral radius of `A − BK`.
    pub fn closed_loop_radius(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        spectral_radius(&(a - b * &self.k))
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0, |r, l| r.max(l.norm()))
}

/// One application of the Riccati map.
pub fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let at = a.transpose();
    let bt = b.transpose();
    let gain = (r + &bt * p * b).try_inverse()? * &bt * p * a;
    let next = q + &at * p * a - &at * p * b * gain;
    Some(symmetrize(next))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn check_dims(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    let ok = a.is_square() && b.nrows() == n && q.shape() == (n, n) && r.shape() == (m, m);
    if !ok {
        return Err(Error::InvalidModel(format!(
            "DARE dimensions: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// Solves the DARE by fixed-point iteration of the Riccati map from `P = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &DareOptions,
) -> Result<DareSolution> {
    check_dims(a, b, q, r)?;
    let mut p = symmetrize(q.clone());
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let next = riccati_step(a, b, q, r, &p)
            .ok_or_else(|| Error::InvalidModel("R + BᵀPB is singular".into()))?;
        let step = (&next - &p).amax();
        // the map contracts linearly near the fixed point; the distance left
        // is about step·ρ/(1 − ρ), not the step itself
        let rate = step / residual;
        residual = step;
        p = next;
        if !residual.is_finite() {
            break;
        }
        let left = if rate < 1.0 {
            step * rate / (1.0 - rate)
        } else {
            f64::INFINITY
        };
        let scale = opts.tol * p.amax().max(1.0);
        if step == 0.0 || (step <= scale && left <= scale) {
            return finish(a, b, r, p, it);
        }
    }
    Err(Error::DareNotConverged {
        iterations: opts.max_iters,
        residual,
    })
}

/// Structured doubling: converges quadratically, so it is the fast path for
/// slow closed loops. Requires invertible `A`.
pub fn solve_dare_doubling(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &DareOptions,
) -> Result<DareSolution> {
    check_dims(a, b, q, r)?;
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidModel("R is singular".into()))?;
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    for it in 1..=opts.max_iters.min(200) {
        let w = (&eye + &gk * &hk)
            .try_inverse()
            .ok_or_else(|| Error::InvalidModel("doubling step singular".into()))?;
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = symmetrize(&hk + ak.transpose() * &hk * &w * &ak);
        let residual = (&h_next - &hk).amax();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if residual <= opts.tol * hk.amax().max(1.0) {
            return finish(a, b, r, hk, it);
        }
    }
    Err(Error::DareNotConverged {
        iterations: opts.max_iters.min(200),
        residual: f64::NAN,
    })
}

fn finish(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: DMatrix<f64>,
    iterations: usize,
) -> Result<DareSolution> {
    let bt = b.transpose();
    let k = (r + &bt * &p * b)
        .try_inverse()
        .ok_or_else(|| Error::InvalidModel("R + BᵀPB is singular".into()))?
        * &bt
        * &p
        * a;
    let sol = DareSolution { p, k, iterations };
    if sol.closed_loop_radius(a, b) >= 1.0 {
        return Err(Error::InvalidModel(
            "DARE solution does not stabilize (A, B)".into(),
        ));
    }
    Ok(sol)
}
