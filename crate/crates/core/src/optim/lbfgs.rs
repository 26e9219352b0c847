//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use super::dual::{forward_grad, Program};

/// Objective with gradient.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes the gradient into `grad` and returns the value.
    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a [`Program`] into an [`Objective`] using forward-mode gradients.
pub struct AutoDiff<'a, P: ?Sized>(pub &'a P);

impl<P: Program + ?Sized> Objective for AutoDiff<'_, P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.evaluate(x)
    }
    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        forward_grad(self.0, x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub g_tol: f64,
    pub x_tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            g_tol: 1e-8,
            x_tol: 1e-14,
            max_iters: 100,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub grad_norm: f64,
    /// Loss after each accepted iteration, starting with the initial loss.
    pub loss_history: Vec<f64>,
}

impl Diagnostics {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::GradientTolerance | Termination::StepTolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub loss: f64,
    pub diagnostics: Diagnostics,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `obj` from `x0`. The returned loss never exceeds the loss at
/// `x0`; a non-finite value anywhere stops the search with the best point
/// found so far.
pub fn lbfgs_minimize<O: Objective + ?Sized>(obj: &O, x0: &[f64], opts: &LbfgsOptions) -> Minimum {
    let n = obj.dim();
    assert_eq!(x0.len(), n);
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.value_and_grad(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![f];

    let finish = |x: Vec<f64>,
                  f: f64,
                  g: &[f64],
                  it: usize,
                  ev: usize,
                  term: Termination,
                  hist: Vec<f64>| Minimum {
        x,
        loss: f,
        diagnostics: Diagnostics {
            iterations: it,
            evaluations: ev,
            termination: term,
            grad_norm: inf_norm(g),
            loss_history: hist,
        },
    };

    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(x, f, &g, 0, evaluations, Termination::NonFinite, history);
    }
    if n == 0 || inf_norm(&g) < opts.g_tol {
        return finish(
            x,
            f,
            &g,
            0,
            evaluations,
            Termination::GradientTolerance,
            history,
        );
    }

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory.max(1)];

    for iter in 1..=opts.max_iters {
        // two-loop recursion
        dir.copy_from_slice(&g);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[k] = a;
            for (d, yv) in dir.iter_mut().zip(y) {
                *d -= a * yv;
            }
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / inf_norm(&g).max(1.0),
        };
        for d in dir.iter_mut() {
            *d *= gamma;
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for (d, sv) in dir.iter_mut().zip(s) {
                *d += (alpha_buf[k] - b) * sv;
            }
        }
        for d in dir.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 || slope.is_nan() {
            pairs.clear();
            let scale = 1.0 / inf_norm(&g).max(1.0);
            for (d, gv) in dir.iter_mut().zip(&g) {
                *d = -gv * scale;
            }
            slope = dot(&g, &dir);
        }

        let ls = strong_wolfe(obj, &x, f, slope, &dir, opts);
        evaluations += ls.evaluations;
        let Some(step) = ls.accepted else {
            let term = if ls.non_finite {
                Termination::NonFinite
            } else {
                Termination::LineSearchFailed
            };
            return finish(x, f, &g, iter - 1, evaluations, term, history);
        };

        let s: Vec<f64> = dir.iter().map(|d| step.alpha * d).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let x_new: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let sy = dot(&s, &y);
        x = x_new;
        f = step.f;
        g = step.g;
        history.push(f);

        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s.clone(), y, 1.0 / sy));
        }

        if inf_norm(&g) < opts.g_tol {
            return finish(
                x,
                f,
                &g,
                iter,
                evaluations,
                Termination::GradientTolerance,
                history,
            );
        }
        if inf_norm(&s) < opts.x_tol {
            return finish(
                x,
                f,
                &g,
                iter,
                evaluations,
                Termination::StepTolerance,
                history,
            );
        }
    }
    let iters = opts.max_iters;
    finish(
        x,
        f,
        &g,
        iters,
        evaluations,
        Termination::MaxIterations,
        history,
    )
}

struct Step {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
}

struct LineSearch {
    accepted: Option<Step>,
    evaluations: usize,
    non_finite: bool,
}

/// Strong-Wolfe search with bracketing and cubic-interpolation zoom.
/// Falls back to the best sufficient-decrease point seen if the curvature
/// condition cannot be met within the budget.
fn strong_wolfe<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    opts: &LbfgsOptions,
) -> LineSearch {
    let n = x.len();
    let mut evaluations = 0;
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut eval = |alpha: f64, evaluations: &mut usize| -> (f64, Vec<f64>, f64) {
        for k in 0..n {
            xt[k] = x[k] + alpha * dir[k];
        }
        let f = obj.value_and_grad(&xt, &mut gt);
        *evaluations += 1;
        (f, gt.clone(), dot(&gt, dir))
    };

    let mut best: Option<Step> = None;
    let note_armijo = |alpha: f64, f: f64, g: &[f64], best: &mut Option<Step>| {
        if f <= f0 + opts.c1 * alpha * slope0 && best.as_ref().is_none_or(|b| f < b.f) {
            *best = Some(Step {
                alpha,
                f,
                g: g.to_vec(),
            });
        }
    };

    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = slope0;
    let mut alpha = 1.0;
    let mut bracket: Option<(f64, f64, f64, f64, f64, f64)> = None;

    for i in 0..opts.max_line_search {
        let (f, g, d) = eval(alpha, &mut evaluations);
        if !f.is_finite() || !d.is_finite() {
            // shrink back toward the last finite point
            alpha = a_prev + 0.1 * (alpha - a_prev);
            if i + 1 == opts.max_line_search {
                return LineSearch {
                    accepted: best,
                    evaluations,
                    non_finite: true,
                };
            }
            continue;
        }
        note_armijo(alpha, f, &g, &mut best);
        if f > f0 + opts.c1 * alpha * slope0 || (i > 0 && f >= f_prev) {
            bracket = Some((a_prev, f_prev, d_prev, alpha, f, d));
            break;
        }
        if d.abs() <= -opts.c2 * slope0 {
            return LineSearch {
                accepted: Some(Step { alpha, f, g }),
                evaluations,
                non_finite: false,
            };
        }
        if d >= 0.0 {
            bracket = Some((alpha, f, d, a_prev, f_prev, d_prev));
            break;
        }
        a_prev = alpha;
        f_prev = f;
        d_prev = d;
        alpha *= 2.0;
    }

    let Some((mut lo, mut f_lo, mut d_lo, mut hi, mut f_hi, mut d_hi)) = bracket else {
        return LineSearch {
            accepted: best,
            evaluations,
            non_finite: false,
        };
    };

    for _ in 0..opts.max_line_search {
        let mut a = cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi);
        let (a_min, a_max) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let margin = 0.1 * (a_max - a_min);
        if !a.is_finite() || a < a_min + margin || a > a_max - margin {
            a = 0.5 * (lo + hi);
        }
        let (f, g, d) = eval(a, &mut evaluations);
        if !f.is_finite() {
            hi = a;
            f_hi = f64::INFINITY;
            d_hi = f64::NAN;
            continue;
        }
        note_armijo(a, f, &g, &mut best);
        if f > f0 + opts.c1 * a * slope0 || f >= f_lo {
            hi = a;
            f_hi = f;
            d_hi = d;
        } else {
            if d.abs() <= -opts.c2 * slope0 {
                return LineSearch {
                    accepted: Some(Step { alpha: a, f, g }),
                    evaluations,
                    non_finite: false,
                };
            }
            if d * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
                d_hi = d_lo;
            }
            lo = a;
            f_lo = f;
            d_lo = d;
        }
        if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
            break;
        }
    }
    LineSearch {
        accepted: best,
        evaluations,
        non_finite: false,
    }
}

/// Minimizer of the cubic interpolating values and slopes at two points.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    if !fb.is_finite() || !db.is_finite() {
        return f64::NAN;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fn1<F: Fn(&[f64], &mut [f64]) -> f64>(usize, F);
    impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for Fn1<F> {
        fn dim(&self) -> usize {
            self.0
        }
        fn value(&self, x: &[f64]) -> f64 {
            let mut g = vec![0.0; self.0];
            (self.1)(x, &mut g)
        }
        fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            (self.1)(x, grad)
        }
    }

    #[test]
    fn shifted_parabola() {
        let obj = Fn1(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            (x[0] - 3.0).powi(2)
        });
        let m = lbfgs_minimize(&obj, &[0.0], &LbfgsOptions::default());
        assert!((m.x[0] - 3.0).abs() < 1e-8, "{:?}", m);
        assert!(m.diagnostics.converged());
    }

    #[test]
    fn rosenbrock() {
        let obj = Fn1(2, |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        });
        let opts = LbfgsOptions {
            max_iters: 500,
            ..Default::default()
        };
        let m = lbfgs_minimize(&obj, &[-1.2, 1.0], &opts);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            m
        );
    }

    #[test]
    fn loss_history_is_monotone() {
        let obj = Fn1(3, |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for k in 0..3 {
                let w = (k + 1) as f64;
                f += w * x[k].powi(4) + x[k].powi(2) * 0.1;
                g[k] = 4.0 * w * x[k].powi(3) + 0.2 * x[k];
            }
            f
        });
        let m = lbfgs_minimize(&obj, &[1.0, -2.0, 0.5], &LbfgsOptions::default());
        for w in m.diagnostics.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn non_finite_start_is_reported() {
        let obj = Fn1(1, |_x: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        });
        let m = lbfgs_minimize(&obj, &[1.0], &LbfgsOptions::default());
        assert_eq!(m.diagnostics.termination, Termination::NonFinite);
        assert_eq!(m.x, vec![1.0]);
    }

    #[test]
    fn nan_region_stops_with_best_so_far() {
        // finite only for x < 2; minimum of the finite branch at x=1
        let obj = Fn1(1, |x: &[f64], g: &mut [f64]| {
            if x[0] >= 2.0 {
                g[0] = f64::NAN;
                return f64::NAN;
            }
            g[0] = 2.0 * (x[0] - 1.0);
            (x[0] - 1.0).powi(2)
        });
        let m = lbfgs_minimize(&obj, &[-5.0], &LbfgsOptions::default());
        assert!(m.loss <= 36.0);
        assert!(m.loss.is_finite());
    }
}
