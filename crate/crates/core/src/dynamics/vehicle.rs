//! Vehicle models used by the benchmark tasks.

use std::f64::consts::PI;

use super::GenericDynamics;
use crate::optim::Real;
use crate::timeline::Tick;

/// Width of the tanh surrogate used for clamp derivatives.
pub const CLAMP_GRAD_WIDTH: f64 = 0.01;

/// Multiple of 2π to subtract so that `v` lands in (−π, π].
fn wrap_offset(v: f64) -> f64 {
    2.0 * PI * ((v - PI) / (2.0 * PI)).ceil()
}

/// Normalizes an angle to (−π, π]. The shift is constant, so derivatives
/// pass through unchanged.
pub fn wrap_angle<S: Real>(theta: S) -> S {
    theta.shift(-wrap_offset(theta.value()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleIntegratorParams {
    pub dt: f64,
    pub a_max: f64,
    /// Ratio of modeled to actual acceleration (1 for the true model).
    pub accel_scale: f64,
}

impl Default for DoubleIntegratorParams {
    fn default() -> Self {
        Self {
            dt: 0.01,
            a_max: 3.0,
            accel_scale: 1.0,
        }
    }
}

/// 1D car: state `(p, v)`, actuation `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleIntegrator {
    pub params: DoubleIntegratorParams,
}

impl DoubleIntegrator {
    pub fn new(params: DoubleIntegratorParams) -> Self {
        Self { params }
    }
}

impl GenericDynamics for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn step_with<S: Real>(&self, x: &[S], u: &[S], _t: Tick) -> Vec<S> {
        let p = &self.params;
        let a = u[0].clamp_smooth_grad(-p.a_max, p.a_max, CLAMP_GRAD_WIDTH);
        vec![
            x[0] + x[1].scale(p.dt),
            x[1] + a.scale(p.dt * p.accel_scale),
        ]
    }
    fn saturate(&self, u: &[f64]) -> Vec<f64> {
        vec![u[0].clamp(-self.params.a_max, self.params.a_max)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleParams {
    pub dt: f64,
    pub wheelbase: f64,
    pub steer_max: f64,
    pub a_max: f64,
    pub steer_rate_max: f64,
    /// Ratio of modeled to actual acceleration (1 for the true model).
    pub accel_scale: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            dt: 0.01,
            wheelbase: 0.3,
            steer_max: 0.6,
            a_max: 3.0,
            steer_rate_max: 3.0,
            accel_scale: 1.0,
        }
    }
}

/// Kinematic bicycle: state `(px, py, θ, v, ψ)`, actuation `(a, ψ̇)`,
/// forward Euler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bicycle {
    pub params: BicycleParams,
}

impl Bicycle {
    pub const HEADING: usize = 2;
    pub const SPEED: usize = 3;
    pub const STEER: usize = 4;

    pub fn new(params: BicycleParams) -> Self {
        Self { params }
    }

    /// Continuous-time yaw rate `v tan ψ / L`.
    pub fn yaw_rate(&self, v: f64, steer: f64) -> f64 {
        v * steer.tan() / self.params.wheelbase
    }
}

impl GenericDynamics for Bicycle {
    fn state_dim(&self) -> usize {
        5
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn step_with<S: Real>(&self, x: &[S], u: &[S], _t: Tick) -> Vec<S> {
        let p = &self.params;
        let (px, py, th, v, psi) = (x[0], x[1], x[2], x[3], x[4]);
        let a = u[0].clamp_smooth_grad(-p.a_max, p.a_max, CLAMP_GRAD_WIDTH);
        let psi_dot = u[1].clamp_smooth_grad(-p.steer_rate_max, p.steer_rate_max, CLAMP_GRAD_WIDTH);
        let yaw = v * psi.tan().scale(1.0 / p.wheelbase);
        vec![
            px + (v * th.cos()).scale(p.dt),
            py + (v * th.sin()).scale(p.dt),
            wrap_angle(th + yaw.scale(p.dt)),
            v + a.scale(p.dt * p.accel_scale),
            (psi + psi_dot.scale(p.dt)).clamp_smooth_grad(
                -p.steer_max,
                p.steer_max,
                CLAMP_GRAD_WIDTH,
            ),
        ]
    }
    fn difference_with<S: Real>(&self, a: &[S], b: &[S]) -> Vec<S> {
        let mut d: Vec<S> = a.iter().zip(b).map(|(&p, &q)| p - q).collect();
        d[Self::HEADING] = wrap_angle(d[Self::HEADING]);
        d
    }
    fn perturb(&self, x: &[f64], dx: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().zip(dx).map(|(a, b)| a + b).collect();
        y[Self::HEADING] = wrap_angle(y[Self::HEADING]);
        y[Self::STEER] = y[Self::STEER].clamp(-self.params.steer_max, self.params.steer_max);
        y
    }
    fn saturate(&self, u: &[f64]) -> Vec<f64> {
        let p = &self.params;
        vec![
            u[0].clamp(-p.a_max, p.a_max),
            u[1].clamp(-p.steer_rate_max, p.steer_rate_max),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsModel;
    use proptest::prelude::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(1.5 * PI) + 0.5 * PI).abs() < 1e-15);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn straight_line() {
        let car = Bicycle::new(BicycleParams::default());
        let x = [0.0, 0.0, 0.0, 1.0, 0.0];
        let y = car.step(&x, &[0.0, 0.0], Tick(0));
        assert_eq!(y, vec![0.01, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn yaw_rate_at_quarter_pi() {
        let car = Bicycle::new(BicycleParams {
            steer_max: 1.0,
            ..Default::default()
        });
        // θ̇ = v tan(ψ) / L evaluated numerically
        let expected = 1.0 * (PI / 4.0).tan() / 0.3;
        assert!((expected - 3.3333333333).abs() < 1e-9);
        let x = [0.0, 0.0, 0.0, 1.0, PI / 4.0];
        let y = car.step(&x, &[0.0, 0.0], Tick(0));
        assert!((y[2] / 0.01 - expected).abs() < 1e-9);
    }

    #[test]
    fn constant_steer_traces_circle() {
        // Euler path vs the analytic circle of radius L / tan ψ
        let psi: f64 = 0.4;
        let radius = 0.3 / psi.tan();
        let mut errs = Vec::new();
        for dt in [0.01, 0.005, 0.0025] {
            let car = Bicycle::new(BicycleParams {
                dt,
                ..Default::default()
            });
            let mut x = vec![0.0, 0.0, 0.0, 1.0, psi];
            let steps = (2.0 / dt) as usize;
            let mut worst: f64 = 0.0;
            for _ in 0..steps {
                x = car.step(&x, &[0.0, 0.0], Tick(0));
                // circle centered at (0, R)
                let r = (x[0].powi(2) + (x[1] - radius).powi(2)).sqrt();
                worst = worst.max((r - radius).abs());
            }
            errs.push(worst);
        }
        assert!(errs[0] < 0.02);
        // first-order convergence
        assert!(
            errs[1] < 0.6 * errs[0] && errs[2] < 0.6 * errs[1],
            "{errs:?}"
        );
    }

    #[test]
    fn steering_clamped() {
        let car = Bicycle::new(BicycleParams::default());
        let x = [0.0, 0.0, 0.0, 1.0, 0.599];
        let y = car.step(&x, &[0.0, 100.0], Tick(0));
        assert_eq!(y[4], 0.6);
    }

    proptest! {
        #[test]
        fn speed_preserved_without_acceleration(th in -3.0f64..3.0, v in -2.0f64..5.0, psi in -0.6f64..0.6, rate in -3.0f64..3.0) {
            let car = Bicycle::new(BicycleParams::default());
            let y = car.step(&[1.0, 2.0, th, v, psi], &[0.0, rate], Tick(0));
            prop_assert_eq!(y[3], v);
            prop_assert!(y[2] > -PI && y[2] <= PI);
            prop_assert!(y[4].abs() <= 0.6);
        }

        #[test]
        fn models_are_pure(p in -5.0f64..5.0, v in -5.0f64..5.0, a in -5.0f64..5.0) {
            let m = DoubleIntegrator::new(DoubleIntegratorParams::default());
            let y1 = m.step(&[p, v], &[a], Tick(3));
            let y2 = m.step(&[p, v], &[a], Tick(3));
            prop_assert_eq!(y1[0].to_bits(), y2[0].to_bits());
            prop_assert_eq!(y1[1].to_bits(), y2[1].to_bits());
        }
    }
}
