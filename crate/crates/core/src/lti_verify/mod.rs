//! Numerical checks of the delay-compensation theory on LTI fleets:
//! exact anchors, bounded prediction error growth, MPC matching LQR, and
//! exponential decay with delay-independent constants.

mod decay;
mod properties;
mod system;

pub use decay::{
    fit_affine, fit_exponential, verify_decay, BoundFit, DecayOptions, DecayReport, PlateauPoint,
};
pub use properties::{
    anchor_error, mpc_lqr_weights, verify_anchor_exactness, verify_mpc_lqr,
    verify_prediction_growth, AnchorReport, LtiRun, MpcLqrReport, PredictionReport,
};
pub use system::{block_diag, planar_double_integrator, LtiTestSystem};

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::optim::{solve_dare, DareOptions};
use crate::sim::format_float;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub anchor_systems: usize,
    pub mpc_horizon: usize,
    pub seed: u64,
    pub decay: DecayOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            anchor_systems: 50,
            mpc_horizon: 50,
            seed: 1,
            decay: DecayOptions::default(),
        }
    }
}

/// One thresholded quantity of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    /// `<` or `>`.
    pub relation: char,
    pub threshold: f64,
}

impl Check {
    fn below(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            relation: '<',
            threshold,
        }
    }

    fn above(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            relation: '>',
            threshold,
        }
    }

    pub fn pass(&self) -> bool {
        match self.relation {
            '<' => self.value < self.threshold,
            _ => self.value > self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiReport {
    pub anchors: AnchorReport,
    pub prediction: PredictionReport,
    pub mpc_lqr: MpcLqrReport,
    /// Same comparison at a one-step horizon.
    pub mpc_lqr_short: MpcLqrReport,
    /// LQR gain of `x⁺ = x + u` with unit weights.
    pub scalar_gain: f64,
    pub decay: DecayReport,
}

pub const REPORT_HEADER: &str = "check,value,relation,threshold,pass";

impl LtiReport {
    pub fn checks(&self) -> Vec<Check> {
        let t5 = &self.decay;
        let min_r2 = t5.fits.iter().map(|f| f.1.r2).fold(f64::INFINITY, f64::min);
        vec![
            Check::below("anchors.max_error", self.anchors.max_error, 1e-10),
            Check::above(
                "anchors.corrupted_error",
                self.anchors.corrupted_error,
                1e-6,
            ),
            Check::above("prediction.mse_quadratic_r2", self.prediction.r2, 0.95),
            Check::below(
                "mpc_lqr.max_discrepancy",
                self.mpc_lqr.max_discrepancy,
                1e-6,
            ),
            Check::above("mpc_lqr.max_deviation", self.mpc_lqr.max_deviation, 1e-4),
            Check::above(
                "mpc_lqr.short_horizon_discrepancy",
                self.mpc_lqr_short.max_discrepancy,
                1e-4,
            ),
            Check::below(
                "dare.scalar_gain_error",
                (self.scalar_gain - 0.618_033_988_749_895).abs(),
                1e-8,
            ),
            Check::below("decay.zero_response", t5.zero_response, 1e-8),
            Check::above("decay.min_fit_r2", min_r2, 0.98),
            Check::below("decay.lambda_spread", t5.lambda_spread, 0.10),
            Check::above("decay.plateau_affine_r2", t5.affine.2, 0.99),
            Check::below("decay.plateau_ratio", t5.plateau_ratio, 1.25),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(Check::pass)
    }

    /// Check table followed by the per-delay fits and plateaus, all in the
    /// same four-column layout.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        for c in self.checks() {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.name,
                format_float(c.value),
                c.relation,
                format_float(c.threshold),
                if c.pass() { "PASS" } else { "FAIL" }
            )?;
        }
        for (comm, f) in &self.decay.fits {
            for (key, v) in [("c1", f.c1), ("lambda", f.lambda), ("r2", f.r2)] {
                writeln!(w, "decay.fit.comm{comm}.{key},{},,,", format_float(v))?;
            }
        }
        for p in &self.decay.plateaus {
            writeln!(
                w,
                "decay.plateau.comm{}.m{},{},,,",
                p.comm_ticks,
                format_float(p.magnitude),
                format_float(p.plateau)
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in self.checks() {
            let _ = writeln!(
                s,
                "{:<40} {:>14} {} {:<10} {}",
                c.name,
                format_float(c.value),
                c.relation,
                format_float(c.threshold),
                if c.pass() { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            s,
            "anchors: {} systems, {} replans; mpc vs lqr: {} replans at H={}",
            self.anchors.systems, self.anchors.replans, self.mpc_lqr.replans, self.mpc_lqr.horizon
        );
        for (comm, f) in &self.decay.fits {
            let _ = writeln!(
                s,
                "decay at T^c={comm:>3} ticks: c1={} lambda={} r2={}",
                format_float(f.c1),
                format_float(f.lambda),
                format_float(f.r2)
            );
        }
        let _ = writeln!(
            s,
            "plateaus are maxima over the final part of a finite run; the infinite-horizon sup norm is truncated"
        );
        let _ = writeln!(
            s,
            "overall: {}",
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

/// Runs every check on random systems and the canonical system.
pub fn verify_all(opts: &VerifyOptions) -> Result<LtiReport> {
    let canonical = LtiTestSystem::canonical();
    let anchors = verify_anchor_exactness(opts.anchor_systems, opts.seed)?;
    let prediction = verify_prediction_growth(&canonical, 50, opts.seed)?;
    let (qx, qu) = mpc_lqr_weights();
    let mpc_lqr = verify_mpc_lqr(&canonical, &qx, &qu, opts.mpc_horizon, opts.seed)?;
    let mpc_lqr_short = verify_mpc_lqr(&canonical, &qx, &qu, 1, opts.seed)?;
    let one = DMatrix::from_element(1, 1, 1.0);
    let scalar_gain = solve_dare(&one, &one, &one, &one, &DareOptions::default())?.k[(0, 0)];
    let decay = verify_decay(&canonical, &opts.decay)?;
    Ok(LtiReport {
        anchors,
        prediction,
        mpc_lqr,
        mpc_lqr_short,
        scalar_gain,
        decay,
    })
}
