use nalgebra::{DMatrix, DVector};

use super::properties::{diff_norm, LtiRun};
use super::system::LtiTestSystem;
use crate::dynamics::Drift;
use crate::error::Result;
use crate::sim::{par_map, Simulation};
use crate::timeline::DelaySpec;

/// `‖ē(t)‖ ≈ c₁·e^{−λt}` from a least-squares line through `ln‖ē‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundFit {
    pub c1: f64,
    pub lambda: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r2: f64,
}

/// Fits `(t, ‖ē‖)` samples; non-positive norms are skipped.
pub fn fit_exponential(samples: &[(f64, f64)]) -> BoundFit {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(t, e)| (t, e.ln()))
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    BoundFit {
        c1: intercept.exp(),
        lambda: -slope,
        r2: if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            1.0
        },
    }
}

/// Least-squares `y = a + b·x` and its R².
pub fn fit_affine(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len();
    let a = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { points[i].0 });
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let c = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .expect("svd with both factors");
    let fit = &a * &c;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fit.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    (
        c[0],
        c[1],
        if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            1.0
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayOptions {
    /// Communication delays to compare, in ticks.
    pub comm_ticks: Vec<u64>,
    pub obs_ticks: u64,
    pub act_ticks: u64,
    pub control_interval: u64,
    pub horizon: usize,
    /// Initial deviation of the physical fleet.
    pub impulse: Vec<f64>,
    /// Window of the exponential fit, seconds.
    pub fit_window: (f64, f64),
    pub impulse_duration_s: f64,
    /// Per-tick velocity drift of the true dynamics at magnitude 1.
    pub drift: f64,
    pub magnitudes: Vec<f64>,
    /// Communication delay of the magnitude sweep, ticks.
    pub magnitude_comm: u64,
    pub plateau_duration_s: f64,
    /// Plateau is the largest deviation over the last fraction of the run.
    pub plateau_tail: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            comm_ticks: vec![1, 5, 10, 25, 50],
            obs_ticks: 3,
            act_ticks: 4,
            control_interval: 5,
            horizon: 20,
            impulse: vec![0.5, -0.3, 0.0, 0.0, -0.2, 0.4, 0.0, 0.0],
            fit_window: (0.5, 5.0),
            impulse_duration_s: 6.0,
            drift: 1e-3,
            magnitudes: vec![0.5, 1.0, 2.0, 4.0],
            magnitude_comm: 5,
            plateau_duration_s: 10.0,
            plateau_tail: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauPoint {
    pub comm_ticks: u64,
    pub magnitude: f64,
    pub plateau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub fits: Vec<(u64, BoundFit)>,
    /// Largest deviation with neither impulse nor disturbance.
    pub zero_response: f64,
    pub plateaus: Vec<PlateauPoint>,
    /// Affine fit of plateau against magnitude: intercept, slope, R².
    pub affine: (f64, f64, f64),
    /// Max over min plateau across delays at magnitude 1.
    pub plateau_ratio: f64,
    /// `(max λ − min λ) / mean λ` across delays.
    pub lambda_spread: f64,
}

fn deviation(sim: &Simulation) -> Vec<f64> {
    (0..sim.x.len())
        .map(|t| {
            let t = crate::timeline::Tick(t as u64);
            diff_norm(sim.x.at(t), sim.ideal.x.at(t))
        })
        .collect()
}

struct Job {
    comm: u64,
    magnitude: f64,
    impulse: bool,
}

/// Exponential decay of an initial deviation and the steady deviation
/// under a persistent model error, across communication delays.
pub fn verify_decay(sys: &LtiTestSystem, opts: &DecayOptions) -> Result<DecayReport> {
    let dt = 0.01;
    let mut jobs: Vec<Job> = opts
        .comm_ticks
        .iter()
        .map(|&comm| Job {
            comm,
            magnitude: 0.0,
            impulse: true,
        })
        .collect();
    jobs.push(Job {
        comm: opts.magnitude_comm,
        magnitude: 0.0,
        impulse: false,
    });
    for &m in &opts.magnitudes {
        jobs.push(Job {
            comm: opts.magnitude_comm,
            magnitude: m,
            impulse: false,
        });
    }
    for &comm in &opts.comm_ticks {
        if comm != opts.magnitude_comm {
            jobs.push(Job {
                comm,
                magnitude: 1.0,
                impulse: false,
            });
        }
    }

    let results = par_map(&jobs, |job| -> Result<Vec<f64>> {
        let mut s = sys.clone();
        let dur = if job.impulse {
            opts.impulse_duration_s
        } else {
            opts.plateau_duration_s
        };
        let n_ticks = (dur / dt).round() as usize;
        let delays = DelaySpec::new(
            opts.obs_ticks,
            opts.act_ticks,
            job.comm,
            opts.control_interval,
        )?;
        let mut run = LtiRun::new(&s, delays, n_ticks, 1)?;
        run.horizon = opts.horizon;
        run.optimizer.max_iters = 500;
        run.optimizer.g_tol = 1e-10;
        if job.impulse {
            run.initial_offset = Some(opts.impulse.clone());
        }
        if job.magnitude != 0.0 {
            let nx = s.a[0].nrows();
            // drift on the velocity half of each agent's state
            let w: Vec<f64> = (0..nx)
                .map(|k| {
                    if k >= nx / 2 {
                        opts.drift * job.magnitude
                    } else {
                        0.0
                    }
                })
                .collect();
            s.truth_drift = vec![Drift::Constant(w); s.n_agents()];
        }
        Ok(deviation(&run.simulate(&s)?))
    });
    let results: Vec<Vec<f64>> = results.into_iter().collect::<Result<_>>()?;

    let mut fits = Vec::new();
    let mut plateaus = Vec::new();
    let mut zero_response = 0.0;
    for (job, dev) in jobs.iter().zip(&results) {
        if job.impulse {
            let samples: Vec<(f64, f64)> = dev
                .iter()
                .enumerate()
                .map(|(t, &e)| (t as f64 * dt, e))
                .filter(|(t, _)| *t >= opts.fit_window.0 && *t <= opts.fit_window.1)
                .collect();
            fits.push((job.comm, fit_exponential(&samples)));
        } else {
            let from = ((1.0 - opts.plateau_tail) * dev.len() as f64) as usize;
            let plateau = dev[from..].iter().copied().fold(0.0, f64::max);
            if job.magnitude == 0.0 {
                zero_response = dev.iter().copied().fold(0.0, f64::max);
            }
            plateaus.push(PlateauPoint {
                comm_ticks: job.comm,
                magnitude: job.magnitude,
                plateau,
            });
        }
    }

    let sweep: Vec<(f64, f64)> = plateaus
        .iter()
        .filter(|p| p.comm_ticks == opts.magnitude_comm)
        .map(|p| (p.magnitude, p.plateau))
        .collect();
    let affine = fit_affine(&sweep);
    let unit: Vec<f64> = plateaus
        .iter()
        .filter(|p| p.magnitude == 1.0)
        .map(|p| p.plateau)
        .collect();
    let plateau_ratio = unit.iter().copied().fold(0.0, f64::max)
        / unit.iter().copied().fold(f64::INFINITY, f64::min);
    let lambdas: Vec<f64> = fits.iter().map(|f| f.1.lambda).collect();
    let mean = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    let lambda_spread = (lambdas.iter().copied().fold(f64::MIN, f64::max)
        - lambdas.iter().copied().fold(f64::MAX, f64::min))
        / mean;
    plateaus.sort_by(|a, b| {
        (a.comm_ticks, a.magnitude)
            .partial_cmp(&(b.comm_ticks, b.magnitude))
            .expect("finite")
    });
    Ok(DecayReport {
        fits,
        zero_response,
        plateaus,
        affine,
        plateau_ratio,
        lambda_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_recovered() {
        let s: Vec<(f64, f64)> = (0..50)
            .map(|k| (k as f64 * 0.1, 3.0 * (-1.5 * k as f64 * 0.1).exp()))
            .collect();
        let f = fit_exponential(&s);
        assert!(
            (f.c1 - 3.0).abs() < 1e-12
                && (f.lambda - 1.5).abs() < 1e-12
                && (f.r2 - 1.0).abs() < 1e-12
        );
    }

    #[test]
    fn affine_fit_by_hand() {
        let (a, b, r2) = fit_affine(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
