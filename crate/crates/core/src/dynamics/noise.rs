use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::timeline::{Tick, Trajectory, BASE_RATE_HZ};

/// Pre-sampled state and observation disturbances for a whole run. The same
/// realization drives the actual fleet and the ideal reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceRealization {
    /// Per-agent `δx(t)`.
    pub dx: Vec<Trajectory>,
    /// Per-agent `δz(t)`.
    pub dz: Vec<Trajectory>,
    pub seed: u64,
}

impl DisturbanceRealization {
    pub fn n_ticks(&self) -> usize {
        self.dx.first().map_or(0, Trajectory::len)
    }

    /// Order-sensitive FNV-1a digest over every stored bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for traj in self.dx.iter().chain(&self.dz) {
            for v in traj.as_flat() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// I.i.d. zero-mean Gaussian vectors, one per tick, nonzero only on
/// `components`. `strength` is the per-tick standard deviation at the
/// 100 Hz base rate; other rates rescale it by `sqrt(100 / rate)`.
pub fn sample_noise<R: Rng + ?Sized>(
    strength: f64,
    rate_hz: f64,
    n_ticks: usize,
    dim: usize,
    components: &[usize],
    rng: &mut R,
) -> Trajectory {
    assert!(strength >= 0.0, "noise strength must be non-negative");
    let std = strength * (BASE_RATE_HZ / rate_hz).sqrt();
    let mut data = vec![0.0; n_ticks * dim];
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        for row in data.chunks_exact_mut(dim.max(1)) {
            for &c in components {
                row[c] = normal.sample(rng);
            }
        }
    }
    Trajectory::from_flat(Tick(0), dim, data)
}
