//! Block layout of concatenated fleet vectors.

use std::ops::Range;

use crate::error::{Error, Result};

/// Per-agent dimensions of a homogeneous fleet. Agent `i`'s state block
/// occupies `[i * state_dim, (i + 1) * state_dim)` of the fleet state, and
/// likewise for observations and actuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FleetLayout {
    pub n_agents: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub input_dim: usize,
}

impl FleetLayout {
    pub fn new(n_agents: usize, state_dim: usize, obs_dim: usize, input_dim: usize) -> Self {
        Self {
            n_agents,
            state_dim,
            obs_dim,
            input_dim,
        }
    }

    pub fn fleet_state_dim(&self) -> usize {
        self.n_agents * self.state_dim
    }

    pub fn fleet_obs_dim(&self) -> usize {
        self.n_agents * self.obs_dim
    }

    pub fn fleet_input_dim(&self) -> usize {
        self.n_agents * self.input_dim
    }

    pub fn state_block(&self, agent: usize) -> Range<usize> {
        block(agent, self.state_dim)
    }

    pub fn obs_block(&self, agent: usize) -> Range<usize> {
        block(agent, self.obs_dim)
    }

    pub fn input_block(&self, agent: usize) -> Range<usize> {
        block(agent, self.input_dim)
    }
}

fn block(agent: usize, dim: usize) -> Range<usize> {
    agent * dim..(agent + 1) * dim
}

/// Agent `agent`'s block of a concatenated fleet vector.
pub fn gather(fleet: &[f64], agent: usize, dim: usize) -> &[f64] {
    &fleet[block(agent, dim)]
}

/// Concatenates per-agent blocks into a fleet vector.
pub fn scatter<B: AsRef<[f64]>>(blocks: &[B], dim: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(blocks.len() * dim);
    for b in blocks {
        let b = b.as_ref();
        if b.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: b.len(),
                context: "agent block",
            });
        }
        out.extend_from_slice(b);
    }
    Ok(out)
}

/// Fleet state, observation and actuation at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSnapshot {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

impl FleetSnapshot {
    pub fn new(layout: &FleetLayout, x: Vec<f64>, z: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        for (expected, got, context) in [
            (layout.fleet_state_dim(), x.len(), "fleet state"),
            (layout.fleet_obs_dim(), z.len(), "fleet observation"),
            (layout.fleet_input_dim(), u.len(), "fleet actuation"),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    expected,
                    got,
                    context,
                });
            }
        }
        Ok(Self { x, z, u })
    }

    pub fn agent_x<'a>(&'a self, layout: &FleetLayout, agent: usize) -> &'a [f64] {
        &self.x[layout.state_block(agent)]
    }

    pub fn agent_z<'a>(&'a self, layout: &FleetLayout, agent: usize) -> &'a [f64] {
        &self.z[layout.obs_block(agent)]
    }

    pub fn agent_u<'a>(&'a self, layout: &FleetLayout, agent: usize) -> &'a [f64] {
        &self.u[layout.input_block(agent)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_agent_is_identity() {
        let v = vec![1.0, 2.0, 3.0];
        assert_eq!(gather(&v, 0, 3), &v[..]);
        assert_eq!(scatter(&[&v[..]], 3).unwrap(), v);
    }

    #[test]
    fn block_layout() {
        let l = FleetLayout::new(3, 2, 1, 1);
        assert_eq!(l.state_block(1), 2..4);
        let v = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(gather(&v, 1, 2), &[2.0, 3.0]);
    }

    #[test]
    fn scatter_rejects_wrong_block_size() {
        let err = scatter(&[vec![1.0], vec![1.0, 2.0]], 1).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let l = FleetLayout::new(2, 2, 1, 1);
        assert!(FleetSnapshot::new(&l, vec![0.0; 3], vec![0.0; 2], vec![0.0; 2]).is_err());
    }

    proptest! {
        #[test]
        fn gather_scatter_round_trip(n in 1usize..6, dim in 1usize..5, seed in proptest::collection::vec(-1e3f64..1e3, 30)) {
            let fleet: Vec<f64> = (0..n * dim).map(|k| seed[k % seed.len()] + k as f64).collect();
            let blocks: Vec<&[f64]> = (0..n).map(|i| gather(&fleet, i, dim)).collect();
            prop_assert_eq!(scatter(&blocks, dim).unwrap(), fleet);
        }
    }
}
