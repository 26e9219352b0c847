//! Centralized controllers used as specifications for the distributed fleet.

mod formation;
mod linear;

pub use formation::{repulsion, FormationController, FormationGains, FormationKind, FormationSpec};
pub use linear::{Feedforward, LinearFeedback};

use std::fmt::Debug;

use crate::fleet::FleetLayout;
use crate::timeline::Tick;

/// `u = π(x, z, t)` over the whole fleet. Must be deterministic and must
/// accept predicted as well as measured inputs.
pub trait CentralController: Send + Sync + Debug {
    fn layout(&self) -> FleetLayout;
    fn act(&self, x: &[f64], z: &[f64], t: Tick) -> Vec<f64>;
}

/// Gains of the 1D leader/follower PID task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub gap: f64,
    pub a_max: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 2.0,
            kd: 1.0,
            gap: 1.5,
            a_max: 3.0,
        }
    }
}

/// Two 1D cars: the leader tracks the target speed carried in its
/// observation, the follower holds a fixed gap behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderFollowerPid {
    pub gains: PidGains,
}

impl CentralController for LeaderFollowerPid {
    fn layout(&self) -> FleetLayout {
        FleetLayout::new(2, 2, 1, 1)
    }

    fn act(&self, x: &[f64], z: &[f64], _t: Tick) -> Vec<f64> {
        let g = &self.gains;
        let (p1, v1, p2, v2) = (x[0], x[1], x[2], x[3]);
        let v_ref = z[0];
        let a1 = g.kp * (v_ref - v1);
        let a2 = g.kp * (v1 - v2) + g.kd * (p1 - p2 - g.gap);
        vec![a1.clamp(-g.a_max, g.a_max), a2.clamp(-g.a_max, g.a_max)]
    }
}

/// Observation value meaning "obstacle not seen yet".
pub const OBSTACLE_UNSEEN: f64 = 1.0e4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BangBangParams {
    pub a_max: f64,
    pub v_ref: f64,
    pub gap: f64,
    pub sensor_range: f64,
    pub brake_margin: f64,
    pub deadband: f64,
    /// Weight of the gap error in the follower's switching function (1/s).
    pub gap_weight: f64,
}

impl Default for BangBangParams {
    fn default() -> Self {
        Self {
            a_max: 3.0,
            v_ref: 2.0,
            gap: 1.5,
            sensor_range: 20.0,
            brake_margin: 2.0,
            deadband: 0.1,
            gap_weight: 1.0,
        }
    }
}

/// Two 1D cars with bang-bang speed control; the leader brakes for an
/// obstacle whose position arrives in its observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderObstacleBangBang {
    pub params: BangBangParams,
}

impl LeaderObstacleBangBang {
    /// Distance at which full braking from speed `v` still leaves the margin.
    pub fn brake_distance(&self, v: f64) -> f64 {
        v * v / (2.0 * self.params.a_max) + self.params.brake_margin
    }

    fn switch(&self, error: f64) -> f64 {
        let p = &self.params;
        if error > p.deadband {
            p.a_max
        } else if error < -p.deadband {
            -p.a_max
        } else {
            0.0
        }
    }
}

impl CentralController for LeaderObstacleBangBang {
    fn layout(&self) -> FleetLayout {
        FleetLayout::new(2, 2, 1, 1)
    }

    fn act(&self, x: &[f64], z: &[f64], _t: Tick) -> Vec<f64> {
        let p = &self.params;
        let (p1, v1, p2, v2) = (x[0], x[1], x[2], x[3]);
        let distance = z[0] - p1;
        let seen = distance <= p.sensor_range;
        let target = if seen && distance <= self.brake_distance(v1.max(0.0)) {
            0.0
        } else {
            p.v_ref
        };
        let a1 = self.switch(target - v1);
        let a2 = self.switch((v1 - v2) + p.gap_weight * (p1 - p2 - p.gap));
        vec![a1, a2]
    }
}
