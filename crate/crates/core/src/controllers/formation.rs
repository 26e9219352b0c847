//! Leader-follower formation keeping for kinematic bicycles.

use super::CentralController;
use crate::dynamics::{wrap_angle, BicycleParams};
use crate::fleet::FleetLayout;
use crate::timeline::Tick;

/// Named formation shapes; the numeric id travels in the leader's observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormationKind {
    Triangle = 0,
    Line = 1,
    Circle = 2,
}

impl FormationKind {
    pub fn id(self) -> f64 {
        self as u8 as f64
    }

    pub const ALL: [FormationKind; 3] = [Self::Triangle, Self::Line, Self::Circle];

    pub fn name(self) -> &'static str {
        match self {
            FormationKind::Triangle => "triangle",
            FormationKind::Line => "line",
            FormationKind::Circle => "circle",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Nearest shape id; unknown values fall back to the triangle.
    pub fn from_id(id: f64) -> Self {
        match id.round() as i64 {
            1 => FormationKind::Line,
            2 => FormationKind::Circle,
            _ => FormationKind::Triangle,
        }
    }
}

/// Follower slot offsets in the leader frame (x forward, y left), one list
/// per shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    pub triangle: Vec<[f64; 2]>,
    pub line: Vec<[f64; 2]>,
    pub circle: Vec<[f64; 2]>,
}

impl FormationSpec {
    pub fn n_followers(&self) -> usize {
        self.triangle.len()
    }

    pub fn offsets(&self, kind: FormationKind) -> &[[f64; 2]] {
        match kind {
            FormationKind::Triangle => &self.triangle,
            FormationKind::Line => &self.line,
            FormationKind::Circle => &self.circle,
        }
    }
}

impl Default for FormationSpec {
    fn default() -> Self {
        let r = 1.5;
        let circle = [180.0f64, 60.0, -60.0]
            .iter()
            .map(|deg| [r * deg.to_radians().cos(), r * deg.to_radians().sin()])
            .collect();
        Self {
            triangle: vec![[-1.0, 1.0], [-1.0, -1.0], [-2.0, 0.0]],
            line: vec![[-1.0, 0.0], [-2.0, 0.0], [-3.0, 0.0]],
            circle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormationGains {
    /// Leader speed gain (1/s).
    pub k_speed: f64,
    /// Steering-angle gain (1/s).
    pub k_steer: f64,
    /// Reference-point position gain (1/s).
    pub k_track: f64,
    /// Follower speed gain (1/s).
    pub k_accel: f64,
    /// Distance of the tracked reference point ahead of the rear axle.
    pub ref_point: f64,
    pub avoid_radius: f64,
    pub k_repel: f64,
    /// Floor on speed when converting a yaw rate into a steering angle.
    pub min_speed: f64,
}

impl Default for FormationGains {
    fn default() -> Self {
        Self {
            k_speed: 2.0,
            k_steer: 5.0,
            k_track: 2.0,
            k_accel: 2.0,
            ref_point: 0.2,
            avoid_radius: 1.0,
            k_repel: 1.5,
            min_speed: 0.1,
        }
    }
}

/// Agent 0 leads and follows `(v_cmd, ψ_cmd, shape)` from its observation;
/// the others track slots attached to the leader, with a rotational
/// repulsion term between close pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationController {
    pub spec: FormationSpec,
    pub gains: FormationGains,
    pub vehicle: BicycleParams,
}

/// Rotational push on `p_i` away from `p_j` when they are closer than
/// `radius`: `k (radius − d)` along the left normal of the separation.
pub fn repulsion(p_i: [f64; 2], p_j: [f64; 2], radius: f64, k: f64) -> [f64; 2] {
    let (dx, dy) = (p_i[0] - p_j[0], p_i[1] - p_j[1]);
    let d = dx.hypot(dy);
    if d >= radius || d < 1e-9 {
        return [0.0, 0.0];
    }
    let s = k * (radius - d) / d;
    [-dy * s, dx * s]
}

fn rotate(theta: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

impl FormationController {
    pub fn new(spec: FormationSpec, gains: FormationGains, vehicle: BicycleParams) -> Self {
        Self {
            spec,
            gains,
            vehicle,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.spec.n_followers() + 1
    }

    /// World-frame slot positions (rear axle) of each follower.
    pub fn slot_positions(&self, x: &[f64], z: &[f64]) -> Vec<[f64; 2]> {
        let kind = FormationKind::from_id(z[2]);
        let theta = x[2];
        self.spec
            .offsets(kind)
            .iter()
            .map(|&o| {
                let r = rotate(theta, o);
                [x[0] + r[0], x[1] + r[1]]
            })
            .collect()
    }

    fn follower(&self, x: &[f64], z: &[f64], i: usize) -> [f64; 2] {
        let g = &self.gains;
        let wb = self.vehicle.wheelbase;
        let leader = &x[0..5];
        let me = &x[5 * i..5 * i + 5];
        let kind = FormationKind::from_id(z[2]);
        let offset = self.spec.offsets(kind)[i - 1];

        let (sl, cl) = leader[2].sin_cos();
        let omega_l = leader[3] * leader[4].tan() / wb;
        let ro = rotate(leader[2], offset);
        // slot reference point and its velocity under rigid leader motion
        let target = [
            leader[0] + ro[0] + g.ref_point * cl,
            leader[1] + ro[1] + g.ref_point * sl,
        ];
        let target_vel = [
            leader[3] * cl - omega_l * (ro[1] + g.ref_point * sl),
            leader[3] * sl + omega_l * (ro[0] + g.ref_point * cl),
        ];

        let (s, c) = me[2].sin_cos();
        let point = [me[0] + g.ref_point * c, me[1] + g.ref_point * s];
        let mut want = [
            target_vel[0] - g.k_track * (point[0] - target[0]),
            target_vel[1] - g.k_track * (point[1] - target[1]),
        ];
        for j in 0..self.n_agents() {
            if j != i {
                let rep = repulsion(
                    [me[0], me[1]],
                    [x[5 * j], x[5 * j + 1]],
                    g.avoid_radius,
                    g.k_repel,
                );
                want[0] += rep[0];
                want[1] += rep[1];
            }
        }

        // ṙ = v h + d θ̇ h⊥, inverted for (v, θ̇)
        let v_des = c * want[0] + s * want[1];
        let yaw_des = (-s * want[0] + c * want[1]) / g.ref_point;
        let accel = g.k_accel * (v_des - me[3]);
        let steer_des = (yaw_des * wb / me[3].abs().max(g.min_speed))
            .atan()
            .clamp(-self.vehicle.steer_max, self.vehicle.steer_max);
        let steer_rate = g.k_steer * (steer_des - me[4]);
        self.saturate([accel, steer_rate])
    }

    fn saturate(&self, u: [f64; 2]) -> [f64; 2] {
        let p = &self.vehicle;
        [
            u[0].clamp(-p.a_max, p.a_max),
            u[1].clamp(-p.steer_rate_max, p.steer_rate_max),
        ]
    }
}

impl CentralController for FormationController {
    fn layout(&self) -> FleetLayout {
        FleetLayout::new(self.n_agents(), 5, 3, 2)
    }

    fn act(&self, x: &[f64], z: &[f64], _t: Tick) -> Vec<f64> {
        let g = &self.gains;
        let steer_cmd = z[1].clamp(-self.vehicle.steer_max, self.vehicle.steer_max);
        let lead = self.saturate([
            g.k_speed * (z[0] - x[3]),
            g.k_steer * wrap_angle(steer_cmd - x[4]),
        ]);
        let mut u = lead.to_vec();
        for i in 1..self.n_agents() {
            u.extend(self.follower(x, z, i));
        }
        u
    }
}
