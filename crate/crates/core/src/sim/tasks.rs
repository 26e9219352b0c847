//! The four benchmark tasks.

use std::fmt;
use std::sync::Arc;

use super::world::{ObservationScript, Scenario};
use crate::controllers::{
    BangBangParams, CentralController, FormationController, FormationGains, FormationKind,
    FormationSpec, LeaderFollowerPid, LeaderObstacleBangBang, PidGains, OBSTACLE_UNSEEN,
};
use crate::dynamics::{
    Bicycle, BicycleParams, DoubleIntegrator, DoubleIntegratorParams, DynamicsModel,
    HoldObservation, ObservationModel,
};
use crate::error::{Error, Result};
use crate::frameworks::FleetModel;
use crate::timeline::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// 1D leader/follower with a linear law.
    LeaderLinear,
    /// 1D leader/follower with bang-bang control and an obstacle.
    LeaderObstacle,
    /// Four bicycles keeping a circle through a steering profile.
    FormationDriving,
    /// Four bicycles switching from a triangle to a line.
    FormationSwitching,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        Self::LeaderLinear,
        Self::LeaderObstacle,
        Self::FormationDriving,
        Self::FormationSwitching,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::LeaderLinear => "leader-linear",
            Self::LeaderObstacle => "leader-obstacle",
            Self::FormationDriving => "formation-driving",
            Self::FormationSwitching => "formation-switching",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| Error::UnknownId {
                kind: "task",
                id: id.to_string(),
                registered: Self::ALL
                    .iter()
                    .map(|k| k.id())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    pub fn is_formation(self) -> bool {
        matches!(self, Self::FormationDriving | Self::FormationSwitching)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Physical and modeling parameters of a task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    pub dt: f64,
    /// Modeled / true acceleration gain.
    pub accel_ratio: f64,
    /// Modeled / true wheelbase.
    pub wheelbase_ratio: f64,
    /// Formation tasks only.
    pub formation: FormationSpec,
    pub formation_gains: FormationGains,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            dt: 0.01,
            accel_ratio: 1.0,
            wheelbase_ratio: 1.0,
            formation: FormationSpec::default(),
            formation_gains: FormationGains::default(),
        }
    }
}

/// Target speed of the linear task's leader.
pub const LEADER_SPEED: f64 = 2.0;

/// Obstacle position on the leader's lane.
pub const OBSTACLE_AT: f64 = 30.0;

/// Reveals the obstacle once the ideal leader is within sensor range.
#[derive(Debug, Clone, Copy)]
struct ObstacleReveal {
    range: f64,
}

impl ObservationScript for ObstacleReveal {
    fn next(&self, _t: Tick, z: &[f64], ideal_next: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        if z[0] == OBSTACLE_UNSEEN && OBSTACLE_AT - ideal_next[0] <= self.range {
            out[0] = OBSTACLE_AT;
        }
        out
    }
}

/// Leader command schedule for the formation tasks.
#[derive(Debug, Clone)]
pub struct CommandSchedule {
    pub speed: f64,
    /// `(start_s, steering)` breakpoints, piecewise constant.
    pub steering: Vec<(f64, f64)>,
    /// `(start_s, shape)` breakpoints.
    pub shapes: Vec<(f64, FormationKind)>,
    pub dt: f64,
    pub n_agents: usize,
}

fn piecewise<T: Copy>(points: &[(f64, T)], time: f64, default: T) -> T {
    points
        .iter()
        .rev()
        .find(|(start, _)| time + 1e-9 >= *start)
        .map_or(default, |&(_, v)| v)
}

impl CommandSchedule {
    pub fn command(&self, t: Tick) -> Vec<f64> {
        let time = t.0 as f64 * self.dt;
        let steer = piecewise(&self.steering, time, 0.0);
        let shape = piecewise(&self.shapes, time, FormationKind::Triangle);
        let mut z = vec![self.speed, steer, shape.id()];
        z.resize(3 * self.n_agents, 0.0);
        z
    }
}

impl ObservationScript for CommandSchedule {
    fn next(&self, t: Tick, _z: &[f64], _ideal_next: &[f64]) -> Vec<f64> {
        self.command(t + 1)
    }
}

fn replicate<T: ?Sized>(item: Arc<T>, n: usize) -> Vec<Arc<T>> {
    (0..n).map(|_| item.clone()).collect()
}

fn one_dimensional(
    task: TaskKind,
    p: TaskParams,
    controller: Arc<dyn CentralController>,
    z0: Vec<f64>,
    script: Arc<dyn ObservationScript>,
) -> Result<Scenario> {
    let truth: Arc<dyn DynamicsModel> = Arc::new(DoubleIntegrator::new(DoubleIntegratorParams {
        dt: p.dt,
        ..Default::default()
    }));
    let modeled: Arc<dyn DynamicsModel> = Arc::new(DoubleIntegrator::new(DoubleIntegratorParams {
        dt: p.dt,
        accel_scale: p.accel_ratio,
        ..Default::default()
    }));
    let hold: Arc<dyn ObservationModel> = Arc::new(HoldObservation { dim: 1 });
    let model = FleetModel::new(replicate(modeled, 2), replicate(hold, 2), controller)?;
    Ok(Scenario {
        name: task.id().to_string(),
        truth: replicate(truth, 2),
        model: Arc::new(model),
        observations: script,
        x0: vec![0.0, LEADER_SPEED, -PidGains::default().gap, LEADER_SPEED],
        z0,
        disturbed_states: vec![1],
        disturbed_observations: vec![],
    })
}

pub fn formation_controller(p: &TaskParams) -> FormationController {
    FormationController::new(
        p.formation.clone(),
        p.formation_gains,
        BicycleParams {
            dt: p.dt,
            ..Default::default()
        },
    )
}

/// Leader command schedule of a formation task.
pub fn formation_schedule(task: TaskKind, dt: f64) -> CommandSchedule {
    match task {
        TaskKind::FormationDriving => CommandSchedule {
            speed: 2.0,
            steering: vec![(0.0, 0.0), (5.0, 0.1), (10.0, -0.1), (15.0, 0.0)],
            shapes: vec![(0.0, FormationKind::Circle)],
            dt,
            n_agents: 4,
        },
        _ => CommandSchedule {
            speed: 2.0,
            steering: vec![(0.0, 0.0)],
            shapes: vec![(0.0, FormationKind::Triangle), (8.0, FormationKind::Line)],
            dt,
            n_agents: 4,
        },
    }
}

/// Fleet at speed `v` exactly on the slots of `kind`, heading along +x.
pub fn formation_start(c: &FormationController, kind: FormationKind, v: f64) -> Vec<f64> {
    let mut x = vec![0.0, 0.0, 0.0, v, 0.0];
    for o in c.spec.offsets(kind) {
        x.extend([o[0], o[1], 0.0, v, 0.0]);
    }
    x
}

fn two_dimensional(task: TaskKind, p: TaskParams) -> Result<Scenario> {
    let truth_params = BicycleParams {
        dt: p.dt,
        ..Default::default()
    };
    let modeled_params = BicycleParams {
        wheelbase: truth_params.wheelbase * p.wheelbase_ratio,
        accel_scale: p.accel_ratio,
        ..truth_params
    };
    let truth: Arc<dyn DynamicsModel> = Arc::new(Bicycle::new(truth_params));
    let modeled: Arc<dyn DynamicsModel> = Arc::new(Bicycle::new(modeled_params));
    let hold: Arc<dyn ObservationModel> = Arc::new(HoldObservation { dim: 3 });
    let controller = formation_controller(&p);
    let schedule = formation_schedule(task, p.dt);
    let z0 = schedule.command(Tick(0));
    let x0 = formation_start(&controller, FormationKind::from_id(z0[2]), schedule.speed);
    let model = FleetModel::new(
        replicate(modeled, 4),
        replicate(hold, 4),
        Arc::new(controller),
    )?;
    Ok(Scenario {
        name: task.id().to_string(),
        truth: replicate(truth, 4),
        model: Arc::new(model),
        observations: Arc::new(schedule),
        x0,
        z0,
        disturbed_states: vec![Bicycle::SPEED, Bicycle::STEER],
        disturbed_observations: vec![],
    })
}

pub fn build_scenario(task: TaskKind, p: TaskParams) -> Result<Scenario> {
    match task {
        TaskKind::LeaderLinear => one_dimensional(
            task,
            p,
            Arc::new(LeaderFollowerPid {
                gains: PidGains::default(),
            }),
            vec![LEADER_SPEED, 0.0],
            Arc::new(super::world::ModelObservations {
                models: replicate(
                    Arc::new(HoldObservation { dim: 1 }) as Arc<dyn ObservationModel>,
                    2,
                ),
            }),
        ),
        TaskKind::LeaderObstacle => {
            let params = BangBangParams::default();
            one_dimensional(
                task,
                p,
                Arc::new(LeaderObstacleBangBang { params }),
                vec![OBSTACLE_UNSEEN, 0.0],
                Arc::new(ObstacleReveal {
                    range: params.sensor_range,
                }),
            )
        }
        TaskKind::FormationDriving | TaskKind::FormationSwitching => two_dimensional(task, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::{ideal_oracle, Realization};

    #[test]
    fn ids_round_trip() {
        for k in TaskKind::ALL {
            assert_eq!(TaskKind::from_id(k.id()).unwrap(), k);
        }
        assert!(TaskKind::from_id("tunnel").is_err());
    }

    #[test]
    fn leader_stops_before_obstacle() {
        let s = build_scenario(TaskKind::LeaderObstacle, TaskParams::default()).unwrap();
        let ideal = ideal_oracle(&s, 5, &Realization::zero(&s, 2000), 2000);
        let last = ideal.x.last().unwrap();
        let front = ideal.x.iter().map(|(_, x)| x[0]).fold(f64::MIN, f64::max);
        // full braking from v_ref leaves the 2 m margin minus one slot of travel
        assert!(OBSTACLE_AT - front >= 1.5, "closest approach {front}");
        assert!(last[1].abs() < 0.1, "leader still moving at {}", last[1]);
        assert!(ideal.z.last().unwrap()[0] == OBSTACLE_AT);
    }

    #[test]
    fn switching_schedule() {
        let s = formation_schedule(TaskKind::FormationSwitching, 0.01);
        assert_eq!(s.command(Tick(799))[2], FormationKind::Triangle.id());
        assert_eq!(s.command(Tick(800))[2], FormationKind::Line.id());
        let d = formation_schedule(TaskKind::FormationDriving, 0.01);
        assert_eq!(d.command(Tick(500))[1], 0.1);
        assert_eq!(d.command(Tick(1999))[1], 0.0);
    }
}
