//! Simulation harness: tasks, the world loop, metrics, logs and sweeps.

mod channel;
mod config;
mod config_file;
mod log;
mod metrics;
mod run;
mod sweep;
mod tasks;
mod world;

pub use channel::DelayedChannel;
pub use config::RunConfig;
pub use config_file::{load_config, parse_config, serialize_config, set_config_value, CONFIG_KEYS};
pub use log::{format_float, Metrics, RunLog, LOG_MAGIC};
pub use metrics::{average_regret, compute_metrics, formation_deviation, gap_error};
pub use run::{prepare_run, run_simulation, to_log, PreparedRun};
pub use sweep::{par_map, run_sweep, RowKind, SweepAxis, SweepRow, SweepTable, CSV_HEADER};
pub use tasks::{
    build_scenario, formation_controller, formation_schedule, formation_start, CommandSchedule,
    TaskKind, TaskParams, LEADER_SPEED, OBSTACLE_AT,
};
pub use world::{
    ideal_oracle, simulate, AgentFleet, IdealTrajectory, ModelObservations, NoiseSpec,
    ObservationScript, Realization, Scenario, SimSettings, Simulation,
};
