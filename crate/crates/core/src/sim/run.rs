use std::sync::Arc;

use super::config::RunConfig;
use super::log::RunLog;
use super::metrics::compute_metrics;
use super::tasks::build_scenario;
use super::world::{simulate, NoiseSpec, Realization, Scenario, SimSettings, Simulation};
use crate::error::Result;

/// Everything a run needs, built from its configuration.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub scenario: Scenario,
    pub settings: SimSettings,
    pub realization: Realization,
}

pub fn prepare_run(cfg: &RunConfig) -> Result<PreparedRun> {
    cfg.validate()?;
    let scenario = build_scenario(cfg.task, cfg.task_params())?;
    let l = scenario.model.layout;
    let n_ticks = cfg.n_ticks()?;
    let noise = NoiseSpec {
        sensor: cfg.sensor_noise,
        disturbance: cfg.disturbance,
        observation_disturbance: 0.0,
    };
    let realization = Realization::sample(&scenario, noise, cfg.rate_hz, n_ticks, cfg.seed);
    let settings = SimSettings {
        framework: cfg.framework,
        config: Arc::new(cfg.framework_config(l.state_dim, l.input_dim)?),
        n_ticks,
        initial_offset: None,
        belief_offset: None,
    };
    Ok(PreparedRun {
        scenario,
        settings,
        realization,
    })
}

/// Builds the run log of a finished simulation.
pub fn to_log(cfg: &RunConfig, run: &PreparedRun, sim: Simulation) -> RunLog {
    let metrics = compute_metrics(
        cfg.task,
        &cfg.task_params(),
        &sim.x,
        &sim.ideal.z,
        &sim.regret,
    );
    RunLog {
        task: cfg.task.id().to_string(),
        framework: cfg.framework.id().to_string(),
        seed: cfg.seed,
        layout: run.scenario.model.layout,
        rate_hz: cfg.rate_hz,
        delays: run.settings.config.delays,
        checksum: run.realization.disturbance.checksum(),
        stats: sim.stats,
        messages_delivered: sim.messages_delivered,
        x: sim.x,
        z: sim.ideal.z,
        u: sim.u,
        x_ideal: sim.ideal.x,
        u_ideal: sim.ideal.u,
        regret: sim.regret,
        metrics,
    }
}

/// Runs one configured simulation end to end.
pub fn run_simulation(cfg: &RunConfig) -> Result<RunLog> {
    let run = prepare_run(cfg)?;
    log::debug!("running {} / {} seed {}", cfg.task, cfg.framework, cfg.seed);
    let sim = simulate(&run.scenario, &run.settings, &run.realization)?;
    Ok(to_log(cfg, &run, sim))
}
