use super::tasks::{TaskKind, TaskParams};
use crate::controllers::{FormationGains, FormationSpec};
use crate::error::{Error, Result};
use crate::frameworks::{FrameworkConfig, FrameworkKind, RegretWeights};
use crate::optim::LbfgsOptions;
use crate::timeline::{millis_to_ticks, DelaySpec};

/// One simulation run, fully specified.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub framework: FrameworkKind,
    pub seed: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub control_hz: f64,
    pub obs_ms: f64,
    pub act_ms: f64,
    pub comm_ms: f64,
    /// Per-tick sensor noise standard deviation.
    pub sensor_noise: f64,
    /// Per-tick process disturbance standard deviation.
    pub disturbance: f64,
    pub accel_ratio: f64,
    pub wheelbase_ratio: f64,
    /// Planning horizon in control intervals.
    pub horizon: usize,
    pub q_x: f64,
    /// `None` takes the task's default, see [`RunConfig::actuation_weight`].
    pub q_u: Option<f64>,
    pub max_iters: usize,
    pub g_tol: f64,
    pub memory: usize,
    pub formation: FormationSpec,
    pub formation_gains: FormationGains,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::LeaderLinear,
            framework: FrameworkKind::OneVision,
            seed: 1,
            duration_s: 20.0,
            rate_hz: 100.0,
            control_hz: 20.0,
            obs_ms: 30.0,
            act_ms: 40.0,
            comm_ms: 50.0,
            sensor_noise: 0.005,
            disturbance: 0.005,
            accel_ratio: 1.0,
            wheelbase_ratio: 1.0,
            horizon: 20,
            q_x: 1.0,
            q_u: None,
            max_iters: 100,
            g_tol: 1e-6,
            memory: 10,
            formation: FormationSpec::default(),
            formation_gains: FormationGains::default(),
        }
    }
}

impl RunConfig {
    pub fn delays(&self) -> Result<DelaySpec> {
        DelaySpec::from_millis(
            self.obs_ms,
            self.act_ms,
            self.comm_ms,
            self.control_hz,
            self.rate_hz,
        )
    }

    pub fn n_ticks(&self) -> Result<usize> {
        if self.duration_s <= 0.0 || self.duration_s.is_nan() {
            return Err(Error::InvalidDelay(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        Ok(millis_to_ticks("duration", self.duration_s * 1000.0, self.rate_hz)? as usize)
    }

    pub fn task_params(&self) -> TaskParams {
        TaskParams {
            dt: 1.0 / self.rate_hz,
            accel_ratio: self.accel_ratio,
            wheelbase_ratio: self.wheelbase_ratio,
            formation: self.formation.clone(),
            formation_gains: self.formation_gains,
        }
    }

    /// Actuation weight: explicit, else 0.1 on the 1D tasks and 0.01 on the
    /// formation tasks, where a heavier weight leaves the one-second plan
    /// unable to remove lateral offsets of the followers.
    pub fn actuation_weight(&self) -> f64 {
        self.q_u
            .unwrap_or(if self.task.is_formation() { 0.01 } else { 0.1 })
    }

    pub fn optimizer(&self) -> LbfgsOptions {
        LbfgsOptions {
            memory: self.memory,
            g_tol: self.g_tol,
            max_iters: self.max_iters,
            ..Default::default()
        }
    }

    /// Checks every derived quantity once.
    pub fn validate(&self) -> Result<()> {
        self.delays()?;
        self.n_ticks()?;
        if self.horizon == 0 {
            return Err(Error::InvalidWeights(
                "horizon must be at least one control interval".into(),
            ));
        }
        for (name, v) in [
            ("noise.sensor", self.sensor_noise),
            ("noise.disturbance", self.disturbance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "{name} must be a finite non-negative value, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("model.accel_ratio", self.accel_ratio),
            ("model.wheelbase_ratio", self.wheelbase_ratio),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.memory == 0 {
            return Err(Error::InvalidWeights(
                "optim.memory must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn framework_config(&self, state_dim: usize, input_dim: usize) -> Result<FrameworkConfig> {
        Ok(FrameworkConfig {
            delays: self.delays()?,
            weights: RegretWeights::scaled_identity(
                state_dim,
                input_dim,
                self.q_x,
                self.actuation_weight(),
            )?,
            horizon: self.horizon,
            optimizer: self.optimizer(),
            record_replans: false,
        })
    }
}
