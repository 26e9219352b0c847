//! The simulated world: true dynamics, sensors, channels and the ideal
//! reference trajectory.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::channel::DelayedChannel;
use crate::dynamics::{sample_noise, DisturbanceRealization, DynamicsModel, ObservationModel};
use crate::error::{Error, Result};
use crate::fleet::FleetLayout;
use crate::frameworks::{
    AgentController, AgentSetup, AgentStats, FleetModel, FrameworkConfig, FrameworkKind,
    Measurement, Message, ReplanRecord, TickInput,
};
use crate::timeline::{DelaySpec, Tick, Trajectory, BASE_RATE_HZ};

/// How the true observations evolve. Observations never depend on the
/// actual fleet; `ideal_next` is the ideal fleet state at `t + 1`.
pub trait ObservationScript: Send + Sync + fmt::Debug {
    fn next(&self, t: Tick, z: &[f64], ideal_next: &[f64]) -> Vec<f64>;
}

/// True observation dynamics given per agent by observation models.
#[derive(Debug, Clone)]
pub struct ModelObservations {
    pub models: Vec<Arc<dyn ObservationModel>>,
}

impl ObservationScript for ModelObservations {
    fn next(&self, t: Tick, z: &[f64], _ideal_next: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(z.len());
        let mut at = 0;
        for h in &self.models {
            let d = h.obs_dim();
            out.extend(h.step(&z[at..at + d], t));
            at += d;
        }
        out
    }
}

/// Everything physical about a run plus the models the agents are given.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    /// True per-agent dynamics `f_j`.
    pub truth: Vec<Arc<dyn DynamicsModel>>,
    /// Modeled dynamics, observation models and centralized controller.
    pub model: Arc<FleetModel>,
    pub observations: Arc<dyn ObservationScript>,
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
    /// State components that receive process noise.
    pub disturbed_states: Vec<usize>,
    /// Observation components that receive process noise.
    pub disturbed_observations: Vec<usize>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("model", &self.model)
            .field("x0", &self.x0)
            .field("z0", &self.z0)
            .finish_non_exhaustive()
    }
}

/// Noise strengths: per-tick standard deviations at the base rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sensor: f64,
    pub disturbance: f64,
    pub observation_disturbance: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        sensor: 0.0,
        disturbance: 0.0,
        observation_disturbance: 0.0,
    };
}

/// Pre-sampled randomness of a run: process disturbances shared by the
/// actual and ideal fleets, and sensor noise on the actual fleet's
/// measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub disturbance: DisturbanceRealization,
    /// Per-agent additive noise on the measured state, indexed by the
    /// measured tick.
    pub sensor: Vec<Trajectory>,
}

impl Realization {
    pub fn sample(
        scenario: &Scenario,
        noise: NoiseSpec,
        rate_hz: f64,
        n_ticks: usize,
        seed: u64,
    ) -> Self {
        let l = scenario.model.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all_states: Vec<usize> = (0..l.state_dim).collect();
        let dx = (0..l.n_agents)
            .map(|_| {
                sample_noise(
                    noise.disturbance,
                    rate_hz,
                    n_ticks,
                    l.state_dim,
                    &scenario.disturbed_states,
                    &mut rng,
                )
            })
            .collect();
        let dz = (0..l.n_agents)
            .map(|_| {
                sample_noise(
                    noise.observation_disturbance,
                    rate_hz,
                    n_ticks,
                    l.obs_dim,
                    &scenario.disturbed_observations,
                    &mut rng,
                )
            })
            .collect();
        let sensor = (0..l.n_agents)
            .map(|_| {
                sample_noise(
                    noise.sensor,
                    rate_hz,
                    n_ticks,
                    l.state_dim,
                    &all_states,
                    &mut rng,
                )
            })
            .collect();
        Self {
            disturbance: DisturbanceRealization { dx, dz, seed },
            sensor,
        }
    }

    /// No randomness at all.
    pub fn zero(scenario: &Scenario, n_ticks: usize) -> Self {
        Self::sample(scenario, NoiseSpec::NONE, BASE_RATE_HZ, n_ticks, 0)
    }
}

/// Ideal fleet trajectory: the true closed loop under the centralized
/// controller with zero delay, driven by the shared realization.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealTrajectory {
    pub x: Trajectory,
    pub z: Trajectory,
    pub u: Trajectory,
}

fn true_step(
    truth: &[Arc<dyn DynamicsModel>],
    layout: &crate::fleet::FleetLayout,
    dist: &DisturbanceRealization,
    x: &[f64],
    u: &[f64],
    t: Tick,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for (j, f) in truth.iter().enumerate() {
        out.extend(crate::dynamics::step_true(
            f.as_ref(),
            dist,
            j,
            &x[layout.state_block(j)],
            &u[layout.input_block(j)],
            t,
        ));
    }
    out
}

/// Rolls the ideal fleet for `n_ticks`; trajectories hold ticks
/// `[0, n_ticks)`. The centralized controller is evaluated at slot starts
/// and held in between, like the distributed controllers.
pub fn ideal_oracle(
    scenario: &Scenario,
    control_interval: u64,
    realization: &Realization,
    n_ticks: usize,
) -> IdealTrajectory {
    let l = scenario.model.layout;
    let dist = &realization.disturbance;
    let mut xs = Trajectory::with_capacity(Tick(0), l.fleet_state_dim(), n_ticks);
    let mut zs = Trajectory::with_capacity(Tick(0), l.fleet_obs_dim(), n_ticks);
    let mut us = Trajectory::with_capacity(Tick(0), l.fleet_input_dim(), n_ticks);
    let mut x = scenario.x0.clone();
    let mut z = scenario.z0.clone();
    let mut u = Vec::new();
    for t in 0..n_ticks as u64 {
        let tick = Tick(t);
        if t % control_interval == 0 {
            u = scenario.model.controller.act(&x, &z, tick);
        }
        xs.push(&x);
        zs.push(&z);
        us.push(&u);
        let next = true_step(&scenario.truth, &l, dist, &x, &u, tick);
        let mut zn = scenario.observations.next(tick, &z, &next);
        for j in 0..l.n_agents {
            let d = dist.dz[j].at(tick);
            for (v, e) in zn[l.obs_block(j)].iter_mut().zip(d) {
                *v += e;
            }
        }
        x = next;
        z = zn;
    }
    IdealTrajectory {
        x: xs,
        z: zs,
        u: us,
    }
}

/// Run-level knobs of one simulation.
#[derive(Debug, Clone)]
pub struct SimSettings {
    pub framework: FrameworkKind,
    pub config: Arc<FrameworkConfig>,
    pub n_ticks: usize,
    /// Added to the physical initial state only; agents and the ideal
    /// trajectory start from the scenario's `x0`.
    pub initial_offset: Option<Vec<f64>>,
    /// Added to the initial state the agents are told; the physical fleet
    /// and the ideal trajectory keep `x0`.
    pub belief_offset: Option<Vec<f64>>,
}

/// Raw result of [`simulate`].
#[derive(Debug, Clone)]
pub struct Simulation {
    pub x: Trajectory,
    pub u: Trajectory,
    pub ideal: IdealTrajectory,
    /// Per-tick fleet regret.
    pub regret: Vec<f64>,
    pub stats: AgentStats,
    pub messages_delivered: u64,
    /// Per agent, when the framework records them.
    pub replans: Vec<Vec<ReplanRecord>>,
}

/// Runs the distributed fleet against the ideal reference.
pub fn simulate(
    scenario: &Scenario,
    settings: &SimSettings,
    realization: &Realization,
) -> Result<Simulation> {
    let l = scenario.model.layout;
    let n_ticks = settings.n_ticks;
    let delays = settings.config.delays;
    let ci = delays.control_interval();
    if realization.disturbance.n_ticks() < n_ticks {
        return Err(Error::DimensionMismatch {
            expected: n_ticks,
            got: realization.disturbance.n_ticks(),
            context: "realization length",
        });
    }
    let ideal = ideal_oracle(scenario, ci, realization, n_ticks);

    let mut believed_x0 = scenario.x0.clone();
    if let Some(off) = &settings.belief_offset {
        for (v, d) in believed_x0.iter_mut().zip(off) {
            *v += d;
        }
    }
    let mut fleet = AgentFleet::new(
        scenario,
        settings.framework,
        settings.config.clone(),
        &believed_x0,
    )?;

    let mut x = scenario.x0.clone();
    if let Some(off) = &settings.initial_offset {
        for (v, d) in x.iter_mut().zip(off) {
            *v += d;
        }
    }
    let mut xs = Trajectory::with_capacity(Tick(0), l.fleet_state_dim(), n_ticks);
    let mut us = Trajectory::with_capacity(Tick(0), l.fleet_input_dim(), n_ticks);
    let mut regret = Vec::with_capacity(n_ticks);
    let weights = &settings.config.weights;

    for t in 0..n_ticks as u64 {
        let now = Tick(t);
        xs.push(&x);
        let u = fleet.step(now, &xs, &ideal.z, &realization.sensor)?;
        us.push(&u);
        regret.push(weights.fleet_loss(&scenario.model, &x, ideal.x.at(now), &u, ideal.u.at(now)));
        x = true_step(&scenario.truth, &l, &realization.disturbance, &x, &u, now);
    }

    Ok(Simulation {
        x: xs,
        u: us,
        regret,
        stats: fleet.stats(),
        messages_delivered: fleet.messages_delivered(),
        replans: fleet.replans(),
        ideal,
    })
}

/// The distributed agents of a run, their broadcast channel and the
/// actuation each has committed so far.
pub struct AgentFleet {
    agents: Vec<Box<dyn AgentController>>,
    schedule: Vec<Trajectory>,
    channel: DelayedChannel<Vec<u8>>,
    measured: Vec<Vec<f64>>,
    truth: Vec<Arc<dyn DynamicsModel>>,
    layout: FleetLayout,
    delays: DelaySpec,
}

impl AgentFleet {
    /// Agents start from the belief `x0` about the initial fleet state.
    pub fn new(
        scenario: &Scenario,
        framework: FrameworkKind,
        config: Arc<FrameworkConfig>,
        x0: &[f64],
    ) -> Result<Self> {
        let l = scenario.model.layout;
        let delays = config.delays;
        let agents: Vec<Box<dyn AgentController>> = (0..l.n_agents)
            .map(|agent| {
                framework.build(AgentSetup {
                    agent,
                    model: scenario.model.clone(),
                    config: config.clone(),
                    x0: x0.to_vec(),
                    z0: scenario.z0.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schedule: agents
                .iter()
                .map(|a| a.initial_actuation().clone())
                .collect(),
            agents,
            channel: DelayedChannel::new(delays.comm()),
            measured: vec![Vec::new(); l.n_agents],
            truth: scenario.truth.clone(),
            layout: l,
            delays,
        })
    }

    /// Runs every agent for tick `now` and returns the saturated fleet
    /// actuation applied at `now`. `xs` and `zs` hold the true states and
    /// observations through `now`; `sensor[i]` is agent `i`'s sensor noise.
    pub fn step(
        &mut self,
        now: Tick,
        xs: &Trajectory,
        zs: &Trajectory,
        sensor: &[Trajectory],
    ) -> Result<Vec<f64>> {
        let l = self.layout;
        let ci = self.delays.control_interval();
        let delivered: Vec<Message> = self
            .channel
            .deliver(now)
            .iter()
            .map(|b| Message::decode(b))
            .collect::<Result<_>>()?;
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let q = now.back(self.delays.obs());
            if let Some(q) = q {
                let truth = &xs.at(q)[l.state_block(i)];
                self.measured[i] = self.truth[i].perturb(truth, sensor[i].at(q));
            }
            let z_meas;
            let measurement = match q {
                Some(q) => {
                    z_meas = zs.at(q)[l.obs_block(i)].to_vec();
                    Some(Measurement {
                        tick: q,
                        x: &self.measured[i],
                        z: &z_meas,
                    })
                }
                None => None,
            };
            let inbox: Vec<Message> = delivered
                .iter()
                .filter(|m| m.sender as usize != i)
                .cloned()
                .collect();
            let out = agent.step(TickInput {
                now,
                measurement,
                inbox: &inbox,
            })?;
            if let Some(d) = out.decision {
                if d.slot != self.schedule[i].end() {
                    return Err(Error::InvalidDelay(format!(
                        "agent {i} decided slot {} but its schedule ends at {}",
                        d.slot,
                        self.schedule[i].end()
                    )));
                }
                for _ in 0..ci {
                    self.schedule[i].push(&d.u);
                }
            }
            self.channel.send(now, out.message.encode());
        }
        let mut u = Vec::with_capacity(l.fleet_input_dim());
        for (i, s) in self.schedule.iter().enumerate() {
            let ui = s
                .get(now)
                .unwrap_or_else(|| panic!("agent {i} has no actuation for tick {now}"));
            u.extend(self.truth[i].saturate(ui));
        }
        Ok(u)
    }

    pub fn stats(&self) -> AgentStats {
        let mut stats = AgentStats::default();
        for a in &self.agents {
            let s = a.stats();
            stats.replans += s.replans;
            stats.unconverged += s.unconverged;
            stats.causality_violations += s.causality_violations;
        }
        stats
    }

    pub fn messages_delivered(&self) -> u64 {
        self.channel.delivered()
    }

    pub fn replans(&self) -> Vec<Vec<ReplanRecord>> {
        self.agents.iter().map(|a| a.replans().to_vec()).collect()
    }
}
