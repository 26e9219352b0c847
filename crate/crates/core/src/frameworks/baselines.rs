//! Baselines that evaluate the centralized controller directly on
//! delay-limited data.

use std::sync::Arc;

use super::history::Knowledge;
use super::onevision::self_estimate;
use super::{
    initial_plan, AgentController, AgentSetup, AgentStats, Decision, FleetModel, FrameworkConfig,
    TickInput, TickOutput,
};
use crate::error::Result;
use crate::timeline::{Tick, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Freshest available data, no compensation.
    Naive,
    /// Compensates only its own delays.
    Local,
    /// Also rolls peers forward, holding their last known actuation.
    ConstU,
}

#[derive(Debug)]
pub struct Baseline {
    kind: BaselineKind,
    know: Knowledge,
    model: Arc<FleetModel>,
    config: Arc<FrameworkConfig>,
    fleet_initial_u: Trajectory,
    initial_u: Trajectory,
    stats: AgentStats,
}

impl Baseline {
    pub fn new(kind: BaselineKind, setup: AgentSetup) -> Result<Self> {
        let AgentSetup {
            agent,
            model,
            config,
            x0,
            z0,
        } = setup;
        let fleet_initial_u = initial_plan(&model, &config.delays, &x0, &z0);
        let block = model.layout.input_block(agent);
        let mut initial_u = Trajectory::new(Tick(0), model.layout.input_dim);
        for (_, u) in fleet_initial_u.iter() {
            initial_u.push(&u[block.clone()]);
        }
        let know = Knowledge::new(
            agent,
            model.clone(),
            config.delays,
            &x0,
            &z0,
            initial_u.clone(),
        );
        Ok(Self {
            kind,
            know,
            model,
            config,
            fleet_initial_u,
            initial_u,
            stats: AgentStats::default(),
        })
    }

    /// Known actuation of peer `j` at `t`: the shared initial plan, then
    /// received values, then the last received one held.
    fn peer_actuation(&mut self, j: usize, t: u64) -> Vec<f64> {
        let block = self.model.layout.input_block(j);
        let cutoff = self.know.cutoffs().other_actuation;
        if t as i64 <= cutoff {
            return self.know.actuation(j, t);
        }
        if let Some(u) = self.fleet_initial_u.get(Tick(t)) {
            return u[block].to_vec();
        }
        if cutoff >= 0 {
            self.know.actuation(j, cutoff as u64)
        } else {
            self.fleet_initial_u
                .last()
                .expect("initial plan is never empty")[block]
                .to_vec()
        }
    }

    fn roll_observation(&self, j: usize, mut z: Vec<f64>, from: u64, to: u64) -> Vec<f64> {
        let h = self.model.observation[j].as_ref();
        for t in from..to {
            z = h.step(&z, Tick(t));
        }
        z
    }

    fn decide(&mut self, now: Tick) -> Decision {
        let i = self.know.agent();
        let d = self.config.delays;
        let l = self.model.layout;
        let slot = now + d.act();
        let own_q = now.signed() - d.obs() as i64;
        let peer_q = own_q - d.comm() as i64;
        let mut x = Vec::with_capacity(l.fleet_state_dim());
        let mut z = Vec::with_capacity(l.fleet_obs_dim());
        for j in 0..l.n_agents {
            let q = if j == i { own_q } else { peer_q };
            let xj = self.know.state(j, q);
            let zj = self.know.observation(j, q);
            let compensate = match self.kind {
                BaselineKind::Naive => false,
                BaselineKind::Local => j == i,
                BaselineKind::ConstU => true,
            };
            if !compensate {
                x.extend(xj);
                z.extend(zj);
                continue;
            }
            let from = q.max(0) as u64;
            let us: Vec<Vec<f64>> = if j == i {
                (from..slot.0).map(|t| self.know.actuation(i, t)).collect()
            } else {
                (from..slot.0).map(|t| self.peer_actuation(j, t)).collect()
            };
            x.extend(self_estimate(
                self.model.dynamics[j].as_ref(),
                &xj,
                Tick(from),
                &us,
            ));
            z.extend(self.roll_observation(j, zj, from, slot.0));
        }
        let fleet_u = self.model.controller.act(&x, &z, slot);
        let u = self.model.dynamics[i].saturate(&fleet_u[l.input_block(i)]);
        self.stats.replans += 1;
        self.know.commit(slot, &u, d.control_interval());
        Decision { slot, u }
    }
}

impl AgentController for Baseline {
    fn agent(&self) -> usize {
        self.know.agent()
    }

    fn initial_actuation(&self) -> &Trajectory {
        &self.initial_u
    }

    fn step(&mut self, input: TickInput<'_>) -> Result<TickOutput> {
        self.know.set_now(input.now);
        for m in input.inbox {
            self.know.ingest(m)?;
        }
        if let Some(m) = input.measurement {
            self.know.record_measurement(m.tick, m.x, m.z)?;
        }
        let decision = self
            .config
            .delays
            .is_replan_tick(input.now)
            .then(|| self.decide(input.now));
        Ok(TickOutput {
            decision,
            message: self.know.outgoing(),
        })
    }

    fn stats(&self) -> AgentStats {
        AgentStats {
            causality_violations: self.know.violations(),
            ..self.stats
        }
    }
}
