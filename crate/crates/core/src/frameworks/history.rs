//! One agent's view of the fleet history, filled only by its own sensor and
//! by delivered messages. Every read is checked against the availability
//! cutoffs of the current tick.

use std::sync::Arc;

use super::message::{Message, Segment, SegmentKind};
use super::FleetModel;
use crate::dynamics::{measure_disturbance, measure_observation_disturbance};
use crate::error::{Error, Result};
use crate::timeline::{available_history, DelaySpec, HistoryCutoffs, Tick, Trajectory};

#[derive(Debug, Clone)]
pub struct Knowledge {
    agent: usize,
    model: Arc<FleetModel>,
    delays: DelaySpec,
    now: Tick,
    cutoffs: HistoryCutoffs,
    x0: Vec<f64>,
    z0: Vec<f64>,
    x: Vec<Trajectory>,
    z: Vec<Trajectory>,
    dx: Vec<Trajectory>,
    dz: Vec<Trajectory>,
    u: Vec<Trajectory>,
    violations: u64,
}

impl Knowledge {
    /// `own_u` holds the agent's committed actuation from tick 0.
    pub fn new(
        agent: usize,
        model: Arc<FleetModel>,
        delays: DelaySpec,
        x0: &[f64],
        z0: &[f64],
        own_u: Trajectory,
    ) -> Self {
        let l = model.layout;
        let n = l.n_agents;
        let traj = |dim| vec![Trajectory::new(Tick(0), dim); n];
        let mut u = traj(l.input_dim);
        u[agent] = own_u;
        let cutoffs = available_history(agent, n, Tick(0), &delays, delays.seeded_history_start())
            .expect("tick 0 lies inside the seeded history");
        Self {
            agent,
            model,
            delays,
            now: Tick(0),
            cutoffs,
            x0: x0.to_vec(),
            z0: z0.to_vec(),
            x: traj(l.state_dim),
            z: traj(l.obs_dim),
            dx: traj(l.state_dim),
            dz: traj(l.obs_dim),
            u,
            violations: 0,
        }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn cutoffs(&self) -> HistoryCutoffs {
        self.cutoffs
    }

    pub fn model(&self) -> &FleetModel {
        &self.model
    }

    pub fn delays(&self) -> &DelaySpec {
        &self.delays
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    pub fn initial_x(&self, j: usize) -> &[f64] {
        &self.x0[self.model.layout.state_block(j)]
    }

    pub fn initial_z(&self, j: usize) -> &[f64] {
        &self.z0[self.model.layout.obs_block(j)]
    }

    pub fn initial_fleet(&self) -> (&[f64], &[f64]) {
        (&self.x0, &self.z0)
    }

    pub fn set_now(&mut self, now: Tick) {
        self.now = now;
        self.cutoffs = available_history(
            self.agent,
            self.model.n_agents(),
            now,
            &self.delays,
            self.delays.seeded_history_start(),
        )
        .expect("non-negative ticks stay inside the seeded history");
    }

    /// Files a delivered message into the per-peer trajectories.
    pub fn ingest(&mut self, msg: &Message) -> Result<()> {
        if msg.sender as usize == self.agent {
            return Err(Error::MalformedMessage(
                "agent received its own broadcast".into(),
            ));
        }
        if msg.sent_at.0 + self.delays.comm() != self.now.0 {
            return Err(Error::MalformedMessage(format!(
                "message sent at {} delivered at {} with delay {}",
                msg.sent_at,
                self.now,
                self.delays.comm()
            )));
        }
        for seg in &msg.segments {
            self.file(seg)?;
        }
        Ok(())
    }

    fn file(&mut self, seg: &Segment) -> Result<()> {
        let j = seg.agent as usize;
        if j >= self.model.n_agents() || j == self.agent {
            return Err(Error::MalformedMessage(format!("segment for agent {j}")));
        }
        let traj = match seg.kind {
            SegmentKind::State => &mut self.x[j],
            SegmentKind::Observation => &mut self.z[j],
            SegmentKind::StateDisturbance => &mut self.dx[j],
            SegmentKind::ObservationDisturbance => &mut self.dz[j],
            SegmentKind::Actuation => &mut self.u[j],
        };
        if seg.dim as usize != traj.dim() || seg.start != traj.end() {
            return Err(Error::MalformedMessage(format!(
                "{:?} segment of agent {j} at {} (dim {}) does not extend history ending at {} (dim {})",
                seg.kind,
                seg.start,
                seg.dim,
                traj.end(),
                traj.dim()
            )));
        }
        for k in 0..seg.count as usize {
            traj.push(seg.row(k));
        }
        Ok(())
    }

    /// Records the own measurement of tick `m.tick` and derives the own
    /// disturbances of the preceding tick.
    pub fn record_measurement(&mut self, tick: Tick, x: &[f64], z: &[f64]) -> Result<()> {
        let i = self.agent;
        if tick != self.x[i].end() {
            return Err(Error::MalformedMessage(format!(
                "own measurement for {tick} out of order"
            )));
        }
        self.x[i].push(x);
        self.z[i].push(z);
        if let Some(prev) = tick.back(1) {
            let f = self.model.dynamics[i].as_ref();
            let h = self.model.observation[i].as_ref();
            let dx = measure_disturbance(f, x, self.x[i].at(prev), self.u[i].at(prev), prev);
            let dz = measure_observation_disturbance(h, z, self.z[i].at(prev), prev);
            self.dx[i].push(&dx);
            self.dz[i].push(&dz);
        }
        Ok(())
    }

    /// Appends own committed actuation for the next `count` ticks.
    pub fn commit(&mut self, slot: Tick, u: &[f64], count: u64) {
        let own = &mut self.u[self.agent];
        assert_eq!(own.end(), slot, "actuation committed out of order");
        for _ in 0..count {
            own.push(u);
        }
    }

    fn check(&mut self, t: i64, own_cutoff: i64, other_cutoff: i64, j: usize) {
        let cutoff = if j == self.agent {
            own_cutoff
        } else {
            other_cutoff
        };
        if t > cutoff {
            self.violations += 1;
            log::error!(
                "agent {} read tick {t} of agent {j} at {} (cutoff {cutoff})",
                self.agent,
                self.now
            );
        }
    }

    /// State of agent `j` at tick `t`; negative ticks read the constant
    /// initial history.
    pub fn state(&mut self, j: usize, t: i64) -> Vec<f64> {
        let c = self.cutoffs;
        self.check(t, c.own_state, c.other_state, j);
        if t < 0 {
            return self.initial_x(j).to_vec();
        }
        self.x[j]
            .get(Tick(t as u64))
            .unwrap_or_else(|| panic!("agent {} has no state of {j} at {t}", self.agent))
            .to_vec()
    }

    pub fn observation(&mut self, j: usize, t: i64) -> Vec<f64> {
        let c = self.cutoffs;
        self.check(t, c.own_observation(), c.other_observation(), j);
        if t < 0 {
            return self.initial_z(j).to_vec();
        }
        self.z[j]
            .get(Tick(t as u64))
            .unwrap_or_else(|| panic!("agent {} has no observation of {j} at {t}", self.agent))
            .to_vec()
    }

    /// Measured `δx_j(t)`; needs the state at `t + 1`.
    pub fn state_disturbance(&mut self, j: usize, t: u64) -> Vec<f64> {
        let c = self.cutoffs;
        self.check(t as i64 + 1, c.own_state, c.other_state, j);
        self.dx[j]
            .get(Tick(t))
            .unwrap_or_else(|| panic!("agent {} has no δx of {j} at {t}", self.agent))
            .to_vec()
    }

    pub fn observation_disturbance(&mut self, j: usize, t: u64) -> Vec<f64> {
        let c = self.cutoffs;
        self.check(t as i64 + 1, c.own_observation(), c.other_observation(), j);
        self.dz[j]
            .get(Tick(t))
            .unwrap_or_else(|| panic!("agent {} has no δz of {j} at {t}", self.agent))
            .to_vec()
    }

    pub fn actuation(&mut self, j: usize, t: u64) -> Vec<f64> {
        let c = self.cutoffs;
        self.check(t as i64, c.own_actuation, c.other_actuation, j);
        self.u[j]
            .get(Tick(t))
            .unwrap_or_else(|| panic!("agent {} has no actuation of {j} at {t}", self.agent))
            .to_vec()
    }

    /// Latest tick for which agent `j`'s state has been received.
    pub fn latest_state_tick(&self, j: usize) -> Option<Tick> {
        self.x[j].end().back(1)
    }

    /// The per-tick broadcast: own measurement of `now − T^x`, the
    /// disturbances of the tick before it, and the actuation applied now.
    pub fn outgoing(&self) -> Message {
        let i = self.agent;
        let now = self.now;
        let mut msg = Message::new(i, now);
        if let Some(q) = now.back(self.delays.obs()) {
            msg.segments
                .push(Segment::single(SegmentKind::State, i, q, self.x[i].at(q)));
            msg.segments.push(Segment::single(
                SegmentKind::Observation,
                i,
                q,
                self.z[i].at(q),
            ));
            if let Some(p) = q.back(1) {
                msg.segments.push(Segment::single(
                    SegmentKind::StateDisturbance,
                    i,
                    p,
                    self.dx[i].at(p),
                ));
                msg.segments.push(Segment::single(
                    SegmentKind::ObservationDisturbance,
                    i,
                    p,
                    self.dz[i].at(p),
                ));
            }
        }
        msg.segments.push(Segment::single(
            SegmentKind::Actuation,
            i,
            now,
            self.u[i].at(now),
        ));
        msg
    }
}
