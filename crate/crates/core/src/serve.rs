//! Live teleoperation: the formation fleet in real time, with the leader's
//! command fed by a websocket client.
//!
//! Wire protocol, one JSON object per line. Server to client, every control
//! interval:
//! `{"t":..,"cars":[{"id":i,"x":..,"y":..,"theta":..,"v":..}],"refs":[{"id":i,"x":..,"y":..}],"formation":"<id>","metrics":{"avg_deviation":..}}`.
//! Client to server: `{"type":"steer","accel":a,"steer_rate":r}` and
//! `{"type":"formation","id":"line"}`. Unknown fields are ignored.

use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tungstenite::Message as WsMessage;

use crate::controllers::{FormationController, FormationKind};
use crate::dynamics::{sample_noise, DynamicsModel};
use crate::error::{Error, Result};
use crate::fleet::FleetLayout;
use crate::sim::{
    build_scenario, formation_controller, formation_start, AgentFleet, RunConfig, Scenario,
};
use crate::timeline::{Tick, Trajectory};

/// Upper bound on the commanded leader speed (m/s).
pub const MAX_SPEED: f64 = 4.0;

/// Seconds over which the leader command fades out after a disconnect.
pub const DISCONNECT_DECAY_S: f64 = 0.5;

/// Window of the live deviation metric (s).
const DEVIATION_WINDOW_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LiveCommand {
    /// Held until the next steer command.
    Steer {
        accel: f64,
        steer_rate: f64,
    },
    Formation(FormationKind),
    Disconnect,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ClientMessage {
    Steer { accel: f64, steer_rate: f64 },
    Formation { id: String },
}

/// Parses one client line.
pub fn parse_command(line: &str) -> Result<LiveCommand> {
    let msg: ClientMessage =
        serde_json::from_str(line).map_err(|e| Error::MalformedMessage(e.to_string()))?;
    match msg {
        ClientMessage::Steer { accel, steer_rate }
            if accel.is_finite() && steer_rate.is_finite() =>
        {
            Ok(LiveCommand::Steer { accel, steer_rate })
        }
        ClientMessage::Steer { .. } => {
            Err(Error::MalformedMessage("non-finite steer command".into()))
        }
        ClientMessage::Formation { id } => FormationKind::from_name(&id)
            .map(LiveCommand::Formation)
            .ok_or_else(|| Error::MalformedMessage(format!("unknown formation `{id}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarFrame {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefFrame {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub avg_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frame {
    pub t: u64,
    pub cars: Vec<CarFrame>,
    pub refs: Vec<RefFrame>,
    pub formation: String,
    pub metrics: FrameMetrics,
}

#[derive(Debug, Clone, Copy)]
struct Fade {
    from: [f64; 2],
    left: u64,
}

/// Deterministic core of the live server: stepping it with the same
/// commands at the same ticks reproduces the same trajectory.
pub struct LiveSession {
    layout: FleetLayout,
    truth: Vec<Arc<dyn DynamicsModel>>,
    disturbed: Vec<usize>,
    controller: FormationController,
    fleet: AgentFleet,
    x: Vec<f64>,
    xs: Trajectory,
    zs: Trajectory,
    us: Trajectory,
    sensor: Vec<Trajectory>,
    /// `(accel, steer_rate)` currently applied.
    rates: [f64; 2],
    fade: Option<Fade>,
    /// Shape requested for the next observation.
    shape: Option<FormationKind>,
    steer_max: f64,
    rng: ChaCha8Rng,
    sensor_noise: f64,
    disturbance: f64,
    rate_hz: f64,
    control_interval: u64,
    window: VecDeque<f64>,
    window_len: usize,
}

impl LiveSession {
    /// Fleet at rest in the triangle, leader command zero.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        if !cfg.task.is_formation() {
            return Err(Error::InvalidModel(format!(
                "live mode needs a formation task, got {}",
                cfg.task
            )));
        }
        let params = cfg.task_params();
        let controller = formation_controller(&params);
        let mut scenario: Scenario = build_scenario(cfg.task, params)?;
        scenario.x0 = formation_start(&controller, FormationKind::Triangle, 0.0);
        scenario.z0 = vec![0.0; scenario.model.layout.fleet_obs_dim()];
        scenario.z0[2] = FormationKind::Triangle.id();
        let l = scenario.model.layout;
        let config = Arc::new(cfg.framework_config(l.state_dim, l.input_dim)?);
        let control_interval = config.delays.control_interval();
        let fleet = AgentFleet::new(&scenario, cfg.framework, config, &scenario.x0)?;
        let mut zs = Trajectory::new(Tick(0), l.fleet_obs_dim());
        zs.push(&scenario.z0);
        Ok(Self {
            layout: l,
            truth: scenario.truth.clone(),
            disturbed: scenario.disturbed_states.clone(),
            fleet,
            x: scenario.x0.clone(),
            xs: Trajectory::new(Tick(0), l.fleet_state_dim()),
            zs,
            us: Trajectory::new(Tick(0), l.fleet_input_dim()),
            sensor: (0..l.n_agents)
                .map(|_| Trajectory::new(Tick(0), l.state_dim))
                .collect(),
            rates: [0.0; 2],
            fade: None,
            shape: None,
            steer_max: controller.vehicle.steer_max,
            controller,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            sensor_noise: cfg.sensor_noise,
            disturbance: cfg.disturbance,
            rate_hz: cfg.rate_hz,
            control_interval,
            window: VecDeque::new(),
            window_len: ((DEVIATION_WINDOW_S * cfg.rate_hz).round() as usize).max(1),
        })
    }

    /// The next tick to be simulated.
    pub fn now(&self) -> Tick {
        Tick(self.zs.end().0 - 1)
    }

    pub fn control_interval(&self) -> u64 {
        self.control_interval
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    /// Current true fleet state.
    pub fn state(&self) -> &[f64] {
        &self.x
    }

    /// Current leader observation `(v_cmd, ψ_cmd, shape)` followed by the
    /// followers' unused observations.
    pub fn observation(&self) -> &[f64] {
        self.zs.last().expect("observation history is never empty")
    }

    pub fn states(&self) -> &Trajectory {
        &self.xs
    }

    pub fn actuations(&self) -> &Trajectory {
        &self.us
    }

    /// Takes effect from the next tick's observation.
    pub fn apply(&mut self, cmd: LiveCommand) {
        let z = [self.observation()[0], self.observation()[1]];
        match cmd {
            LiveCommand::Steer { accel, steer_rate } => {
                self.rates = [accel, steer_rate];
                self.fade = None;
            }
            LiveCommand::Formation(kind) => self.shape = Some(kind),
            LiveCommand::Disconnect => {
                self.rates = [0.0; 2];
                self.fade = Some(Fade {
                    from: [z[0], z[1]],
                    left: ((DISCONNECT_DECAY_S * self.rate_hz).round() as u64).max(1),
                });
            }
        }
    }

    fn next_observation(&mut self) -> Vec<f64> {
        let mut z = self.observation().to_vec();
        let dt = 1.0 / self.rate_hz;
        if let Some(kind) = self.shape.take() {
            z[2] = kind.id();
        }
        match &mut self.fade {
            Some(f) => {
                let total = ((DISCONNECT_DECAY_S * self.rate_hz).round() as u64).max(1) as f64;
                f.left = f.left.saturating_sub(1);
                let scale = f.left as f64 / total;
                z[0] = f.from[0] * scale;
                z[1] = f.from[1] * scale;
                if f.left == 0 {
                    self.fade = None;
                }
            }
            None => {
                z[0] = (z[0] + self.rates[0] * dt).clamp(0.0, MAX_SPEED);
                z[1] = (z[1] + self.rates[1] * dt).clamp(-self.steer_max, self.steer_max);
            }
        }
        z
    }

    pub fn step(&mut self) -> Result<()> {
        let now = self.now();
        let l = self.layout;
        let all: Vec<usize> = (0..l.state_dim).collect();
        for i in 0..l.n_agents {
            let noise = sample_noise(
                self.sensor_noise,
                self.rate_hz,
                1,
                l.state_dim,
                &all,
                &mut self.rng,
            );
            self.sensor[i].push(noise.at(Tick(0)));
        }
        self.xs.push(&self.x);
        let u = self.fleet.step(now, &self.xs, &self.zs, &self.sensor)?;
        let mut next = Vec::with_capacity(self.x.len());
        for (j, f) in self.truth.iter().enumerate() {
            let d = sample_noise(
                self.disturbance,
                self.rate_hz,
                1,
                l.state_dim,
                &self.disturbed,
                &mut self.rng,
            );
            let xj = f.step(&self.x[l.state_block(j)], &u[l.input_block(j)], now);
            next.extend(f.perturb(&xj, d.at(Tick(0))));
        }
        self.us.push(&u);
        self.x = next;
        let z = self.next_observation();
        self.zs.push(&z);
        let dev = self.squared_deviation();
        self.window.push_back(dev);
        if self.window.len() > self.window_len {
            self.window.pop_front();
        }
        Ok(())
    }

    fn squared_deviation(&self) -> f64 {
        let slots = self.controller.slot_positions(&self.x, self.observation());
        let sq: f64 = slots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let at = self.layout.state_dim * (i + 1);
                (self.x[at] - s[0]).powi(2) + (self.x[at + 1] - s[1]).powi(2)
            })
            .sum();
        sq / slots.len().max(1) as f64
    }

    /// RMS follower distance to the slots over the last second.
    pub fn deviation(&self) -> f64 {
        if self.window.is_empty() {
            return self.squared_deviation().sqrt();
        }
        (self.window.iter().sum::<f64>() / self.window.len() as f64).sqrt()
    }

    pub fn frame(&self) -> Frame {
        let l = self.layout;
        let cars = (0..l.n_agents)
            .map(|i| {
                let s = &self.x[l.state_block(i)];
                CarFrame {
                    id: i,
                    x: s[0],
                    y: s[1],
                    theta: s[2],
                    v: s[3],
                }
            })
            .collect();
        let refs = self
            .controller
            .slot_positions(&self.x, self.observation())
            .into_iter()
            .enumerate()
            .map(|(i, p)| RefFrame {
                id: i + 1,
                x: p[0],
                y: p[1],
            })
            .collect();
        Frame {
            t: self.now().0,
            cars,
            refs,
            formation: FormationKind::from_id(self.observation()[2])
                .name()
                .to_string(),
            metrics: FrameMetrics {
                avg_deviation: self.deviation(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Wall-clock multiplier; 2 runs twice as fast as real time.
    pub speed: f64,
    /// Stop after this many ticks; `None` runs until stopped.
    pub max_ticks: Option<u64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            speed: 1.0,
            max_ticks: None,
        }
    }
}

/// Latest-wins slots between the connection handler and the sim loop.
#[derive(Debug, Default)]
struct Inbox {
    steer: Option<LiveCommand>,
    formation: Option<LiveCommand>,
    disconnected: bool,
}

#[derive(Default)]
struct Shared {
    inbox: Mutex<Inbox>,
    frames: Mutex<Option<SyncSender<String>>>,
    busy: AtomicBool,
    done: AtomicBool,
}

impl Shared {
    fn take_commands(&self) -> Vec<LiveCommand> {
        let mut inbox = self.inbox.lock().expect("inbox lock");
        let mut out = Vec::new();
        if std::mem::take(&mut inbox.disconnected) {
            out.push(LiveCommand::Disconnect);
        }
        out.extend(inbox.formation.take());
        out.extend(inbox.steer.take());
        out
    }
}

fn handle_client(stream: TcpStream, shared: &Shared) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_default();
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("websocket handshake with {peer} failed: {e}");
            return;
        }
    };
    log::info!("client {peer} connected");
    if let Err(e) = ws
        .get_ref()
        .set_read_timeout(Some(Duration::from_millis(2)))
    {
        log::warn!("cannot poll {peer}: {e}");
        return;
    }
    let (tx, rx) = sync_channel::<String>(8);
    *shared.frames.lock().expect("frame slot lock") = Some(tx);
    while !shared.done.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(WsMessage::Text(text)) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    match parse_command(line) {
                        Ok(cmd) => {
                            let mut inbox = shared.inbox.lock().expect("inbox lock");
                            match cmd {
                                LiveCommand::Formation(_) => inbox.formation = Some(cmd),
                                _ => inbox.steer = Some(cmd),
                            }
                        }
                        Err(e) => log::warn!("ignoring message from {peer}: {e}"),
                    }
                }
            }
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => {
                log::info!("client {peer}: {e}");
                break;
            }
        }
        let mut failed = false;
        while let Ok(frame) = rx.try_recv() {
            if ws.send(WsMessage::Text(frame)).is_err() {
                failed = true;
                break;
            }
        }
        if failed {
            break;
        }
    }
    let _ = ws.close(None);
    *shared.frames.lock().expect("frame slot lock") = None;
    shared.inbox.lock().expect("inbox lock").disconnected = true;
    shared.busy.store(false, Ordering::Release);
    log::info!("client {peer} disconnected");
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    if let Err(e) = listener.set_nonblocking(true) {
        log::error!("cannot poll the listener: {e}");
        return;
    }
    while !shared.done.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, addr)) => {
                if shared.busy.swap(true, Ordering::AcqRel) {
                    log::info!("rejecting {addr}: a client is already connected");
                    continue;
                }
                if stream.set_nonblocking(false).is_err() {
                    shared.busy.store(false, Ordering::Release);
                    continue;
                }
                let shared = shared.clone();
                std::thread::spawn(move || handle_client(stream, &shared));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(10))
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
}

/// Runs the live fleet on `listener` until `stop` is set or the tick budget
/// runs out, and returns the session for inspection.
pub fn serve(
    listener: TcpListener,
    cfg: &RunConfig,
    opts: ServeOptions,
    stop: &AtomicBool,
) -> Result<LiveSession> {
    if !(opts.speed > 0.0 && opts.speed.is_finite()) {
        return Err(Error::InvalidModel(format!(
            "speed must be positive, got {}",
            opts.speed
        )));
    }
    let mut session = LiveSession::new(cfg)?;
    let shared = Arc::new(Shared::default());
    let acceptor = {
        let shared = shared.clone();
        std::thread::spawn(move || accept_loop(listener, shared))
    };
    let period = Duration::from_secs_f64(1.0 / (session.rate_hz() * opts.speed));
    let mut deadline = Instant::now();
    let result = loop {
        if stop.load(Ordering::Relaxed) || opts.max_ticks.is_some_and(|m| session.now().0 >= m) {
            break Ok(());
        }
        for cmd in shared.take_commands() {
            session.apply(cmd);
        }
        if let Err(e) = session.step() {
            break Err(e);
        }
        if session.now().0 % session.control_interval() == 0 {
            if let Some(tx) = shared.frames.lock().expect("frame slot lock").as_ref() {
                let line =
                    serde_json::to_string(&session.frame()).expect("frames serialize") + "\n";
                if let Err(TrySendError::Full(_)) = tx.try_send(line) {
                    log::debug!("client is slow, dropped a frame");
                }
            }
        }
        deadline += period;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        } else if now - deadline > Duration::from_millis(100) {
            log::warn!("simulation fell {:?} behind real time", now - deadline);
            deadline = now;
        }
    };
    shared.done.store(true, Ordering::Relaxed);
    let _ = acceptor.join();
    result.map(|_| session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TaskKind;

    fn config() -> RunConfig {
        RunConfig {
            task: TaskKind::FormationSwitching,
            ..Default::default()
        }
    }

    #[test]
    fn command_parsing() {
        assert_eq!(
            parse_command(r#"{"type":"steer","accel":0.5,"steer_rate":-0.1,"extra":1}"#).unwrap(),
            LiveCommand::Steer {
                accel: 0.5,
                steer_rate: -0.1
            }
        );
        assert_eq!(
            parse_command(r#"{"type":"formation","id":"line"}"#).unwrap(),
            LiveCommand::Formation(FormationKind::Line)
        );
        assert!(parse_command(r#"{"type":"formation","id":"blob"}"#).is_err());
        assert!(parse_command(r#"{"type":"jump"}"#).is_err());
        assert!(parse_command("not json").is_err());
    }

    #[test]
    fn idles_without_input() {
        let mut s = LiveSession::new(&RunConfig {
            sensor_noise: 0.0,
            disturbance: 0.0,
            ..config()
        })
        .unwrap();
        for _ in 0..100 {
            s.step().unwrap();
        }
        assert!(s.deviation() < 1e-9);
        assert_eq!(s.observation()[0], 0.0);
        let speeds: Vec<f64> = (0..4).map(|i| s.state()[5 * i + 3]).collect();
        assert!(speeds.iter().all(|v| v.abs() < 1e-9), "{speeds:?}");
    }

    #[test]
    fn disconnect_fades_the_command() {
        let mut s = LiveSession::new(&config()).unwrap();
        s.apply(LiveCommand::Steer {
            accel: 2.0,
            steer_rate: 0.0,
        });
        for _ in 0..100 {
            s.step().unwrap();
        }
        assert!((s.observation()[0] - 2.0).abs() < 1e-9);
        s.apply(LiveCommand::Disconnect);
        for _ in 0..25 {
            s.step().unwrap();
        }
        assert!((s.observation()[0] - 1.0).abs() < 1e-9);
        for _ in 0..25 {
            s.step().unwrap();
        }
        assert_eq!(s.observation()[0], 0.0);
    }
}
