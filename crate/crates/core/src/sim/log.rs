//! Run records and their packed binary form.
//!
//! Layout, all little-endian: magic `OVLOG1`; `u32`-length-prefixed UTF-8
//! task and framework ids; `u64` seed; `u32` agents, state, observation and
//! input dimensions; `u64` tick count, observation, actuation and
//! communication delays and control interval; `f64` rate; `u64` realization
//! checksum, replans, unconverged replans, causality violations and
//! delivered messages; four `f64` metrics (NaN when not applicable); then
//! the `f64` arrays x, z, u, x*, u* (tick-major) and the per-tick regret.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fleet::FleetLayout;
use crate::frameworks::AgentStats;
use crate::timeline::{DelaySpec, Tick, Trajectory};

pub const LOG_MAGIC: &[u8; 6] = b"OVLOG1";

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub avg_regret: f64,
    pub log_loss: f64,
    /// Leader/follower tasks only.
    pub avg_distance: Option<f64>,
    /// Formation tasks only.
    pub avg_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub task: String,
    pub framework: String,
    pub seed: u64,
    pub layout: FleetLayout,
    pub rate_hz: f64,
    pub delays: DelaySpec,
    /// Checksum of the disturbance realization shared by both fleets.
    pub checksum: u64,
    pub stats: AgentStats,
    pub messages_delivered: u64,
    pub x: Trajectory,
    /// Observations; identical for the actual and ideal fleets.
    pub z: Trajectory,
    pub u: Trajectory,
    pub x_ideal: Trajectory,
    pub u_ideal: Trajectory,
    pub regret: Vec<f64>,
    pub metrics: Metrics,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::MalformedLog(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.bytes(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.bytes(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.bytes(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|e| Error::MalformedLog(e.to_string()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8)
            .is_none_or(|b| b > self.buf.len() - self.pos)
        {
            return Err(Error::MalformedLog(format!(
                "array of {n} values exceeds the file"
            )));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn from_opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

impl RunLog {
    pub fn n_ticks(&self) -> usize {
        self.x.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(LOG_MAGIC);
        put_str(&mut out, &self.task);
        put_str(&mut out, &self.framework);
        out.extend(self.seed.to_le_bytes());
        let l = &self.layout;
        for d in [l.n_agents, l.state_dim, l.obs_dim, l.input_dim] {
            out.extend((d as u32).to_le_bytes());
        }
        let d = &self.delays;
        for v in [
            self.n_ticks() as u64,
            d.obs(),
            d.act(),
            d.comm(),
            d.control_interval(),
        ] {
            out.extend(v.to_le_bytes());
        }
        out.extend(self.rate_hz.to_le_bytes());
        let s = &self.stats;
        for v in [
            self.checksum,
            s.replans,
            s.unconverged,
            s.causality_violations,
            self.messages_delivered,
        ] {
            out.extend(v.to_le_bytes());
        }
        let m = &self.metrics;
        for v in [
            m.avg_regret,
            m.log_loss,
            opt(m.avg_distance),
            opt(m.avg_deviation),
        ] {
            out.extend(v.to_le_bytes());
        }
        for traj in [&self.x, &self.z, &self.u, &self.x_ideal, &self.u_ideal] {
            for v in traj.as_flat() {
                out.extend(v.to_le_bytes());
            }
        }
        for v in &self.regret {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < LOG_MAGIC.len() || &bytes[..LOG_MAGIC.len()] != LOG_MAGIC {
            return Err(Error::MalformedLog("missing OVLOG1 magic".into()));
        }
        let mut c = Cursor {
            buf: bytes,
            pos: LOG_MAGIC.len(),
        };
        let task = c.string()?;
        let framework = c.string()?;
        let seed = c.u64()?;
        let dims = [c.u32()?, c.u32()?, c.u32()?, c.u32()?].map(|v| v as usize);
        let layout = FleetLayout::new(dims[0], dims[1], dims[2], dims[3]);
        let n = c.u64()? as usize;
        let (obs, act, comm, ci) = (c.u64()?, c.u64()?, c.u64()?, c.u64()?);
        let delays =
            DelaySpec::new(obs, act, comm, ci).map_err(|e| Error::MalformedLog(e.to_string()))?;
        let rate_hz = c.f64()?;
        let checksum = c.u64()?;
        let stats = AgentStats {
            replans: c.u64()?,
            unconverged: c.u64()?,
            causality_violations: c.u64()?,
        };
        let messages_delivered = c.u64()?;
        let metrics = Metrics {
            avg_regret: c.f64()?,
            log_loss: c.f64()?,
            avg_distance: from_opt(c.f64()?),
            avg_deviation: from_opt(c.f64()?),
        };
        let mut traj = |dim: usize| -> Result<Trajectory> {
            Ok(Trajectory::from_flat(Tick(0), dim, c.floats(n * dim)?))
        };
        let x = traj(layout.fleet_state_dim())?;
        let z = traj(layout.fleet_obs_dim())?;
        let u = traj(layout.fleet_input_dim())?;
        let x_ideal = traj(layout.fleet_state_dim())?;
        let u_ideal = traj(layout.fleet_input_dim())?;
        let regret = c.floats(n)?;
        if c.pos != bytes.len() {
            return Err(Error::MalformedLog(format!(
                "{} trailing bytes",
                bytes.len() - c.pos
            )));
        }
        Ok(Self {
            task,
            framework,
            seed,
            layout,
            rate_hz,
            delays,
            checksum,
            stats,
            messages_delivered,
            x,
            z,
            u,
            x_ideal,
            u_ideal,
            regret,
            metrics,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Per-tick CSV: tick, actual state, actuation, ideal state, ideal
    /// actuation, observation, regret.
    pub fn write_trajectory_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let l = &self.layout;
        let mut header = vec!["tick".to_string()];
        for (prefix, dim) in [
            ("x", l.state_dim),
            ("u", l.input_dim),
            ("x_ideal", l.state_dim),
            ("u_ideal", l.input_dim),
            ("z", l.obs_dim),
        ] {
            for a in 0..l.n_agents {
                for k in 0..dim {
                    header.push(format!("{prefix}{a}_{k}"));
                }
            }
        }
        header.push("regret".into());
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.n_ticks() {
            let tick = Tick(t as u64);
            let mut row = vec![t.to_string()];
            for traj in [&self.x, &self.u, &self.x_ideal, &self.u_ideal, &self.z] {
                row.extend(traj.at(tick).iter().map(|v| format_float(*v)));
            }
            row.push(format_float(self.regret[t]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Nine significant digits, shortest form.
pub fn format_float(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..9).contains(&exp) {
        let s = format!("{v:.8e}");
        let (mantissa, e) = s.split_once('e').expect("scientific format");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{mantissa}e{e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
