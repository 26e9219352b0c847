//! Tick arithmetic, delay bookkeeping, trajectory storage and the rule that
//! decides which part of the fleet history an agent may read.

use std::fmt;
use std::ops::{Add, Sub};

use crate::error::{Error, Result};

/// Default base rate of the world loop.
pub const BASE_RATE_HZ: f64 = 100.0;

/// One step of the base-rate clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tick(pub u64);

impl Tick {
    pub const ZERO: Tick = Tick(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn signed(self) -> i64 {
        self.0 as i64
    }

    /// `self - n`, or `None` when that would precede tick 0.
    pub fn back(self, n: u64) -> Option<Tick> {
        self.0.checked_sub(n).map(Tick)
    }

    pub fn from_signed(t: i64) -> Option<Tick> {
        u64::try_from(t).ok().map(Tick)
    }
}

impl Add<u64> for Tick {
    type Output = Tick;
    fn add(self, rhs: u64) -> Tick {
        Tick(self.0.checked_add(rhs).expect("tick overflow"))
    }
}

impl Sub for Tick {
    type Output = u64;
    fn sub(self, rhs: Tick) -> u64 {
        self.0.checked_sub(rhs.0).expect("tick underflow")
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Observation, actuation and communication delays plus the replanning
/// period, all in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelaySpec {
    obs: u64,
    act: u64,
    comm: u64,
    control_interval: u64,
}

impl DelaySpec {
    pub fn new(obs: u64, act: u64, comm: u64, control_interval: u64) -> Result<Self> {
        for (name, v) in [
            ("observation", obs),
            ("actuation", act),
            ("communication", comm),
        ] {
            if v == 0 {
                return Err(Error::InvalidDelay(format!(
                    "{name} delay must be at least one tick"
                )));
            }
        }
        if control_interval == 0 {
            return Err(Error::InvalidDelay(
                "control interval must be at least one tick".into(),
            ));
        }
        Ok(Self {
            obs,
            act,
            comm,
            control_interval,
        })
    }

    /// Builds a spec from milliseconds, rejecting values that are not an
    /// exact number of ticks at `rate_hz`.
    pub fn from_millis(
        obs_ms: f64,
        act_ms: f64,
        comm_ms: f64,
        control_hz: f64,
        rate_hz: f64,
    ) -> Result<Self> {
        let obs = millis_to_ticks("delay.obs_ms", obs_ms, rate_hz)?;
        let act = millis_to_ticks("delay.act_ms", act_ms, rate_hz)?;
        let comm = millis_to_ticks("delay.comm_ms", comm_ms, rate_hz)?;
        let interval = rate_hz / control_hz;
        if !(interval.is_finite() && interval >= 1.0 && (interval - interval.round()).abs() < 1e-9)
        {
            return Err(Error::InvalidDelay(format!(
                "control rate {control_hz} Hz does not divide base rate {rate_hz} Hz"
            )));
        }
        Self::new(obs, act, comm, interval.round() as u64)
    }

    /// Default delays at 100 Hz: 30 ms / 40 ms / 50 ms, replanning at 20 Hz.
    pub fn default_ticks() -> Self {
        Self::new(3, 4, 5, 5).expect("static defaults are valid")
    }

    pub fn obs(&self) -> u64 {
        self.obs
    }

    pub fn act(&self) -> u64 {
        self.act
    }

    pub fn comm(&self) -> u64 {
        self.comm
    }

    pub fn control_interval(&self) -> u64 {
        self.control_interval
    }

    pub fn with_comm(self, comm: u64) -> Result<Self> {
        Self::new(self.obs, self.act, comm, self.control_interval)
    }

    /// First tick of the constant history every agent is seeded with.
    pub fn seeded_history_start(&self) -> i64 {
        -((self.obs + self.comm + 1) as i64)
    }

    /// True when `now` is a replanning tick, i.e. the actuation decided now
    /// takes effect at the start of a control slot. Slot 0 is covered by
    /// initialization and never replanned.
    pub fn is_replan_tick(&self, now: Tick) -> bool {
        let s = now.0 + self.act;
        s >= self.control_interval && s.is_multiple_of(self.control_interval)
    }

    /// Start of the control slot that contains `t`.
    pub fn slot_start(&self, t: i64) -> i64 {
        t.div_euclid(self.control_interval as i64) * self.control_interval as i64
    }
}

/// Converts milliseconds to ticks, failing on non-integral results.
pub fn millis_to_ticks(what: &'static str, millis: f64, rate_hz: f64) -> Result<u64> {
    let ticks = millis * rate_hz / 1000.0;
    let rounded = ticks.round();
    if !ticks.is_finite() || ticks < 0.0 || (ticks - rounded).abs() > 1e-9 {
        return Err(Error::InexactTicks {
            what,
            millis,
            rate_hz,
        });
    }
    Ok(rounded as u64)
}

/// Inclusive cutoff ticks of the history available to one agent. Negative
/// values point into the seeded initial history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryCutoffs {
    pub own_state: i64,
    pub other_state: i64,
    pub own_actuation: i64,
    pub other_actuation: i64,
}

impl HistoryCutoffs {
    /// Observations follow the same delays as states.
    pub fn own_observation(&self) -> i64 {
        self.own_state
    }

    pub fn other_observation(&self) -> i64 {
        self.other_state
    }
}

/// Which ticks of the fleet history agent `agent` may read at `now`.
pub fn available_history(
    agent: usize,
    n_agents: usize,
    now: Tick,
    delays: &DelaySpec,
    history_start: i64,
) -> Result<HistoryCutoffs> {
    assert!(
        agent < n_agents,
        "agent {agent} out of range for fleet of {n_agents}"
    );
    let now = now.signed();
    let cutoffs = HistoryCutoffs {
        own_state: now - delays.obs as i64,
        other_state: now - delays.obs as i64 - delays.comm as i64,
        own_actuation: now + delays.act as i64 - 1,
        other_actuation: now - delays.comm as i64,
    };
    let lowest = cutoffs.other_state.min(cutoffs.other_actuation);
    if lowest < history_start {
        return Err(Error::InsufficientHistory {
            cutoff: lowest,
            start: history_start,
        });
    }
    Ok(cutoffs)
}

/// Contiguous, fixed-dimension sequence of vectors indexed by tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: Tick,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(start: Tick, dim: usize) -> Self {
        Self {
            start,
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(start: Tick, dim: usize, len: usize) -> Self {
        Self {
            start,
            dim,
            data: Vec::with_capacity(dim * len),
        }
    }

    pub fn from_flat(start: Tick, dim: usize, data: Vec<f64>) -> Self {
        assert!(
            dim == 0 || data.len().is_multiple_of(dim),
            "flat data is not a multiple of the dimension"
        );
        Self { start, dim, data }
    }

    pub fn start(&self) -> Tick {
        self.start
    }

    /// One past the last stored tick.
    pub fn end(&self) -> Tick {
        self.start + self.len() as u64
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.dim, "trajectory dimension mismatch");
        self.data.extend_from_slice(v);
    }

    pub fn get(&self, t: Tick) -> Option<&[f64]> {
        if t < self.start || t >= self.end() {
            return None;
        }
        let i = (t - self.start) as usize * self.dim;
        Some(&self.data[i..i + self.dim])
    }

    /// Value at `t`; panics when `t` is outside the stored range.
    pub fn at(&self, t: Tick) -> &[f64] {
        self.get(t).unwrap_or_else(|| {
            panic!(
                "tick {t} outside trajectory [{}, {})",
                self.start,
                self.end()
            )
        })
    }

    pub fn last(&self) -> Option<&[f64]> {
        if self.is_empty() {
            None
        } else {
            Some(&self.data[self.data.len() - self.dim..])
        }
    }

    /// Copy of the values in `[from, to)`.
    pub fn slice(&self, from: Tick, to: Tick) -> Trajectory {
        assert!(
            from <= to && from >= self.start && to <= self.end(),
            "slice [{from}, {to}) outside trajectory [{}, {})",
            self.start,
            self.end()
        );
        let a = (from - self.start) as usize * self.dim;
        let b = (to - self.start) as usize * self.dim;
        Trajectory {
            start: from,
            dim: self.dim,
            data: self.data[a..b].to_vec(),
        }
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (Tick, &[f64])> + '_ {
        let start = self.start;
        self.data
            .chunks_exact(self.dim.max(1))
            .enumerate()
            .map(move |(k, v)| (start + k as u64, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cutoffs_follow_availability_rule() {
        let d = DelaySpec::new(3, 4, 5, 5).unwrap();
        let c = available_history(0, 2, Tick(10), &d, d.seeded_history_start()).unwrap();
        assert_eq!(c.own_state, 7);
        assert_eq!(c.other_state, 2);
        assert_eq!(c.own_actuation, 13);
        assert_eq!(c.other_actuation, 5);
    }

    #[test]
    fn tick_zero_resolves_inside_seeded_history() {
        let d = DelaySpec::default_ticks();
        let start = d.seeded_history_start();
        let c = available_history(1, 3, Tick(0), &d, start).unwrap();
        assert!(c.other_state >= start && c.own_state >= start);
        assert!(matches!(
            available_history(1, 3, Tick(0), &d, 0),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn zero_delays_are_rejected() {
        assert!(DelaySpec::new(3, 4, 0, 5).is_err());
        assert!(DelaySpec::new(0, 4, 5, 5).is_err());
        assert!(DelaySpec::new(3, 0, 5, 5).is_err());
        assert!(DelaySpec::new(3, 4, 5, 0).is_err());
    }

    #[test]
    fn millis_conversion_is_exact_or_fails() {
        let d = DelaySpec::from_millis(30.0, 40.0, 300.0, 20.0, 100.0).unwrap();
        assert_eq!(
            (d.obs(), d.act(), d.comm(), d.control_interval()),
            (3, 4, 30, 5)
        );
        assert!(matches!(
            DelaySpec::from_millis(30.0, 40.0, 33.0, 20.0, 100.0),
            Err(Error::InexactTicks { .. })
        ));
        assert!(DelaySpec::from_millis(30.0, 40.0, 50.0, 30.0, 100.0).is_err());
    }

    #[test]
    fn replan_ticks_precede_slot_starts_by_actuation_delay() {
        let d = DelaySpec::default_ticks();
        let ticks: Vec<u64> = (0..20).filter(|&t| d.is_replan_tick(Tick(t))).collect();
        assert_eq!(ticks, vec![1, 6, 11, 16]);
        assert_eq!(d.slot_start(-3), -5);
        assert_eq!(d.slot_start(7), 5);
    }

    #[test]
    fn slice_identity_and_empty() {
        let mut t = Trajectory::new(Tick(4), 2);
        for k in 0..6 {
            t.push(&[k as f64, -(k as f64)]);
        }
        assert_eq!(t.slice(t.start(), t.end()), t);
        let e = t.slice(Tick(6), Tick(6));
        assert!(e.is_empty());
        assert_eq!(e.start(), Tick(6));
    }

    #[test]
    #[should_panic]
    fn slice_out_of_range_panics() {
        let mut t = Trajectory::new(Tick(0), 1);
        t.push(&[1.0]);
        let _ = t.slice(Tick(0), Tick(2));
    }

    proptest! {
        #[test]
        fn cutoffs_advance_with_slope_one(now in 60u64..10_000, obs in 1u64..20, act in 1u64..20, comm in 1u64..40) {
            let d = DelaySpec::new(obs, act, comm, 5).unwrap();
            let s = d.seeded_history_start();
            let a = available_history(0, 3, Tick(now), &d, s).unwrap();
            let b = available_history(0, 3, Tick(now + 1), &d, s).unwrap();
            prop_assert_eq!(b.own_state - a.own_state, 1);
            prop_assert_eq!(b.other_state - a.other_state, 1);
            prop_assert_eq!(b.own_actuation - a.own_actuation, 1);
            prop_assert_eq!(b.other_actuation - a.other_actuation, 1);
            // symmetric communication delay
            let c = available_history(2, 3, Tick(now), &d, s).unwrap();
            prop_assert_eq!(a.other_state, c.other_state);
        }

        #[test]
        fn slice_composition(len in 1usize..40, a in 0usize..40, b in 0usize..40, c in 0usize..40, d in 0usize..40) {
            let mut t = Trajectory::new(Tick(3), 1);
            for k in 0..len { t.push(&[k as f64 * 0.5]); }
            let mut idx = [a % (len + 1), b % (len + 1)];
            idx.sort();
            let outer = t.slice(Tick(3 + idx[0] as u64), Tick(3 + idx[1] as u64));
            let inner_len = idx[1] - idx[0];
            let mut j = [c % (inner_len + 1), d % (inner_len + 1)];
            j.sort();
            let lo = Tick(3 + (idx[0] + j[0]) as u64);
            let hi = Tick(3 + (idx[0] + j[1]) as u64);
            prop_assert_eq!(outer.slice(lo, hi), t.slice(lo, hi));
        }

        #[test]
        fn write_then_read_is_exact(vals in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
            let mut t = Trajectory::new(Tick(10), 1);
            for v in &vals { t.push(&[*v]); }
            for (k, v) in vals.iter().enumerate() {
                prop_assert_eq!(t.at(Tick(10 + k as u64))[0].to_bits(), v.to_bits());
            }
        }
    }
}
