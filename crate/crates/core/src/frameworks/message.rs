//! Per-tick broadcast payloads and their binary encoding.
//!
//! Layout (little-endian): `u32 sender`, `u64 sent_at`, `u32 n_segments`,
//! then per segment `u8 kind`, `u32 agent`, `u64 start`, `u32 count`,
//! `u32 dim`, followed by `count * dim` packed `f64`.

use crate::error::{Error, Result};
use crate::timeline::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SegmentKind {
    State = 0,
    Observation = 1,
    StateDisturbance = 2,
    ObservationDisturbance = 3,
    Actuation = 4,
}

impl SegmentKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => SegmentKind::State,
            1 => SegmentKind::Observation,
            2 => SegmentKind::StateDisturbance,
            3 => SegmentKind::ObservationDisturbance,
            4 => SegmentKind::Actuation,
            _ => return Err(Error::MalformedMessage(format!("unknown segment kind {b}"))),
        })
    }
}

/// `count` consecutive per-tick vectors of one agent's trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub agent: u32,
    pub start: Tick,
    pub count: u32,
    pub dim: u32,
    pub data: Vec<f64>,
}

impl Segment {
    pub fn single(kind: SegmentKind, agent: usize, tick: Tick, v: &[f64]) -> Self {
        Self {
            kind,
            agent: agent as u32,
            start: tick,
            count: 1,
            dim: v.len() as u32,
            data: v.to_vec(),
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.dim as usize;
        &self.data[k * d..(k + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Message {
    pub sender: u32,
    pub sent_at: Tick,
    pub segments: Vec<Segment>,
}

impl Message {
    pub fn new(sender: usize, sent_at: Tick) -> Self {
        Self {
            sender: sender as u32,
            sent_at,
            segments: Vec::new(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        16 + self
            .segments
            .iter()
            .map(|s| 21 + 8 * s.data.len())
            .sum::<usize>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend(self.sender.to_le_bytes());
        out.extend(self.sent_at.0.to_le_bytes());
        out.extend((self.segments.len() as u32).to_le_bytes());
        for s in &self.segments {
            out.push(s.kind as u8);
            out.extend(s.agent.to_le_bytes());
            out.extend(s.start.0.to_le_bytes());
            out.extend(s.count.to_le_bytes());
            out.extend(s.dim.to_le_bytes());
            for v in &s.data {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let sender = r.u32()?;
        let sent_at = Tick(r.u64()?);
        let n = r.u32()? as usize;
        let mut segments = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let kind = SegmentKind::from_byte(r.u8()?)?;
            let agent = r.u32()?;
            let start = Tick(r.u64()?);
            let count = r.u32()?;
            let dim = r.u32()?;
            let len = count as usize * dim as usize;
            if len * 8 > r.remaining() {
                return Err(Error::MalformedMessage(format!(
                    "segment claims {len} values"
                )));
            }
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            segments.push(Segment {
                kind,
                agent,
                start,
                count,
                dim,
                data,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::MalformedMessage(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        Ok(Self {
            sender,
            sent_at,
            segments,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::MalformedMessage(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut m = Message::new(3, Tick(7));
        m.segments
            .push(Segment::single(SegmentKind::Actuation, 3, Tick(7), &[1.5]));
        let b = m.encode();
        assert_eq!(b.len(), m.encoded_len());
        assert_eq!(&b[0..4], &3u32.to_le_bytes());
        assert_eq!(&b[4..12], &7u64.to_le_bytes());
        assert_eq!(b[16], 4);
        assert_eq!(&b[b.len() - 8..], &1.5f64.to_le_bytes());
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let mut m = Message::new(0, Tick(1));
        m.segments
            .push(Segment::single(SegmentKind::State, 0, Tick(0), &[1.0, 2.0]));
        let b = m.encode();
        assert!(Message::decode(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(Message::decode(&extra).is_err());
        let mut bad = b;
        bad[16] = 9;
        assert!(Message::decode(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(sender in 0u32..8, at in 0u64..1_000_000,
                      rows in proptest::collection::vec(proptest::collection::vec(-1e9f64..1e9, 3), 0..4)) {
            let mut m = Message::new(sender as usize, Tick(at));
            for (k, r) in rows.iter().enumerate() {
                m.segments.push(Segment::single(SegmentKind::StateDisturbance, k, Tick(at + k as u64), r));
            }
            prop_assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        }
    }
}
