use std::collections::VecDeque;

use crate::timeline::Tick;

/// FIFO link that delivers every payload exactly `delay` ticks after it was
/// sent.
#[derive(Debug, Clone)]
pub struct DelayedChannel<T> {
    delay: u64,
    queue: VecDeque<(Tick, Tick, T)>,
    delivered: u64,
}

impl<T> DelayedChannel<T> {
    pub fn new(delay: u64) -> Self {
        assert!(delay >= 1, "channel delay must be at least one tick");
        Self {
            delay,
            queue: VecDeque::new(),
            delivered: 0,
        }
    }

    pub fn delay(&self) -> u64 {
        self.delay
    }

    pub fn send(&mut self, now: Tick, payload: T) {
        if let Some(&(_, last, _)) = self.queue.back() {
            assert!(now >= last, "send times must be non-decreasing");
        }
        self.queue.push_back((now + self.delay, now, payload));
    }

    /// Payloads due at `now`, in send order. Panics if one is overdue, which
    /// would mean a tick was skipped.
    pub fn deliver(&mut self, now: Tick) -> Vec<T> {
        let mut out = Vec::new();
        while let Some(&(due, sent, _)) = self.queue.front() {
            assert!(
                due >= now,
                "payload sent at {sent} missed its delivery tick {due}"
            );
            if due > now {
                break;
            }
            debug_assert_eq!(now - sent, self.delay);
            out.push(self.queue.pop_front().expect("front exists").2);
            self.delivered += 1;
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fifo_with_exact_delay() {
        let mut c = DelayedChannel::new(3);
        c.send(Tick(0), 'a');
        c.send(Tick(0), 'b');
        c.send(Tick(1), 'c');
        assert!(c.deliver(Tick(0)).is_empty());
        assert!(c.deliver(Tick(2)).is_empty());
        assert_eq!(c.deliver(Tick(3)), vec!['a', 'b']);
        assert_eq!(c.deliver(Tick(4)), vec!['c']);
        assert_eq!(c.delivered(), 3);
    }

    #[test]
    #[should_panic(expected = "missed its delivery tick")]
    fn skipped_tick_is_detected() {
        let mut c = DelayedChannel::new(1);
        c.send(Tick(0), ());
        c.deliver(Tick(5));
    }

    proptest! {
        #[test]
        fn every_payload_arrives_after_exactly_delay(delay in 1u64..20, sends in proptest::collection::vec(0u64..3, 1..50)) {
            let mut c = DelayedChannel::new(delay);
            let mut t = 0u64;
            let mut sent = Vec::new();
            for gap in sends {
                t += gap;
                c.send(Tick(t), t);
                sent.push(t);
            }
            let mut got = Vec::new();
            for now in 0..=t + delay {
                for s in c.deliver(Tick(now)) {
                    prop_assert_eq!(now - s, delay);
                    got.push(s);
                }
            }
            prop_assert_eq!(got, sent);
        }
    }
}
