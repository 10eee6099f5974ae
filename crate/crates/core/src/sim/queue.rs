//! Event queue and keyed fault randomness.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Events ordered by `(time, insertion order)`.
#[derive(Debug, Clone)]
pub struct EventQueue<E> {
    events: BTreeMap<(u64, u64), E>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue { events: BTreeMap::new(), next_seq: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, time: u64, event: E) {
        self.events.insert((time, self.next_seq), event);
        self.next_seq += 1;
    }

    /// Removes the earliest event due at or before `time`.
    pub fn pop_due(&mut self, time: u64) -> Option<(u64, E)> {
        let (&(t, seq), _) = self.events.first_key_value()?;
        if t > time {
            return None;
        }
        self.events.remove(&(t, seq)).map(|e| (t, e))
    }

    /// Removes every event regardless of due time, in order.
    pub fn drain_all(&mut self) -> Vec<E> {
        std::mem::take(&mut self.events).into_values().collect()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A generator for one transmission, keyed by the scenario seed, the send
/// tick, the link and the index of the send on that link within the tick.
/// Runs that differ only in which other messages they send draw identical
/// faults for the messages they share.
pub fn link_rng(seed: u64, tick: u64, from: usize, to: usize, index: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for part in [tick, from as u64, to as u64, index] {
        h = splitmix64(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}
