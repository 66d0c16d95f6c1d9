//! Event queue with a total `(time, priority, sequence)` order and
//! independent seeded random streams.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator behind every stream; recorded in run summaries.
pub const RNG_ALGORITHM: &str = "ChaCha8 seeded by SHA-256(seed_le_bytes || stream_name)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum Priority {
    Physics = 0,
    Control = 1,
    Traffic = 2,
    Completion = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub time_s: f64,
    pub priority: Priority,
    pub sequence: u64,
    pub payload: P,
}

impl<P> Event<P> {
    fn cmp_key(&self, o: &Self) -> Ordering {
        self.time_s
            .total_cmp(&o.time_s)
            .then(self.priority.cmp(&o.priority))
            .then(self.sequence.cmp(&o.sequence))
    }
}

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, o: &Self) -> bool {
        self.0.cmp_key(&o.0) == Ordering::Equal
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap
        o.0.cmp_key(&self.0)
    }
}

pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    next_seq: u64,
    last_time: f64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            last_time: f64::NEG_INFINITY,
        }
    }
}

impl<P> EventQueue<P> {
    pub fn push(&mut self, time_s: f64, priority: Priority, payload: P) {
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event {
            time_s,
            priority,
            sequence,
            payload,
        }));
    }

    /// Next event. Events scheduled in the past run at the current time.
    pub fn pop(&mut self) -> Option<Event<P>> {
        let Entry(mut e) = self.heap.pop()?;
        if e.time_s < self.last_time {
            e.time_s = self.last_time;
        }
        self.last_time = e.time_s;
        Some(e)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time_s)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

pub fn stream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub struct RngStreams {
    pub traffic: ChaCha8Rng,
    pub outages: ChaCha8Rng,
    pub seu: ChaCha8Rng,
    pub tid_tolerance: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            traffic: stream_rng(seed, "traffic"),
            outages: stream_rng(seed, "outages"),
            seu: stream_rng(seed, "seu"),
            tid_tolerance: stream_rng(seed, "tid_tolerance"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent() {
        let mut a = RngStreams::new(5);
        let mut b = RngStreams::new(5);
        for _ in 0..100 {
            let _: u64 = a.traffic.random();
        }
        assert_eq!(a.outages.random::<u64>(), b.outages.random::<u64>());
        assert_ne!(
            stream_rng(5, "traffic").random::<u64>(),
            stream_rng(6, "traffic").random::<u64>()
        );
    }

    #[test]
    fn ties_break_on_priority_then_sequence() {
        let mut q = EventQueue::default();
        q.push(1.0, Priority::Completion, "c");
        q.push(1.0, Priority::Physics, "p");
        q.push(0.5, Priority::Traffic, "t");
        q.push(1.0, Priority::Physics, "p2");
        let order: Vec<&str> = std::iter::from_fn(|| q.pop()).map(|e| e.payload).collect();
        assert_eq!(order, ["t", "p", "p2", "c"]);
    }

    proptest! {
        #[test]
        fn pops_never_go_back_in_time(times in proptest::collection::vec(0.0f64..100.0, 1..60)) {
            let mut q = EventQueue::default();
            for (i, t) in times.iter().enumerate() {
                q.push(*t, Priority::Traffic, i);
            }
            let mut last = f64::NEG_INFINITY;
            while let Some(e) = q.pop() {
                prop_assert!(e.time_s >= last);
                last = e.time_s;
            }
        }
    }
}
