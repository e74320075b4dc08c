//! Virtual clock, agenda of future deliveries, seeded RNG and the event log.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bus::Message;
use crate::sim::log::{EventKind, EventLog};
use crate::time::SimTime;

struct Entry {
    at: SimTime,
    seq: u64,
    target: String,
    msg: Message,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// A delivery popped from the agenda.
#[derive(Debug, Clone)]
pub struct Due {
    pub at: SimTime,
    pub target: String,
    pub msg: Message,
}

pub struct Kernel {
    now: SimTime,
    log: EventLog,
    agenda: BinaryHeap<Reverse<Entry>>,
    agenda_seq: u64,
    rng: ChaCha8Rng,
}

impl Kernel {
    pub fn new(seed: u64) -> Self {
        Kernel {
            now: SimTime::ZERO,
            log: EventLog::new(),
            agenda: BinaryHeap::new(),
            agenda_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Moves the clock forward by `dt`. The clock never moves backwards.
    pub fn advance(&mut self, dt: SimTime) {
        self.now += dt;
    }

    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn record(&mut self, kind: EventKind, subject: impl Into<String>, payload: impl Into<String>) -> u64 {
        self.log.push(self.now, kind, subject, payload)
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn take_log(&mut self) -> EventLog {
        std::mem::take(&mut self.log)
    }

    /// Queues `msg` for delivery to `target` at `at` (or now, if `at` is past).
    /// Deliveries at equal times keep their scheduling order.
    pub fn schedule(&mut self, at: SimTime, target: impl Into<String>, msg: Message) {
        self.agenda_seq += 1;
        self.agenda.push(Reverse(Entry { at, seq: self.agenda_seq, target: target.into(), msg }));
    }

    pub fn next_due_time(&self) -> Option<SimTime> {
        self.agenda.peek().map(|Reverse(e)| e.at)
    }

    /// Pops the earliest delivery and moves the clock to its time. A delivery
    /// scheduled before the current time runs now; the control plane is a
    /// single serialized server.
    pub fn pop_due(&mut self) -> Option<Due> {
        let Reverse(e) = self.agenda.pop()?;
        self.advance_to(e.at);
        Some(Due { at: e.at, target: e.target, msg: e.msg })
    }

    pub fn pending(&self) -> usize {
        self.agenda.len()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Scales `base` by a uniform factor in `[1 - frac, 1 + frac]`. No draw is
    /// made when `frac` is zero.
    pub fn jitter(&mut self, base: SimTime, frac: f64) -> SimTime {
        if frac <= 0.0 || base == SimTime::ZERO {
            return base;
        }
        let frac = frac.min(1.0);
        let factor = self.rng.gen_range((1.0 - frac)..=(1.0 + frac));
        SimTime::from_secs_f64(base.as_secs_f64() * factor)
    }
}
