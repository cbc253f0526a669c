use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use super::time::SimTime;
use crate::error::SimError;

/// Identifies the component an event is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentId {
    Core(u32),
    ComputeNode(u16),
    LoggingUnit(u16),
    MemoryNode(u16),
    Switch,
    Harness,
}

/// Handle returned by [`EventQueue::schedule`], used to cancel an event before it fires.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub target: ComponentId,
    pub payload: P,
}

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_time == other.0.fire_time && self.0.sequence == other.0.sequence
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; invert so the earliest (time, sequence) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_time, other.0.sequence).cmp(&(self.0.fire_time, self.0.sequence))
    }
}

/// Counters reconciling scheduled, delivered and cancelled events.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QueueStats {
    pub scheduled: u64,
    pub delivered: u64,
    pub cancelled: u64,
}

/// Deterministic event queue ordered by `(fire_time, sequence)`.
///
/// Background events (periodic timers) do not keep a simulation alive: when
/// only background events remain the run is considered stuck.
pub struct EventQueue<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    // sequence -> is_background, for events neither delivered nor cancelled
    live: HashMap<u64, bool>,
    foreground: usize,
    stats: QueueStats,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: HashMap::new(),
            foreground: 0,
            stats: QueueStats::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> QueueStats {
        self.stats
    }

    pub fn schedule(&mut self, fire_time: SimTime, target: ComponentId, payload: P) -> Result<EventHandle, SimError> {
        self.push(fire_time, target, payload, false)
    }

    /// Schedules an event that does not count as pending work.
    pub fn schedule_background(
        &mut self,
        fire_time: SimTime,
        target: ComponentId,
        payload: P,
    ) -> Result<EventHandle, SimError> {
        self.push(fire_time, target, payload, true)
    }

    fn push(
        &mut self,
        fire_time: SimTime,
        target: ComponentId,
        payload: P,
        background: bool,
    ) -> Result<EventHandle, SimError> {
        if fire_time < self.now {
            return Err(SimError::SchedulingInPast { at: fire_time, now: self.now });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event { fire_time, sequence, target, payload }));
        self.live.insert(sequence, background);
        if !background {
            self.foreground += 1;
        }
        self.stats.scheduled += 1;
        Ok(EventHandle(sequence))
    }

    /// Cancels a pending event. Returns false if it already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        match self.live.remove(&handle.0) {
            Some(background) => {
                if !background {
                    self.foreground -= 1;
                }
                self.stats.cancelled += 1;
                true
            }
            None => false,
        }
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.live.contains_key(&handle.0)
    }

    /// Pops the next live event and advances the clock to its fire time.
    pub fn pop(&mut self) -> Option<Event<P>> {
        while let Some(Entry(ev)) = self.heap.pop() {
            let Some(background) = self.live.remove(&ev.sequence) else {
                continue;
            };
            if !background {
                self.foreground -= 1;
            }
            debug_assert!(ev.fire_time >= self.now);
            self.now = ev.fire_time;
            self.stats.delivered += 1;
            return Some(ev);
        }
        None
    }

    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(Entry(ev)) = self.heap.peek() {
            if self.live.contains_key(&ev.sequence) {
                return Some(ev.fire_time);
            }
            self.heap.pop();
        }
        None
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn has_foreground(&self) -> bool {
        self.foreground > 0
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> EventQueue<u32> {
        EventQueue::new()
    }

    #[test]
    fn earlier_time_first() {
        let mut q = q();
        q.schedule(SimTime::from_ps(10), ComponentId::Harness, 1).unwrap();
        q.schedule(SimTime::ZERO, ComponentId::Harness, 0).unwrap();
        assert_eq!(q.pop().unwrap().payload, 0);
        assert_eq!(q.pop().unwrap().payload, 1);
    }

    #[test]
    fn equal_time_in_scheduling_order() {
        let mut q = q();
        for i in 0..5 {
            q.schedule(SimTime::from_ps(7), ComponentId::Harness, i).unwrap();
        }
        let got: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.payload).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn past_scheduling_rejected() {
        let mut q = q();
        q.schedule(SimTime::from_ps(5), ComponentId::Harness, 0).unwrap();
        q.pop();
        let err = q.schedule(SimTime::from_ps(4), ComponentId::Harness, 1).unwrap_err();
        assert!(matches!(err, SimError::SchedulingInPast { .. }));
        // at the current clock is fine
        q.schedule(SimTime::from_ps(5), ComponentId::Harness, 2).unwrap();
    }

    #[test]
    fn cancel_and_accounting() {
        let mut q = q();
        let a = q.schedule(SimTime::from_ps(1), ComponentId::Harness, 0).unwrap();
        q.schedule(SimTime::from_ps(2), ComponentId::Harness, 1).unwrap();
        q.schedule_background(SimTime::from_ps(3), ComponentId::Harness, 2).unwrap();
        assert!(q.cancel(a));
        assert!(!q.cancel(a));
        assert_eq!(q.pop().unwrap().payload, 1);
        assert!(!q.has_foreground());
        assert_eq!(q.pop().unwrap().payload, 2);
        assert!(q.pop().is_none());
        let s = q.stats();
        assert_eq!(s.scheduled, s.delivered + s.cancelled);
    }
}
