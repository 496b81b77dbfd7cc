//! Discrete-event kernel: a virtual clock, an event queue ordered by
//! `(fire_at, seq)`, and capacity-limited resources with FIFO waiters.
//!
//! Processes are written in continuation-passing style: an event action
//! receives the world and the engine, mutates state and schedules further
//! actions. Nothing here touches wall-clock time, so a run is a pure
//! function of its initial schedule.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use sha2::{Digest, Sha256};

use crate::error::SimError;

/// Abstract simulation time.
pub type SimTime = f64;

/// State threaded through every event action.
pub trait World: Sized + 'static {
    type Error: From<SimError>;
}

pub type Action<W> = Box<dyn FnOnce(&mut W, &mut Engine<W>) -> Result<(), <W as World>::Error>>;

/// Continuation invoked when a resource slot is granted.
pub type Grant<W> =
    Box<dyn FnOnce(&mut W, &mut Engine<W>, Token) -> Result<(), <W as World>::Error>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle {
    pub seq: u64,
}

struct Pending<W: World> {
    fire_at: SimTime,
    seq: u64,
    kind: String,
    action: Action<W>,
}

impl<W: World> PartialEq for Pending<W> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<W: World> Eq for Pending<W> {}

impl<W: World> PartialOrd for Pending<W> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<W: World> Ord for Pending<W> {
    // Reversed so the max-heap pops the earliest (fire_at, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .total_cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One fired event, as written to the trace log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub time: SimTime,
    pub seq: u64,
    pub kind: String,
}

impl std::fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t={} seq={} kind={}", self.time, self.seq, self.kind)
    }
}

pub struct Engine<W: World> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Pending<W>>,
    hasher: Sha256,
    fired: u64,
    trace: Option<Vec<TraceEntry>>,
}

impl<W: World> Default for Engine<W> {
    fn default() -> Self {
        Self::new()
    }
}

impl<W: World> Engine<W> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            hasher: Sha256::new(),
            fired: 0,
            trace: None,
        }
    }

    /// Engine that also keeps every fired event in memory.
    pub fn with_trace() -> Self {
        Self {
            trace: Some(Vec::new()),
            ..Self::new()
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    /// Schedule `action` to fire `delay` time units from now.
    pub fn schedule<F>(
        &mut self,
        delay: f64,
        kind: impl Into<String>,
        action: F,
    ) -> Result<EventHandle, SimError>
    where
        F: FnOnce(&mut W, &mut Engine<W>) -> Result<(), W::Error> + 'static,
    {
        if !(delay >= 0.0) {
            return Err(SimError::NegativeDelay(delay));
        }
        self.schedule_at(self.now + delay, kind, action)
    }

    /// Schedule `action` at absolute time `at`, which must not precede now.
    pub fn schedule_at<F>(
        &mut self,
        at: SimTime,
        kind: impl Into<String>,
        action: F,
    ) -> Result<EventHandle, SimError>
    where
        F: FnOnce(&mut W, &mut Engine<W>) -> Result<(), W::Error> + 'static,
    {
        if !(at >= self.now) {
            return Err(SimError::InPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending {
            fire_at: at,
            seq,
            kind: kind.into(),
            action: Box::new(action),
        });
        Ok(EventHandle { seq })
    }

    /// Fire events until the queue drains; returns the final clock value.
    pub fn run_until_idle(&mut self, world: &mut W) -> Result<SimTime, W::Error> {
        while let Some(ev) = self.queue.pop() {
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.fired += 1;
            let entry = TraceEntry {
                time: ev.fire_at,
                seq: ev.seq,
                kind: ev.kind,
            };
            self.hasher.update(entry.to_string().as_bytes());
            self.hasher.update(b"\n");
            if let Some(trace) = self.trace.as_mut() {
                trace.push(entry);
            }
            (ev.action)(world, self)?;
        }
        Ok(self.now)
    }

    /// SHA-256 over every trace line fired so far, hex encoded.
    pub fn trace_hash(&self) -> String {
        let digest = self.hasher.clone().finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }
}

/// Proof of a held resource slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    pub id: u64,
}

/// Capacity-limited resource; requests beyond capacity wait in FIFO order.
pub struct SimResource<W: World> {
    name: String,
    capacity: usize,
    held: BTreeSet<u64>,
    next_token: u64,
    waiters: VecDeque<(String, Grant<W>)>,
    acquired: u64,
    released: u64,
    peak_in_use: usize,
}

impl<W: World> std::fmt::Debug for SimResource<W> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimResource")
            .field("name", &self.name)
            .field("capacity", &self.capacity)
            .field("in_use", &self.held.len())
            .field("waiting", &self.waiters.len())
            .finish()
    }
}

impl<W: World> SimResource<W> {
    pub fn new(name: impl Into<String>, capacity: usize) -> Result<Self, SimError> {
        if capacity == 0 {
            return Err(SimError::ZeroCapacity);
        }
        Ok(Self {
            name: name.into(),
            capacity,
            held: BTreeSet::new(),
            next_token: 0,
            waiters: VecDeque::new(),
            acquired: 0,
            released: 0,
            peak_in_use: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn in_use(&self) -> usize {
        self.held.len()
    }

    pub fn waiting(&self) -> usize {
        self.waiters.len()
    }

    pub fn acquired(&self) -> u64 {
        self.acquired
    }

    pub fn released(&self) -> u64 {
        self.released
    }

    pub fn peak_in_use(&self) -> usize {
        self.peak_in_use
    }

    pub fn holds(&self, token: Token) -> bool {
        self.held.contains(&token.id)
    }

    /// Request a slot. `grant` fires (at the current time if a slot is
    /// free, otherwise when one is released to this requester).
    pub fn acquire<F>(
        &mut self,
        engine: &mut Engine<W>,
        requester: impl Into<String>,
        grant: F,
    ) -> Result<(), SimError>
    where
        F: FnOnce(&mut W, &mut Engine<W>, Token) -> Result<(), W::Error> + 'static,
    {
        let requester = requester.into();
        if self.held.len() < self.capacity {
            self.grant_to(engine, requester, Box::new(grant))
        } else {
            self.waiters.push_back((requester, Box::new(grant)));
            Ok(())
        }
    }

    /// Give a slot back; the oldest waiter, if any, receives it.
    pub fn release(&mut self, engine: &mut Engine<W>, token: Token) -> Result<(), SimError> {
        if !self.held.remove(&token.id) {
            return Err(SimError::UnheldToken {
                resource: self.name.clone(),
                token: token.id,
            });
        }
        self.released += 1;
        if let Some((requester, grant)) = self.waiters.pop_front() {
            self.grant_to(engine, requester, grant)?;
        }
        Ok(())
    }

    fn grant_to(
        &mut self,
        engine: &mut Engine<W>,
        requester: String,
        grant: Grant<W>,
    ) -> Result<(), SimError> {
        let token = Token {
            id: self.next_token,
        };
        self.next_token += 1;
        self.held.insert(token.id);
        self.acquired += 1;
        self.peak_in_use = self.peak_in_use.max(self.held.len());
        let kind = format!("grant:{}:{}", self.name, requester);
        engine.schedule(0.0, kind, move |w, e| grant(w, e, token))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Log {
        fired: Vec<(&'static str, SimTime)>,
        res: Option<SimResource<Log>>,
    }

    impl World for Log {
        type Error = SimError;
    }

    fn mark(name: &'static str) -> impl FnOnce(&mut Log, &mut Engine<Log>) -> Result<(), SimError> {
        move |w, e| {
            w.fired.push((name, e.now()));
            Ok(())
        }
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut e = Engine::new();
        let mut w = Log::default();
        e.schedule(0.0, "a", mark("A")).unwrap();
        e.schedule(0.0, "b", mark("B")).unwrap();
        e.run_until_idle(&mut w).unwrap();
        assert_eq!(w.fired, vec![("A", 0.0), ("B", 0.0)]);
    }

    #[test]
    fn time_order_dominates() {
        let mut e = Engine::new();
        let mut w = Log::default();
        e.schedule(1.0, "a", mark("A")).unwrap();
        e.schedule(0.5, "b", mark("B")).unwrap();
        let end = e.run_until_idle(&mut w).unwrap();
        assert_eq!(w.fired, vec![("B", 0.5), ("A", 1.0)]);
        assert_eq!(end, 1.0);
    }

    #[test]
    fn delayed_event_fires_at_delay() {
        let mut e = Engine::new();
        let mut w = Log::default();
        e.schedule(2.0, "a", mark("A")).unwrap();
        assert_eq!(e.run_until_idle(&mut w).unwrap(), 2.0);
        assert_eq!(w.fired, vec![("A", 2.0)]);
    }

    #[test]
    fn empty_queue_returns_zero() {
        let mut e: Engine<Log> = Engine::new();
        assert_eq!(e.run_until_idle(&mut Log::default()).unwrap(), 0.0);
    }

    #[test]
    fn single_event_at_five() {
        let mut e = Engine::new();
        e.schedule(5.0, "x", mark("X")).unwrap();
        assert_eq!(e.run_until_idle(&mut Log::default()).unwrap(), 5.0);
    }

    #[test]
    fn rejects_negative_delay_and_past() {
        let mut e: Engine<Log> = Engine::new();
        assert_eq!(
            e.schedule(-1.0, "x", mark("X")).unwrap_err(),
            SimError::NegativeDelay(-1.0)
        );
        assert!(e.schedule(f64::NAN, "x", mark("X")).is_err());
        let mut w = Log::default();
        e.schedule(3.0, "late", |_, e: &mut Engine<Log>| {
            e.schedule_at(1.0, "past", mark("P")).map(|_| ())
        })
        .unwrap();
        assert!(matches!(
            e.run_until_idle(&mut w),
            Err(SimError::InPast { .. })
        ));
    }

    fn hold_for(
        name: &'static str,
        hold: f64,
    ) -> impl FnOnce(&mut Log, &mut Engine<Log>, Token) -> Result<(), SimError> {
        move |_, e, token| {
            e.schedule(hold, "release", move |w: &mut Log, e: &mut Engine<Log>| {
                w.fired.push((name, e.now()));
                w.res.as_mut().unwrap().release(e, token)
            })?;
            Ok(())
        }
    }

    fn contend(capacity: usize, names: &[&'static str]) -> Vec<(&'static str, SimTime)> {
        let mut e = Engine::new();
        let mut w = Log {
            res: Some(SimResource::new("inst", capacity).unwrap()),
            ..Default::default()
        };
        for &n in names {
            let res = w.res.as_mut().unwrap();
            res.acquire(&mut e, n, hold_for(n, 1.0)).unwrap();
        }
        e.run_until_idle(&mut w).unwrap();
        let res = w.res.as_ref().unwrap();
        assert_eq!(res.acquired(), res.released());
        assert!(res.peak_in_use() <= capacity);
        w.fired
    }

    #[test]
    fn capacity_one_serializes() {
        assert_eq!(contend(1, &["a", "b"]), vec![("a", 1.0), ("b", 2.0)]);
    }

    #[test]
    fn capacity_two_runs_in_parallel() {
        assert_eq!(contend(2, &["a", "b"]), vec![("a", 1.0), ("b", 1.0)]);
    }

    #[test]
    fn waiters_are_fifo() {
        assert_eq!(
            contend(1, &["a", "b", "c"]),
            vec![("a", 1.0), ("b", 2.0), ("c", 3.0)]
        );
    }

    #[test]
    fn releasing_unheld_token_is_rejected() {
        let mut e: Engine<Log> = Engine::new();
        let mut r: SimResource<Log> = SimResource::new("r", 1).unwrap();
        assert!(matches!(
            r.release(&mut e, Token { id: 7 }),
            Err(SimError::UnheldToken { .. })
        ));
        assert!(SimResource::<Log>::new("z", 0).is_err());
    }

    #[test]
    fn trace_hash_is_reproducible() {
        let run = || {
            let mut e = Engine::with_trace();
            e.schedule(1.0, "a", mark("A")).unwrap();
            e.schedule(0.0, "b", mark("B")).unwrap();
            e.run_until_idle(&mut Log::default()).unwrap();
            let lines: Vec<String> = e.trace().unwrap().iter().map(|t| t.to_string()).collect();
            (e.trace_hash(), lines)
        };
        let (h1, l1) = run();
        let (h2, _) = run();
        assert_eq!(h1, h2);
        assert_eq!(l1, vec!["t=0 seq=1 kind=b", "t=1 seq=0 kind=a"]);
    }
}
