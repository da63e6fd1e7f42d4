//! Time-indexed state system: a quark registry over attribute paths and a
//! per-quark history of `[start, end)` value intervals.
//!
//! The build phase applies events in timestamp order; [`StateSystem::seal`]
//! closes every open value and freezes the structure. Queries are only
//! answered on a sealed system, by binary search over each quark's sorted
//! interval list.

mod path;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Event, EventKind, Timestamp, IDLE_TID};

pub use path::{AttributePath, PathError};

pub const STATUS_RUNNING: &str = "RUNNING";
pub const STATUS_WAITING: &str = "WAITING";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("state system is sealed")]
    Sealed,
    #[error("state system is not sealed yet")]
    NotSealed,
    #[error("time regression on quark {quark}: {at} precedes {open_start}")]
    Ordering {
        quark: Quark,
        at: Timestamp,
        open_start: Timestamp,
    },
    #[error("event at {ts} precedes previously applied event at {last}")]
    EventOrder { ts: Timestamp, last: Timestamp },
    #[error("seal time {end} precedes last applied event at {last}")]
    SealOrder { end: Timestamp, last: Timestamp },
    #[error("time {t} outside sealed extent [{origin}, {end})")]
    Range {
        t: Timestamp,
        origin: Timestamp,
        end: Timestamp,
    },
    #[error("invalid query range [{t1}, {t2})")]
    InvalidRange { t1: Timestamp, t2: Timestamp },
    #[error("unknown quark {0}")]
    UnknownQuark(Quark),
    #[error("unknown attribute path {0}")]
    UnknownPath(String),
    #[error("malformed {kind} event at {ts}")]
    MalformedEvent { kind: String, ts: Timestamp },
}

/// Stable integer id of one attribute path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quark(pub u32);

impl fmt::Display for Quark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum StateValue {
    #[default]
    Null,
    Int(i64),
    Str(String),
}

impl StateValue {
    pub fn is_null(&self) -> bool {
        matches!(self, StateValue::Null)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            StateValue::Int(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for StateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateValue::Null => f.write_str("null"),
            StateValue::Int(v) => write!(f, "{v}"),
            StateValue::Str(s) => f.write_str(s),
        }
    }
}

/// The attribute held `value` on `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateInterval {
    pub start: Timestamp,
    pub end: Timestamp,
    pub quark: Quark,
    pub value: StateValue,
}

impl StateInterval {
    pub fn duration(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Debug, Default)]
struct History {
    closed: Vec<StateInterval>,
    open: Option<(Timestamp, StateValue)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SealOutcome {
    Sealed,
    AlreadySealed,
}

#[derive(Debug, Default)]
pub struct StateSystem {
    paths: Vec<AttributePath>,
    index: HashMap<AttributePath, Quark>,
    histories: Vec<History>,
    sealed: bool,
    end: Timestamp,
    last_event: Option<Timestamp>,
    skipped: u64,
}

impl StateSystem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies every event and seals at `end`.
    pub fn build<I>(events: I, end: Timestamp) -> Result<StateSystem, StateError>
    where
        I: IntoIterator,
        I::Item: std::borrow::Borrow<Event>,
    {
        let mut ss = StateSystem::new();
        for event in events {
            ss.apply_event(std::borrow::Borrow::borrow(&event))?;
        }
        ss.seal(end)?;
        Ok(ss)
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn origin(&self) -> Timestamp {
        0
    }

    /// Seal time; 0 before sealing.
    pub fn end(&self) -> Timestamp {
        self.end
    }

    /// Events whose kind has no handler.
    pub fn skipped_events(&self) -> u64 {
        self.skipped
    }

    pub fn quark_count(&self) -> usize {
        self.paths.len()
    }

    pub fn quarks(&self) -> impl Iterator<Item = (Quark, &AttributePath)> {
        self.paths.iter().enumerate().map(|(i, p)| (Quark(i as u32), p))
    }

    pub fn quark(&self, path: &AttributePath) -> Option<Quark> {
        self.index.get(path).copied()
    }

    pub fn path_of(&self, quark: Quark) -> Option<&AttributePath> {
        self.paths.get(quark.0 as usize)
    }

    pub fn get_or_create_quark(&mut self, path: &AttributePath) -> Result<Quark, StateError> {
        if let Some(q) = self.index.get(path) {
            return Ok(*q);
        }
        if self.sealed {
            return Err(StateError::Sealed);
        }
        let quark = Quark(self.paths.len() as u32);
        self.paths.push(path.clone());
        self.index.insert(path.clone(), quark);
        self.histories.push(History::default());
        Ok(quark)
    }

    fn history_mut(&mut self, quark: Quark) -> Result<&mut History, StateError> {
        self.histories
            .get_mut(quark.0 as usize)
            .ok_or(StateError::UnknownQuark(quark))
    }

    fn history(&self, quark: Quark) -> Result<&History, StateError> {
        self.histories
            .get(quark.0 as usize)
            .ok_or(StateError::UnknownQuark(quark))
    }

    /// Sets `quark` to `value` from `at` onwards.
    ///
    /// Equal values extend the current run. A write at exactly the open
    /// value's start replaces it in place, re-joining the previous interval
    /// when the values match, so zero-length intervals never appear.
    pub fn modify_attribute(&mut self, quark: Quark, value: StateValue, at: Timestamp) -> Result<(), StateError> {
        if self.sealed {
            return Err(StateError::Sealed);
        }
        let history = self.history_mut(quark)?;
        let Some((open_start, open_value)) = history.open.take() else {
            history.open = Some((at, value));
            return Ok(());
        };
        if at < open_start {
            history.open = Some((open_start, open_value));
            return Err(StateError::Ordering { quark, at, open_start });
        }
        if open_value == value {
            history.open = Some((open_start, open_value));
        } else if at == open_start {
            match history.closed.last() {
                Some(prev) if prev.end == at && prev.value == value => {
                    let prev = history.closed.pop().expect("checked above");
                    history.open = Some((prev.start, value));
                }
                _ => history.open = Some((at, value)),
            }
        } else {
            history.closed.push(StateInterval {
                start: open_start,
                end: at,
                quark,
                value: open_value,
            });
            history.open = Some((at, value));
        }
        Ok(())
    }

    /// Dispatches `event` to its handler. Kinds without a handler are counted
    /// and skipped.
    pub fn apply_event(&mut self, event: &Event) -> Result<(), StateError> {
        if self.sealed {
            return Err(StateError::Sealed);
        }
        if let Some(last) = self.last_event {
            if event.ts < last {
                return Err(StateError::EventOrder { ts: event.ts, last });
            }
        }
        self.last_event = Some(event.ts);
        match event.kind {
            EventKind::SchedSwitch => self.on_sched_switch(event),
            EventKind::Other(_) => {
                self.skipped += 1;
                Ok(())
            }
        }
    }

    fn on_sched_switch(&mut self, event: &Event) -> Result<(), StateError> {
        let (prev, next) = event.switch_tids().ok_or_else(|| StateError::MalformedEvent {
            kind: event.kind.to_string(),
            ts: event.ts,
        })?;
        let cpu_quark = self.get_or_create_quark(&AttributePath::cpu_current_thread(event.cpu))?;
        let current = if next == IDLE_TID {
            StateValue::Null
        } else {
            StateValue::Int(next)
        };
        self.modify_attribute(cpu_quark, current, event.ts)?;
        if prev != IDLE_TID {
            let q = self.get_or_create_quark(&AttributePath::thread_status(prev))?;
            self.modify_attribute(q, StateValue::Str(STATUS_WAITING.into()), event.ts)?;
        }
        if next != IDLE_TID {
            let q = self.get_or_create_quark(&AttributePath::thread_status(next))?;
            self.modify_attribute(q, StateValue::Str(STATUS_RUNNING.into()), event.ts)?;
        }
        Ok(())
    }

    /// Closes every open value at `end` and freezes the system.
    pub fn seal(&mut self, end: Timestamp) -> Result<SealOutcome, StateError> {
        if self.sealed {
            return Ok(SealOutcome::AlreadySealed);
        }
        if let Some(last) = self.last_event {
            if end < last {
                return Err(StateError::SealOrder { end, last });
            }
        }
        for (i, history) in self.histories.iter_mut().enumerate() {
            if let Some((start, value)) = history.open.take() {
                if end < start {
                    return Err(StateError::SealOrder { end, last: start });
                }
                if end > start {
                    history.closed.push(StateInterval {
                        start,
                        end,
                        quark: Quark(i as u32),
                        value,
                    });
                }
            }
        }
        self.end = end;
        self.sealed = true;
        Ok(SealOutcome::Sealed)
    }

    fn sealed_history(&self, quark: Quark) -> Result<&[StateInterval], StateError> {
        if !self.sealed {
            return Err(StateError::NotSealed);
        }
        Ok(&self.history(quark)?.closed)
    }

    /// Closed intervals of `quark`, time-sorted. Empty before sealing only
    /// for quarks that have seen a single value.
    pub fn intervals(&self, quark: Quark) -> Result<&[StateInterval], StateError> {
        Ok(&self.history(quark)?.closed)
    }

    fn check_point(&self, t: Timestamp) -> Result<(), StateError> {
        if t < self.origin() || t >= self.end {
            return Err(StateError::Range {
                t,
                origin: self.origin(),
                end: self.end,
            });
        }
        Ok(())
    }

    /// Value of `quark` at `t`; `Null` before the quark's first write.
    pub fn query_point(&self, quark: Quark, t: Timestamp) -> Result<StateValue, StateError> {
        self.query_point_counted(quark, t).map(|(v, _)| v)
    }

    /// As [`query_point`](Self::query_point), also returning the number of
    /// timestamp comparisons the lookup performed.
    pub fn query_point_counted(&self, quark: Quark, t: Timestamp) -> Result<(StateValue, u32), StateError> {
        let intervals = self.sealed_history(quark)?;
        self.check_point(t)?;
        let (idx, comparisons) = locate(intervals, t);
        let value = idx.map(|i| intervals[i].value.clone()).unwrap_or(StateValue::Null);
        Ok((value, comparisons))
    }

    pub fn query_point_path(&self, path: &AttributePath, t: Timestamp) -> Result<StateValue, StateError> {
        let q = self
            .quark(path)
            .ok_or_else(|| StateError::UnknownPath(path.to_string()))?;
        self.query_point(q, t)
    }

    /// Intervals of `quark` intersecting `[t1, t2)`, clipped to the window.
    pub fn query_range(&self, quark: Quark, t1: Timestamp, t2: Timestamp) -> Result<Vec<StateInterval>, StateError> {
        let intervals = self.sealed_history(quark)?;
        if t1 >= t2 {
            return Err(StateError::InvalidRange { t1, t2 });
        }
        self.check_point(t1)?;
        if t2 > self.end {
            return Err(StateError::Range {
                t: t2,
                origin: self.origin(),
                end: self.end,
            });
        }
        let first = intervals.partition_point(|iv| iv.end <= t1);
        Ok(intervals[first..]
            .iter()
            .take_while(|iv| iv.start < t2)
            .map(|iv| StateInterval {
                start: iv.start.max(t1),
                end: iv.end.min(t2),
                quark,
                value: iv.value.clone(),
            })
            .collect())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            quarks: self
                .quarks()
                .map(|(id, path)| SnapshotQuark {
                    id,
                    path: path.to_string(),
                })
                .collect(),
            intervals: self
                .histories
                .iter()
                .flat_map(|h| h.closed.iter())
                .map(|iv| SnapshotInterval {
                    q: iv.quark,
                    start: iv.start,
                    end: iv.end,
                    value: iv.value.clone(),
                })
                .collect(),
        }
    }
}

/// Index of the interval containing `t` and the comparisons spent finding it.
fn locate(intervals: &[StateInterval], t: Timestamp) -> (Option<usize>, u32) {
    let mut comparisons = 1;
    match intervals.first() {
        Some(first) if t >= first.start => {}
        _ => return (None, comparisons),
    }
    // Invariant: intervals[lo].start <= t, and every index >= hi starts after t.
    let mut lo = 0;
    let mut hi = intervals.len();
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        comparisons += 1;
        if intervals[mid].start <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Contiguity puts t inside intervals[lo] unless it is past the last end.
    if t < intervals[lo].end {
        (Some(lo), comparisons)
    } else {
        (None, comparisons)
    }
}

/// JSON dump of a state system, for golden-file tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub quarks: Vec<SnapshotQuark>,
    pub intervals: Vec<SnapshotInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotQuark {
    pub id: Quark,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInterval {
    pub q: Quark,
    pub start: Timestamp,
    pub end: Timestamp,
    pub value: StateValue,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(s: &str) -> AttributePath {
        s.parse().unwrap()
    }

    fn int(v: i64) -> StateValue {
        StateValue::Int(v)
    }

    fn two_interval_system() -> (StateSystem, Quark) {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/CPUs/0/Current_thread")).unwrap();
        ss.modify_attribute(q, int(1), 0).unwrap();
        ss.modify_attribute(q, int(2), 100).unwrap();
        ss.seal(300).unwrap();
        (ss, q)
    }

    #[test]
    fn quarks_are_idempotent_and_sequential() {
        let mut ss = StateSystem::new();
        let a = ss.get_or_create_quark(&path("/CPUs/0/Current_thread")).unwrap();
        assert_eq!(a, Quark(0));
        assert_eq!(ss.get_or_create_quark(&path("/CPUs/0/Current_thread")).unwrap(), a);
        assert_eq!(ss.get_or_create_quark(&path("/Threads/5/Status")).unwrap(), Quark(1));
        ss.seal(10).unwrap();
        assert_eq!(
            ss.get_or_create_quark(&path("/Threads/6/Status")),
            Err(StateError::Sealed)
        );
        // Lookups still work after sealing.
        assert_eq!(ss.get_or_create_quark(&path("/CPUs/0/Current_thread")).unwrap(), a);
    }

    #[test]
    fn modify_closes_previous_value() {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/a")).unwrap();
        ss.modify_attribute(q, int(5), 100).unwrap();
        ss.modify_attribute(q, int(7), 200).unwrap();
        assert_eq!(
            ss.intervals(q).unwrap(),
            &[StateInterval {
                start: 100,
                end: 200,
                quark: q,
                value: int(5)
            }]
        );
    }

    #[test]
    fn equal_values_merge() {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/a")).unwrap();
        ss.modify_attribute(q, int(5), 100).unwrap();
        ss.modify_attribute(q, int(5), 200).unwrap();
        assert!(ss.intervals(q).unwrap().is_empty());
        ss.seal(300).unwrap();
        assert_eq!(ss.intervals(q).unwrap().len(), 1);
        assert_eq!(ss.intervals(q).unwrap()[0].start, 100);
    }

    #[test]
    fn time_regression_is_rejected() {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/a")).unwrap();
        ss.modify_attribute(q, int(5), 100).unwrap();
        assert!(matches!(
            ss.modify_attribute(q, int(6), 50),
            Err(StateError::Ordering {
                at: 50,
                open_start: 100,
                ..
            })
        ));
        // The open value survives the failed write.
        ss.seal(200).unwrap();
        assert_eq!(ss.query_point(q, 150).unwrap(), int(5));
    }

    #[test]
    fn same_instant_write_replaces_and_rejoins() {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/a")).unwrap();
        ss.modify_attribute(q, int(1), 0).unwrap();
        ss.modify_attribute(q, int(2), 100).unwrap();
        ss.modify_attribute(q, int(3), 100).unwrap();
        ss.modify_attribute(q, int(1), 100).unwrap();
        ss.seal(200).unwrap();
        assert_eq!(
            ss.intervals(q).unwrap(),
            &[StateInterval {
                start: 0,
                end: 200,
                quark: q,
                value: int(1)
            }]
        );
    }

    #[test]
    fn sched_switch_updates_cpu_and_threads() {
        let mut ss = StateSystem::new();
        ss.apply_event(&Event::sched_switch(10, 0, 0, 42)).unwrap();
        ss.apply_event(&Event::sched_switch(30, 0, 42, 0)).unwrap();
        ss.seal(50).unwrap();
        let cpu = AttributePath::cpu_current_thread(0);
        let status = AttributePath::thread_status(42);
        assert_eq!(ss.query_point_path(&cpu, 5).unwrap(), StateValue::Null);
        assert_eq!(ss.query_point_path(&cpu, 10).unwrap(), int(42));
        assert_eq!(ss.query_point_path(&cpu, 30).unwrap(), StateValue::Null);
        assert_eq!(
            ss.query_point_path(&status, 20).unwrap(),
            StateValue::Str(STATUS_RUNNING.into())
        );
        assert_eq!(
            ss.query_point_path(&status, 40).unwrap(),
            StateValue::Str(STATUS_WAITING.into())
        );
        assert!(ss.quark(&AttributePath::thread_status(0)).is_none());
    }

    #[test]
    fn unknown_kinds_are_counted_and_skipped() {
        let mut ss = StateSystem::new();
        let probe = Event::from_json_line(r#"{"ts":5,"kind":"custom_probe","cpu":1,"payload":{"x":"y"}}"#, 1).unwrap();
        ss.apply_event(&probe).unwrap();
        assert_eq!(ss.skipped_events(), 1);
        assert_eq!(ss.quark_count(), 0);
    }

    #[test]
    fn events_out_of_order_are_rejected() {
        let mut ss = StateSystem::new();
        ss.apply_event(&Event::sched_switch(10, 0, 0, 1)).unwrap();
        assert_eq!(
            ss.apply_event(&Event::sched_switch(5, 1, 0, 2)),
            Err(StateError::EventOrder { ts: 5, last: 10 })
        );
    }

    #[test]
    fn seal_behaviour() {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/a")).unwrap();
        ss.modify_attribute(q, int(42), 100).unwrap();
        assert_eq!(ss.seal(500).unwrap(), SealOutcome::Sealed);
        assert_eq!(
            ss.intervals(q).unwrap(),
            &[StateInterval {
                start: 100,
                end: 500,
                quark: q,
                value: int(42)
            }]
        );
        assert_eq!(ss.seal(900).unwrap(), SealOutcome::AlreadySealed);
        assert_eq!(ss.end(), 500);

        let mut ss = StateSystem::new();
        ss.apply_event(&Event::sched_switch(100, 0, 0, 1)).unwrap();
        assert_eq!(ss.seal(50), Err(StateError::SealOrder { end: 50, last: 100 }));
    }

    #[test]
    fn modify_after_seal_fails() {
        let (mut ss, q) = two_interval_system();
        assert_eq!(ss.modify_attribute(q, int(9), 400), Err(StateError::Sealed));
        assert_eq!(
            ss.apply_event(&Event::sched_switch(400, 0, 0, 1)),
            Err(StateError::Sealed)
        );
    }

    #[test]
    fn point_queries() {
        let (ss, q) = two_interval_system();
        assert_eq!(ss.query_point(q, 150).unwrap(), int(2));
        assert_eq!(ss.query_point(q, 99).unwrap(), int(1));
        assert_eq!(ss.query_point(q, 100).unwrap(), int(2));
        assert!(matches!(ss.query_point(q, 300), Err(StateError::Range { .. })));
        assert_eq!(ss.query_point(Quark(9), 10), Err(StateError::UnknownQuark(Quark(9))));
    }

    #[test]
    fn queries_require_seal() {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/a")).unwrap();
        assert_eq!(ss.query_point(q, 0), Err(StateError::NotSealed));
        assert_eq!(ss.query_range(q, 0, 1), Err(StateError::NotSealed));
    }

    #[test]
    fn null_before_first_write() {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/a")).unwrap();
        ss.modify_attribute(q, int(3), 50).unwrap();
        ss.seal(100).unwrap();
        assert_eq!(ss.query_point(q, 49).unwrap(), StateValue::Null);
        assert_eq!(ss.query_point(q, 50).unwrap(), int(3));
    }

    #[test]
    fn range_queries_clip() {
        let (ss, q) = two_interval_system();
        let got = ss.query_range(q, 50, 150).unwrap();
        assert_eq!(
            got,
            vec![
                StateInterval {
                    start: 50,
                    end: 100,
                    quark: q,
                    value: int(1)
                },
                StateInterval {
                    start: 100,
                    end: 150,
                    quark: q,
                    value: int(2)
                },
            ]
        );
        let exact = ss.query_range(q, 100, 300).unwrap();
        assert_eq!(
            exact,
            vec![StateInterval {
                start: 100,
                end: 300,
                quark: q,
                value: int(2)
            }]
        );
        assert_eq!(
            ss.query_range(q, 10, 10),
            Err(StateError::InvalidRange { t1: 10, t2: 10 })
        );
        assert!(matches!(ss.query_range(q, 10, 301), Err(StateError::Range { .. })));
    }

    #[test]
    fn snapshot_lists_quarks_and_intervals() {
        let (ss, _) = two_interval_system();
        let snap = ss.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        assert_eq!(
            json,
            r#"{"quarks":[{"id":0,"path":"/CPUs/0/Current_thread"}],"intervals":[{"q":0,"start":0,"end":100,"value":1},{"q":0,"start":100,"end":300,"value":2}]}"#
        );
        let back: Snapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn comparison_count_is_logarithmic() {
        let mut ss = StateSystem::new();
        let q = ss.get_or_create_quark(&path("/a")).unwrap();
        for i in 0..1024u64 {
            ss.modify_attribute(q, int((i % 2) as i64), i * 10).unwrap();
        }
        ss.seal(10_240).unwrap();
        assert_eq!(ss.intervals(q).unwrap().len(), 1024);
        for t in [0, 5, 5_000, 10_239] {
            let (_, c) = ss.query_point_counted(q, t).unwrap();
            assert!(c <= 11, "{c} comparisons at {t}");
        }
    }
}
