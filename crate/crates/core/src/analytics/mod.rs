//! Scheduling analytics over a sealed [`StateSystem`].
//!
//! These are the ground-truth quantities behind knowledge-graph weights and
//! benchmark reference answers. Every ranking breaks ties toward the smallest
//! numeric id, and the idle task never counts as a thread.
//!
//! [`oracle`] recomputes the same quantities by a linear scan of raw events,
//! without the state system, and is used as the independent check.

pub mod oracle;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{AttributePath, Quark, StateError, StateSystem};
use crate::trace::{Timestamp, TraceMeta};

pub const NS_PER_SEC: u64 = 1_000_000_000;
const LOCATION_MARGIN: u64 = 5 * NS_PER_SEC;
/// Traces shorter than this get a proportionally smaller placement margin.
const FULL_MARGIN_TRACE_LEN: u64 = 30 * NS_PER_SEC;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("invalid window [{t1}, {t2}): start must precede end")]
    EmptyWindow { t1: Timestamp, t2: Timestamp },
    #[error("window [{t1}, {t2}) is outside the sealed extent [0, {end})")]
    OutOfExtent {
        t1: Timestamp,
        t2: Timestamp,
        end: Timestamp,
    },
    #[error("trace of {trace_len} ns is too short for a {length} ns window at {loc}")]
    TraceTooShort {
        trace_len: u64,
        length: u64,
        loc: TemporalLocation,
    },
    #[error("event at {ts} precedes previous event at {last}")]
    Ordering { ts: Timestamp, last: Timestamp },
    #[error(transparent)]
    State(#[from] StateError),
}

/// Half-open analysis window `[t1, t2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Window {
    pub t1: Timestamp,
    pub t2: Timestamp,
}

impl Window {
    pub fn new(t1: Timestamp, t2: Timestamp) -> Result<Self, AnalyticsError> {
        if t1 >= t2 {
            return Err(AnalyticsError::EmptyWindow { t1, t2 });
        }
        Ok(Window { t1, t2 })
    }

    pub fn len(&self) -> u64 {
        self.t2 - self.t1
    }

    pub fn is_empty(&self) -> bool {
        self.t1 >= self.t2
    }

    /// Length of `[start, end) ∩ self`.
    pub fn overlap(&self, start: Timestamp, end: Timestamp) -> u64 {
        end.min(self.t2).saturating_sub(start.max(self.t1))
    }

    pub fn check_within(&self, state: &StateSystem) -> Result<(), AnalyticsError> {
        if self.is_empty() {
            return Err(AnalyticsError::EmptyWindow {
                t1: self.t1,
                t2: self.t2,
            });
        }
        if self.t1 < state.origin() || self.t2 > state.end() {
            return Err(AnalyticsError::OutOfExtent {
                t1: self.t1,
                t2: self.t2,
                end: state.end(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.t1, self.t2)
    }
}

/// Where an analysis window sits inside a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalLocation {
    Start,
    Mid,
    End,
}

impl TemporalLocation {
    pub const ALL: [TemporalLocation; 3] = [Self::Start, Self::Mid, Self::End];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Start => "start",
            Self::Mid => "mid",
            Self::End => "end",
        }
    }
}

impl fmt::Display for TemporalLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalLocation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "start" => Ok(Self::Start),
            "mid" => Ok(Self::Mid),
            "end" => Ok(Self::End),
            other => Err(format!("unknown temporal location `{other}` (start|mid|end)")),
        }
    }
}

/// Placement margin: 5 s, shrunk linearly for traces under 30 s.
pub fn location_margin(trace_len: u64) -> u64 {
    if trace_len >= FULL_MARGIN_TRACE_LEN {
        LOCATION_MARGIN
    } else {
        // 5 s * len / 30 s
        (u128::from(trace_len) * u128::from(LOCATION_MARGIN) / u128::from(FULL_MARGIN_TRACE_LEN)) as u64
    }
}

/// Window of `length` ns placed at `loc`:
///
/// * start: `[margin, margin + length)`
/// * mid: `[midpoint, midpoint + length)`
/// * end: `[end - margin - length, end - margin)`
pub fn window_for_location(meta: &TraceMeta, loc: TemporalLocation, length: u64) -> Result<Window, AnalyticsError> {
    let trace_len = meta.duration();
    let margin = location_margin(trace_len);
    let too_short = AnalyticsError::TraceTooShort { trace_len, length, loc };
    if length == 0 || trace_len <= length + 2 * margin {
        return Err(too_short);
    }
    let (t1, t2) = match loc {
        TemporalLocation::Start => (meta.origin + margin, meta.origin + margin + length),
        TemporalLocation::Mid => {
            let mid = meta.origin + trace_len / 2;
            (mid, mid + length)
        }
        TemporalLocation::End => (meta.end - margin - length, meta.end - margin),
    };
    if t2 > meta.end {
        return Err(too_short);
    }
    Window::new(t1, t2)
}

/// Accumulated occupancy of one thread on one CPU inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadCpuStat {
    pub tid: i64,
    pub cpu: u32,
    pub runtime: u64,
    /// Occupancy runs overlapping the window, including one already in
    /// progress at its start.
    pub switch_in_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusiestCpu {
    pub cpu: u32,
    pub busy: u64,
    /// Every CPU was idle for the whole window.
    pub all_idle: bool,
}

/// Read-only analytics view of a sealed state system.
#[derive(Clone, Copy)]
pub struct SchedAnalytics<'a> {
    state: &'a StateSystem,
}

impl<'a> SchedAnalytics<'a> {
    pub fn new(state: &'a StateSystem) -> Result<Self, AnalyticsError> {
        if !state.is_sealed() {
            return Err(StateError::NotSealed.into());
        }
        Ok(SchedAnalytics { state })
    }

    pub fn state(&self) -> &'a StateSystem {
        self.state
    }

    /// CPU ids that have a current-thread attribute, ascending.
    pub fn cpus(&self) -> Vec<u32> {
        let mut cpus: Vec<u32> = self
            .state
            .quarks()
            .filter_map(|(_, p)| p.as_cpu_current_thread())
            .collect();
        cpus.sort_unstable();
        cpus
    }

    fn cpu_quark(&self, cpu: u32) -> Option<Quark> {
        self.state.quark(&AttributePath::cpu_current_thread(cpu))
    }

    /// Per-thread stats on `cpu` within `w`, ascending by tid. Threads with no
    /// overlap are absent.
    pub fn thread_stats_on_cpu(&self, cpu: u32, w: Window) -> Result<Vec<ThreadCpuStat>, AnalyticsError> {
        w.check_within(self.state)?;
        let Some(q) = self.cpu_quark(cpu) else {
            return Ok(Vec::new());
        };
        let mut by_tid: BTreeMap<i64, ThreadCpuStat> = BTreeMap::new();
        for iv in self.state.query_range(q, w.t1, w.t2)? {
            let Some(tid) = iv.value.as_int() else { continue };
            let stat = by_tid.entry(tid).or_insert(ThreadCpuStat {
                tid,
                cpu,
                runtime: 0,
                switch_in_count: 0,
            });
            stat.runtime += iv.duration();
            stat.switch_in_count += 1;
        }
        Ok(by_tid.into_values().collect())
    }

    pub fn cpu_time_of_thread_on_cpu(&self, tid: i64, cpu: u32, w: Window) -> Result<u64, AnalyticsError> {
        Ok(self
            .thread_stats_on_cpu(cpu, w)?
            .iter()
            .find(|s| s.tid == tid)
            .map_or(0, |s| s.runtime))
    }

    /// Non-idle time of `cpu` within `w`.
    pub fn busy_time(&self, cpu: u32, w: Window) -> Result<u64, AnalyticsError> {
        Ok(self.thread_stats_on_cpu(cpu, w)?.iter().map(|s| s.runtime).sum())
    }

    pub fn idle_time(&self, cpu: u32, w: Window) -> Result<u64, AnalyticsError> {
        Ok(w.len() - self.busy_time(cpu, w)?)
    }

    /// Thread with the most runtime on `cpu`; `None` if the CPU idled
    /// throughout.
    pub fn top_thread_on_cpu(&self, cpu: u32, w: Window) -> Result<Option<(i64, u64)>, AnalyticsError> {
        let stats = self.thread_stats_on_cpu(cpu, w)?;
        // Ascending tid order plus strict comparison keeps the smallest tid on ties.
        let mut best: Option<(i64, u64)> = None;
        for s in stats {
            if best.is_none_or(|(_, rt)| s.runtime > rt) {
                best = Some((s.tid, s.runtime));
            }
        }
        Ok(best)
    }

    pub fn distinct_threads_on_cpu(&self, cpu: u32, w: Window) -> Result<usize, AnalyticsError> {
        Ok(self.thread_stats_on_cpu(cpu, w)?.len())
    }

    pub fn busiest_cpu(&self, w: Window) -> Result<BusiestCpu, AnalyticsError> {
        w.check_within(self.state)?;
        let mut best = BusiestCpu {
            cpu: 0,
            busy: 0,
            all_idle: true,
        };
        for cpu in self.cpus() {
            let busy = self.busy_time(cpu, w)?;
            if best.all_idle && busy > 0 || busy > best.busy {
                best = BusiestCpu {
                    cpu,
                    busy,
                    all_idle: false,
                };
            }
        }
        Ok(best)
    }

    /// CPU with the most distinct threads; `None` when the trace has no CPUs.
    pub fn cpu_serving_most_distinct_threads(&self, w: Window) -> Result<Option<u32>, AnalyticsError> {
        w.check_within(self.state)?;
        let mut best: Option<(u32, usize)> = None;
        for cpu in self.cpus() {
            let n = self.distinct_threads_on_cpu(cpu, w)?;
            if best.is_none_or(|(_, m)| n > m) {
                best = Some((cpu, n));
            }
        }
        Ok(best.map(|(cpu, _)| cpu))
    }

    /// CPU where `tid` accumulated the most runtime; `None` if it never ran.
    pub fn primary_cpu_of_thread(&self, tid: i64, w: Window) -> Result<Option<u32>, AnalyticsError> {
        w.check_within(self.state)?;
        let mut best: Option<(u32, u64)> = None;
        for cpu in self.cpus() {
            let rt = self.cpu_time_of_thread_on_cpu(tid, cpu, w)?;
            if rt > 0 && best.is_none_or(|(_, b)| rt > b) {
                best = Some((cpu, rt));
            }
        }
        Ok(best.map(|(cpu, _)| cpu))
    }

    /// Every thread-on-CPU stat in the window, ordered by (cpu, tid).
    pub fn all_stats(&self, w: Window) -> Result<Vec<ThreadCpuStat>, AnalyticsError> {
        let mut out = Vec::new();
        for cpu in self.cpus() {
            out.extend(self.thread_stats_on_cpu(cpu, w)?);
        }
        Ok(out)
    }
}
