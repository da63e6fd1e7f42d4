//! Brute-force replay oracle.
//!
//! A single linear pass over raw events tracking the current thread of each
//! CPU. No state system is involved; this is the independent check for every
//! query in [`SchedAnalytics`](super::SchedAnalytics).

use std::collections::{BTreeMap, BTreeSet};

use super::{AnalyticsError, ThreadCpuStat, Window};
use crate::trace::{Event, Timestamp, IDLE_TID};

/// Per-(cpu, tid) stats gathered by [`brute_force_replay`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatTable {
    pub window: Option<Window>,
    pub cpus: BTreeSet<u32>,
    pub stats: BTreeMap<(u32, i64), ThreadCpuStat>,
}

#[derive(Debug, Clone, Copy)]
struct Run {
    tid: i64,
    start: Timestamp,
    end: Timestamp,
}

#[derive(Debug)]
struct CpuCursor {
    tid: i64,
    since: Timestamp,
    // Last closed run, held back so a same-tid run resuming at its end joins it.
    held: Option<Run>,
}

impl StatTable {
    fn credit(&mut self, cpu: u32, run: Run, w: Window) {
        if run.tid == IDLE_TID {
            return;
        }
        let lo = run.start.max(w.t1);
        let hi = run.end.min(w.t2);
        if hi <= lo {
            return;
        }
        let stat = self.stats.entry((cpu, run.tid)).or_insert(ThreadCpuStat {
            tid: run.tid,
            cpu,
            runtime: 0,
            switch_in_count: 0,
        });
        stat.runtime += hi - lo;
        stat.switch_in_count += 1;
    }

    pub fn runtime(&self, tid: i64, cpu: u32) -> u64 {
        self.stats.get(&(cpu, tid)).map_or(0, |s| s.runtime)
    }

    pub fn busy(&self, cpu: u32) -> u64 {
        self.stats
            .iter()
            .filter(|((c, _), _)| *c == cpu)
            .map(|(_, s)| s.runtime)
            .sum()
    }

    pub fn distinct(&self, cpu: u32) -> usize {
        self.stats.keys().filter(|(c, _)| *c == cpu).count()
    }

    /// Highest-runtime tid on `cpu`, smallest tid on ties.
    pub fn top_thread(&self, cpu: u32) -> Option<(i64, u64)> {
        let mut rows: Vec<(i64, u64)> = self
            .stats
            .iter()
            .filter(|((c, _), _)| *c == cpu)
            .map(|((_, t), s)| (*t, s.runtime))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows.first().copied()
    }

    /// `(cpu, busy, all_idle)`.
    pub fn busiest(&self) -> (u32, u64, bool) {
        let mut rows: Vec<(u32, u64)> = self.cpus.iter().map(|c| (*c, self.busy(*c))).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        match rows.first() {
            Some(&(cpu, busy)) if busy > 0 => (cpu, busy, false),
            _ => (0, 0, true),
        }
    }

    pub fn most_distinct_cpu(&self) -> Option<u32> {
        let mut rows: Vec<(u32, usize)> = self.cpus.iter().map(|c| (*c, self.distinct(*c))).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows.first().map(|r| r.0)
    }

    pub fn primary_cpu(&self, tid: i64) -> Option<u32> {
        let mut rows: Vec<(u32, u64)> = self
            .stats
            .iter()
            .filter(|((_, t), s)| *t == tid && s.runtime > 0)
            .map(|((c, _), s)| (*c, s.runtime))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows.first().map(|r| r.0)
    }

    pub fn threads(&self) -> BTreeSet<i64> {
        self.stats.keys().map(|(_, t)| *t).collect()
    }
}

/// Replays `events` and accumulates every thread's clipped runtime in `w`.
///
/// Each CPU starts idle at time 0; the run current after the last event lasts
/// until `end`. Events other than `sched_switch` are ignored.
pub fn brute_force_replay<'a, I>(events: I, w: Window, end: Timestamp) -> Result<StatTable, AnalyticsError>
where
    I: IntoIterator<Item = &'a Event>,
{
    let mut table = StatTable {
        window: Some(w),
        ..StatTable::default()
    };
    let mut cursors: BTreeMap<u32, CpuCursor> = BTreeMap::new();
    let mut last: Option<Timestamp> = None;

    for event in events {
        if let Some(prev) = last {
            if event.ts < prev {
                return Err(AnalyticsError::Ordering {
                    ts: event.ts,
                    last: prev,
                });
            }
        }
        last = Some(event.ts);
        let Some((_, next)) = event.switch_tids() else { continue };
        table.cpus.insert(event.cpu);
        let cursor = cursors.entry(event.cpu).or_insert(CpuCursor {
            tid: IDLE_TID,
            since: 0,
            held: None,
        });
        if next == cursor.tid {
            continue;
        }
        let t = event.ts;
        if t > cursor.since {
            if let Some(done) = cursor.held.take() {
                table.credit(event.cpu, done, w);
            }
            cursor.held = Some(Run {
                tid: cursor.tid,
                start: cursor.since,
                end: t,
            });
        }
        match cursor.held {
            Some(h) if h.tid == next && h.end == t => {
                cursor.tid = next;
                cursor.since = h.start;
                cursor.held = None;
            }
            _ => {
                cursor.tid = next;
                cursor.since = t;
            }
        }
    }

    for (cpu, cursor) in cursors {
        if let Some(done) = cursor.held {
            table.credit(cpu, done, w);
        }
        if end > cursor.since {
            table.credit(
                cpu,
                Run {
                    tid: cursor.tid,
                    start: cursor.since,
                    end,
                },
                w,
            );
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_switch_runs_until_end() {
        let events = [Event::sched_switch(100, 0, 0, 5)];
        let t = brute_force_replay(&events, Window::new(0, 200).unwrap(), 200).unwrap();
        assert_eq!(t.runtime(5, 0), 100);
        assert_eq!(t.top_thread(0), Some((5, 100)));
    }

    #[test]
    fn empty_input_gives_empty_table() {
        let t = brute_force_replay(&[], Window::new(0, 10).unwrap(), 10).unwrap();
        assert!(t.stats.is_empty());
        assert!(t.cpus.is_empty());
        assert_eq!(t.busiest(), (0, 0, true));
        assert_eq!(t.most_distinct_cpu(), None);
    }

    #[test]
    fn rejects_unordered_events() {
        let events = [Event::sched_switch(10, 0, 0, 5), Event::sched_switch(5, 0, 5, 0)];
        assert!(matches!(
            brute_force_replay(&events, Window::new(0, 10).unwrap(), 10),
            Err(AnalyticsError::Ordering { ts: 5, last: 10 })
        ));
    }

    #[test]
    fn zero_length_detour_joins_runs() {
        let events = [
            Event::sched_switch(0, 0, 0, 42),
            Event::sched_switch(100, 0, 42, 7),
            Event::sched_switch(100, 0, 7, 42),
        ];
        let t = brute_force_replay(&events, Window::new(0, 200).unwrap(), 200).unwrap();
        assert_eq!(t.stats[&(0, 42)].switch_in_count, 1);
        assert_eq!(t.runtime(42, 0), 200);
        assert_eq!(t.runtime(7, 0), 0);
        assert_eq!(t.distinct(0), 1);
    }
}
