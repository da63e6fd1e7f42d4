//! Deterministic synthetic scheduling workloads.
//!
//! The generator is fully specified so any implementation reproduces the same
//! bytes for the same [`WorkloadSpec`]:
//!
//! * PRNG is SplitMix64: `state += 0x9E3779B97F4A7C15; z = state;
//!   z = (z ^ z>>30) * 0xBF58476D1CE4E5B9; z = (z ^ z>>27) * 0x94D049BB133111EB;
//!   return z ^ z>>31` (wrapping arithmetic), seeded with `spec.seed`.
//! * `unit()` is `(next() >> 11) * 2^-53`, a double in `[0, 1)`.
//! * A duration with mean `m` is `max(1, floor(-ln(1 - unit()) * m))`.
//! * Thread `i` (0-based) has tid `1000 + i`; CPU `c` has dominant thread
//!   index `c % thread_count`.
//! * Every CPU starts idle with its next decision at time 0. The CPU with the
//!   smallest decision time goes next (ties: smallest CPU id). Once every
//!   decision time has reached `duration`, each CPU still running a thread
//!   switches to idle at exactly `duration`, in CPU order, and the stream ends.
//! * At a decision the *available* threads are those not current on any CPU,
//!   in tid order. A running CPU first draws `unit() < 1/8`; if so, or if
//!   nothing is available, it switches to idle. Otherwise, and for an idle CPU
//!   with available threads, it picks: if `skew > 0` and the dominant thread
//!   is available and `unit() < skew`, the dominant thread; else
//!   `available[next() % len]`. An idle CPU with nothing available stays idle.
//! * Run length mean is `mean_slice * (1 + 3 * skew)` for the CPU's dominant
//!   thread, `mean_slice` otherwise (idle included). The switch is emitted at
//!   the decision time and the next decision is at time + run length.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Event, Timestamp, TraceError, IDLE_TID};

const IDLE_PROBABILITY: f64 = 1.0 / 8.0;
const DOMINANT_SLICE_BOOST: f64 = 3.0;
const FIRST_TID: i64 = 1000;

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in `[0, 1)` from the top 53 bits.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn duration(&mut self, mean: f64) -> u64 {
        let u = self.unit();
        let d = (-(1.0 - u).ln() * mean).floor();
        (d as u64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub cpu_count: u32,
    pub thread_count: u32,
    /// Trace length, ns.
    pub duration: Timestamp,
    /// Mean run length before a switch, ns.
    pub mean_slice: u64,
    /// 0 picks threads uniformly; 1 gives each CPU one dominant thread.
    pub skew: f64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let fail = |msg: String| Err(TraceError::Spec(msg));
        if self.cpu_count < 1 {
            return fail("cpu_count must be at least 1".into());
        }
        if self.thread_count < 1 {
            return fail("thread_count must be at least 1".into());
        }
        if self.mean_slice == 0 {
            return fail("mean_slice must be positive".into());
        }
        if self.duration < self.mean_slice {
            return fail(format!(
                "duration {} ns is shorter than mean_slice {} ns",
                self.duration, self.mean_slice
            ));
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return fail(format!("skew {} is outside [0, 1]", self.skew));
        }
        Ok(())
    }

    pub fn tid_of(&self, index: u32) -> i64 {
        FIRST_TID + i64::from(index)
    }

    /// The thread the generator favours on `cpu` when `skew > 0`.
    pub fn dominant_tid(&self, cpu: u32) -> i64 {
        self.tid_of(cpu % self.thread_count)
    }
}

/// Lazily generated event stream for one [`WorkloadSpec`].
pub struct SyntheticTrace {
    spec: WorkloadSpec,
    rng: SplitMix64,
    current: Vec<i64>,
    next_decision: Vec<Timestamp>,
    running: Vec<bool>,
    drain: Option<VecDeque<Event>>,
}

/// Builds the event stream for `spec`. Only `sched_switch` events are emitted.
pub fn generate_synthetic_trace(spec: &WorkloadSpec) -> Result<SyntheticTrace, TraceError> {
    spec.validate()?;
    let cpus = spec.cpu_count as usize;
    Ok(SyntheticTrace {
        rng: SplitMix64::new(spec.seed),
        current: vec![IDLE_TID; cpus],
        next_decision: vec![0; cpus],
        running: vec![false; spec.thread_count as usize],
        drain: None,
        spec: spec.clone(),
    })
}

impl SyntheticTrace {
    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    fn index_of(&self, tid: i64) -> usize {
        (tid - FIRST_TID) as usize
    }

    fn choose(&mut self, cpu: u32, available: &[i64]) -> i64 {
        let dominant = self.spec.dominant_tid(cpu);
        if self.spec.skew > 0.0 && available.contains(&dominant) && self.rng.unit() < self.spec.skew {
            return dominant;
        }
        let pick = self.rng.next_u64() % available.len() as u64;
        available[pick as usize]
    }

    fn run_mean(&self, cpu: u32, tid: i64) -> f64 {
        let mean = self.spec.mean_slice as f64;
        if self.spec.skew > 0.0 && tid == self.spec.dominant_tid(cpu) {
            mean * (1.0 + DOMINANT_SLICE_BOOST * self.spec.skew)
        } else {
            mean
        }
    }
}

impl Iterator for SyntheticTrace {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        loop {
            if let Some(drain) = &mut self.drain {
                return drain.pop_front();
            }
            let (cpu, now) = self
                .next_decision
                .iter()
                .enumerate()
                .min_by_key(|(c, t)| (**t, *c))
                .map(|(c, t)| (c, *t))
                .expect("at least one cpu");
            if now >= self.spec.duration {
                let end = self.spec.duration;
                let drain = self
                    .current
                    .iter()
                    .enumerate()
                    .filter(|(_, tid)| **tid != IDLE_TID)
                    .map(|(c, tid)| Event::sched_switch(end, c as u32, *tid, IDLE_TID))
                    .collect();
                self.drain = Some(drain);
                continue;
            }

            let cpu_id = cpu as u32;
            let current = self.current[cpu];
            let available: Vec<i64> = (0..self.spec.thread_count)
                .map(|i| self.spec.tid_of(i))
                .filter(|tid| !self.running[self.index_of(*tid)])
                .collect();

            let next = if current != IDLE_TID {
                if self.rng.unit() < IDLE_PROBABILITY || available.is_empty() {
                    IDLE_TID
                } else {
                    self.choose(cpu_id, &available)
                }
            } else if available.is_empty() {
                IDLE_TID
            } else {
                self.choose(cpu_id, &available)
            };

            let run = self.rng.duration(self.run_mean(cpu_id, next));
            self.next_decision[cpu] = now.saturating_add(run);
            if next == current {
                continue;
            }
            if current != IDLE_TID {
                let i = self.index_of(current);
                self.running[i] = false;
            }
            if next != IDLE_TID {
                let i = self.index_of(next);
                self.running[i] = true;
            }
            self.current[cpu] = next;
            return Some(Event::sched_switch(now, cpu_id, current, next));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::write_events;

    fn spec(seed: u64, cpus: u32, threads: u32) -> WorkloadSpec {
        WorkloadSpec {
            seed,
            cpu_count: cpus,
            thread_count: threads,
            duration: 1_000_000,
            mean_slice: 100_000,
            skew: 0.0,
        }
    }

    fn bytes(spec: &WorkloadSpec) -> Vec<u8> {
        let mut out = Vec::new();
        write_events(&mut out, generate_synthetic_trace(spec).unwrap()).unwrap();
        out
    }

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of SplitMix64 seeded with 0.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn same_spec_same_bytes() {
        let s = spec(1, 1, 2);
        let a = bytes(&s);
        assert!(!a.is_empty());
        assert_eq!(a, bytes(&s));
        assert_ne!(a, bytes(&spec(2, 1, 2)));
    }

    #[test]
    fn single_thread_alternates_with_idle() {
        let events: Vec<_> = generate_synthetic_trace(&spec(9, 1, 1)).unwrap().collect();
        assert!(events.len() >= 2);
        for (i, e) in events.iter().enumerate() {
            let (prev, next) = e.switch_tids().unwrap();
            if i % 2 == 0 {
                assert_eq!((prev, next), (0, 1000));
            } else {
                assert_eq!((prev, next), (1000, 0));
            }
        }
    }

    #[test]
    fn drains_to_idle_at_duration() {
        let s = spec(4, 3, 5);
        let events: Vec<_> = generate_synthetic_trace(&s).unwrap().collect();
        let last = events.last().unwrap();
        assert_eq!(last.ts, s.duration);
        assert!(events.iter().all(|e| e.ts <= s.duration));
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = spec(1, 1, 1);
        s.duration = s.mean_slice - 1;
        assert!(matches!(generate_synthetic_trace(&s), Err(TraceError::Spec(_))));
        let mut s = spec(1, 1, 1);
        s.duration = 0;
        assert!(generate_synthetic_trace(&s).is_err());
        let mut s = spec(1, 0, 1);
        s.cpu_count = 0;
        assert!(generate_synthetic_trace(&s).is_err());
        let mut s = spec(1, 1, 1);
        s.skew = 1.5;
        assert!(generate_synthetic_trace(&s).is_err());
        let mut s = spec(1, 1, 1);
        s.mean_slice = 0;
        assert!(generate_synthetic_trace(&s).is_err());
    }
}
