#![allow(dead_code)]

use std::collections::BTreeSet;

use tracekg::analytics::NS_PER_SEC;
use tracekg::kg::QueryScope;
use tracekg::trace::{generate_synthetic_trace, Event, SplitMix64, TraceMeta, WorkloadSpec};
use tracekg::{StateSystem, Window};

pub struct Built {
    pub spec: WorkloadSpec,
    pub events: Vec<Event>,
    pub meta: TraceMeta,
    pub state: StateSystem,
}

pub fn below(rng: &mut SplitMix64, n: u64) -> u64 {
    rng.next_u64() % n
}

pub fn between(rng: &mut SplitMix64, lo: u64, hi: u64) -> u64 {
    lo + below(rng, hi - lo + 1)
}

/// 2-4 CPUs, 2-16 threads, a few hundred to a few thousand events.
pub fn random_spec(rng: &mut SplitMix64) -> WorkloadSpec {
    let cpu_count = between(rng, 2, 4) as u32;
    let duration = between(rng, NS_PER_SEC, 20 * NS_PER_SEC);
    let target_events = between(rng, 50, 2_500);
    WorkloadSpec {
        seed: rng.next_u64(),
        cpu_count,
        thread_count: between(rng, 2, 16) as u32,
        duration,
        mean_slice: (duration * u64::from(cpu_count) / target_events).max(1),
        skew: below(rng, 101) as f64 / 100.0,
    }
}

pub fn build(spec: WorkloadSpec) -> Built {
    let events: Vec<Event> = generate_synthetic_trace(&spec).unwrap().collect();
    let meta = TraceMeta::scan(events.iter().cloned().map(Ok)).unwrap();
    let state = StateSystem::build(&events, meta.end).unwrap();
    Built {
        spec,
        events,
        meta,
        state,
    }
}

pub fn random_window(rng: &mut SplitMix64, meta: &TraceMeta) -> Window {
    let t1 = between(rng, meta.origin, meta.end - 1);
    let t2 = between(rng, t1 + 1, meta.end);
    Window::new(t1, t2).unwrap()
}

fn subset<T: Copy + Ord>(rng: &mut SplitMix64, all: &[T]) -> Option<BTreeSet<T>> {
    if below(rng, 2) == 0 {
        return None;
    }
    let mut picked: BTreeSet<T> = all.iter().copied().filter(|_| below(rng, 2) == 0).collect();
    if picked.is_empty() {
        picked.insert(all[below(rng, all.len() as u64) as usize]);
    }
    Some(picked)
}

pub fn random_scope(rng: &mut SplitMix64, b: &Built) -> QueryScope {
    let cpus: Vec<u32> = (0..b.spec.cpu_count).collect();
    let tids: Vec<i64> = (0..b.spec.thread_count).map(|i| b.spec.tid_of(i)).collect();
    QueryScope {
        window: random_window(rng, &b.meta),
        cpu_filter: subset(rng, &cpus),
        thread_filter: subset(rng, &tids),
    }
}
