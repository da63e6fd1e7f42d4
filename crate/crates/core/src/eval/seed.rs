//! The shipped seed benchmark: two variants of each of the six question
//! patterns (three formats by two hop scopes), authored against a fixed
//! synthetic workload. References come from the brute-force replay oracle.

use crate::analytics::oracle::{brute_force_replay, StatTable};
use crate::analytics::{window_for_location, AnalyticsError, TemporalLocation, NS_PER_SEC};
use crate::kg::KgError;
use crate::trace::{Event, TraceMeta, WorkloadSpec};

use super::{
    AnswerFormat, BenchmarkItem, Entities, EvalError, HopScope, ReferenceAnswer, DEFAULT_LOOSE_TOL, DEFAULT_REL_TOL,
};

pub const SEED_BENCHMARK_JSON: &str = include_str!("../../data/seed_benchmark.json");
const SEED_WORKLOAD_JSON: &str = include_str!("../../data/seed_workload.json");

pub fn seed_workload() -> WorkloadSpec {
    serde_json::from_str(SEED_WORKLOAD_JSON).expect("shipped workload spec parses")
}

/// The shipped seed items.
pub fn seed_benchmark() -> Vec<BenchmarkItem> {
    super::parse_benchmark(SEED_BENCHMARK_JSON).expect("shipped seed benchmark is valid")
}

fn cpu_name(cpu: u32) -> String {
    format!("CPU_{cpu}")
}

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

struct Author<'a> {
    events: &'a [Event],
    meta: &'a TraceMeta,
    spec: &'a WorkloadSpec,
}

impl Author<'_> {
    fn table(&self, loc: TemporalLocation, len: u64) -> Result<StatTable, EvalError> {
        let w = window_for_location(self.meta, loc, len).map_err(KgError::from)?;
        brute_force_replay(self.events, w, self.meta.end).map_err(|e: AnalyticsError| EvalError::Kg(e.into()))
    }

    fn thread_runtime(t: &StatTable, tid: i64) -> u64 {
        t.stats.values().filter(|s| s.tid == tid).map(|s| s.runtime).sum()
    }

    /// `preferred` if it ran in the window, else the longest-running thread.
    fn active_thread(t: &StatTable, preferred: i64) -> Option<i64> {
        if Self::thread_runtime(t, preferred) > 0 {
            return Some(preferred);
        }
        let mut all: Vec<(i64, u64)> = t
            .threads()
            .into_iter()
            .map(|tid| (tid, Self::thread_runtime(t, tid)))
            .collect();
        all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        all.first().map(|x| x.0)
    }

    fn cpu_time(&self, id: &str, loc: TemporalLocation, len: u64, cpu: u32) -> Result<BenchmarkItem, EvalError> {
        let t = self.table(loc, len)?;
        let (tid, runtime) = t.top_thread(cpu).ok_or_else(|| author_err(id, "CPU idle in window"))?;
        Ok(BenchmarkItem {
            id: id.into(),
            prompt: format!("What is the total accumulated CPU time for thread {tid} on CPU {cpu}?"),
            answer_format: AnswerFormat::Explanatory,
            hop_scope: HopScope::Single,
            temporal_loc: loc,
            window_ns: len,
            entities: Some(Entities {
                cpus: vec![cpu],
                tids: vec![tid],
            }),
            reference: ReferenceAnswer::Numeric {
                value: runtime as f64,
                unit: "ns".into(),
                rel_tol: DEFAULT_REL_TOL,
                loose_tol: DEFAULT_LOOSE_TOL,
            },
        })
    }

    fn most_distinct(&self, id: &str, loc: TemporalLocation, len: u64) -> Result<BenchmarkItem, EvalError> {
        let t = self.table(loc, len)?;
        let cpu = t.most_distinct_cpu().ok_or_else(|| author_err(id, "no CPU activity"))?;
        Ok(BenchmarkItem {
            id: id.into(),
            prompt: "Which CPU served the most number of distinct threads? Ties go to the lowest CPU number.".into(),
            answer_format: AnswerFormat::Explanatory,
            hop_scope: HopScope::Multi,
            temporal_loc: loc,
            window_ns: len,
            entities: None,
            reference: ReferenceAnswer::Entity {
                id: format!("cpu:{cpu}"),
                aliases: vec![cpu_name(cpu), format!("CPU {cpu}")],
                quantity: None,
            },
        })
    }

    /// `options` CPUs are listed in order; `none_option` appends "None".
    #[allow(clippy::too_many_arguments)]
    fn primary_use(
        &self,
        id: &str,
        hop: HopScope,
        loc: TemporalLocation,
        len: u64,
        preferred: i64,
        options: u32,
        none_option: bool,
    ) -> Result<BenchmarkItem, EvalError> {
        let t = self.table(loc, len)?;
        let tid = Self::active_thread(&t, preferred).ok_or_else(|| author_err(id, "no thread ran"))?;
        let mut labels: Vec<String> = (0..options).map(cpu_name).collect();
        if none_option {
            labels.push("None".into());
        }
        let listed = labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("({}) {l}", letter(i)))
            .collect::<Vec<_>>()
            .join(" ");
        let answer = match t.primary_cpu(tid) {
            Some(cpu) if cpu < options => letter(cpu as usize),
            _ if none_option => letter(options as usize),
            _ => return Err(author_err(id, "primary CPU not among the options")),
        };
        Ok(BenchmarkItem {
            id: id.into(),
            prompt: format!("Thread {tid} primarily uses: {listed}"),
            answer_format: AnswerFormat::MultipleChoice,
            hop_scope: hop,
            temporal_loc: loc,
            window_ns: len,
            entities: Some(Entities {
                cpus: vec![],
                tids: vec![tid],
            }),
            reference: ReferenceAnswer::Choice { letter: answer },
        })
    }

    fn busy_threshold(
        &self,
        id: &str,
        loc: TemporalLocation,
        len: u64,
        cpu: u32,
        threshold: impl Fn(u64) -> u64,
    ) -> Result<BenchmarkItem, EvalError> {
        let t = self.table(loc, len)?;
        let busy = t.busy(cpu);
        let limit = threshold(busy);
        Ok(BenchmarkItem {
            id: id.into(),
            prompt: format!("True or False? CPU {cpu} total busy time > {limit} ns"),
            answer_format: AnswerFormat::TrueFalse,
            hop_scope: HopScope::Single,
            temporal_loc: loc,
            window_ns: len,
            entities: Some(Entities {
                cpus: vec![cpu],
                tids: vec![],
            }),
            reference: ReferenceAnswer::Boolean { value: busy > limit },
        })
    }

    fn busiest_is_most_diverse(&self, id: &str, loc: TemporalLocation, len: u64) -> Result<BenchmarkItem, EvalError> {
        let t = self.table(loc, len)?;
        let (busiest, _, all_idle) = t.busiest();
        let value = !all_idle && t.most_distinct_cpu() == Some(busiest);
        Ok(BenchmarkItem {
            id: id.into(),
            prompt:
                "True or False? The busiest CPU also runs the most unique threads. Ties go to the lowest CPU number."
                    .into(),
            answer_format: AnswerFormat::TrueFalse,
            hop_scope: HopScope::Multi,
            temporal_loc: loc,
            window_ns: len,
            entities: None,
            reference: ReferenceAnswer::Boolean { value },
        })
    }
}

fn author_err(id: &str, reason: &str) -> EvalError {
    EvalError::ItemSchema {
        path: id.into(),
        reason: format!("cannot author item: {reason}"),
    }
}

/// Authors the twelve seed items against `events` (generated from `spec`).
pub fn build_seed_benchmark(
    spec: &WorkloadSpec,
    events: &[Event],
    meta: &TraceMeta,
) -> Result<Vec<BenchmarkItem>, EvalError> {
    use TemporalLocation::{End, Mid, Start};
    let a = Author { events, meta, spec };
    let s = NS_PER_SEC;
    let items = vec![
        a.cpu_time("expl-single-1", Mid, s, 1)?,
        a.cpu_time("expl-single-2", Start, 10 * s, 0)?,
        a.most_distinct("expl-multi-1", Mid, 100 * s)?,
        a.most_distinct("expl-multi-2", End, s)?,
        a.primary_use(
            "mc-single-1",
            HopScope::Single,
            Start,
            10 * s,
            a.spec.dominant_tid(1),
            3,
            true,
        )?,
        a.primary_use("mc-single-2", HopScope::Single, Mid, s, a.spec.dominant_tid(2), 3, true)?,
        a.primary_use(
            "mc-multi-1",
            HopScope::Multi,
            End,
            10 * s,
            a.spec.dominant_tid(3),
            spec.cpu_count,
            false,
        )?,
        a.primary_use(
            "mc-multi-2",
            HopScope::Multi,
            Start,
            s,
            a.spec.dominant_tid(0),
            spec.cpu_count,
            false,
        )?,
        a.busy_threshold("tf-single-1", Mid, 10 * s, 2, |_| 100_000_000_000)?,
        a.busy_threshold("tf-single-2", Start, 10 * s, 1, |busy| busy / 2 / 1_000_000 * 1_000_000)?,
        a.busiest_is_most_diverse("tf-multi-1", Start, 10 * s)?,
        a.busiest_is_most_diverse("tf-multi-2", End, s)?,
    ];
    for (i, item) in items.iter().enumerate() {
        item.validate().map_err(|(path, reason)| EvalError::ItemSchema {
            path: format!("[{i}].{path}"),
            reason,
        })?;
    }
    Ok(items)
}
