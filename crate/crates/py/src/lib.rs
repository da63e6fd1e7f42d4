//! Python bindings: traces, state queries, analytics, graphs and scoring.

use std::collections::BTreeSet;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tracekg::analytics::{window_for_location, SchedAnalytics, TemporalLocation};
use tracekg::eval::{self, BenchmarkItem, Score};
use tracekg::kg::{self, KnowledgeGraph, QueryScope};
use tracekg::trace::{self as tr, Event, TraceMeta, WorkloadSpec};
use tracekg::{AttributePath, StateValue, Window};

create_exception!(tracekg, TraceKgError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    TraceKgError::new_err(e.to_string())
}

fn window(t1: u64, t2: u64) -> PyResult<Window> {
    Window::new(t1, t2).map_err(err)
}

fn value_to_py(py: Python<'_>, v: &StateValue) -> PyResult<Py<PyAny>> {
    Ok(match v {
        StateValue::Null => py.None(),
        StateValue::Int(i) => i.into_pyobject(py)?.into_any().unbind(),
        StateValue::Str(s) => s.into_pyobject(py)?.into_any().unbind(),
    })
}

/// A loaded or generated `sched_switch` trace.
#[pyclass(frozen, module = "tracekg")]
struct Trace {
    events: Arc<Vec<Event>>,
    meta: TraceMeta,
}

impl Trace {
    fn from_events(events: Vec<Event>) -> PyResult<Self> {
        let meta = TraceMeta::scan(events.iter().cloned().map(Ok)).map_err(err)?;
        Ok(Trace {
            events: Arc::new(events),
            meta,
        })
    }
}

#[pymethods]
impl Trace {
    /// Deterministic synthetic workload.
    #[staticmethod]
    #[pyo3(signature = (seed, cpus, threads, duration_ns, mean_slice_ns, skew = 0.0))]
    fn generate(seed: u64, cpus: u32, threads: u32, duration_ns: u64, mean_slice_ns: u64, skew: f64) -> PyResult<Self> {
        let spec = WorkloadSpec {
            seed,
            cpu_count: cpus,
            thread_count: threads,
            duration: duration_ns,
            mean_slice: mean_slice_ns,
            skew,
        };
        Self::from_events(tr::generate_synthetic_trace(&spec).map_err(err)?.collect())
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (_, stream) = tr::load_trace(path).map_err(err)?;
        Self::from_events(stream.collect::<Result<_, _>>().map_err(err)?)
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        let events = tr::EventReader::new(text.as_bytes())
            .collect::<Result<_, _>>()
            .map_err(err)?;
        Self::from_events(events)
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        tr::write_events(&mut buf, self.events.iter().cloned()).map_err(err)?;
        String::from_utf8(buf).map_err(err)
    }

    #[getter]
    fn origin(&self) -> u64 {
        self.meta.origin
    }

    #[getter]
    fn end(&self) -> u64 {
        self.meta.end
    }

    #[getter]
    fn cpu_count(&self) -> u32 {
        self.meta.cpu_count
    }

    fn __len__(&self) -> usize {
        self.events.len()
    }

    /// `(t1, t2)` of a window of `length_ns` placed at "start", "mid" or "end".
    fn window_for_location(&self, loc: &str, length_ns: u64) -> PyResult<(u64, u64)> {
        let loc: TemporalLocation = loc.parse().map_err(err)?;
        let w = window_for_location(&self.meta, loc, length_ns).map_err(err)?;
        Ok((w.t1, w.t2))
    }

    /// Builds the sealed state system.
    fn state(&self, py: Python<'_>) -> PyResult<StateSystem> {
        let events = self.events.clone();
        let end = self.meta.end;
        let ss = py
            .detach(move || tracekg::StateSystem::build(events.iter(), end))
            .map_err(err)?;
        Ok(StateSystem { inner: Arc::new(ss) })
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(events={}, cpus={}, origin={}, end={})",
            self.events.len(),
            self.meta.cpu_count,
            self.meta.origin,
            self.meta.end
        )
    }
}

/// Sealed attribute history with scheduling analytics over half-open windows.
#[pyclass(frozen, module = "tracekg")]
struct StateSystem {
    inner: Arc<tracekg::StateSystem>,
}

impl StateSystem {
    fn analytics(&self) -> PyResult<SchedAnalytics<'_>> {
        SchedAnalytics::new(&self.inner).map_err(err)
    }

    fn quark(&self, path: &str) -> PyResult<tracekg::Quark> {
        let p: AttributePath = path.parse().map_err(err)?;
        self.inner
            .quark(&p)
            .ok_or_else(|| err(format!("unknown attribute path {path}")))
    }
}

#[pymethods]
impl StateSystem {
    #[getter]
    fn end(&self) -> u64 {
        self.inner.end()
    }

    fn paths(&self) -> Vec<String> {
        self.inner.quarks().map(|(_, p)| p.to_string()).collect()
    }

    /// Value of the attribute at `t`; None before its first write.
    fn query_point(&self, py: Python<'_>, path: &str, t: u64) -> PyResult<Py<PyAny>> {
        let v = self.inner.query_point(self.quark(path)?, t).map_err(err)?;
        value_to_py(py, &v)
    }

    /// Like `query_point`, also returning the comparison count.
    fn query_point_counted(&self, py: Python<'_>, path: &str, t: u64) -> PyResult<(Py<PyAny>, u32)> {
        let (v, n) = self.inner.query_point_counted(self.quark(path)?, t).map_err(err)?;
        Ok((value_to_py(py, &v)?, n))
    }

    /// `(start, end, value)` tuples clipped to `[t1, t2)`.
    fn query_range(&self, py: Python<'_>, path: &str, t1: u64, t2: u64) -> PyResult<Vec<(u64, u64, Py<PyAny>)>> {
        self.inner
            .query_range(self.quark(path)?, t1, t2)
            .map_err(err)?
            .iter()
            .map(|iv| Ok((iv.start, iv.end, value_to_py(py, &iv.value)?)))
            .collect()
    }

    fn busy_time(&self, cpu: u32, t1: u64, t2: u64) -> PyResult<u64> {
        self.analytics()?.busy_time(cpu, window(t1, t2)?).map_err(err)
    }

    fn cpu_time_of_thread_on_cpu(&self, tid: i64, cpu: u32, t1: u64, t2: u64) -> PyResult<u64> {
        self.analytics()?
            .cpu_time_of_thread_on_cpu(tid, cpu, window(t1, t2)?)
            .map_err(err)
    }

    /// `(tid, runtime)` of the thread with the most runtime, or None.
    fn top_thread_on_cpu(&self, cpu: u32, t1: u64, t2: u64) -> PyResult<Option<(i64, u64)>> {
        self.analytics()?.top_thread_on_cpu(cpu, window(t1, t2)?).map_err(err)
    }

    fn distinct_threads_on_cpu(&self, cpu: u32, t1: u64, t2: u64) -> PyResult<usize> {
        self.analytics()?
            .distinct_threads_on_cpu(cpu, window(t1, t2)?)
            .map_err(err)
    }

    /// `(cpu, busy_ns)`; None when every CPU idled.
    fn busiest_cpu(&self, t1: u64, t2: u64) -> PyResult<Option<(u32, u64)>> {
        let b = self.analytics()?.busiest_cpu(window(t1, t2)?).map_err(err)?;
        Ok((!b.all_idle).then_some((b.cpu, b.busy)))
    }

    fn cpu_serving_most_distinct_threads(&self, t1: u64, t2: u64) -> PyResult<Option<u32>> {
        self.analytics()?
            .cpu_serving_most_distinct_threads(window(t1, t2)?)
            .map_err(err)
    }

    fn primary_cpu_of_thread(&self, tid: i64, t1: u64, t2: u64) -> PyResult<Option<u32>> {
        self.analytics()?
            .primary_cpu_of_thread(tid, window(t1, t2)?)
            .map_err(err)
    }

    /// One dict per (cpu, tid) with runtime and switch_in_count.
    fn thread_stats<'py>(&self, py: Python<'py>, t1: u64, t2: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.analytics()?
            .all_stats(window(t1, t2)?)
            .map_err(err)?
            .into_iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("cpu", s.cpu)?;
                d.set_item("tid", s.tid)?;
                d.set_item("runtime", s.runtime)?;
                d.set_item("switch_in_count", s.switch_in_count)?;
                Ok(d)
            })
            .collect()
    }

    /// Canonical JSON of the query-scoped knowledge graph.
    #[pyo3(signature = (t1, t2, cpus = None, tids = None))]
    fn build_graph(
        &self,
        t1: u64,
        t2: u64,
        cpus: Option<BTreeSet<u32>>,
        tids: Option<BTreeSet<i64>>,
    ) -> PyResult<String> {
        let scope = QueryScope {
            window: window(t1, t2)?,
            cpu_filter: cpus,
            thread_filter: tids,
        };
        Ok(kg::build_graph(&self.inner, &scope).map_err(err)?.to_canonical_json())
    }

    fn __repr__(&self) -> String {
        format!(
            "StateSystem(quarks={}, end={})",
            self.inner.quark_count(),
            self.inner.end()
        )
    }
}

/// Schema text for a graph given as JSON.
#[pyfunction]
fn build_schema(graph_json: &str) -> PyResult<String> {
    let g = KnowledgeGraph::from_json(graph_json).map_err(err)?;
    Ok(kg::build_schema(&g).as_str().to_string())
}

/// Re-serializes a graph canonically; raises if it is malformed.
#[pyfunction]
fn canonicalize_graph(graph_json: &str) -> PyResult<String> {
    let g = KnowledgeGraph::from_json(graph_json).map_err(err)?;
    g.validate().map_err(err)?;
    Ok(g.to_canonical_json())
}

fn to_scores(values: &[f64]) -> PyResult<Vec<Score>> {
    values
        .iter()
        .map(|v| Score::from_value(*v).ok_or_else(|| err(format!("score {v} is not 0, 0.5 or 1"))))
        .collect()
}

#[pyfunction]
fn accuracy(scores: Vec<f64>) -> PyResult<f64> {
    eval::accuracy(&to_scores(&scores)?).map_err(err)
}

#[pyfunction]
fn consistency(scores: Vec<f64>) -> PyResult<f64> {
    eval::consistency(&to_scores(&scores)?).map_err(err)
}

#[pyfunction]
fn accuracy_from_percentages(pct0: f64, pct05: f64, pct1: f64) -> PyResult<f64> {
    eval::accuracy_from_percentages(pct0, pct05, pct1).map_err(err)
}

/// Grades one answer against a benchmark item given as JSON; returns
/// `(score, extracted)`.
#[pyfunction]
fn score_response(raw_text: &str, item_json: &str) -> PyResult<(f64, Option<String>)> {
    let item: BenchmarkItem = serde_json::from_str(item_json).map_err(err)?;
    item.validate()
        .map_err(|(path, reason)| err(format!("{path}: {reason}")))?;
    let s = eval::score_response(raw_text, &item);
    Ok((s.score.value(), s.extracted))
}

/// The shipped twelve-item seed benchmark as JSON.
#[pyfunction]
fn seed_benchmark_json() -> &'static str {
    eval::SEED_BENCHMARK_JSON
}

/// `(passed, total)` for the published accuracy-table arithmetic check.
#[pyfunction]
fn check_fixtures() -> PyResult<(usize, usize)> {
    let checks = eval::check_fixtures().map_err(err)?;
    Ok((checks.iter().filter(|c| c.passed).count(), checks.len()))
}

#[pymodule(name = "tracekg")]
fn tracekg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TraceKgError", m.py().get_type::<TraceKgError>())?;
    m.add_class::<Trace>()?;
    m.add_class::<StateSystem>()?;
    m.add_function(wrap_pyfunction!(build_schema, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize_graph, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(consistency, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_from_percentages, m)?)?;
    m.add_function(wrap_pyfunction!(score_response, m)?)?;
    m.add_function(wrap_pyfunction!(seed_benchmark_json, m)?)?;
    m.add_function(wrap_pyfunction!(check_fixtures, m)?)?;
    Ok(())
}
