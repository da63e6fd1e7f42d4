//! Query-scoped knowledge graphs.
//!
//! A graph holds typed nodes (`thread:{tid}`, `cpu:{n}`), directed
//! `executes_on` edges from threads to CPUs weighted by runtime in
//! nanoseconds, and the query window every element is scoped to. Only
//! entities with evidence inside the scope are included.

mod schema;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{window_for_location, AnalyticsError, SchedAnalytics, ThreadCpuStat, Window};
use crate::eval::BenchmarkItem;
use crate::state::StateSystem;
use crate::trace::TraceMeta;

pub use schema::{build_schema, SchemaPrompt};

pub const FEATURE_TOTAL_RUNTIME: &str = "total_runtime_ns";
pub const FEATURE_CPUS_USED: &str = "cpus_used";
pub const FEATURE_BUSY_TIME: &str = "busy_time_ns";
pub const FEATURE_DISTINCT_THREADS: &str = "distinct_threads";

#[derive(Debug, Error)]
pub enum KgError {
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("scope filter `{0}` is present but empty")]
    EmptyFilter(&'static str),
    #[error("item {id}: {reason}")]
    ItemSchema { id: String, reason: String },
    #[error("invalid graph JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Thread,
    Cpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    ExecutesOn,
    /// Reserved; never emitted.
    ReadsFrom,
    /// Reserved; never emitted.
    HoldsLock,
}

impl EdgeLabel {
    pub fn is_built(&self) -> bool {
        matches!(self, EdgeLabel::ExecutesOn)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeLabel::ExecutesOn => "executes_on",
            EdgeLabel::ReadsFrom => "reads_from",
            EdgeLabel::HoldsLock => "holds_lock",
        }
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn thread_node_id(tid: i64) -> String {
    format!("thread:{tid}")
}

pub fn cpu_node_id(cpu: u32) -> String {
    format!("cpu:{cpu}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgNode {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub features: BTreeMap<String, u64>,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgEdge {
    pub src: String,
    pub label: EdgeLabel,
    pub dst: String,
    pub weight_ns: u64,
    pub switch_in_count: u64,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeGraph {
    pub nodes: Vec<KgNode>,
    pub edges: Vec<KgEdge>,
    pub window: Window,
}

/// Window plus optional entity filters for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryScope {
    pub window: Window,
    pub cpu_filter: Option<BTreeSet<u32>>,
    pub thread_filter: Option<BTreeSet<i64>>,
}

impl QueryScope {
    pub fn window(window: Window) -> Self {
        QueryScope {
            window,
            cpu_filter: None,
            thread_filter: None,
        }
    }

    pub fn validate(&self) -> Result<(), KgError> {
        if self.cpu_filter.as_ref().is_some_and(BTreeSet::is_empty) {
            return Err(KgError::EmptyFilter("cpus"));
        }
        if self.thread_filter.as_ref().is_some_and(BTreeSet::is_empty) {
            return Err(KgError::EmptyFilter("tids"));
        }
        Ok(())
    }

    pub fn admits_cpu(&self, cpu: u32) -> bool {
        self.cpu_filter.as_ref().is_none_or(|f| f.contains(&cpu))
    }

    pub fn admits_thread(&self, tid: i64) -> bool {
        self.thread_filter.as_ref().is_none_or(|f| f.contains(&tid))
    }
}

/// Builds the graph for `scope` from a sealed state system.
///
/// One Cpu node per in-scope CPU, one Thread node per in-scope thread with
/// positive runtime, one `executes_on` edge per (thread, cpu) pair with
/// positive runtime. CPU features count only in-scope threads, so edge
/// weights into a CPU always sum to its `busy_time_ns`.
pub fn build_graph(state: &StateSystem, scope: &QueryScope) -> Result<KnowledgeGraph, KgError> {
    scope.validate()?;
    let analytics = SchedAnalytics::new(state)?;
    let w = scope.window;
    w.check_within(state)?;

    let mut cpu_nodes = Vec::new();
    let mut stats: Vec<ThreadCpuStat> = Vec::new();
    for cpu in analytics.cpus().into_iter().filter(|c| scope.admits_cpu(*c)) {
        let on_cpu: Vec<ThreadCpuStat> = analytics
            .thread_stats_on_cpu(cpu, w)?
            .into_iter()
            .filter(|s| s.runtime > 0 && scope.admits_thread(s.tid))
            .collect();
        let busy: u64 = on_cpu.iter().map(|s| s.runtime).sum();
        cpu_nodes.push(KgNode {
            id: cpu_node_id(cpu),
            node_type: NodeType::Cpu,
            features: BTreeMap::from([
                (FEATURE_BUSY_TIME.to_string(), busy),
                (FEATURE_DISTINCT_THREADS.to_string(), on_cpu.len() as u64),
            ]),
            window: w,
        });
        stats.extend(on_cpu);
    }

    let mut per_thread: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
    for s in &stats {
        let entry = per_thread.entry(s.tid).or_default();
        entry.0 += s.runtime;
        entry.1 += 1;
    }
    let thread_nodes = per_thread.iter().map(|(tid, (runtime, cpus))| KgNode {
        id: thread_node_id(*tid),
        node_type: NodeType::Thread,
        features: BTreeMap::from([
            (FEATURE_TOTAL_RUNTIME.to_string(), *runtime),
            (FEATURE_CPUS_USED.to_string(), *cpus),
        ]),
        window: w,
    });

    // `stats` is already ordered by (cpu, tid).
    let edges = stats
        .iter()
        .map(|s| KgEdge {
            src: thread_node_id(s.tid),
            label: EdgeLabel::ExecutesOn,
            dst: cpu_node_id(s.cpu),
            weight_ns: s.runtime,
            switch_in_count: s.switch_in_count,
            window: w,
        })
        .collect();

    let mut nodes = cpu_nodes;
    nodes.extend(thread_nodes);
    Ok(KnowledgeGraph {
        nodes,
        edges,
        window: w,
    })
}

impl KnowledgeGraph {
    /// Canonical JSON: fixed key order, no insignificant whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<KnowledgeGraph, KgError> {
        let kg: KnowledgeGraph = serde_json::from_str(text)?;
        kg.validate()?;
        Ok(kg)
    }

    pub fn node(&self, id: &str) -> Option<&KgNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn has_type(&self, t: NodeType) -> bool {
        self.nodes.iter().any(|n| n.node_type == t)
    }

    /// Structural checks: unique ids, edge endpoints exist with the right
    /// types, built labels only, positive bounded weights, uniform scope.
    pub fn validate(&self) -> Result<(), KgError> {
        let invalid = |m: String| Err(KgError::Invalid(m));
        if self.window.is_empty() {
            return invalid(format!("empty window {}", self.window));
        }
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.as_str()) {
                return invalid(format!("duplicate node id {}", n.id));
            }
            if n.window != self.window {
                return invalid(format!("node {} scoped to {} not {}", n.id, n.window, self.window));
            }
        }
        for e in &self.edges {
            if !e.label.is_built() {
                return invalid(format!("edge label {} is reserved", e.label));
            }
            match (self.node(&e.src), self.node(&e.dst)) {
                (Some(s), Some(d)) if s.node_type == NodeType::Thread && d.node_type == NodeType::Cpu => {}
                _ => return invalid(format!("edge {} -> {} does not join a thread to a cpu", e.src, e.dst)),
            }
            if e.weight_ns == 0 || e.weight_ns > self.window.len() {
                return invalid(format!(
                    "edge {} -> {} weight {} out of range",
                    e.src, e.dst, e.weight_ns
                ));
            }
            if e.window != self.window {
                return invalid(format!("edge {} -> {} has a foreign scope", e.src, e.dst));
            }
        }
        Ok(())
    }

    pub fn edges_into<'a>(&'a self, cpu_id: &'a str) -> impl Iterator<Item = &'a KgEdge> + 'a {
        self.edges.iter().filter(move |e| e.dst == cpu_id)
    }
}

/// Scope for a benchmark item: its placement window plus explicit entity
/// metadata as filters.
pub fn scope_from_item(item: &BenchmarkItem, meta: &TraceMeta) -> Result<QueryScope, KgError> {
    if item.window_ns == 0 {
        return Err(KgError::ItemSchema {
            id: item.id.clone(),
            reason: "window_ns must be positive".into(),
        });
    }
    let window = window_for_location(meta, item.temporal_loc, item.window_ns)?;
    let (cpu_filter, thread_filter) = match &item.entities {
        Some(e) => (
            (!e.cpus.is_empty()).then(|| e.cpus.iter().copied().collect()),
            (!e.tids.is_empty()).then(|| e.tids.iter().copied().collect()),
        ),
        None => (None, None),
    };
    let scope = QueryScope {
        window,
        cpu_filter,
        thread_filter,
    };
    scope.validate()?;
    Ok(scope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{TemporalLocation, NS_PER_SEC};
    use crate::eval::{AnswerFormat, Entities, HopScope, ReferenceAnswer};
    use crate::trace::Event;

    fn scope(t1: u64, t2: u64) -> QueryScope {
        QueryScope::window(Window::new(t1, t2).unwrap())
    }

    fn fig2_state() -> StateSystem {
        // Thread 5130 runs 5.25 s on CPU 2 inside a 10 s trace.
        StateSystem::build(
            [
                Event::sched_switch(1_000_000_000, 2, 0, 5130),
                Event::sched_switch(6_250_000_000, 2, 5130, 0),
            ],
            10 * NS_PER_SEC,
        )
        .unwrap()
    }

    #[test]
    fn single_thread_single_cpu_graph() {
        let ss = fig2_state();
        let kg = build_graph(&ss, &scope(0, 10 * NS_PER_SEC)).unwrap();
        let ids: Vec<_> = kg.nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["cpu:2", "thread:5130"]);
        assert_eq!(kg.edges.len(), 1);
        let e = &kg.edges[0];
        assert_eq!(
            (e.src.as_str(), e.label, e.dst.as_str()),
            ("thread:5130", EdgeLabel::ExecutesOn, "cpu:2")
        );
        assert_eq!(e.weight_ns, 5_250_000_000);
        assert_eq!(e.switch_in_count, 1);
        assert_eq!(kg.node("cpu:2").unwrap().features[FEATURE_BUSY_TIME], 5_250_000_000);
        assert_eq!(kg.node("thread:5130").unwrap().features[FEATURE_CPUS_USED], 1);
        kg.validate().unwrap();
    }

    #[test]
    fn idle_window_has_only_cpu_nodes() {
        let ss = fig2_state();
        let kg = build_graph(&ss, &scope(7 * NS_PER_SEC, 8 * NS_PER_SEC)).unwrap();
        assert_eq!(kg.nodes.len(), 1);
        assert_eq!(kg.nodes[0].node_type, NodeType::Cpu);
        assert!(kg.edges.is_empty());
    }

    #[test]
    fn serialization_format() {
        let ss = fig2_state();
        let kg = build_graph(&ss, &scope(0, 10 * NS_PER_SEC)).unwrap();
        let json = kg.to_canonical_json();
        assert_eq!(
            json,
            concat!(
                r#"{"nodes":[{"id":"cpu:2","type":"Cpu","features":{"busy_time_ns":5250000000,"distinct_threads":1},"window":{"t1":0,"t2":10000000000}},"#,
                r#"{"id":"thread:5130","type":"Thread","features":{"cpus_used":1,"total_runtime_ns":5250000000},"window":{"t1":0,"t2":10000000000}}],"#,
                r#""edges":[{"src":"thread:5130","label":"executes_on","dst":"cpu:2","weight_ns":5250000000,"switch_in_count":1,"window":{"t1":0,"t2":10000000000}}],"#,
                r#""window":{"t1":0,"t2":10000000000}}"#
            )
        );
        let back = KnowledgeGraph::from_json(&json).unwrap();
        assert_eq!(back.to_canonical_json(), json);
    }

    #[test]
    fn empty_graph_json() {
        let kg = KnowledgeGraph {
            nodes: vec![],
            edges: vec![],
            window: Window::new(1, 2).unwrap(),
        };
        assert_eq!(
            kg.to_canonical_json(),
            r#"{"nodes":[],"edges":[],"window":{"t1":1,"t2":2}}"#
        );
    }

    #[test]
    fn deserializer_rejects_invalid_graphs() {
        let bad = [
            r#"{"nodes":[],"edges":[],"window":{"t1":2,"t2":2}}"#,
            r#"{"nodes":[],"edges":[{"src":"thread:1","label":"executes_on","dst":"cpu:0","weight_ns":1,"switch_in_count":1,"window":{"t1":0,"t2":5}}],"window":{"t1":0,"t2":5}}"#,
            r#"{"nodes":[{"id":"cpu:0","type":"Cpu","features":{},"window":{"t1":0,"t2":5}},{"id":"cpu:0","type":"Cpu","features":{},"window":{"t1":0,"t2":5}}],"edges":[],"window":{"t1":0,"t2":5}}"#,
            r#"{"nodes":[],"edges":[],"window":{"t1":0,"t2":5},"extra":1}"#,
        ];
        for text in bad {
            assert!(KnowledgeGraph::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn thread_filter_selects_without_recomputing() {
        let ss = StateSystem::build(
            [
                Event::sched_switch(0, 0, 0, 1),
                Event::sched_switch(40, 0, 1, 2),
                Event::sched_switch(100, 0, 2, 0),
            ],
            100,
        )
        .unwrap();
        let all = build_graph(&ss, &scope(0, 100)).unwrap();
        let mut filtered = scope(0, 100);
        filtered.thread_filter = Some([2].into());
        let only = build_graph(&ss, &filtered).unwrap();
        assert_eq!(only.edges.len(), 1);
        let kept = &only.edges[0];
        let same = all.edges.iter().find(|e| e.src == kept.src).unwrap();
        assert_eq!(kept.weight_ns, same.weight_ns);
        assert_eq!(only.node("cpu:0").unwrap().features[FEATURE_BUSY_TIME], 60);
    }

    #[test]
    fn empty_filters_are_rejected() {
        let ss = fig2_state();
        let mut s = scope(0, 10);
        s.cpu_filter = Some(BTreeSet::new());
        assert!(matches!(build_graph(&ss, &s), Err(KgError::EmptyFilter("cpus"))));
    }

    fn item(loc: TemporalLocation, window_ns: u64, entities: Option<Entities>) -> BenchmarkItem {
        BenchmarkItem {
            id: "x".into(),
            prompt: "q".into(),
            answer_format: AnswerFormat::Explanatory,
            hop_scope: HopScope::Single,
            temporal_loc: loc,
            window_ns,
            entities,
            reference: ReferenceAnswer::Boolean { value: true },
        }
    }

    #[test]
    fn scope_from_item_maps_metadata() {
        let meta = TraceMeta {
            origin: 0,
            end: 60 * NS_PER_SEC,
            event_count: 0,
            cpu_count: 1,
        };
        let s = scope_from_item(
            &item(
                TemporalLocation::Mid,
                NS_PER_SEC,
                Some(Entities {
                    cpus: vec![0],
                    tids: vec![5130],
                }),
            ),
            &meta,
        )
        .unwrap();
        assert_eq!(s.window, Window::new(30 * NS_PER_SEC, 31 * NS_PER_SEC).unwrap());
        assert_eq!(s.cpu_filter, Some([0].into()));
        assert_eq!(s.thread_filter, Some([5130].into()));

        let s = scope_from_item(&item(TemporalLocation::Start, 10 * NS_PER_SEC, None), &meta).unwrap();
        assert_eq!(s.window, Window::new(5 * NS_PER_SEC, 15 * NS_PER_SEC).unwrap());
        assert!(s.cpu_filter.is_none() && s.thread_filter.is_none());

        assert!(matches!(
            scope_from_item(&item(TemporalLocation::Start, 0, None), &meta),
            Err(KgError::ItemSchema { .. })
        ));
    }
}
