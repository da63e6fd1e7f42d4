use std::fmt;

use super::{EdgeLabel, KnowledgeGraph, NodeType};

/// Text block describing the node types, features, units and edge labels
/// that appear in a graph.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SchemaPrompt(pub String);

impl SchemaPrompt {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SchemaPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const HEADER: &str = "\
Knowledge graph schema.
Timestamps and durations are integer nanoseconds (ns) since the start of the trace.
Every node and edge carries a \"window\" {t1, t2}: the half-open interval [t1, t2) the graph covers; all quantities are restricted to it.
Thread id 0 is the idle task and never appears as a node.
";

const CPU_BLOCK: &str = "\
Node type Cpu, id \"cpu:<n>\" for CPU number n. Features:
  busy_time_ns (ns): time the CPU spent running the threads in this graph within the window.
  distinct_threads (count): number of distinct threads in this graph that ran on the CPU within the window.
";

const THREAD_BLOCK: &str = "\
Node type Thread, id \"thread:<tid>\" for thread id tid. Features:
  total_runtime_ns (ns): time the thread spent running on the CPUs in this graph within the window.
  cpus_used (count): number of CPUs in this graph the thread ran on within the window.
";

const EXECUTES_ON_BLOCK: &str = "\
Edge executes_on, directed Thread -> Cpu: the thread ran on that CPU within the window.
  weight_ns (ns): accumulated runtime of the thread on the CPU within the window.
  switch_in_count (count): number of separate runs of the thread on the CPU within the window.
";

/// Deterministic schema text for the types and labels present in `kg`.
pub fn build_schema(kg: &KnowledgeGraph) -> SchemaPrompt {
    let mut text = String::from(HEADER);
    if kg.has_type(NodeType::Cpu) {
        text.push_str(CPU_BLOCK);
    }
    if kg.has_type(NodeType::Thread) {
        text.push_str(THREAD_BLOCK);
    }
    if kg.edges.iter().any(|e| e.label == EdgeLabel::ExecutesOn) {
        text.push_str(EXECUTES_ON_BLOCK);
    }
    SchemaPrompt(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::Window;
    use crate::kg::{build_graph, QueryScope};
    use crate::state::StateSystem;
    use crate::trace::Event;

    fn graph(events: &[Event], t1: u64, t2: u64) -> KnowledgeGraph {
        let ss = StateSystem::build(events, 100).unwrap();
        build_graph(&ss, &QueryScope::window(Window::new(t1, t2).unwrap())).unwrap()
    }

    #[test]
    fn lists_every_present_type_and_feature() {
        let kg = graph(
            &[Event::sched_switch(0, 0, 0, 7), Event::sched_switch(50, 0, 7, 0)],
            0,
            100,
        );
        let s = build_schema(&kg);
        assert!(s.as_str().contains("Node type Cpu"));
        assert!(s.as_str().contains("Node type Thread"));
        assert!(s.as_str().contains("Edge executes_on"));
        assert!(s.as_str().contains("(ns)"));
        for node in &kg.nodes {
            for key in node.features.keys() {
                assert!(s.as_str().contains(key.as_str()), "{key}");
            }
        }
        for key in ["weight_ns", "switch_in_count"] {
            assert!(s.as_str().contains(key));
        }
    }

    #[test]
    fn cpu_only_graph_omits_thread_block() {
        let kg = graph(
            &[Event::sched_switch(0, 0, 0, 7), Event::sched_switch(50, 0, 7, 0)],
            60,
            100,
        );
        let s = build_schema(&kg);
        assert!(s.as_str().contains("Node type Cpu"));
        assert!(!s.as_str().contains("Node type Thread"));
        assert!(!s.as_str().contains("Edge executes_on"));
    }

    #[test]
    fn same_types_same_text() {
        let a = graph(&[Event::sched_switch(0, 0, 0, 7)], 0, 100);
        let b = graph(
            &[Event::sched_switch(10, 1, 0, 9), Event::sched_switch(20, 3, 0, 8)],
            0,
            100,
        );
        assert_eq!(build_schema(&a), build_schema(&b));
    }
}
