//! Trace abstraction and question answering over kernel scheduling traces.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`trace`]: portable line-delimited JSON events, loading, slicing and a
//!    deterministic synthetic workload generator.
//! 2. [`state`]: the state system, a quark registry plus per-quark interval
//!    history with logarithmic point and range queries.
//! 3. [`kg`]: query-scoped knowledge graphs built from the sealed state
//!    system, with canonical JSON and a schema prompt.
//! 4. [`llm`] and [`eval`]: prompt assembly, chat-completion calls with
//!    record/replay cassettes, rubric scoring, accuracy and consistency.
//!
//! [`analytics`] is the deterministic ground truth used for edge weights and
//! reference answers, and carries a brute-force replay oracle that never
//! touches the state system.

pub mod analytics;
pub mod eval;
pub mod kg;
pub mod llm;
pub mod state;
pub mod trace;

pub use analytics::Window;
pub use state::{AttributePath, Quark, StateInterval, StateSystem, StateValue};
pub use trace::{Event, EventKind, Timestamp, TraceMeta, WorkloadSpec};
