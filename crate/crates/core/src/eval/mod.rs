//! Benchmark items, rubric scoring, metrics and grid runs.
//!
//! A benchmark file is a JSON array of [`BenchmarkItem`]s. Each item is
//! turned into either a baseline prompt (flat state-system values) or a
//! graph-grounded prompt, sent through an [`llm::Bridge`](crate::llm::Bridge),
//! and every sampled answer is graded 0, 0.5 or 1 by [`score_response`].
//! [`accuracy`] is the weighted mean of those grades and [`consistency`] is
//! one minus their normalized entropy, both in percent.

mod baseline;
mod fixtures;
mod grid;
mod mock;
mod score;
mod seed;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::TemporalLocation;
use crate::kg::KgError;
use crate::llm::LlmError;
use crate::state::StateError;

pub use baseline::{make_baseline_input, BASELINE_HEADER};
pub use fixtures::{accuracy_table_rows, check_fixtures, AccuracyTableRow, FixtureCheck, FIXTURE_TOLERANCE};
pub use grid::{run_grid, CellFailure, GridReport, GridRow, GridSpec, Grounding, CSV_HEADER};
pub use mock::{render_reference, OracleBackend, WrongBackend};
pub use score::{
    accuracy, accuracy_from_percentages, consistency, extract_numbers, score_response, tally, Score, ScoredResponse,
    Tally,
};
pub use seed::{build_seed_benchmark, seed_benchmark, seed_workload, SEED_BENCHMARK_JSON};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no scores to aggregate")]
    EmptyScores,
    #[error("benchmark item {path}: {reason}")]
    ItemSchema { path: String, reason: String },
    #[error("duplicate benchmark item id `{0}`")]
    DuplicateId(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("progress file {path}: {reason}")]
    Progress { path: String, reason: String },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    Explanatory,
    MultipleChoice,
    TrueFalse,
}

impl AnswerFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Explanatory => "explanatory",
            Self::MultipleChoice => "multiple_choice",
            Self::TrueFalse => "true_false",
        }
    }
}

impl fmt::Display for AnswerFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explanatory" => Ok(Self::Explanatory),
            "multiple_choice" => Ok(Self::MultipleChoice),
            "true_false" => Ok(Self::TrueFalse),
            other => Err(format!("unknown answer format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopScope {
    Single,
    Multi,
}

impl HopScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Multi => "multi",
        }
    }
}

impl fmt::Display for HopScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HopScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Self::Single),
            "multi" => Ok(Self::Multi),
            other => Err(format!("unknown hop scope `{other}`")),
        }
    }
}

/// Entities a question names; used as graph filters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entities {
    #[serde(default)]
    pub cpus: Vec<u32>,
    #[serde(default)]
    pub tids: Vec<i64>,
}

pub const DEFAULT_REL_TOL: f64 = 0.01;
pub const DEFAULT_LOOSE_TOL: f64 = 0.10;

fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}

fn default_loose_tol() -> f64 {
    DEFAULT_LOOSE_TOL
}

/// A quantity with its unit and grading tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    pub value: f64,
    /// `ns`, `us`, `ms`, `s` or `count`.
    pub unit: String,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_loose_tol")]
    pub loose_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceAnswer {
    Numeric {
        value: f64,
        unit: String,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
        #[serde(default = "default_loose_tol")]
        loose_tol: f64,
    },
    Choice {
        letter: char,
    },
    Boolean {
        value: bool,
    },
    /// Canonical id such as `cpu:0` or `thread:5130`. The optional quantity
    /// enables half credit for the right entity with a wrong number.
    Entity {
        id: String,
        #[serde(default)]
        aliases: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quantity: Option<Quantity>,
    },
}

impl ReferenceAnswer {
    fn quantity(&self) -> Option<Quantity> {
        match self {
            Self::Numeric {
                value,
                unit,
                rel_tol,
                loose_tol,
            } => Some(Quantity {
                value: *value,
                unit: unit.clone(),
                rel_tol: *rel_tol,
                loose_tol: *loose_tol,
            }),
            Self::Entity { quantity, .. } => quantity.clone(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkItem {
    pub id: String,
    pub prompt: String,
    pub answer_format: AnswerFormat,
    pub hop_scope: HopScope,
    pub temporal_loc: TemporalLocation,
    pub window_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Entities>,
    pub reference: ReferenceAnswer,
}

/// Labeled options of a multiple-choice prompt: `(A) ... (B) ...`.
pub fn mc_options(prompt: &str) -> Vec<(char, String)> {
    let re = regex::Regex::new(r"\(([A-Z])\)").expect("static regex");
    let labels: Vec<_> = re.captures_iter(prompt).map(|c| c.get(0).unwrap()).collect();
    labels
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let letter = prompt[m.start() + 1..].chars().next().unwrap();
            let end = labels.get(i + 1).map_or(prompt.len(), |n| n.start());
            (letter, prompt[m.end()..end].trim().to_string())
        })
        .collect()
}

fn entity_kind(id: &str) -> Option<&str> {
    let (kind, num) = id.split_once(':')?;
    (matches!(kind, "cpu" | "thread") && !num.is_empty() && num.bytes().all(|b| b.is_ascii_digit())).then_some(kind)
}

const UNITS: [&str; 5] = ["ns", "us", "ms", "s", "count"];

fn check_quantity(q: &Quantity, path: &str) -> Result<(), String> {
    if !UNITS.contains(&q.unit.as_str()) {
        return Err(format!(
            "{path}.unit: unknown unit `{}` (expected one of {})",
            q.unit,
            UNITS.join(", ")
        ));
    }
    if !q.value.is_finite() {
        return Err(format!("{path}.value: must be finite"));
    }
    if !(q.rel_tol > 0.0 && q.rel_tol <= q.loose_tol) {
        return Err(format!(
            "{path}: tolerances must satisfy 0 < rel_tol ({}) <= loose_tol ({})",
            q.rel_tol, q.loose_tol
        ));
    }
    Ok(())
}

impl BenchmarkItem {
    /// Checks format/reference agreement, options and tolerances. Errors
    /// carry a dotted path to the offending field.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let fail = |path: &str, reason: String| Err((path.to_string(), reason));
        if self.id.trim().is_empty() {
            return fail("id", "must not be empty".into());
        }
        if self.prompt.trim().is_empty() {
            return fail("prompt", "must not be empty".into());
        }
        if self.window_ns == 0 {
            return fail("window_ns", "must be positive".into());
        }
        if let Some(e) = &self.entities {
            if e.cpus.is_empty() && e.tids.is_empty() {
                return fail("entities", "must name at least one cpu or tid when present".into());
            }
            if e.tids.iter().any(|t| *t <= 0) {
                return fail("entities.tids", "thread ids must be positive".into());
            }
        }
        match (self.answer_format, &self.reference) {
            (AnswerFormat::MultipleChoice, ReferenceAnswer::Choice { letter }) => {
                let options = mc_options(&self.prompt);
                if !(2..=6).contains(&options.len()) {
                    return fail(
                        "prompt",
                        format!("multiple choice needs 2 to 6 labeled options, found {}", options.len()),
                    );
                }
                for (i, (l, text)) in options.iter().enumerate() {
                    if *l != (b'A' + i as u8) as char {
                        return fail(
                            "prompt",
                            format!("option labels must run A, B, C, ...; found ({l}) at position {}", i + 1),
                        );
                    }
                    if text.is_empty() {
                        return fail("prompt", format!("option ({l}) has no text"));
                    }
                }
                if !options.iter().any(|(l, _)| l == letter) {
                    return fail("reference.letter", format!("`{letter}` is not one of the options"));
                }
            }
            (AnswerFormat::TrueFalse, ReferenceAnswer::Boolean { .. }) => {}
            (AnswerFormat::Explanatory, ReferenceAnswer::Numeric { .. }) => {
                if let Err(reason) = check_quantity(&self.reference.quantity().unwrap(), "reference") {
                    let (p, r) = reason.split_once(": ").unwrap();
                    return fail(p, r.to_string());
                }
            }
            (AnswerFormat::Explanatory, ReferenceAnswer::Entity { id, quantity, .. }) => {
                if entity_kind(id).is_none() {
                    return fail(
                        "reference.id",
                        format!("`{id}` is not of the form cpu:<n> or thread:<tid>"),
                    );
                }
                if let Some(q) = quantity {
                    if let Err(reason) = check_quantity(q, "reference.quantity") {
                        let (p, r) = reason.split_once(": ").unwrap();
                        return fail(p, r.to_string());
                    }
                }
            }
            (format, _) => {
                return fail(
                    "reference",
                    format!("reference kind does not match answer_format {format}"),
                );
            }
        }
        Ok(())
    }
}

/// Parses and validates a benchmark document.
pub fn parse_benchmark(text: &str) -> Result<Vec<BenchmarkItem>, EvalError> {
    let schema = |path: String, reason: String| EvalError::ItemSchema { path, reason };
    let raw: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| schema("$".into(), format!("expected a JSON array of items: {e}")))?;
    let mut seen = HashSet::new();
    let mut items = Vec::with_capacity(raw.len());
    for (i, value) in raw.into_iter().enumerate() {
        let item: BenchmarkItem = serde_json::from_value(value).map_err(|e| schema(format!("[{i}]"), e.to_string()))?;
        item.validate()
            .map_err(|(path, reason)| schema(format!("[{i}].{path}"), reason))?;
        if !seen.insert(item.id.clone()) {
            return Err(EvalError::DuplicateId(item.id));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_benchmark(path: impl AsRef<Path>) -> Result<Vec<BenchmarkItem>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_benchmark(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(prompt: &str, letter: char) -> String {
        format!(
            r#"[{{"id":"a","prompt":"{prompt}","answer_format":"multiple_choice","hop_scope":"single","temporal_loc":"start","window_ns":10,"reference":{{"kind":"choice","letter":"{letter}"}}}}]"#
        )
    }

    #[test]
    fn shipped_seed_file_has_twelve_items() {
        let items = parse_benchmark(SEED_BENCHMARK_JSON).unwrap();
        assert_eq!(items.len(), 12);
        let patterns: HashSet<_> = items.iter().map(|i| (i.answer_format, i.hop_scope)).collect();
        assert_eq!(patterns.len(), 6);
    }

    #[test]
    fn options_are_parsed_from_prompt() {
        let opts = mc_options("Thread 2559 primarily uses: (A) CPU_0 (B) CPU_1 (C) CPU_2 (D) None");
        assert_eq!(
            opts,
            [
                ('A', "CPU_0".into()),
                ('B', "CPU_1".into()),
                ('C', "CPU_2".into()),
                ('D', "None".into())
            ]
        );
    }

    #[test]
    fn mc_with_one_option_is_schema_error() {
        let err = parse_benchmark(&mc("Pick: (A) CPU_0", 'A')).unwrap_err();
        assert!(
            matches!(err, EvalError::ItemSchema { ref path, .. } if path == "[0].prompt"),
            "{err}"
        );
        assert!(parse_benchmark(&mc("Pick: (A) CPU_0 (B) CPU_1", 'B')).is_ok());
        let err = parse_benchmark(&mc("Pick: (A) CPU_0 (B) CPU_1", 'C')).unwrap_err();
        assert!(matches!(err, EvalError::ItemSchema { ref path, .. } if path == "[0].reference.letter"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let one = mc("Pick: (A) x (B) y", 'A');
        let two = format!("[{0},{0}]", &one[1..one.len() - 1]);
        assert!(matches!(parse_benchmark(&two), Err(EvalError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn schema_violations_name_the_field() {
        let cases = [
            (
                r#"[{"id":"a","prompt":"q","answer_format":"true_false","hop_scope":"single","temporal_loc":"mid","window_ns":1,"reference":{"kind":"choice","letter":"A"}}]"#,
                "[0].reference",
            ),
            (
                r#"[{"id":"a","prompt":"q","answer_format":"explanatory","hop_scope":"single","temporal_loc":"mid","window_ns":1,"reference":{"kind":"numeric","value":1,"unit":"ns","rel_tol":0.2,"loose_tol":0.1}}]"#,
                "[0].reference",
            ),
            (
                r#"[{"id":"a","prompt":"q","answer_format":"explanatory","hop_scope":"single","temporal_loc":"mid","window_ns":1,"reference":{"kind":"numeric","value":1,"unit":"h"}}]"#,
                "[0].reference.unit",
            ),
            (
                r#"[{"id":"a","prompt":"q","answer_format":"explanatory","hop_scope":"single","temporal_loc":"mid","window_ns":0,"reference":{"kind":"numeric","value":1,"unit":"ns"}}]"#,
                "[0].window_ns",
            ),
            (
                r#"[{"id":"a","prompt":"q","answer_format":"explanatory","hop_scope":"single","temporal_loc":"mid","window_ns":1,"reference":{"kind":"entity","id":"core0"}}]"#,
                "[0].reference.id",
            ),
            (
                r#"[{"id":"a","prompt":"q","answer_format":"true_false","hop_scope":"single","temporal_loc":"mid","window_ns":1,"reference":{"kind":"boolean","value":true},"trace":"x"}]"#,
                "[0]",
            ),
        ];
        for (text, want) in cases {
            match parse_benchmark(text) {
                Err(EvalError::ItemSchema { path, .. }) => assert_eq!(path, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn numeric_defaults_apply() {
        let text = r#"[{"id":"a","prompt":"q","answer_format":"explanatory","hop_scope":"single","temporal_loc":"mid","window_ns":1,"reference":{"kind":"numeric","value":100,"unit":"ns"}}]"#;
        let items = parse_benchmark(text).unwrap();
        assert_eq!(
            items[0].reference,
            ReferenceAnswer::Numeric {
                value: 100.0,
                unit: "ns".into(),
                rel_tol: 0.01,
                loose_tol: 0.10
            }
        );
    }
}
