use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::analytics::TemporalLocation;
use crate::kg::{build_graph, build_schema, scope_from_item};
use crate::llm::{
    assemble_baseline_prompt, assemble_prompt, cassette_key, Bridge, LlmConfig, LlmError, PromptEnvelope,
};
use crate::state::StateSystem;
use crate::trace::TraceMeta;

use super::{
    consistency, make_baseline_input, score_response, tally, AnswerFormat, BenchmarkItem, EvalError, HopScope, Score,
    ScoredResponse,
};

pub const CSV_HEADER: &str = "model,window_ns,loc,grounding,format,hop,pct0,pct05,pct1,accuracy,consistency,n";

/// What the model is given besides the question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grounding {
    /// Flat state-system values.
    #[serde(rename = "baseline")]
    Baseline,
    /// Knowledge graph plus schema.
    #[serde(rename = "taaf")]
    Taaf,
    /// Knowledge graph with an empty schema string.
    #[serde(rename = "taaf-noschema")]
    TaafNoSchema,
}

impl Grounding {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Taaf => "taaf",
            Self::TaafNoSchema => "taaf-noschema",
        }
    }
}

impl fmt::Display for Grounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grounding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "taaf" => Ok(Self::Taaf),
            "taaf-noschema" => Ok(Self::TaafNoSchema),
            other => Err(format!("unknown grounding `{other}` (baseline|taaf|taaf-noschema)")),
        }
    }
}

/// Grid axes. Empty `windows` or `locations` keep every item; otherwise
/// items whose own window or placement is not listed are skipped. Empty
/// `temperatures` uses the bridge config's temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub models: Vec<String>,
    pub windows: Vec<u64>,
    pub locations: Vec<TemporalLocation>,
    pub groundings: Vec<Grounding>,
    pub temperatures: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub model: String,
    pub window_ns: u64,
    pub loc: TemporalLocation,
    pub grounding: Grounding,
    pub format: AnswerFormat,
    pub hop: HopScope,
    pub pct0: f64,
    pub pct05: f64,
    pub pct1: f64,
    pub accuracy: f64,
    /// Mean over items of the per-item consistency across samples.
    pub consistency: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub model: String,
    pub grounding: Grounding,
    pub item_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub failures: Vec<CellFailure>,
    /// Backend requests made during this run.
    pub backend_calls: u64,
    /// Units answered from the progress file instead of the bridge.
    pub resumed: u64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl GridReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{}\n",
                r.model,
                r.window_ns,
                r.loc,
                r.grounding,
                r.format,
                r.hop,
                r.pct0,
                r.pct05,
                r.pct1,
                r.accuracy,
                r.consistency,
                r.n
            ));
        }
        out
    }

    /// JSON mirror of the CSV rows plus failures. Run counters are left out
    /// so replays of the same grid are byte-identical.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Mirror<'a> {
            rows: &'a [GridRow],
            failures: &'a [CellFailure],
        }
        serde_json::to_string_pretty(&Mirror {
            rows: &self.rows,
            failures: &self.failures,
        })
        .expect("report serializes")
    }
}

struct Unit<'a> {
    model: String,
    bridge: usize,
    grounding: Grounding,
    item: &'a BenchmarkItem,
    envelope: Result<PromptEnvelope, String>,
    key: String,
}

#[derive(Serialize, Deserialize)]
struct ProgressLine {
    key: String,
    scores: Vec<ScoredResponse>,
}

fn progress_err(path: &Path, reason: impl ToString) -> EvalError {
    EvalError::Progress {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn load_progress(path: &Path) -> Result<HashMap<String, Vec<ScoredResponse>>, EvalError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(progress_err(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| progress_err(path, e))?;
    let mut done = HashMap::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ProgressLine>(line) {
            Ok(p) => {
                done.insert(p.key, p.scores);
            }
            // A torn final line from an interrupted run is dropped.
            Err(_) if i + 1 == lines.len() => {}
            Err(e) => return Err(progress_err(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(done)
}

type UnitResult = Result<Vec<ScoredResponse>, String>;

pub(crate) fn envelope_for(
    item: &BenchmarkItem,
    grounding: Grounding,
    state: &StateSystem,
    meta: &TraceMeta,
) -> Result<PromptEnvelope, EvalError> {
    let scope = scope_from_item(item, meta)?;
    match grounding {
        Grounding::Baseline => Ok(assemble_baseline_prompt(
            &make_baseline_input(state, &scope)?,
            &item.prompt,
        )?),
        Grounding::Taaf | Grounding::TaafNoSchema => {
            let kg = build_graph(state, &scope)?;
            let schema = build_schema(&kg);
            Ok(assemble_prompt(
                &schema,
                &kg.to_canonical_json(),
                &item.prompt,
                grounding == Grounding::Taaf,
            )?)
        }
    }
}

/// Runs every (model, temperature, grounding, item) unit and aggregates
/// scores into rows keyed by (model, window, placement, grounding, format,
/// hop scope).
///
/// `make_bridge` receives the base config with the model and temperature
/// filled in. With a `progress` path each finished unit is appended to it
/// and units already present are not asked again.
pub fn run_grid(
    items: &[BenchmarkItem],
    state: &StateSystem,
    meta: &TraceMeta,
    spec: &GridSpec,
    base: &LlmConfig,
    make_bridge: &(dyn Fn(LlmConfig) -> Result<Bridge, LlmError> + Sync),
    progress: Option<&Path>,
) -> Result<GridReport, EvalError> {
    let selected: Vec<&BenchmarkItem> = items
        .iter()
        .filter(|i| spec.windows.is_empty() || spec.windows.contains(&i.window_ns))
        .filter(|i| spec.locations.is_empty() || spec.locations.contains(&i.temporal_loc))
        .collect();
    let temperatures = if spec.temperatures.is_empty() {
        vec![base.temperature]
    } else {
        spec.temperatures.clone()
    };

    let mut inputs: HashMap<(usize, Grounding), Result<PromptEnvelope, String>> = HashMap::new();
    for (i, item) in selected.iter().enumerate() {
        for g in &spec.groundings {
            inputs.insert((i, *g), envelope_for(item, *g, state, meta).map_err(|e| e.to_string()));
        }
    }

    let mut bridges = Vec::new();
    let mut units = Vec::new();
    for model in &spec.models {
        for temp in &temperatures {
            let cfg = LlmConfig {
                model: model.clone(),
                temperature: *temp,
                ..base.clone()
            };
            let label = if temperatures.len() > 1 {
                format!("{model}@T{temp}")
            } else {
                model.clone()
            };
            bridges.push(make_bridge(cfg)?);
            for g in &spec.groundings {
                for (i, item) in selected.iter().enumerate() {
                    let envelope = inputs[&(i, *g)].clone();
                    let body = envelope.as_ref().map(PromptEnvelope::to_json).unwrap_or_default();
                    let key = cassette_key(model, *temp, &format!("{}\n{}\n{}\n{body}", g, item.id, base.samples));
                    units.push(Unit {
                        model: label.clone(),
                        bridge: bridges.len() - 1,
                        grounding: *g,
                        item,
                        envelope,
                        key,
                    });
                }
            }
        }
    }

    let done = match progress {
        Some(p) => load_progress(p)?,
        None => HashMap::new(),
    };
    let writer = match progress {
        Some(p) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| progress_err(p, e))?,
        )),
        None => None,
    };

    let results: Vec<Mutex<Option<UnitResult>>> = units.iter().map(|_| Mutex::new(None)).collect();
    let mut resumed = 0;
    let mut pending = Vec::new();
    for (idx, u) in units.iter().enumerate() {
        match done.get(&u.key) {
            Some(scores) => {
                *results[idx].lock().unwrap() = Some(Ok(scores.clone()));
                resumed += 1;
            }
            None => pending.push(idx),
        }
    }

    let next = AtomicUsize::new(0);
    let write_error: Mutex<Option<EvalError>> = Mutex::new(None);
    let workers = base.max_in_flight.max(1).min(pending.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let n = next.fetch_add(1, Ordering::SeqCst);
                let Some(&idx) = pending.get(n) else { break };
                let u = &units[idx];
                let outcome = u.envelope.clone().and_then(|env| {
                    let answers = bridges[u.bridge].ask(&env).map_err(|e| e.to_string())?;
                    Ok(answers
                        .iter()
                        .map(|a| ScoredResponse {
                            sample_index: a.sample_index,
                            ..score_response(&a.raw_text, u.item)
                        })
                        .collect::<Vec<_>>())
                });
                if let (Ok(scores), Some(w)) = (&outcome, &writer) {
                    let line = serde_json::to_string(&ProgressLine {
                        key: u.key.clone(),
                        scores: scores.clone(),
                    })
                    .expect("progress line serializes");
                    let mut f = w.lock().unwrap();
                    if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                        write_error
                            .lock()
                            .unwrap()
                            .get_or_insert(progress_err(progress.unwrap(), e));
                    }
                }
                *results[idx].lock().unwrap() = Some(outcome);
            });
        }
    });
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }

    type RowKey = (String, u64, TemporalLocation, Grounding, AnswerFormat, HopScope);
    let mut groups: BTreeMap<RowKey, Vec<Vec<Score>>> = BTreeMap::new();
    let mut failures = Vec::new();
    for (u, r) in units.iter().zip(results) {
        match r.into_inner().unwrap().expect("every unit ran") {
            Ok(scores) => groups
                .entry((
                    u.model.clone(),
                    u.item.window_ns,
                    u.item.temporal_loc,
                    u.grounding,
                    u.item.answer_format,
                    u.item.hop_scope,
                ))
                .or_default()
                .push(scores.iter().map(|s| s.score).collect()),
            Err(error) => failures.push(CellFailure {
                model: u.model.clone(),
                grounding: u.grounding,
                item_id: u.item.id.clone(),
                error,
            }),
        }
    }

    let mut rows = Vec::new();
    for ((model, window_ns, loc, grounding, format, hop), per_item) in groups {
        let all: Vec<Score> = per_item.iter().flatten().copied().collect();
        let t = tally(&all);
        let Some((p0, p05, p1)) = t.percentages() else { continue };
        let per_item_consistency: Vec<f64> = per_item
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| consistency(s))
            .collect::<Result<_, _>>()?;
        rows.push(GridRow {
            model,
            window_ns,
            loc,
            grounding,
            format,
            hop,
            pct0: round2(p0),
            pct05: round2(p05),
            pct1: round2(p1),
            accuracy: round2(super::accuracy(&all)?),
            consistency: round2(per_item_consistency.iter().sum::<f64>() / per_item_consistency.len() as f64),
            n: t.total(),
        });
    }

    Ok(GridReport {
        rows,
        failures,
        backend_calls: bridges.iter().map(Bridge::backend_calls).sum(),
        resumed,
    })
}
