use std::collections::HashMap;

use crate::llm::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::state::StateSystem;
use crate::trace::TraceMeta;

use super::grid::envelope_for;
use super::{mc_options, BenchmarkItem, EvalError, Grounding, ReferenceAnswer};

fn show(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn entity_text(id: &str, shift: u64) -> String {
    let (kind, num) = id.split_once(':').unwrap_or(("", id));
    let n = num.parse::<u64>().unwrap_or(0) + shift;
    match kind {
        "cpu" => format!("CPU_{n}"),
        _ => format!("Thread {n}"),
    }
}

/// The reference answer phrased as a model would.
pub fn render_reference(item: &BenchmarkItem) -> String {
    match &item.reference {
        ReferenceAnswer::Numeric { value, unit, .. } => format!("{} {unit}", show(*value)),
        ReferenceAnswer::Choice { letter } => {
            let text = mc_options(&item.prompt)
                .into_iter()
                .find(|(l, _)| l == letter)
                .map(|(_, t)| t)
                .unwrap_or_default();
            format!("({letter}) {text}")
        }
        ReferenceAnswer::Boolean { value } => if *value { "True" } else { "False" }.into(),
        ReferenceAnswer::Entity { id, quantity, .. } => match quantity {
            Some(q) => format!("{}, with {} {}", entity_text(id, 0), show(q.value), q.unit),
            None => entity_text(id, 0),
        },
    }
}

/// An answer the rubric must grade 0.
fn render_wrong(item: &BenchmarkItem) -> String {
    match &item.reference {
        ReferenceAnswer::Numeric { value, unit, .. } => format!("{} {unit}", show(value.abs() * 2.0 + 1.0)),
        ReferenceAnswer::Choice { letter } => {
            let other = mc_options(&item.prompt)
                .into_iter()
                .find(|(l, _)| l != letter)
                .map_or('A', |(l, _)| l);
            format!("({other})")
        }
        ReferenceAnswer::Boolean { value } => if *value { "False" } else { "True" }.into(),
        ReferenceAnswer::Entity { id, .. } => entity_text(id, 1),
    }
}

fn user_query(req: &ChatRequest) -> Result<String, BackendError> {
    let fatal = |message: String| BackendError::Fatal { status: None, message };
    let v: serde_json::Value =
        serde_json::from_str(&req.user).map_err(|e| fatal(format!("user message is not JSON: {e}")))?;
    v.get("user query")
        .and_then(|q| q.as_str())
        .map(str::to_string)
        .ok_or_else(|| fatal("envelope has no \"user query\"".into()))
}

/// Canned answers keyed by the exact user message of every grid envelope,
/// with the bare question as a fallback for prompts no two items share.
struct Answers {
    by_envelope: HashMap<String, String>,
    by_prompt: HashMap<String, Option<String>>,
}

impl Answers {
    fn build(
        items: &[BenchmarkItem],
        state: &StateSystem,
        meta: &TraceMeta,
        render: fn(&BenchmarkItem) -> String,
    ) -> Result<Self, EvalError> {
        let mut by_envelope = HashMap::new();
        let mut by_prompt: HashMap<String, Option<String>> = HashMap::new();
        for item in items {
            let text = render(item);
            for g in [Grounding::Baseline, Grounding::Taaf, Grounding::TaafNoSchema] {
                by_envelope.insert(envelope_for(item, g, state, meta)?.to_json(), text.clone());
            }
            by_prompt
                .entry(item.prompt.clone())
                .and_modify(|slot| {
                    if slot.as_deref() != Some(text.as_str()) {
                        *slot = None;
                    }
                })
                .or_insert(Some(text));
        }
        Ok(Answers { by_envelope, by_prompt })
    }

    fn lookup(&self, req: &ChatRequest) -> Result<Option<String>, BackendError> {
        if let Some(text) = self.by_envelope.get(&req.user) {
            return Ok(Some(text.clone()));
        }
        let q = user_query(req)?;
        Ok(self.by_prompt.get(&q).cloned().flatten())
    }
}

fn reply(text: String) -> ChatResponse {
    ChatResponse {
        text,
        prompt_tokens: None,
        completion_tokens: None,
    }
}

/// Answers every known question with its oracle reference.
pub struct OracleBackend {
    answers: Answers,
}

impl OracleBackend {
    pub fn new(items: &[BenchmarkItem], state: &StateSystem, meta: &TraceMeta) -> Result<Self, EvalError> {
        Ok(OracleBackend {
            answers: Answers::build(items, state, meta, render_reference)?,
        })
    }
}

impl ChatBackend for OracleBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        match self.answers.lookup(req)? {
            Some(text) => Ok(reply(text)),
            None => Err(BackendError::Fatal {
                status: None,
                message: format!("no oracle answer for `{}`", user_query(req)?),
            }),
        }
    }
}

/// Always answers wrongly: another option letter, the negated boolean, a
/// different entity or a far-off number.
pub struct WrongBackend {
    answers: Answers,
}

impl WrongBackend {
    pub fn new(items: &[BenchmarkItem], state: &StateSystem, meta: &TraceMeta) -> Result<Self, EvalError> {
        Ok(WrongBackend {
            answers: Answers::build(items, state, meta, render_wrong)?,
        })
    }
}

impl ChatBackend for WrongBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        Ok(reply(self.answers.lookup(req)?.unwrap_or_else(|| "(Z)".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{score_response, seed_benchmark, seed_workload, Score};
    use crate::llm::PromptEnvelope;
    use crate::trace::{generate_synthetic_trace, Event};

    #[test]
    fn reference_rendering_scores_one_and_wrong_scores_zero() {
        for item in seed_benchmark() {
            assert_eq!(
                score_response(&render_reference(&item), &item).score,
                Score::One,
                "{}",
                item.id
            );
            assert_eq!(
                score_response(&render_wrong(&item), &item).score,
                Score::Zero,
                "{}",
                item.id
            );
        }
    }

    #[test]
    fn items_sharing_a_prompt_get_their_own_answers() {
        let items = seed_benchmark();
        let events: Vec<Event> = generate_synthetic_trace(&seed_workload()).unwrap().collect();
        let meta = TraceMeta::scan(events.iter().cloned().map(Ok)).unwrap();
        let ss = StateSystem::build(&events, meta.end).unwrap();
        let oracle = OracleBackend::new(&items, &ss, &meta).unwrap();
        let shared: Vec<&BenchmarkItem> = items.iter().filter(|i| i.id.starts_with("expl-multi")).collect();
        assert_eq!(shared[0].prompt, shared[1].prompt);
        for item in shared {
            let env: PromptEnvelope = envelope_for(item, Grounding::Taaf, &ss, &meta).unwrap();
            let req = ChatRequest {
                model: "m".into(),
                temperature: 0.0,
                max_output_tokens: 16,
                system: String::new(),
                user: env.to_json(),
                options: Default::default(),
            };
            let text = oracle.complete(&req).unwrap().text;
            assert_eq!(score_response(&text, item).score, Score::One, "{}", item.id);
        }
    }
}
