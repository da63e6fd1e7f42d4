use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{mc_options, AnswerFormat, BenchmarkItem, EvalError, Quantity, ReferenceAnswer};

/// Rubric grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Score {
    Zero,
    Half,
    One,
}

impl Score {
    pub fn value(self) -> f64 {
        match self {
            Score::Zero => 0.0,
            Score::Half => 0.5,
            Score::One => 1.0,
        }
    }

    pub fn from_value(v: f64) -> Option<Score> {
        if v == 0.0 {
            Some(Score::Zero)
        } else if v == 0.5 {
            Some(Score::Half)
        } else if v == 1.0 {
            Some(Score::One)
        } else {
            None
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Zero => s.serialize_u8(0),
            Score::Half => s.serialize_f64(0.5),
            Score::One => s.serialize_u8(1),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Score::from_value(v).ok_or_else(|| serde::de::Error::custom(format!("score {v} is not 0, 0.5 or 1")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub item_id: String,
    pub sample_index: u32,
    pub score: Score,
    /// What the extractor took as the answer.
    pub extracted: Option<String>,
    pub extraction_failed: bool,
    pub raw_text: String,
}

/// Label counts over a list of scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub n0: u64,
    pub n05: u64,
    pub n1: u64,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.n0 + self.n05 + self.n1
    }

    pub fn add(&mut self, s: Score) {
        match s {
            Score::Zero => self.n0 += 1,
            Score::Half => self.n05 += 1,
            Score::One => self.n1 += 1,
        }
    }

    /// `(pct0, pct05, pct1)`.
    pub fn percentages(&self) -> Option<(f64, f64, f64)> {
        let n = self.total() as f64;
        (n > 0.0).then(|| {
            (
                self.n0 as f64 * 100.0 / n,
                self.n05 as f64 * 100.0 / n,
                self.n1 as f64 * 100.0 / n,
            )
        })
    }
}

pub fn tally(scores: &[Score]) -> Tally {
    let mut t = Tally::default();
    for s in scores {
        t.add(*s);
    }
    t
}

/// Weighted mean grade in percent.
pub fn accuracy(scores: &[Score]) -> Result<f64, EvalError> {
    let t = tally(scores);
    if t.total() == 0 {
        return Err(EvalError::EmptyScores);
    }
    Ok((0.5 * t.n05 as f64 + t.n1 as f64) / t.total() as f64 * 100.0)
}

/// Accuracy from label percentages, normalized by their sum.
pub fn accuracy_from_percentages(pct0: f64, pct05: f64, pct1: f64) -> Result<f64, EvalError> {
    let total = pct0 + pct05 + pct1;
    if total <= 0.0 || !total.is_finite() {
        return Err(EvalError::EmptyScores);
    }
    Ok((0.5 * pct05 + pct1) / total * 100.0)
}

/// `(1 - E / log2 3) * 100`, with `E` the entropy in bits of the label
/// frequencies.
pub fn consistency(scores: &[Score]) -> Result<f64, EvalError> {
    let t = tally(scores);
    let n = t.total() as f64;
    if n == 0.0 {
        return Err(EvalError::EmptyScores);
    }
    let entropy: f64 = [t.n0, t.n05, t.n1]
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / n;
            -p * p.log2()
        })
        .sum();
    Ok(((1.0 - entropy / 3f64.log2()) * 100.0).clamp(0.0, 100.0))
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(\d{1,3}(?:,\d{3})+|\d+)(\.\d+)?(e[-+]?\d+)?\s*(nanoseconds?|microseconds?|milliseconds?|seconds?|secs?|ns|us|µs|μs|ms|s)?\b",
        )
        .expect("static regex")
    })
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(cpu|core|thread|tid)s?[\s_:#-]*(\d+)\b").expect("static regex"))
}

/// Entity mentions as `(kind, number, span)`; kind is `cpu` or `thread`.
fn mentions(text: &str) -> Vec<(&'static str, u64, std::ops::Range<usize>)> {
    mention_re()
        .captures_iter(text)
        .filter_map(|c| {
            let kind = match c[1].to_ascii_lowercase().as_str() {
                "cpu" | "core" => "cpu",
                _ => "thread",
            };
            let n = c[2].parse().ok()?;
            Some((kind, n, c.get(0).unwrap().range()))
        })
        .collect()
}

fn unit_scale(unit: &str) -> Option<f64> {
    match unit.to_ascii_lowercase().as_str() {
        "ns" | "nanosecond" | "nanoseconds" => Some(1.0),
        "us" | "µs" | "μs" | "microsecond" | "microseconds" => Some(1e3),
        "ms" | "millisecond" | "milliseconds" => Some(1e6),
        "s" | "sec" | "secs" | "second" | "seconds" => Some(1e9),
        _ => None,
    }
}

/// Numbers in `text` with their unit, skipping digits that belong to CPU or
/// thread mentions.
pub fn extract_numbers(text: &str) -> Vec<(f64, Option<String>)> {
    let spans: Vec<_> = mentions(text).into_iter().map(|m| m.2).collect();
    number_re()
        .captures_iter(text)
        .filter(|c| {
            let r = c.get(1).unwrap().range();
            !spans.iter().any(|s| s.start <= r.start && r.end <= s.end)
        })
        .filter_map(|c| {
            let mut s = c[1].replace(',', "");
            if let Some(frac) = c.get(2) {
                s.push_str(frac.as_str());
            }
            if let Some(exp) = c.get(3) {
                s.push_str(exp.as_str());
            }
            let v: f64 = s.parse().ok()?;
            Some((v, c.get(4).map(|u| u.as_str().to_string())))
        })
        .collect()
}

fn grade_quantity(text: &str, q: &Quantity) -> Option<(Score, String)> {
    let (x, unit) = extract_numbers(text).pop()?;
    let ref_scale = unit_scale(&q.unit);
    let (x_norm, r_norm) = match ref_scale {
        Some(rs) => {
            let xs = unit.as_deref().and_then(unit_scale).unwrap_or(rs);
            (x * xs, q.value * rs)
        }
        None => (x, q.value),
    };
    let err = if r_norm == 0.0 {
        if x_norm == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (x_norm - r_norm).abs() / r_norm.abs()
    };
    const EPS: f64 = 1e-12;
    let score = if err <= q.rel_tol + EPS {
        Score::One
    } else if err <= q.loose_tol + EPS {
        Score::Half
    } else {
        Score::Zero
    };
    let shown = match unit {
        Some(u) => format!("{x} {u}"),
        None => format!("{x}"),
    };
    Some((score, shown))
}

fn first_option_letter(text: &str, valid: &[char]) -> Option<char> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b([A-Z])\b").expect("static regex"));
    re.captures_iter(text).find_map(|c| {
        let m = c.get(1).unwrap();
        let letter = m.as_str().chars().next().unwrap();
        if !valid.contains(&letter) {
            return None;
        }
        // "A thread ..." and "I think ..." are words, not labels.
        let rest = &text[m.end()..];
        let prose = matches!(letter, 'A' | 'I')
            && rest.starts_with(' ')
            && rest[1..].chars().next().is_some_and(|ch| ch.is_lowercase());
        (!prose).then_some(letter)
    })
}

fn first_boolean(text: &str) -> Option<bool> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\b(true|false)\b").expect("static regex"));
    re.captures(text).map(|c| c[1].eq_ignore_ascii_case("true"))
}

/// Grades one answer against `item.reference`. Pure; never fails.
pub fn score_response(raw_text: &str, item: &BenchmarkItem) -> ScoredResponse {
    let (score, extracted) = match (&item.reference, item.answer_format) {
        (ReferenceAnswer::Boolean { value }, _) => match first_boolean(raw_text) {
            Some(b) => (if b == *value { Score::One } else { Score::Zero }, Some(b.to_string())),
            None => (Score::Zero, None),
        },
        (ReferenceAnswer::Choice { letter }, _) => {
            let valid: Vec<char> = mc_options(&item.prompt).into_iter().map(|(l, _)| l).collect();
            match first_option_letter(raw_text, &valid) {
                Some(l) => (if l == *letter { Score::One } else { Score::Zero }, Some(l.to_string())),
                None => (Score::Zero, None),
            }
        }
        (ReferenceAnswer::Numeric { .. }, _) => {
            let q = item.reference.quantity().expect("numeric reference has a quantity");
            match grade_quantity(raw_text, &q) {
                Some((s, shown)) => (s, Some(shown)),
                None => (Score::Zero, None),
            }
        }
        (ReferenceAnswer::Entity { id, aliases, quantity }, _) => {
            score_entity(raw_text, id, aliases, quantity.as_ref())
        }
    };
    debug_assert!(
        item.answer_format != AnswerFormat::TrueFalse || matches!(item.reference, ReferenceAnswer::Boolean { .. })
    );
    ScoredResponse {
        item_id: item.id.clone(),
        sample_index: 0,
        score,
        extraction_failed: extracted.is_none(),
        extracted,
        raw_text: raw_text.to_string(),
    }
}

fn score_entity(raw: &str, id: &str, aliases: &[String], quantity: Option<&Quantity>) -> (Score, Option<String>) {
    let Some((kind, num)) = id.split_once(':') else {
        return (Score::Zero, None);
    };
    let want: u64 = num.parse().unwrap_or(u64::MAX);
    let named = match mentions(raw).into_iter().find(|m| m.0 == kind) {
        Some((k, n, _)) => {
            let shown = format!("{k}:{n}");
            if n != want {
                return (Score::Zero, Some(shown));
            }
            shown
        }
        None => {
            let lower = raw.to_lowercase();
            let hit = std::iter::once(id)
                .chain(aliases.iter().map(String::as_str))
                .find(|a| !a.is_empty() && lower.contains(&a.to_lowercase()));
            match hit {
                Some(_) => id.to_string(),
                None => return (Score::Zero, None),
            }
        }
    };
    match quantity.and_then(|q| grade_quantity(raw, q)) {
        Some((Score::One, _)) | None => (Score::One, Some(named)),
        Some((_, shown)) => (Score::Half, Some(format!("{named} {shown}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::TemporalLocation;
    use crate::eval::HopScope;

    fn item(format: AnswerFormat, prompt: &str, reference: ReferenceAnswer) -> BenchmarkItem {
        BenchmarkItem {
            id: "i".into(),
            prompt: prompt.into(),
            answer_format: format,
            hop_scope: HopScope::Single,
            temporal_loc: TemporalLocation::Mid,
            window_ns: 1,
            entities: None,
            reference,
        }
    }

    fn numeric(value: f64, unit: &str) -> BenchmarkItem {
        item(
            AnswerFormat::Explanatory,
            "How long?",
            ReferenceAnswer::Numeric {
                value,
                unit: unit.into(),
                rel_tol: 0.01,
                loose_tol: 0.10,
            },
        )
    }

    fn mc(letter: char) -> BenchmarkItem {
        item(
            AnswerFormat::MultipleChoice,
            "Thread 2559 primarily uses: (A) CPU_0 (B) CPU_1 (C) CPU_2 (D) None",
            ReferenceAnswer::Choice { letter },
        )
    }

    fn tf(value: bool) -> BenchmarkItem {
        item(
            AnswerFormat::TrueFalse,
            "True or False? x",
            ReferenceAnswer::Boolean { value },
        )
    }

    fn entity(id: &str, quantity: Option<Quantity>) -> BenchmarkItem {
        item(
            AnswerFormat::Explanatory,
            "Which CPU?",
            ReferenceAnswer::Entity {
                id: id.into(),
                aliases: vec!["CPU_0".into()],
                quantity,
            },
        )
    }

    #[test]
    fn true_false_rubric() {
        assert_eq!(
            score_response("True \u{2014} the busiest CPU also runs the most threads", &tf(true)).score,
            Score::One
        );
        assert_eq!(score_response("false.", &tf(true)).score, Score::Zero);
        let none = score_response("It depends.", &tf(true));
        assert_eq!(none.score, Score::Zero);
        assert!(none.extraction_failed);
        assert_eq!(score_response("This is untrue; FALSE", &tf(false)).score, Score::One);
    }

    #[test]
    fn multiple_choice_rubric() {
        assert_eq!(score_response("The answer is (C)", &mc('B')).score, Score::Zero);
        assert_eq!(score_response("The answer is (B) CPU_1.", &mc('B')).score, Score::One);
        assert_eq!(score_response("B", &mc('B')).score, Score::One);
        assert_eq!(score_response("A thread mostly uses B.", &mc('B')).score, Score::One);
        let absent = score_response("CPU_1", &mc('B'));
        assert_eq!(absent.score, Score::Zero);
        assert!(absent.extraction_failed);
        assert_eq!(score_response("(E)", &mc('B')).score, Score::Zero);
    }

    #[test]
    fn numeric_rubric() {
        assert_eq!(score_response("about 103 ns", &numeric(100.0, "ns")).score, Score::Half);
        assert_eq!(score_response("100.5 ns", &numeric(100.0, "ns")).score, Score::One);
        assert_eq!(score_response("150 ns", &numeric(100.0, "ns")).score, Score::Zero);
        assert_eq!(
            score_response("nothing numeric", &numeric(100.0, "ns")).score,
            Score::Zero
        );
    }

    #[test]
    fn numeric_units_and_mentions() {
        let r = numeric(5_247_200.0, "ns");
        assert_eq!(
            score_response("Thread 5130 ran 5,247,200 ns on CPU 0", &r).score,
            Score::One
        );
        assert_eq!(score_response("roughly 5.25 ms", &r).score, Score::One);
        assert_eq!(score_response("0.0052472 s", &r).score, Score::One);
        assert_eq!(score_response("5247.2 us", &r).score, Score::One);
        assert_eq!(score_response("5.6 ms", &r).score, Score::Half);
        let secs = numeric(6.4, "s");
        assert_eq!(
            score_response("Thread 9127 executed for 6.4 seconds.", &secs).score,
            Score::One
        );
        assert_eq!(score_response("6400000000 ns", &secs).score, Score::One);
        assert_eq!(score_response("6.4", &secs).score, Score::One);
        let count = numeric(5.0, "count");
        assert_eq!(score_response("CPU_2 served 5 threads", &count).score, Score::One);
        assert_eq!(score_response("1e11 ns", &numeric(1e11, "ns")).score, Score::One);
    }

    #[test]
    fn entity_rubric() {
        assert_eq!(
            score_response("CPU_0 served the most threads", &entity("cpu:0", None)).score,
            Score::One
        );
        assert_eq!(score_response("cpu 0", &entity("cpu:0", None)).score, Score::One);
        assert_eq!(
            score_response("CPU_1 served the most", &entity("cpu:0", None)).score,
            Score::Zero
        );
        assert_eq!(score_response("no idea", &entity("cpu:0", None)).score, Score::Zero);
        assert_eq!(
            score_response("Thread 9127, mostly", &entity("thread:9127", None)).score,
            Score::One
        );
        let q = Quantity {
            value: 6.4,
            unit: "s".into(),
            rel_tol: 0.01,
            loose_tol: 0.10,
        };
        let it = entity("thread:9127", Some(q));
        assert_eq!(
            score_response("Thread 9127 executed for 6.4 seconds", &it).score,
            Score::One
        );
        assert_eq!(
            score_response("Thread 9127 executed for 9 seconds", &it).score,
            Score::Half
        );
        assert_eq!(score_response("Thread 9127 did", &it).score, Score::One);
        assert_eq!(
            score_response("Thread 4000 executed for 6.4 seconds", &it).score,
            Score::Zero
        );
    }

    #[test]
    fn scoring_is_idempotent() {
        let it = mc('B');
        assert_eq!(score_response("(B)", &it), score_response("(B)", &it));
    }

    #[test]
    fn accuracy_examples() {
        let acc = accuracy_from_percentages(4.00, 0.67, 95.33).unwrap();
        assert!((acc - 95.67).abs() <= 0.01, "{acc}");
        let acc = accuracy_from_percentages(30.00, 8.00, 62.00).unwrap();
        assert!((acc - 66.00).abs() <= 0.01, "{acc}");
        assert_eq!(accuracy(&[Score::One; 7]).unwrap(), 100.0);
        assert_eq!(
            accuracy(&[Score::Zero, Score::Half, Score::One, Score::One]).unwrap(),
            62.5
        );
        assert!(matches!(accuracy(&[]), Err(EvalError::EmptyScores)));
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(consistency(&[Score::Half; 3]).unwrap(), 100.0);
        let thirds = consistency(&[Score::Zero, Score::Half, Score::One]).unwrap();
        assert!(thirds.abs() < 1e-9);
        assert_eq!(format!("{thirds:.2}"), "0.00");
        let halves = consistency(&[Score::Zero, Score::Half, Score::Zero, Score::Half]).unwrap();
        let analytic = (1.0 - 1.0 / 3f64.log2()) * 100.0;
        assert!((halves - analytic).abs() < 1e-12);
        assert!((halves - 36.907).abs() < 0.001, "{halves}");
        assert!(matches!(consistency(&[]), Err(EvalError::EmptyScores)));
    }

    #[test]
    fn score_serializes_as_number() {
        assert_eq!(
            serde_json::to_string(&[Score::Zero, Score::Half, Score::One]).unwrap(),
            "[0,0.5,1]"
        );
        let back: Vec<Score> = serde_json::from_str("[0,0.5,1.0]").unwrap();
        assert_eq!(back, [Score::Zero, Score::Half, Score::One]);
        assert!(serde_json::from_str::<Score>("0.7").is_err());
    }
}
