//! Portable event representation of a kernel trace.
//!
//! A trace file is UTF-8 line-delimited JSON, one event per line:
//!
//! ```text
//! {"ts":1000,"kind":"sched_switch","cpu":0,"payload":{"prev_tid":0,"next_tid":42}}
//! ```
//!
//! `ts` is integer nanoseconds since trace origin, `kind` a non-empty string,
//! `cpu` a small unsigned integer and `payload` an object whose values are
//! integers or strings. Payload key order is preserved through a round trip.

mod gen;
mod slice;

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use gen::{generate_synthetic_trace, SplitMix64, SyntheticTrace, WorkloadSpec};
pub use slice::{slice_trace, TraceSlice};

/// Nanoseconds since trace origin.
pub type Timestamp = u64;

/// Thread id of the idle task.
pub const IDLE_TID: i64 = 0;

pub const SCHED_SWITCH: &str = "sched_switch";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: timestamp {value} is out of range")]
    Range { line: usize, value: String },
    #[error("line {line}: timestamp {ts} precedes previous timestamp {prev}")]
    Ordering {
        line: usize,
        ts: Timestamp,
        prev: Timestamp,
    },
    #[error("invalid workload spec: {0}")]
    Spec(String),
    #[error("invalid slice window [{t1}, {t2}): start must precede end")]
    Window { t1: Timestamp, t2: Timestamp },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventKind {
    SchedSwitch,
    /// Any kind without a state handler, kept verbatim.
    Other(String),
}

impl EventKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "" => None,
            SCHED_SWITCH => Some(EventKind::SchedSwitch),
            other => Some(EventKind::Other(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            EventKind::SchedSwitch => SCHED_SWITCH,
            EventKind::Other(s) => s,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EventKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// Payload scalar: integer or string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub ts: Timestamp,
    pub kind: EventKind,
    pub cpu: u32,
    pub payload: IndexMap<String, Scalar>,
}

impl Event {
    pub fn sched_switch(ts: Timestamp, cpu: u32, prev_tid: i64, next_tid: i64) -> Self {
        let mut payload = IndexMap::with_capacity(2);
        payload.insert("prev_tid".to_string(), Scalar::Int(prev_tid));
        payload.insert("next_tid".to_string(), Scalar::Int(next_tid));
        Event {
            ts,
            kind: EventKind::SchedSwitch,
            cpu,
            payload,
        }
    }

    /// `(prev_tid, next_tid)` for a `sched_switch`, `None` for every other kind.
    pub fn switch_tids(&self) -> Option<(i64, i64)> {
        if self.kind != EventKind::SchedSwitch {
            return None;
        }
        match (self.payload.get("prev_tid"), self.payload.get("next_tid")) {
            (Some(Scalar::Int(p)), Some(Scalar::Int(n))) => Some((*p, *n)),
            _ => None,
        }
    }

    /// One line of the event file format, without the trailing LF.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization is infallible")
    }

    /// Parses one record. `line` is the 1-based line number used in errors.
    pub fn from_json_line(text: &str, line: usize) -> Result<Event, TraceError> {
        parse_event_line(text, line)
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        reason: reason.into(),
    }
}

/// Parses one line of the event file format.
pub fn parse_event_line(text: &str, line: usize) -> Result<Event, TraceError> {
    if text.contains('\r') {
        return Err(parse_err(line, "CR in record; line endings must be LF"));
    }
    let value: Value = serde_json::from_str(text).map_err(|e| parse_err(line, format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(parse_err(line, "record is not a JSON object"));
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "ts" | "kind" | "cpu" | "payload") {
            return Err(parse_err(line, format!("unexpected key `{key}`")));
        }
    }

    let ts = match obj.get("ts") {
        Some(Value::Number(n)) => match n.as_u64() {
            Some(ts) => ts,
            None if n.is_i64() || n.is_f64() && n.as_f64().is_some_and(|f| f < 0.0) => {
                return Err(TraceError::Range {
                    line,
                    value: n.to_string(),
                })
            }
            None => return Err(parse_err(line, format!("`ts` must be an integer, got {n}"))),
        },
        Some(other) => return Err(parse_err(line, format!("`ts` must be an integer, got {other}"))),
        None => return Err(parse_err(line, "missing key `ts`")),
    };

    let kind = match obj.get("kind") {
        Some(Value::String(s)) => EventKind::parse(s).ok_or_else(|| parse_err(line, "`kind` must be non-empty"))?,
        Some(_) => return Err(parse_err(line, "`kind` must be a string")),
        None => return Err(parse_err(line, "missing key `kind`")),
    };

    let cpu = match obj.get("cpu") {
        Some(Value::Number(n)) => n
            .as_u64()
            .and_then(|c| u32::try_from(c).ok())
            .ok_or_else(|| parse_err(line, format!("`cpu` must be a small unsigned integer, got {n}")))?,
        Some(_) => return Err(parse_err(line, "`cpu` must be an integer")),
        None => return Err(parse_err(line, "missing key `cpu`")),
    };

    let payload = match obj.get("payload") {
        Some(Value::Object(fields)) => {
            let mut payload = IndexMap::with_capacity(fields.len());
            for (k, v) in fields {
                let scalar =
                    match v {
                        Value::Number(n) => Scalar::Int(n.as_i64().ok_or_else(|| {
                            parse_err(line, format!("payload field `{k}` must be an integer or string"))
                        })?),
                        Value::String(s) => Scalar::Str(s.clone()),
                        _ => {
                            return Err(parse_err(
                                line,
                                format!("payload field `{k}` must be an integer or string"),
                            ))
                        }
                    };
                payload.insert(k.clone(), scalar);
            }
            payload
        }
        Some(_) => return Err(parse_err(line, "`payload` must be an object")),
        None => return Err(parse_err(line, "missing key `payload`")),
    };

    let event = Event { ts, kind, cpu, payload };
    validate_sched_switch(&event).map_err(|reason| parse_err(line, reason))?;
    Ok(event)
}

fn validate_sched_switch(event: &Event) -> Result<(), String> {
    if event.kind != EventKind::SchedSwitch {
        return Ok(());
    }
    if event.payload.len() != 2 {
        return Err("sched_switch payload must contain exactly prev_tid and next_tid".into());
    }
    let tid = |name: &str| match event.payload.get(name) {
        Some(Scalar::Int(v)) if *v >= 0 => Ok(*v),
        Some(_) => Err(format!("sched_switch `{name}` must be a non-negative integer")),
        None => Err(format!("sched_switch payload is missing `{name}`")),
    };
    let prev = tid("prev_tid")?;
    let next = tid("next_tid")?;
    if prev == next {
        return Err(format!("sched_switch from tid {prev} to itself"));
    }
    Ok(())
}

/// Summary of a loaded trace stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub origin: Timestamp,
    pub end: Timestamp,
    pub event_count: u64,
    /// One past the highest CPU id seen.
    pub cpu_count: u32,
}

impl TraceMeta {
    pub fn duration(&self) -> Timestamp {
        self.end - self.origin
    }

    /// Scans a stream, checking ordering, and summarizes it.
    pub fn scan<I>(events: I) -> Result<TraceMeta, TraceError>
    where
        I: IntoIterator<Item = Result<Event, TraceError>>,
    {
        let mut meta = TraceMeta::default();
        for event in events {
            let event = event?;
            meta.end = meta.end.max(event.ts);
            meta.event_count += 1;
            meta.cpu_count = meta.cpu_count.max(event.cpu + 1);
        }
        Ok(meta)
    }
}

/// Streaming reader over any buffered source of event lines.
///
/// Yields events in file order and fails on the first timestamp regression.
pub struct EventReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    last_ts: Option<Timestamp>,
    failed: bool,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(reader: R) -> Self {
        EventReader {
            lines: reader.lines(),
            line_no: 0,
            last_ts: None,
            failed: false,
        }
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let text = match self.lines.next()? {
            Ok(t) => t,
            Err(e) => {
                self.failed = true;
                return Some(Err(e.into()));
            }
        };
        self.line_no += 1;
        let result = parse_event_line(&text, self.line_no).and_then(|event| {
            if let Some(prev) = self.last_ts {
                if event.ts < prev {
                    return Err(TraceError::Ordering {
                        line: self.line_no,
                        ts: event.ts,
                        prev,
                    });
                }
            }
            self.last_ts = Some(event.ts);
            Ok(event)
        });
        if result.is_err() {
            self.failed = true;
        }
        Some(result)
    }
}

pub type FileEvents = EventReader<BufReader<File>>;

/// Opens a trace file and returns its metadata plus a fresh event stream.
///
/// The file is read twice: once to validate and summarize, once for the
/// returned stream. Memory use does not depend on trace length.
pub fn load_trace(path: impl AsRef<Path>) -> Result<(TraceMeta, FileEvents), TraceError> {
    let path = path.as_ref();
    let meta = TraceMeta::scan(EventReader::new(BufReader::new(File::open(path)?)))?;
    let events = EventReader::new(BufReader::new(File::open(path)?));
    Ok((meta, events))
}

/// Writes events in the canonical line format.
pub fn write_events<W, I>(mut out: W, events: I) -> io::Result<u64>
where
    W: io::Write,
    I: IntoIterator<Item = Event>,
{
    let mut n = 0;
    for event in events {
        out.write_all(event.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}
