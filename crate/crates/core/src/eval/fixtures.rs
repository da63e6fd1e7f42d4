use serde::Serialize;

use super::{accuracy_from_percentages, EvalError};

/// Allowed gap between recomputed and printed accuracy.
pub const FIXTURE_TOLERANCE: f64 = 0.01;

const ACCURACY_TABLE_CSV: &str = include_str!("../../data/accuracy_table.csv");

/// One (row, grounding) triple of the published accuracy table, verbatim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyTableRow {
    pub model: String,
    pub window: String,
    pub format: String,
    pub hop: String,
    pub grounding: String,
    pub pct0: f64,
    pub pct05: f64,
    pub pct1: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureCheck {
    pub row: AccuracyTableRow,
    pub recomputed: f64,
    pub passed: bool,
}

/// The 108 triples (54 rows, baseline and graph-grounded).
pub fn accuracy_table_rows() -> Result<Vec<AccuracyTableRow>, EvalError> {
    let mut lines = ACCURACY_TABLE_CSV.lines();
    let header = lines.next().ok_or_else(|| EvalError::Fixture("empty table".into()))?;
    if header != "model,window,format,hop,grounding,pct0,pct05,pct1,acc" {
        return Err(EvalError::Fixture(format!("unexpected header `{header}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| EvalError::Fixture(format!("line {}: {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad("expected 9 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
            Ok(AccuracyTableRow {
                model: f[0].into(),
                window: f[1].into(),
                format: f[2].into(),
                hop: f[3].into(),
                grounding: f[4].into(),
                pct0: num(f[5])?,
                pct05: num(f[6])?,
                pct1: num(f[7])?,
                acc: num(f[8])?,
            })
        })
        .collect()
}

/// Recomputes every printed accuracy from its label percentages.
pub fn check_fixtures() -> Result<Vec<FixtureCheck>, EvalError> {
    accuracy_table_rows()?
        .into_iter()
        .map(|row| {
            let recomputed = accuracy_from_percentages(row.pct0, row.pct05, row.pct1)?;
            let passed = (recomputed - row.acc).abs() <= FIXTURE_TOLERANCE + 1e-9;
            Ok(FixtureCheck {
                row,
                recomputed,
                passed,
            })
        })
        .collect()
}
