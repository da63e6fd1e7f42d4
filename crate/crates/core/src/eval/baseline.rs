use std::fmt::Write;

use crate::analytics::SchedAnalytics;
use crate::kg::{KgError, QueryScope};
use crate::state::{AttributePath, StateSystem};
use crate::trace::IDLE_TID;

use super::EvalError;

pub const BASELINE_HEADER: &str = "path\tstart_ns\tend_ns\tvalue";

/// Flat dump of the in-scope `Current_thread` intervals, clipped to the
/// scope window: one tab-separated line per interval, idle omitted.
pub fn make_baseline_input(state: &StateSystem, scope: &QueryScope) -> Result<String, EvalError> {
    scope.validate()?;
    let analytics = SchedAnalytics::new(state).map_err(KgError::from)?;
    let w = scope.window;
    w.check_within(state).map_err(KgError::from)?;
    let mut out = String::from(BASELINE_HEADER);
    out.push('\n');
    for cpu in analytics.cpus().into_iter().filter(|c| scope.admits_cpu(*c)) {
        let path = AttributePath::cpu_current_thread(cpu);
        let Some(q) = state.quark(&path) else { continue };
        for iv in state.query_range(q, w.t1, w.t2)? {
            let Some(tid) = iv.value.as_int() else { continue };
            if tid == IDLE_TID || !scope.admits_thread(tid) {
                continue;
            }
            writeln!(out, "{path}\t{}\t{}\t{tid}", iv.start, iv.end).expect("writing to a String");
        }
    }
    Ok(out)
}
