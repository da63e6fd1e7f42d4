use std::collections::{BTreeMap, VecDeque};

use super::{Event, Timestamp, TraceError, IDLE_TID};

/// Events of `[t1, t2)`, preceded by one synthetic `sched_switch` from idle
/// per CPU that was running a thread at `t1`.
///
/// Occupancy at `t1` is the state after every event with `ts < t1`. If the
/// stream ends before `t1` the slice is empty.
pub struct TraceSlice<I> {
    inner: I,
    t1: Timestamp,
    t2: Timestamp,
    pending: Option<VecDeque<Result<Event, TraceError>>>,
    done: bool,
}

pub fn slice_trace<I>(events: I, t1: Timestamp, t2: Timestamp) -> Result<TraceSlice<I::IntoIter>, TraceError>
where
    I: IntoIterator<Item = Result<Event, TraceError>>,
{
    if t1 >= t2 {
        return Err(TraceError::Window { t1, t2 });
    }
    Ok(TraceSlice {
        inner: events.into_iter(),
        t1,
        t2,
        pending: None,
        done: false,
    })
}

impl<I> TraceSlice<I>
where
    I: Iterator<Item = Result<Event, TraceError>>,
{
    fn prime(&mut self) -> VecDeque<Result<Event, TraceError>> {
        let mut occupancy: BTreeMap<u32, i64> = BTreeMap::new();
        let mut queue = VecDeque::new();
        for event in self.inner.by_ref() {
            match event {
                Err(e) => {
                    queue.push_back(Err(e));
                    return queue;
                }
                Ok(e) if e.ts < self.t1 => {
                    if let Some((_, next)) = e.switch_tids() {
                        occupancy.insert(e.cpu, next);
                    }
                }
                Ok(e) => {
                    for (cpu, tid) in &occupancy {
                        if *tid != IDLE_TID {
                            queue.push_back(Ok(Event::sched_switch(self.t1, *cpu, IDLE_TID, *tid)));
                        }
                    }
                    queue.push_back(Ok(e));
                    return queue;
                }
            }
        }
        queue
    }
}

impl<I> Iterator for TraceSlice<I>
where
    I: Iterator<Item = Result<Event, TraceError>>,
{
    type Item = Result<Event, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.pending.is_none() {
            self.pending = Some(self.prime());
        }
        let item = match self.pending.as_mut().and_then(VecDeque::pop_front) {
            Some(item) => Some(item),
            None => self.inner.next(),
        };
        match item {
            Some(Ok(e)) if e.ts >= self.t2 => {
                self.done = true;
                None
            }
            Some(Err(e)) => {
                self.done = true;
                Some(Err(e))
            }
            None => {
                self.done = true;
                None
            }
            some => some,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(events: Vec<Event>) -> impl Iterator<Item = Result<Event, TraceError>> {
        events.into_iter().map(Ok)
    }

    fn collect<I: Iterator<Item = Result<Event, TraceError>>>(s: TraceSlice<I>) -> Vec<Event> {
        s.map(Result::unwrap).collect()
    }

    fn sample() -> Vec<Event> {
        vec![
            Event::sched_switch(100, 0, 0, 42),
            Event::sched_switch(150, 1, 0, 7),
            Event::sched_switch(400, 0, 42, 0),
            Event::sched_switch(500, 1, 7, 0),
        ]
    }

    #[test]
    fn whole_trace_window_is_identity() {
        let out = collect(slice_trace(ok(sample()), 0, 1_000).unwrap());
        assert_eq!(out, sample());
    }

    #[test]
    fn mid_slice_start_emits_boundary_switch() {
        let out = collect(slice_trace(ok(sample()), 200, 450).unwrap());
        assert_eq!(
            out,
            vec![
                Event::sched_switch(200, 0, 0, 42),
                Event::sched_switch(200, 1, 0, 7),
                Event::sched_switch(400, 0, 42, 0),
            ]
        );
    }

    #[test]
    fn idle_cpus_get_no_boundary_event() {
        let out = collect(slice_trace(ok(sample()), 450, 600).unwrap());
        assert_eq!(
            out,
            vec![Event::sched_switch(450, 1, 0, 7), Event::sched_switch(500, 1, 7, 0)]
        );
    }

    #[test]
    fn window_past_end_is_empty() {
        assert!(collect(slice_trace(ok(sample()), 600, 700).unwrap()).is_empty());
    }

    #[test]
    fn inverted_window_is_rejected() {
        assert!(matches!(
            slice_trace(ok(sample()), 10, 10),
            Err(TraceError::Window { t1: 10, t2: 10 })
        ));
    }
}
