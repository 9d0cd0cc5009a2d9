use std::time::Duration;

use serde::{Deserialize, Serialize};

/// The staggered pipeline timetable: at time unit `u`, component `c` works on
/// batch `u − c + 1` when that batch exists. Everything is 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub n_batches: usize,
    pub n_components: usize,
}

impl Schedule {
    pub fn new(n_batches: usize, n_components: usize) -> Self {
        Self {
            n_batches,
            n_components,
        }
    }

    pub fn batch_at(&self, unit: usize, component: usize) -> Option<usize> {
        if component == 0 || component > self.n_components || unit < component {
            return None;
        }
        let m = unit - component + 1;
        (1..=self.n_batches).contains(&m).then_some(m)
    }

    /// Time units to clear every batch through every component.
    pub fn total_units(&self) -> usize {
        if self.n_batches == 0 {
            0
        } else {
            self.n_batches + self.n_components - 1
        }
    }

    /// Task executions when components run one after another.
    pub fn sequential_units(&self) -> usize {
        self.n_batches * self.n_components
    }

    /// Row `u − 1` lists, per component, the batch processed at unit `u`.
    pub fn table(&self) -> Vec<Vec<Option<usize>>> {
        (1..=self.total_units())
            .map(|u| {
                (1..=self.n_components)
                    .map(|c| self.batch_at(u, c))
                    .collect()
            })
            .collect()
    }
}

/// One task execution: component `component` processing batch `batch` on
/// worker `worker`, timed from the start of the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpan {
    pub worker: usize,
    pub component: usize,
    pub batch: usize,
    pub start: Duration,
    pub end: Duration,
}

/// Logical time unit of every span, from dependencies alone: a task starts one
/// unit after the later of (a) the same batch on the previous component and
/// (b) the previous task on the same worker. Spans must be listed in the order
/// each worker ran them.
pub fn logical_units(trace: &[TaskSpan]) -> Vec<usize> {
    use std::collections::HashMap;
    let mut done: HashMap<(usize, usize), usize> = HashMap::new();
    let mut worker_last: HashMap<usize, usize> = HashMap::new();
    let mut units = vec![0; trace.len()];
    // a span may depend on one listed later (another worker's), so iterate to a fixpoint
    let mut remaining: Vec<usize> = (0..trace.len()).collect();
    let mut worker_next: HashMap<usize, usize> = HashMap::new();
    let mut per_worker: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, s) in trace.iter().enumerate() {
        per_worker.entry(s.worker).or_default().push(i);
    }
    while !remaining.is_empty() {
        let before = remaining.len();
        for (&w, list) in &per_worker {
            let next = worker_next.entry(w).or_insert(0);
            while *next < list.len() {
                let i = list[*next];
                let s = trace[i];
                let upstream = if s.component > 1 {
                    match done.get(&(s.component - 1, s.batch)) {
                        Some(&u) => u,
                        None => break,
                    }
                } else {
                    0
                };
                let prev = worker_last.get(&w).copied().unwrap_or(0);
                let u = upstream.max(prev) + 1;
                units[i] = u;
                done.insert((s.component, s.batch), u);
                worker_last.insert(w, u);
                *next += 1;
            }
        }
        remaining.retain(|&i| units[i] == 0);
        assert!(
            remaining.len() < before || remaining.is_empty(),
            "trace has a dependency cycle"
        );
    }
    units
}

/// Length of a trace in logical time units.
pub fn makespan(trace: &[TaskSpan]) -> usize {
    logical_units(trace).into_iter().max().unwrap_or(0)
}

/// Timing summary of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub wall_clock: Duration,
    pub time_units: usize,
    pub sequential_units: usize,
    /// Busy time of each component divided by the wall-clock time.
    pub busy_fraction: Vec<f64>,
    /// Sequential wall-clock over this run's wall-clock. When no sequential run
    /// was measured, the summed task time stands in for it.
    pub speedup: f64,
}

impl ThroughputReport {
    pub fn from_trace(
        trace: &[TaskSpan],
        n_components: usize,
        wall_clock: Duration,
        sequential: Option<Duration>,
    ) -> Self {
        let mut busy = vec![Duration::ZERO; n_components];
        for s in trace {
            busy[s.component - 1] += s.end.saturating_sub(s.start);
        }
        let wall = wall_clock.as_secs_f64().max(f64::MIN_POSITIVE);
        let reference = sequential.unwrap_or_else(|| busy.iter().sum());
        let n_batches = trace.iter().map(|s| s.batch).max().unwrap_or(0);
        Self {
            wall_clock,
            time_units: makespan(trace),
            sequential_units: n_batches * n_components,
            busy_fraction: busy.iter().map(|b| b.as_secs_f64() / wall).collect(),
            speedup: reference.as_secs_f64() / wall,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(worker: usize, component: usize, batch: usize) -> TaskSpan {
        TaskSpan {
            worker,
            component,
            batch,
            start: Duration::ZERO,
            end: Duration::ZERO,
        }
    }

    #[test]
    fn five_batches_three_components() {
        let s = Schedule::new(5, 3);
        assert_eq!(s.total_units(), 7);
        assert_eq!(s.sequential_units(), 15);
        assert_eq!(s.batch_at(7, 3), Some(5));
        assert_eq!(s.batch_at(3, 1), Some(3));
        assert_eq!(s.batch_at(1, 2), None);
        let t = s.table();
        assert_eq!(t[0], vec![Some(1), None, None]);
        assert_eq!(t[2], vec![Some(3), Some(2), Some(1)]);
        assert_eq!(t[6], vec![None, None, Some(5)]);
    }

    #[test]
    fn active_components_work_on_distinct_batches() {
        let s = Schedule::new(9, 4);
        for row in s.table() {
            let mut seen: Vec<usize> = row.into_iter().flatten().collect();
            let n = seen.len();
            seen.dedup();
            assert_eq!(seen.len(), n);
        }
    }

    #[test]
    fn logical_units_of_ideal_traces() {
        // one worker per component, listed component-major
        let mut pipe = Vec::new();
        for c in 1..=3 {
            for m in 1..=5 {
                pipe.push(span(c, c, m));
            }
        }
        let units = logical_units(&pipe);
        for (s, u) in pipe.iter().zip(&units) {
            assert_eq!(*u, s.batch + s.component - 1);
        }
        assert_eq!(makespan(&pipe), 7);

        let mut seq = Vec::new();
        for m in 1..=5 {
            for c in 1..=3 {
                seq.push(span(0, c, m));
            }
        }
        assert_eq!(makespan(&seq), 15);
    }

    #[test]
    fn empty_schedule() {
        assert_eq!(Schedule::new(0, 3).total_units(), 0);
        assert_eq!(makespan(&[]), 0);
    }
}
