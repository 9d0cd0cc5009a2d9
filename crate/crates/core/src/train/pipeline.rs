//! A generic stage pipeline: one thread per stage, bounded FIFO queues
//! between neighbours, batches injected in order by the calling thread.

use std::sync::mpsc::{self, Receiver, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

use super::schedule::TaskSpan;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Messages each inter-stage queue holds before the sender blocks.
    pub capacity: usize,
    /// Inject the next batch only after the previous one has left the last
    /// stage, so at most one batch is in flight.
    pub lockstep: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            capacity: 2,
            lockstep: false,
        }
    }
}

struct Envelope<T> {
    batch: usize,
    payload: T,
}

enum Notice {
    Done,
    Failed(Error),
}

/// What a pipeline run hands back: the stages themselves, each stage's
/// per-batch results in batch order, and the execution trace. When a stage
/// failed, `error` holds the first failure and the results stop short; the
/// stages are still returned unless a worker panicked.
pub struct PipelineRun<S, R> {
    pub stages: Vec<S>,
    pub results: Vec<Vec<R>>,
    pub trace: Vec<TaskSpan>,
    pub wall_clock: Duration,
    pub error: Option<Error>,
}

impl<S, R> PipelineRun<S, R> {
    /// Fails with the recorded error, if any.
    pub fn into_result(self) -> Result<Self> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

struct WorkerOutcome<S, R> {
    stage: S,
    results: Vec<R>,
    spans: Vec<TaskSpan>,
}

/// Runs `inputs` through `stages`. `work(stage, component, batch, input)`
/// returns the message for the next stage and a per-batch result. Batch and
/// component numbers are 1-based. The first error from any stage stops the run
/// and is reported once every worker has exited.
pub fn run_pipeline<S, T, R, I, F>(
    stages: Vec<S>,
    inputs: I,
    opts: PipelineOptions,
    work: F,
) -> Result<PipelineRun<S, R>>
where
    S: Send,
    T: Send,
    R: Send,
    I: IntoIterator<Item = T>,
    F: Fn(&mut S, usize, usize, T) -> Result<(T, R)> + Sync,
{
    if stages.is_empty() {
        return Err(Error::InvalidConfig(
            "pipeline needs at least one stage".into(),
        ));
    }
    let n_stages = stages.len();
    let capacity = opts.capacity.max(1);
    let origin = Instant::now();
    let work = &work;

    let (notice_tx, notice_rx) = mpsc::channel::<Notice>();
    let mut senders = Vec::with_capacity(n_stages);
    let mut receivers = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let (tx, rx) = mpsc::sync_channel::<Envelope<T>>(capacity);
        senders.push(tx);
        receivers.push(rx);
    }
    let head = senders.remove(0);
    let mut downstream: Vec<Option<SyncSender<Envelope<T>>>> =
        senders.into_iter().map(Some).collect();
    downstream.push(None);

    let (outcomes, feed_error) = thread::scope(|scope| {
        let handles: Vec<_> = stages
            .into_iter()
            .zip(receivers)
            .zip(downstream)
            .enumerate()
            .map(|(i, ((stage, rx), next))| {
                let notices = notice_tx.clone();
                scope.spawn(move || worker(i + 1, stage, rx, next, notices, origin, work))
            })
            .collect();
        drop(notice_tx);

        let mut failure = None;
        let mut injected = 0usize;
        let mut cleared = 0usize;
        let wait = |until: usize, cleared: &mut usize, failure: &mut Option<Error>| {
            while *cleared < until && failure.is_none() {
                match notice_rx.recv() {
                    Ok(Notice::Done) => *cleared += 1,
                    Ok(Notice::Failed(e)) => *failure = Some(e),
                    Err(_) => break,
                }
            }
        };
        for payload in inputs {
            if opts.lockstep {
                wait(injected, &mut cleared, &mut failure);
            } else {
                while let Ok(notice) = notice_rx.try_recv() {
                    match notice {
                        Notice::Done => cleared += 1,
                        Notice::Failed(e) => failure = Some(e),
                    }
                }
            }
            if failure.is_some() {
                break;
            }
            injected += 1;
            if head
                .send(Envelope {
                    batch: injected,
                    payload,
                })
                .is_err()
            {
                break;
            }
        }
        drop(head);
        wait(injected, &mut cleared, &mut failure);

        let outcomes: Vec<_> = handles.into_iter().map(|h| h.join()).collect();
        (outcomes, failure)
    });

    let mut stages = Vec::with_capacity(n_stages);
    let mut results = Vec::with_capacity(n_stages);
    let mut trace = Vec::new();
    let mut panic = None;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                stages.push(o.stage);
                results.push(o.results);
                trace.extend(o.spans);
            }
            Err(_) => {
                panic.get_or_insert(Error::Worker {
                    component: i + 1,
                    message: "worker panicked".into(),
                });
            }
        }
    }
    Ok(PipelineRun {
        stages,
        results,
        trace,
        wall_clock: origin.elapsed(),
        error: feed_error.or(panic),
    })
}

fn worker<S, T, R, F>(
    component: usize,
    mut stage: S,
    rx: Receiver<Envelope<T>>,
    next: Option<SyncSender<Envelope<T>>>,
    notices: mpsc::Sender<Notice>,
    origin: Instant,
    work: &F,
) -> WorkerOutcome<S, R>
where
    F: Fn(&mut S, usize, usize, T) -> Result<(T, R)>,
{
    let mut results = Vec::new();
    let mut spans = Vec::new();
    let mut last = 0;
    for Envelope { batch, payload } in rx {
        if batch <= last {
            let _ = notices.send(Notice::Failed(Error::Worker {
                component,
                message: format!("batch {batch} arrived after batch {last}"),
            }));
            break;
        }
        last = batch;
        let start = origin.elapsed();
        let outcome = work(&mut stage, component, batch, payload);
        let end = origin.elapsed();
        let (message, result) = match outcome {
            Ok(v) => v,
            Err(e) => {
                let _ = notices.send(Notice::Failed(e));
                break;
            }
        };
        spans.push(TaskSpan {
            worker: component,
            component,
            batch,
            start,
            end,
        });
        results.push(result);
        match &next {
            Some(tx) => {
                if tx
                    .send(Envelope {
                        batch,
                        payload: message,
                    })
                    .is_err()
                {
                    break;
                }
            }
            None => {
                let _ = notices.send(Notice::Done);
            }
        }
    }
    WorkerOutcome {
        stage,
        results,
        spans,
    }
}

/// The same work run stage after stage on the calling thread, batch by batch.
pub fn run_sequential<S, T, R, I, F>(
    mut stages: Vec<S>,
    inputs: I,
    work: F,
) -> Result<PipelineRun<S, R>>
where
    I: IntoIterator<Item = T>,
    F: Fn(&mut S, usize, usize, T) -> Result<(T, R)>,
{
    if stages.is_empty() {
        return Err(Error::InvalidConfig(
            "pipeline needs at least one stage".into(),
        ));
    }
    let origin = Instant::now();
    let mut results: Vec<Vec<R>> = stages.iter().map(|_| Vec::new()).collect();
    let mut trace = Vec::new();
    let mut error = None;
    'batches: for (m, payload) in inputs.into_iter().enumerate() {
        let batch = m + 1;
        let mut message = payload;
        for (i, stage) in stages.iter_mut().enumerate() {
            let start = origin.elapsed();
            let (out, r) = match work(stage, i + 1, batch, message) {
                Ok(v) => v,
                Err(e) => {
                    error = Some(e);
                    break 'batches;
                }
            };
            trace.push(TaskSpan {
                worker: 0,
                component: i + 1,
                batch,
                start,
                end: origin.elapsed(),
            });
            results[i].push(r);
            message = out;
        }
    }
    Ok(PipelineRun {
        stages,
        results,
        trace,
        wall_clock: origin.elapsed(),
        error,
    })
}

/// Equal-cost sleeping tasks through `components` stages, pipelined and then
/// sequentially; returns `(pipelined, sequential)` runs.
pub fn bench_sleep(
    n_batches: usize,
    components: usize,
    cost: Duration,
) -> Result<(PipelineRun<(), ()>, PipelineRun<(), ()>)> {
    let task = |_: &mut (), _: usize, _: usize, _: ()| {
        thread::sleep(cost);
        Ok(((), ()))
    };
    let pipe = run_pipeline(
        vec![(); components],
        vec![(); n_batches],
        PipelineOptions::default(),
        task,
    )?
    .into_result()?;
    let seq = run_sequential(vec![(); components], vec![(); n_batches], task)?.into_result()?;
    Ok((pipe, seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::schedule::{logical_units, makespan};

    fn add(stage: &mut u64, _c: usize, _m: usize, x: u64) -> Result<(u64, u64)> {
        *stage += 1;
        Ok((x * 10 + *stage, x))
    }

    #[test]
    fn stages_see_batches_in_order() {
        let run = run_pipeline(vec![0u64; 3], 1..=6u64, PipelineOptions::default(), add).unwrap();
        assert_eq!(run.stages, vec![6, 6, 6]);
        for r in &run.results {
            assert_eq!(r.len(), 6);
        }
        assert_eq!(run.results[0], (1..=6).collect::<Vec<_>>());
        // stage 2 received x*10 + k where k is stage 1's counter
        assert_eq!(
            run.results[1],
            (1..=6).map(|k| k * 10 + k).collect::<Vec<_>>()
        );
        for c in 1..=3 {
            let batches: Vec<usize> = run
                .trace
                .iter()
                .filter(|s| s.component == c)
                .map(|s| s.batch)
                .collect();
            assert_eq!(batches, (1..=6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pipelined_and_sequential_agree() {
        let p = run_pipeline(vec![0u64; 4], 1..=9u64, PipelineOptions::default(), add).unwrap();
        let s = run_sequential(vec![0u64; 4], 1..=9u64, add).unwrap();
        let l = run_pipeline(
            vec![0u64; 4],
            1..=9u64,
            PipelineOptions {
                capacity: 1,
                lockstep: true,
            },
            add,
        )
        .unwrap();
        assert_eq!(p.results, s.results);
        assert_eq!(l.results, s.results);
        assert_eq!(makespan(&p.trace), 9 + 4 - 1);
        assert_eq!(makespan(&s.trace), 9 * 4);
    }

    #[test]
    fn trace_units_follow_the_timetable() {
        let run = run_pipeline(vec![0u64; 3], 1..=5u64, PipelineOptions::default(), add).unwrap();
        for (s, u) in run.trace.iter().zip(logical_units(&run.trace)) {
            assert_eq!(u, s.batch + s.component - 1);
        }
    }

    #[test]
    fn lockstep_keeps_one_batch_in_flight() {
        let run = run_pipeline(
            vec![(); 3],
            vec![(); 4],
            PipelineOptions {
                capacity: 2,
                lockstep: true,
            },
            |_, _, _, _| {
                thread::sleep(Duration::from_millis(2));
                Ok(((), ()))
            },
        )
        .unwrap();
        let mut spans = run.trace.clone();
        spans.sort_by_key(|s| s.start);
        for pair in spans.windows(2) {
            assert!(pair[0].end <= pair[1].start);
        }
    }

    #[test]
    fn worker_errors_propagate() {
        let run = run_pipeline(
            vec![(); 3],
            1..=20usize,
            PipelineOptions::default(),
            |_, c, m, x| {
                if c == 2 && m == 4 {
                    Err(Error::NonFinite {
                        component: c,
                        context: "boom".into(),
                    })
                } else {
                    Ok((x, ()))
                }
            },
        )
        .unwrap();
        assert!(matches!(
            run.error,
            Some(Error::NonFinite { component: 2, .. })
        ));
        assert_eq!(run.stages.len(), 3);
        assert_eq!(run.results[1].len(), 3);
    }

    #[test]
    fn single_stage_runs() {
        let run = run_pipeline(vec![0u64], 1..=3u64, PipelineOptions::default(), add).unwrap();
        assert_eq!(makespan(&run.trace), 3);
    }
}
