//! Concurrent evaluation of two independent gradient computations.
//!
//! The executor owns a small worker pool. Submitted evaluations close over
//! owned copies of their inputs and share no mutable state, and each
//! evaluation reduces in a fixed index order internally, so parallel results
//! are bitwise identical to sequential ones. All randomness (noise, batch
//! choice) is materialized by the caller before submission.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use crate::error::{CoreError, EvalSide, Result};
use crate::model::{loss_and_grad, Batch, Model};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

/// Execution mode plus pool size. Parallel mode needs at least two workers
/// so the two gradient evaluations never queue behind each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecPlan {
    pub mode: ExecMode,
    pub worker_count: usize,
}

impl ExecPlan {
    pub fn sequential() -> ExecPlan {
        ExecPlan {
            mode: ExecMode::Sequential,
            worker_count: 1,
        }
    }

    pub fn parallel(worker_count: usize) -> ExecPlan {
        ExecPlan {
            mode: ExecMode::Parallel,
            worker_count,
        }
    }
}

type Job = Box<dyn FnOnce() + Send + 'static>;

/// Worker pool dispatching boxed jobs over a shared channel.
struct Pool {
    tx: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
}

impl Pool {
    fn new(worker_count: usize) -> Pool {
        let (tx, rx) = channel::<Job>();
        let rx = Arc::new(Mutex::new(rx));
        let workers = (0..worker_count)
            .map(|_| {
                let rx = Arc::clone(&rx);
                std::thread::spawn(move || loop {
                    let job = {
                        let guard = rx.lock().expect("executor queue poisoned");
                        guard.recv()
                    };
                    match job {
                        Ok(job) => job(),
                        Err(_) => break, // sender dropped: shut down
                    }
                })
            })
            .collect();
        Pool {
            tx: Some(tx),
            workers,
        }
    }

    fn submit(&self, job: Job) {
        self.tx
            .as_ref()
            .expect("pool already shut down")
            .send(job)
            .expect("executor workers gone");
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        self.tx.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Both results of a two-sided gradient evaluation.
#[derive(Debug, Clone)]
pub struct TwoGrads {
    pub g1: ParamVector,
    pub loss1: f64,
    pub g2: ParamVector,
    pub loss2: f64,
}

/// Evaluates pairs of independent gradients, concurrently under a parallel
/// plan. One executor serves one training loop.
pub struct Executor {
    plan: ExecPlan,
    pool: Option<Pool>,
}

impl Executor {
    pub fn new(plan: ExecPlan) -> Result<Executor> {
        let pool = match plan.mode {
            ExecMode::Sequential => None,
            ExecMode::Parallel => {
                if plan.worker_count < 2 {
                    return Err(CoreError::Config(format!(
                        "parallel execution needs at least 2 workers, got {}",
                        plan.worker_count
                    )));
                }
                Some(Pool::new(plan.worker_count))
            }
        };
        Ok(Executor { plan, pool })
    }

    pub fn plan(&self) -> ExecPlan {
        self.plan
    }

    /// Computes (g1, loss1) at `params_a` on `batch_a` and (g2, loss2) at
    /// `params_b` on `batch_b`. Bitwise identical across modes; failures
    /// name the side that failed.
    pub fn eval_two_grads(
        &self,
        model: &Model,
        params_a: &ParamVector,
        batch_a: &Batch,
        params_b: &ParamVector,
        batch_b: &Batch,
    ) -> Result<TwoGrads> {
        match &self.pool {
            None => {
                let (loss1, g1) =
                    loss_and_grad(model, params_a, batch_a).map_err(|e| CoreError::EvalFailed {
                        side: EvalSide::First,
                        source: Box::new(e),
                    })?;
                let (loss2, g2) =
                    loss_and_grad(model, params_b, batch_b).map_err(|e| CoreError::EvalFailed {
                        side: EvalSide::Second,
                        source: Box::new(e),
                    })?;
                Ok(TwoGrads {
                    g1,
                    loss1,
                    g2,
                    loss2,
                })
            }
            Some(pool) => {
                let (tx, rx) = channel();
                submit_side(pool, model, params_a, batch_a, EvalSide::First, tx.clone());
                submit_side(pool, model, params_b, batch_b, EvalSide::Second, tx);
                gather(rx)
            }
        }
    }
}

/// Clones one evaluation's inputs and queues it; the result (or a panic
/// marker) comes back through `tx`.
fn submit_side(
    pool: &Pool,
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    side: EvalSide,
    tx: Sender<(EvalSide, Result<(f64, ParamVector)>)>,
) {
    let model = model.clone();
    let params = params.clone();
    let batch = batch.clone();
    pool.submit(Box::new(move || {
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            loss_and_grad(&model, &params, &batch)
        }))
        .unwrap_or(Err(CoreError::WorkerPanic { side }));
        // The gathering side may have bailed on the other side's error.
        let _ = tx.send((side, out));
    }));
}

/// Barrier: waits for both sides, preferring the first side's error when
/// both fail.
fn gather(rx: Receiver<(EvalSide, Result<(f64, ParamVector)>)>) -> Result<TwoGrads> {
    let mut first = None;
    let mut second = None;
    for _ in 0..2 {
        let (side, out) = rx.recv().expect("executor worker dropped its result");
        match side {
            EvalSide::First => first = Some(out),
            EvalSide::Second => second = Some(out),
        }
    }
    let wrap = |side: EvalSide, e: CoreError| match e {
        CoreError::WorkerPanic { .. } => e,
        other => CoreError::EvalFailed {
            side,
            source: Box::new(other),
        },
    };
    let (loss1, g1) = first
        .expect("first side missing")
        .map_err(|e| wrap(EvalSide::First, e))?;
    let (loss2, g2) = second
        .expect("second side missing")
        .map_err(|e| wrap(EvalSide::Second, e))?;
    Ok(TwoGrads {
        g1,
        loss1,
        g2,
        loss2,
    })
}

/// Wall-clock step-time summary for one update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub sequential_ns: u64,
    pub parallel_ns: u64,
    pub speedup: f64,
    pub iterations: usize,
}

/// Iterations dropped from the front of every timing series; they absorb
/// allocator and cache warmup.
const BENCH_WARMUP: usize = 3;

/// Median wall time per optimizer step for each rule, with the
/// two-gradient rules timed under both executor modes.
///
/// Every rule starts from the same seeded parameters and steps on real
/// batches of `cfg.batch_size`. `iterations` must be at least 10; the
/// first 3 iterations are discarded as warmup. For single-gradient rules
/// the parallel column simply repeats the sequential median.
pub fn benchmark_step_time(
    model: &Model,
    dataset: &crate::data::Dataset,
    rules: &[crate::optim::UpdateRule],
    cfg: &crate::optim::TrainConfig,
    iterations: usize,
    plan: ExecPlan,
) -> Result<Vec<(String, TimingReport)>> {
    if iterations < 10 {
        return Err(CoreError::Config(format!(
            "benchmark needs at least 10 iterations, got {iterations}"
        )));
    }
    let workers = plan.worker_count.max(2);
    let mut out = Vec::with_capacity(rules.len());
    for rule in rules {
        rule.validate()?;
        let sequential_ns = time_rule(
            model,
            dataset,
            rule,
            cfg,
            iterations,
            ExecPlan::sequential(),
        )?;
        let two_sided = matches!(
            rule,
            crate::optim::UpdateRule::Rwp { .. } | crate::optim::UpdateRule::RwpPure { .. }
        );
        let parallel_ns = if two_sided {
            time_rule(
                model,
                dataset,
                rule,
                cfg,
                iterations,
                ExecPlan::parallel(workers),
            )?
        } else {
            sequential_ns
        };
        out.push((
            rule_label(rule),
            TimingReport {
                sequential_ns,
                parallel_ns,
                speedup: sequential_ns as f64 / parallel_ns as f64,
                iterations,
            },
        ));
    }
    Ok(out)
}

fn rule_label(rule: &crate::optim::UpdateRule) -> String {
    use crate::optim::UpdateRule::*;
    match rule {
        Sgd => "sgd",
        Sam { .. } => "sam",
        Rwp { .. } => "rwp",
        SamMix { .. } => "sam_mix",
        RwpPure { .. } => "rwp_pure",
    }
    .to_string()
}

/// Times `iterations` real steps of one rule under one executor mode.
fn time_rule(
    model: &Model,
    dataset: &crate::data::Dataset,
    rule: &crate::optim::UpdateRule,
    cfg: &crate::optim::TrainConfig,
    iterations: usize,
    plan: ExecPlan,
) -> Result<u64> {
    use rand::SeedableRng;
    let executor = Executor::new(plan)?;
    let mut params = crate::model::init_uniform(model, cfg.seed_init);
    let mut state = crate::optim::OptState::new(model.param_len(), iterations);
    let mut stream_1 = crate::data::BatchStream::new(dataset, cfg.batch_size, cfg.seed_batches)?;
    let mut stream_2 =
        crate::data::BatchStream::with_stream(dataset, cfg.batch_size, cfg.seed_batches, 1)?;
    let mut noise_rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed_noise);
    let mut failure = None;
    let ns = median_step_ns(iterations, BENCH_WARMUP, || {
        if failure.is_some() {
            return;
        }
        if let Err(e) = crate::optim::step_once(
            model,
            rule,
            cfg,
            &mut params,
            &mut state,
            &mut stream_1,
            &mut stream_2,
            &mut noise_rng,
            &executor,
        ) {
            failure = Some(e);
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(ns),
    }
}

/// Times `f` once per iteration and returns the median duration after
/// discarding the first `warmup` iterations.
pub(crate) fn median_step_ns<F: FnMut()>(iterations: usize, warmup: usize, mut f: F) -> u64 {
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = Instant::now();
        f();
        samples.push(t0.elapsed().as_nanos() as u64);
    }
    let mut kept: Vec<u64> = samples.split_off(warmup.min(samples.len() - 1));
    kept.sort_unstable();
    let n = kept.len();
    if n % 2 == 1 {
        kept[n / 2]
    } else {
        (kept[n / 2 - 1] + kept[n / 2]) / 2
    }
}
