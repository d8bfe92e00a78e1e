//! Update rules and the training loop: plain momentum SGD, worst-case
//! (sharpness-aware) two-step updates, random-perturbation two-gradient
//! updates, and the gradient-mixing ablation variants.
//!
//! All rules funnel into one momentum/weight-decay/cosine-schedule
//! application, so rules that are algebraically equal (e.g. the random
//! variant at alpha = 1 versus plain SGD) produce bitwise equal parameter
//! trajectories under shared seeds.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BatchStream, Dataset};
use crate::error::{CoreError, Result};
use crate::executor::Executor;
use crate::model::{evaluate, loss_and_grad, Batch, Model};
use crate::params::ParamVector;
use crate::perturb::{sam_perturbation, sample_rwp_noise, RwpNoiseSpec, SamSpec};

/// Whether the perturbed-side gradient uses the same mini-batch as the
/// clean side or one drawn from an independent shuffle stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchPolicy {
    SameBatch,
    DifferentBatch,
}

/// Which update rule the training loop applies each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    Sgd,
    Sam {
        rho: f64,
        policy: BatchPolicy,
    },
    Rwp {
        gamma: f64,
        alpha: f64,
        policy: BatchPolicy,
    },
    /// Mixed-gradient ablation of the worst-case rule; same batch for both
    /// gradients by construction.
    SamMix {
        rho: f64,
        alpha: f64,
    },
    /// Pure perturbed-gradient rule: the random variant with alpha = 0.
    RwpPure {
        gamma: f64,
    },
}

impl UpdateRule {
    pub fn validate(&self) -> Result<()> {
        let check_alpha = |alpha: f64| {
            if !(0.0..=1.0).contains(&alpha) {
                Err(CoreError::Config(format!(
                    "balance coefficient alpha must be in [0,1], got {alpha}"
                )))
            } else {
                Ok(())
            }
        };
        match *self {
            UpdateRule::Sgd => Ok(()),
            UpdateRule::Sam { rho, .. } => SamSpec::new(rho).map(|_| ()),
            UpdateRule::Rwp { gamma, alpha, .. } => {
                RwpNoiseSpec::new(gamma, 0)?;
                check_alpha(alpha)
            }
            UpdateRule::SamMix { rho, alpha } => {
                SamSpec::new(rho)?;
                check_alpha(alpha)
            }
            UpdateRule::RwpPure { gamma } => RwpNoiseSpec::new(gamma, 0).map(|_| ()),
        }
    }
}

/// Hyperparameters shared by every rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate of the cosine schedule.
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed_init: u64,
    pub seed_batches: u64,
    pub seed_noise: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(CoreError::Config(format!(
                "initial learning rate must be finite and > 0, got {}",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(CoreError::Config(format!(
                "weight decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Mutable optimizer state owned by one training loop.
#[derive(Debug, Clone)]
pub struct OptState {
    pub velocity: ParamVector,
    pub step_index: usize,
    pub total_steps: usize,
    /// Steps where the worst-case perturbation was skipped because the
    /// gradient norm was at tolerance.
    pub degenerate_count: u64,
}

impl OptState {
    pub fn new(param_len: usize, total_steps: usize) -> OptState {
        OptState {
            velocity: ParamVector::zeros(param_len),
            step_index: 0,
            total_steps,
            degenerate_count: 0,
        }
    }
}

/// Cosine decay without restarts: lr0 * 0.5 * (1 + cos(pi * step/total)).
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 || step >= total_steps {
        return Err(CoreError::Config(format!(
            "schedule step {step} out of range for {total_steps} total steps"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// alpha*g1 + (1-alpha)*g2 elementwise. The endpoints, and bitwise equal
/// inputs (where the mix is the identity alpha*g + (1-alpha)*g = g), are
/// exact copies; this keeps rules that degenerate to plain SGD bitwise
/// equal to it instead of drifting by an ulp per step.
pub fn mix_gradients(alpha: f64, g1: &ParamVector, g2: &ParamVector) -> ParamVector {
    assert_eq!(g1.len(), g2.len());
    if alpha == 1.0 {
        return g1.clone();
    }
    if alpha == 0.0 || g1.bitwise_eq(g2) {
        return g2.clone();
    }
    let beta = 1.0 - alpha;
    let mut out = ParamVector::zeros(g1.len());
    for (o, (&a, &b)) in out
        .as_mut_slice()
        .iter_mut()
        .zip(g1.as_slice().iter().zip(g2.as_slice()))
    {
        *o = alpha * a + beta * b;
    }
    out
}

/// Applies one descent step: adds coupled weight decay to the combined
/// gradient, folds it into the momentum buffer, and moves the parameters
/// by the scheduled learning rate. Aborts on a non-finite result.
pub fn combine_and_apply(
    params: &mut ParamVector,
    g_combined: &ParamVector,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> Result<()> {
    if g_combined.len() != params.len() || state.velocity.len() != params.len() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} parameters", params.len()),
            got: format!(
                "gradient {} / velocity {}",
                g_combined.len(),
                state.velocity.len()
            ),
        });
    }
    let lr = cosine_lr(state.step_index, state.total_steps, cfg.lr0)?;
    let p = params.as_mut_slice();
    let v = state.velocity.as_mut_slice();
    let g = g_combined.as_slice();
    for i in 0..p.len() {
        let decayed = g[i] + cfg.weight_decay * p[i];
        v[i] = cfg.momentum * v[i] + decayed;
        p[i] -= lr * v[i];
    }
    if !params.all_finite() {
        return Err(CoreError::NonFiniteUpdate {
            step: state.step_index,
        });
    }
    state.step_index += 1;
    Ok(())
}

/// One plain SGD step. Returns the batch loss at the pre-step weights.
pub fn sgd_step(
    model: &Model,
    params: &mut ParamVector,
    batch: &Batch,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (loss, grad) = loss_and_grad(model, params, batch)?;
    combine_and_apply(params, &grad, state, cfg)?;
    Ok(loss)
}

/// One worst-case-perturbation step: gradient at w on `batch_1` gives the
/// offset direction, the update uses the gradient at the offset point on
/// `batch_2`. The two evaluations are strictly sequential (the second
/// depends on the first). Degenerate gradients fall back to a plain step
/// and bump the counter.
pub fn sam_step(
    model: &Model,
    params: &mut ParamVector,
    batch_1: &Batch,
    batch_2: &Batch,
    state: &mut OptState,
    cfg: &TrainConfig,
    spec: &SamSpec,
) -> Result<f64> {
    let (loss1, g1) = loss_and_grad(model, params, batch_1)?;
    let g_combined = match sam_perturbation(&g1, spec) {
        Ok(eps) => {
            let mut shifted = params.clone();
            shifted.add_scaled(&eps, 1.0);
            let (_, g2) = loss_and_grad(model, &shifted, batch_2)?;
            g2
        }
        Err(CoreError::DegenerateGradient { .. }) => {
            state.degenerate_count += 1;
            g1
        }
        Err(e) => return Err(e),
    };
    combine_and_apply(params, &g_combined, state, cfg)?;
    Ok(loss1)
}

/// One mixed-gradient worst-case step (same batch for both gradients):
/// the update direction is alpha*g1 + (1-alpha)*g2 with g2 taken at the
/// offset point.
pub fn sam_mix_step(
    model: &Model,
    params: &mut ParamVector,
    batch: &Batch,
    state: &mut OptState,
    cfg: &TrainConfig,
    spec: &SamSpec,
    alpha: f64,
) -> Result<f64> {
    let (loss1, g1) = loss_and_grad(model, params, batch)?;
    let g_combined = match sam_perturbation(&g1, spec) {
        Ok(eps) => {
            let mut shifted = params.clone();
            shifted.add_scaled(&eps, 1.0);
            let (_, g2) = loss_and_grad(model, &shifted, batch)?;
            mix_gradients(alpha, &g1, &g2)
        }
        Err(CoreError::DegenerateGradient { .. }) => {
            state.degenerate_count += 1;
            g1
        }
        Err(e) => return Err(e),
    };
    combine_and_apply(params, &g_combined, state, cfg)?;
    Ok(loss1)
}

/// One random-perturbation step: noise is drawn from the dedicated stream,
/// both gradients are handed to the executor (independent, so they may run
/// concurrently), and the update uses alpha*g1 + (1-alpha)*g2. Bitwise
/// identical across executor modes.
#[allow(clippy::too_many_arguments)]
pub fn rwp_step(
    model: &Model,
    params: &mut ParamVector,
    batch_1: &Batch,
    batch_2: &Batch,
    state: &mut OptState,
    cfg: &TrainConfig,
    spec: &RwpNoiseSpec,
    alpha: f64,
    executor: &Executor,
    noise_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let noise = sample_rwp_noise(params, model.partition(), spec, noise_rng)?;
    let mut shifted = params.clone();
    if spec.gamma != 0.0 {
        shifted.add_scaled(&noise, 1.0);
    }
    let out = executor.eval_two_grads(model, params, batch_1, &shifted, batch_2)?;
    let g_combined = mix_gradients(alpha, &out.g1, &out.g2);
    combine_and_apply(params, &g_combined, state, cfg)?;
    Ok(out.loss1)
}

/// Per-epoch training metrics. The learning rate is the one in effect at
/// the epoch's first step; the wall time covers the epoch's steps only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub learning_rate: f64,
    pub epoch_wall_ns: u64,
    pub degenerate_gradient_count: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ParamVector,
    pub metrics: Vec<MetricsRecord>,
}

/// A numeric failure mid-run, carrying the last parameters that were still
/// finite so the caller can checkpoint them.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: CoreError,
    pub last_good: ParamVector,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    /// Rejected before the first step.
    #[error(transparent)]
    Invalid(#[from] CoreError),
    /// Numeric failure mid-run; last-good parameters are attached.
    #[error("training aborted at step {}: {}", .0.metrics.len(), .0.error)]
    Aborted(Box<TrainAbort>),
}

/// Runs `cfg.epochs` passes over `train_set`, evaluating on `test_set`
/// after each epoch. Batch order is driven solely by `seed_batches`
/// (different-batch policies draw from an independent stream of the same
/// seed); noise is driven solely by `seed_noise`; the initial parameters
/// solely by `seed_init`.
pub fn train(
    model: &Model,
    rule: &UpdateRule,
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    executor: &Executor,
) -> std::result::Result<TrainOutput, TrainError> {
    cfg.validate()?;
    rule.validate()?;
    let mut params = crate::model::init_uniform(model, cfg.seed_init);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutput { params, metrics });
    }

    let mut stream_1 = BatchStream::new(train_set, cfg.batch_size, cfg.seed_batches)?;
    let mut stream_2 = BatchStream::with_stream(train_set, cfg.batch_size, cfg.seed_batches, 1)?;
    let steps_per_epoch = stream_1.batches_per_epoch();
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut state = OptState::new(model.param_len(), total_steps);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed_noise);
    let test_batch = test_set.to_batch();
    // Fail on shape problems before spending any training time.
    evaluate(model, &params, &test_batch).map_err(TrainError::Invalid)?;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let learning_rate =
            cosine_lr(state.step_index, total_steps, cfg.lr0).map_err(TrainError::Invalid)?;
        let mut loss_sum = 0.0;
        for _ in 0..steps_per_epoch {
            let snapshot = params.clone();
            let step = step_once(
                model,
                rule,
                cfg,
                &mut params,
                &mut state,
                &mut stream_1,
                &mut stream_2,
                &mut noise_rng,
                executor,
            );
            match step {
                Ok(loss) => loss_sum += loss,
                Err(error) => {
                    return Err(TrainError::Aborted(Box::new(TrainAbort {
                        error,
                        last_good: snapshot,
                        metrics,
                    })));
                }
            }
        }
        let test = match evaluate(model, &params, &test_batch) {
            Ok(s) => s,
            Err(error) => {
                return Err(TrainError::Aborted(Box::new(TrainAbort {
                    error,
                    last_good: params.clone(),
                    metrics,
                })));
            }
        };
        metrics.push(MetricsRecord {
            epoch,
            train_loss: loss_sum / steps_per_epoch as f64,
            test_accuracy: test.accuracy,
            learning_rate,
            epoch_wall_ns: t0.elapsed().as_nanos() as u64,
            degenerate_gradient_count: state.degenerate_count,
        });
    }

    Ok(TrainOutput { params, metrics })
}

/// Draws this step's batches per the rule's policy and applies the rule.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_once(
    model: &Model,
    rule: &UpdateRule,
    cfg: &TrainConfig,
    params: &mut ParamVector,
    state: &mut OptState,
    stream_1: &mut BatchStream,
    stream_2: &mut BatchStream,
    noise_rng: &mut ChaCha8Rng,
    executor: &Executor,
) -> Result<f64> {
    let b1 = stream_1.next_batch();
    let second = |stream_2: &mut BatchStream, policy: BatchPolicy, b1: &Batch| match policy {
        BatchPolicy::SameBatch => b1.clone(),
        BatchPolicy::DifferentBatch => stream_2.next_batch(),
    };
    match *rule {
        UpdateRule::Sgd => sgd_step(model, params, &b1, state, cfg),
        UpdateRule::Sam { rho, policy } => {
            let b2 = second(stream_2, policy, &b1);
            sam_step(model, params, &b1, &b2, state, cfg, &SamSpec { rho })
        }
        UpdateRule::SamMix { rho, alpha } => {
            sam_mix_step(model, params, &b1, state, cfg, &SamSpec { rho }, alpha)
        }
        UpdateRule::Rwp {
            gamma,
            alpha,
            policy,
        } => {
            let b2 = second(stream_2, policy, &b1);
            let spec = RwpNoiseSpec {
                gamma,
                seed: cfg.seed_noise,
            };
            rwp_step(
                model, params, &b1, &b2, state, cfg, &spec, alpha, executor, noise_rng,
            )
        }
        UpdateRule::RwpPure { gamma } => {
            let b2 = stream_2.next_batch();
            let spec = RwpNoiseSpec {
                gamma,
                seed: cfg.seed_noise,
            };
            rwp_step(
                model, params, &b1, &b2, state, cfg, &spec, 0.0, executor, noise_rng,
            )
        }
    }
}
