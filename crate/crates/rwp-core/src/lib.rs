//! Training toolkit for small neural networks built around weight
//! perturbation.
//!
//! The crate provides:
//! - a minimal dense/conv model core with exact reverse-mode gradients
//!   ([`model`]),
//! - filter-wise random noise and gradient-aligned worst-case
//!   perturbations ([`perturb`]),
//! - SGD, sharpness-aware, and random-perturbation update rules with a
//!   shared momentum/weight-decay/cosine-schedule core ([`optim`]),
//! - a two-worker executor that evaluates the two independent gradients of
//!   the random-perturbation rule concurrently and bitwise-identically to
//!   sequential execution ([`executor`]),
//! - dataset generators, IDX ingestion, and a corruption suite ([`data`]),
//! - loss-landscape and filter-norm diagnostics ([`probes`]).
//!
//! Everything is deterministic: given the same seeds, training produces
//! bitwise identical parameters regardless of executor mode.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod executor;
pub mod model;
pub mod optim;
pub mod params;
pub mod perturb;
pub mod probes;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{
    corrupt, load_dataset, load_idx, make_blobs, make_spirals, save_dataset, BatchStream,
    CorruptionKind, CorruptionSpec, Dataset, Split,
};
pub use error::{CoreError, EvalSide, Result};
pub use executor::{benchmark_step_time, ExecMode, ExecPlan, Executor, TimingReport, TwoGrads};
pub use model::{
    build_cnn, build_mlp, evaluate, init_uniform, kink_margin, loss_and_grad, Batch, EvalSummary,
    Layer, Model,
};
pub use optim::{
    combine_and_apply, cosine_lr, mix_gradients, rwp_step, sam_mix_step, sam_step, sgd_step, train,
    BatchPolicy, MetricsRecord, OptState, TrainAbort, TrainConfig, TrainError, TrainOutput,
    UpdateRule,
};
pub use params::{Filter, FilterPartition, FilterShape, ParamVector};
pub use perturb::{
    measured_radius, sam_perturbation, sample_rwp_noise, RwpNoiseSpec, SamSpec, DEGENERATE_GRAD_TOL,
};
pub use probes::{
    filter_norm_stats, filter_normalized_direction, flat_width, landscape_slice, radius_sweep,
    FilterNormStats, RadiusSweep, SlicePlan, SliceResult,
};
