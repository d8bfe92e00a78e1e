//! Experiment runner over the perturbation training toolkit: declarative
//! configs ([`config`]), the train / probe / bench / corrupt-eval commands
//! and their CSV artifacts ([`commands`]).

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_bench, cmd_corrupt_eval, cmd_probe, cmd_train, ProbeName};
pub use config::{
    load_config, parse_config, DatasetSpec, ExecSpec, ExperimentConfig, ModelSpec, ProbeSpec,
    RuleSpec, Variant,
};
pub use error::{CliError, Result};
