//! Declarative experiment configs: flat `key = value` lines under
//! bracketed sections, strict unknown-key rejection, and a resolved echo
//! that re-parses to the identical experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rwp_core::{
    build_cnn, build_mlp, load_idx, make_blobs, make_spirals, BatchPolicy, Dataset, ExecMode,
    ExecPlan, Model, SlicePlan, Split, TrainConfig, UpdateRule,
};

use crate::error::{CliError, Result};

/// Section vocabulary; any key outside these lists is rejected with its
/// section and line number.
const SECTIONS: &[(&str, &[&str])] = &[
    ("model", &["kind", "hidden", "channels", "kernel"]),
    (
        "dataset",
        &[
            "kind",
            "classes",
            "dims",
            "train_size",
            "test_size",
            "spread",
            "noise",
            "seed",
            "train_images",
            "train_labels",
            "test_images",
            "test_labels",
        ],
    ),
    ("rule", &["variant", "rho", "gamma", "alpha", "policy"]),
    (
        "train",
        &[
            "epochs",
            "batch_size",
            "lr0",
            "momentum",
            "weight_decay",
            "seed_init",
            "seed_batches",
            "seed_noise",
        ],
    ),
    ("exec", &["mode", "workers"]),
    (
        "probe",
        &[
            "slice",
            "filter_norms",
            "radius",
            "slice_t_min",
            "slice_t_max",
            "slice_points",
            "direction_seed",
            "radius_gammas",
            "radius_samples",
            "radius_seed",
            "corrupt_seed",
        ],
    ),
    ("output", &["dir"]),
];

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Mlp { hidden: Vec<usize> },
    Cnn { channels: Vec<usize>, kernel: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        dims: usize,
        train_size: usize,
        test_size: usize,
        spread: f64,
        seed: u64,
    },
    /// Two interleaved arms; sizes are totals and must be even.
    Spirals {
        train_size: usize,
        test_size: usize,
        noise: f64,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Sgd,
    Sam,
    Rwp,
    SamMix,
    RwpPure,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Sgd => "sgd",
            Variant::Sam => "sam",
            Variant::Rwp => "rwp",
            Variant::SamMix => "sam_mix",
            Variant::RwpPure => "rwp_pure",
        }
    }

    fn from_name(s: &str) -> Result<Variant> {
        match s {
            "sgd" => Ok(Variant::Sgd),
            "sam" => Ok(Variant::Sam),
            "rwp" => Ok(Variant::Rwp),
            "sam_mix" => Ok(Variant::SamMix),
            "rwp_pure" => Ok(Variant::RwpPure),
            other => Err(CliError::Config(format!(
                "[rule] variant: expected one of sgd, sam, rwp, sam_mix, rwp_pure; got '{other}'"
            ))),
        }
    }
}

/// Update rule with every hyperparameter resolved to a concrete value.
/// The magnitude the active variant actually perturbs with (gamma for the
/// random rules, rho for the worst-case rules) must be explicit in the
/// config; the inactive one falls back to the documented default so the
/// bench command can still compare all rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleSpec {
    pub variant: Variant,
    pub rho: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Present only for the variants that take a batch policy (sam, rwp).
    pub policy: Option<BatchPolicy>,
}

impl RuleSpec {
    pub fn to_update_rule(&self) -> UpdateRule {
        match self.variant {
            Variant::Sgd => UpdateRule::Sgd,
            Variant::Sam => UpdateRule::Sam {
                rho: self.rho,
                policy: self.policy.unwrap_or(BatchPolicy::SameBatch),
            },
            Variant::Rwp => UpdateRule::Rwp {
                gamma: self.gamma,
                alpha: self.alpha,
                policy: self.policy.unwrap_or(BatchPolicy::DifferentBatch),
            },
            Variant::SamMix => UpdateRule::SamMix {
                rho: self.rho,
                alpha: self.alpha,
            },
            Variant::RwpPure => UpdateRule::RwpPure { gamma: self.gamma },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecSpec {
    pub mode: ExecMode,
    pub workers: usize,
}

impl ExecSpec {
    pub fn to_plan(&self) -> ExecPlan {
        match self.mode {
            ExecMode::Sequential => ExecPlan::sequential(),
            ExecMode::Parallel => ExecPlan::parallel(self.workers),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    pub slice: bool,
    pub filter_norms: bool,
    pub radius: bool,
    pub slice_t_min: f64,
    pub slice_t_max: f64,
    pub slice_points: usize,
    pub direction_seed: u64,
    pub radius_gammas: Vec<f64>,
    pub radius_samples: usize,
    pub radius_seed: u64,
    pub corrupt_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub rule: RuleSpec,
    pub train: TrainConfig,
    pub exec: ExecSpec,
    pub probe: ProbeSpec,
    pub out_dir: PathBuf,
}

/// Parsed `(section, key) -> value` entries plus which ones the builder
/// consumed, so keys that are legal in general but inapplicable to this
/// particular config are reported too.
struct KeyBag {
    entries: BTreeMap<(String, String), String>,
    used: BTreeSet<(String, String)>,
}

impl KeyBag {
    fn from_text(text: &str) -> Result<KeyBag> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            let n = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(CliError::Config(format!(
                        "line {n}: malformed section header '{line}'"
                    )));
                };
                let name = name.trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(CliError::Config(format!(
                        "line {n}: unknown section [{name}]"
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {n}: expected 'key = value', got '{line}'"
                )));
            };
            let Some(sec) = section.clone() else {
                return Err(CliError::Config(format!(
                    "line {n}: key before any [section] header"
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let allowed = SECTIONS
                .iter()
                .find(|(s, _)| *s == sec)
                .map(|(_, k)| *k)
                .unwrap();
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "line {n}: [{sec}] unknown key {key}"
                )));
            }
            if entries.insert((sec.clone(), key.clone()), value).is_some() {
                return Err(CliError::Config(format!(
                    "line {n}: [{sec}] duplicate key {key}"
                )));
            }
        }
        Ok(KeyBag {
            entries,
            used: BTreeSet::new(),
        })
    }

    fn take(&mut self, sec: &str, key: &str) -> Option<String> {
        let k = (sec.to_string(), key.to_string());
        self.used.insert(k.clone());
        self.entries.get(&k).cloned()
    }

    fn finish(self) -> Result<()> {
        for (sec, key) in self.entries.keys() {
            if !self.used.contains(&(sec.clone(), key.clone())) {
                return Err(CliError::Config(format!(
                    "[{sec}] {key}: not applicable to this configuration"
                )));
            }
        }
        Ok(())
    }
}

fn parse_one<T: FromStr>(sec: &str, key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("[{sec}] {key}: cannot parse '{raw}'")))
}

fn parse_list<T: FromStr>(sec: &str, key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|part| parse_one(sec, key, part))
        .collect()
}

fn take_or<T: FromStr>(bag: &mut KeyBag, sec: &str, key: &str, default: T) -> Result<T> {
    match bag.take(sec, key) {
        Some(raw) => parse_one(sec, key, &raw),
        None => Ok(default),
    }
}

fn require<T: FromStr>(bag: &mut KeyBag, sec: &str, key: &str) -> Result<T> {
    match bag.take(sec, key) {
        Some(raw) => parse_one(sec, key, &raw),
        None => Err(CliError::Config(format!(
            "[{sec}] {key}: missing required key"
        ))),
    }
}

fn require_for_variant<T: FromStr>(bag: &mut KeyBag, key: &str, variant: Variant) -> Result<T> {
    match bag.take("rule", key) {
        Some(raw) => parse_one("rule", key, &raw),
        None => Err(CliError::Config(format!(
            "[rule] {key}: required for variant {}",
            variant.name()
        ))),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut bag = KeyBag::from_text(text)?;

    let model = match require::<String>(&mut bag, "model", "kind")?.as_str() {
        "mlp" => {
            let raw = bag
                .take("model", "hidden")
                .ok_or_else(|| CliError::Config("[model] hidden: required for kind mlp".into()))?;
            ModelSpec::Mlp {
                hidden: parse_list("model", "hidden", &raw)?,
            }
        }
        "cnn" => {
            let raw = bag.take("model", "channels").ok_or_else(|| {
                CliError::Config("[model] channels: required for kind cnn".into())
            })?;
            ModelSpec::Cnn {
                channels: parse_list("model", "channels", &raw)?,
                kernel: take_or(&mut bag, "model", "kernel", 3)?,
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "[model] kind: expected mlp or cnn, got '{other}'"
            )))
        }
    };

    let dataset = match require::<String>(&mut bag, "dataset", "kind")?.as_str() {
        "blobs" => DatasetSpec::Blobs {
            classes: require(&mut bag, "dataset", "classes")?,
            dims: require(&mut bag, "dataset", "dims")?,
            train_size: require(&mut bag, "dataset", "train_size")?,
            test_size: require(&mut bag, "dataset", "test_size")?,
            spread: take_or(&mut bag, "dataset", "spread", 0.5)?,
            seed: take_or(&mut bag, "dataset", "seed", 11)?,
        },
        "spirals" => DatasetSpec::Spirals {
            train_size: require(&mut bag, "dataset", "train_size")?,
            test_size: require(&mut bag, "dataset", "test_size")?,
            noise: take_or(&mut bag, "dataset", "noise", 0.2)?,
            seed: take_or(&mut bag, "dataset", "seed", 11)?,
        },
        "idx" => DatasetSpec::Idx {
            train_images: require(&mut bag, "dataset", "train_images")?,
            train_labels: require(&mut bag, "dataset", "train_labels")?,
            test_images: require(&mut bag, "dataset", "test_images")?,
            test_labels: require(&mut bag, "dataset", "test_labels")?,
        },
        other => {
            return Err(CliError::Config(format!(
                "[dataset] kind: expected blobs, spirals, or idx; got '{other}'"
            )))
        }
    };

    let rule = {
        let variant = Variant::from_name(&require::<String>(&mut bag, "rule", "variant")?)?;
        let rho = match variant {
            Variant::Sam | Variant::SamMix => require_for_variant(&mut bag, "rho", variant)?,
            _ => take_or(&mut bag, "rule", "rho", 0.05)?,
        };
        let gamma = match variant {
            Variant::Rwp | Variant::RwpPure => require_for_variant(&mut bag, "gamma", variant)?,
            _ => take_or(&mut bag, "rule", "gamma", 0.01)?,
        };
        let alpha = take_or(&mut bag, "rule", "alpha", 0.5)?;
        let policy = match (variant, bag.take("rule", "policy")) {
            (Variant::Sam, None) => Some(BatchPolicy::SameBatch),
            (Variant::Rwp, None) => Some(BatchPolicy::DifferentBatch),
            (Variant::Sam | Variant::Rwp, Some(raw)) => Some(parse_policy(&raw)?),
            (_, None) => None,
            (v, Some(_)) => {
                return Err(CliError::Config(format!(
                    "[rule] policy: not applicable to variant {}",
                    v.name()
                )))
            }
        };
        RuleSpec {
            variant,
            rho,
            gamma,
            alpha,
            policy,
        }
    };

    let train = TrainConfig {
        epochs: require(&mut bag, "train", "epochs")?,
        batch_size: require(&mut bag, "train", "batch_size")?,
        lr0: require(&mut bag, "train", "lr0")?,
        momentum: take_or(&mut bag, "train", "momentum", 0.9)?,
        weight_decay: take_or(&mut bag, "train", "weight_decay", 0.001)?,
        seed_init: take_or(&mut bag, "train", "seed_init", 1)?,
        seed_batches: take_or(&mut bag, "train", "seed_batches", 2)?,
        seed_noise: take_or(&mut bag, "train", "seed_noise", 3)?,
    };

    let exec = ExecSpec {
        mode: match bag.take("exec", "mode").as_deref() {
            None | Some("sequential") => ExecMode::Sequential,
            Some("parallel") => ExecMode::Parallel,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "[exec] mode: expected sequential or parallel, got '{other}'"
                )))
            }
        },
        workers: take_or(&mut bag, "exec", "workers", 2)?,
    };

    let probe = ProbeSpec {
        slice: take_or(&mut bag, "probe", "slice", true)?,
        filter_norms: take_or(&mut bag, "probe", "filter_norms", true)?,
        radius: take_or(&mut bag, "probe", "radius", true)?,
        slice_t_min: take_or(&mut bag, "probe", "slice_t_min", -1.0)?,
        slice_t_max: take_or(&mut bag, "probe", "slice_t_max", 1.0)?,
        slice_points: take_or(&mut bag, "probe", "slice_points", 41)?,
        direction_seed: take_or(&mut bag, "probe", "direction_seed", 7)?,
        radius_gammas: match bag.take("probe", "radius_gammas") {
            Some(raw) => parse_list("probe", "radius_gammas", &raw)?,
            None => vec![0.005, 0.01, 0.02, 0.03],
        },
        radius_samples: take_or(&mut bag, "probe", "radius_samples", 1000)?,
        radius_seed: take_or(&mut bag, "probe", "radius_seed", 11)?,
        corrupt_seed: take_or(&mut bag, "probe", "corrupt_seed", 100)?,
    };

    let out_dir = take_or(&mut bag, "output", "dir", PathBuf::from("out"))?;

    bag.finish()?;
    let cfg = ExperimentConfig {
        model,
        dataset,
        rule,
        train,
        exec,
        probe,
        out_dir,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_policy(raw: &str) -> Result<BatchPolicy> {
    match raw {
        "same" => Ok(BatchPolicy::SameBatch),
        "different" => Ok(BatchPolicy::DifferentBatch),
        other => Err(CliError::Config(format!(
            "[rule] policy: expected same or different, got '{other}'"
        ))),
    }
}

fn policy_name(policy: BatchPolicy) -> &'static str {
    match policy {
        BatchPolicy::SameBatch => "same",
        BatchPolicy::DifferentBatch => "different",
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Every module precondition that can be checked without touching the
    /// filesystem or generating data.
    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelSpec::Mlp { hidden } => {
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(CliError::Config(
                        "[model] hidden: need at least one positive layer size".into(),
                    ));
                }
            }
            ModelSpec::Cnn { channels, kernel } => {
                if channels.is_empty() || channels.contains(&0) {
                    return Err(CliError::Config(
                        "[model] channels: need at least one positive channel count".into(),
                    ));
                }
                if *kernel == 0 {
                    return Err(CliError::Config("[model] kernel: must be positive".into()));
                }
                if !matches!(self.dataset, DatasetSpec::Idx { .. }) {
                    return Err(CliError::Config(
                        "[model] kind = cnn requires image-shaped data ([dataset] kind = idx)"
                            .into(),
                    ));
                }
            }
        }

        match &self.dataset {
            DatasetSpec::Blobs {
                classes,
                dims,
                train_size,
                test_size,
                spread,
                ..
            } => {
                if *classes == 0 || *dims == 0 {
                    return Err(CliError::Config(
                        "[dataset] classes and dims must be positive".into(),
                    ));
                }
                for (key, size) in [("train_size", train_size), ("test_size", test_size)] {
                    if *size == 0 || size % classes != 0 {
                        return Err(CliError::Config(format!(
                            "[dataset] {key}: must be a positive multiple of classes ({classes}), got {size}"
                        )));
                    }
                }
                if !(spread.is_finite() && *spread > 0.0) {
                    return Err(CliError::Config(format!(
                        "[dataset] spread: must be finite and > 0, got {spread}"
                    )));
                }
            }
            DatasetSpec::Spirals {
                train_size,
                test_size,
                noise,
                ..
            } => {
                for (key, size) in [("train_size", train_size), ("test_size", test_size)] {
                    if *size < 4 || size % 2 != 0 {
                        return Err(CliError::Config(format!(
                            "[dataset] {key}: spirals need an even total of at least 4 (two arms), got {size}"
                        )));
                    }
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(CliError::Config(format!(
                        "[dataset] noise: must be finite and >= 0, got {noise}"
                    )));
                }
            }
            DatasetSpec::Idx { .. } => {}
        }

        self.rule
            .to_update_rule()
            .validate()
            .map_err(|e| CliError::Config(format!("[rule] {e}")))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("[train] {e}")))?;

        if self.exec.mode == ExecMode::Parallel && self.exec.workers < 2 {
            return Err(CliError::Config(format!(
                "[exec] workers: parallel mode needs at least 2, got {}",
                self.exec.workers
            )));
        }

        SlicePlan::new(
            self.probe.slice_t_min,
            self.probe.slice_t_max,
            self.probe.slice_points,
            self.probe.direction_seed,
        )
        .map_err(|e| CliError::Config(format!("[probe] {e}")))?;
        if self.probe.radius_gammas.is_empty() {
            return Err(CliError::Config(
                "[probe] radius_gammas: list is empty".into(),
            ));
        }
        if let Some(bad) = self
            .probe
            .radius_gammas
            .iter()
            .find(|g| !(g.is_finite() && **g >= 0.0))
        {
            return Err(CliError::Config(format!(
                "[probe] radius_gammas: magnitudes must be finite and >= 0, got {bad}"
            )));
        }
        if self.probe.radius_samples < 100 {
            return Err(CliError::Config(format!(
                "[probe] radius_samples: need at least 100, got {}",
                self.probe.radius_samples
            )));
        }
        Ok(())
    }

    /// Train and test sets; generator test sets are drawn from seed + 1 so
    /// they are disjoint from training draws in distribution, and the test
    /// set is marked with the test split.
    pub fn build_datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.dataset {
            DatasetSpec::Blobs {
                classes,
                dims,
                train_size,
                test_size,
                spread,
                seed,
            } => (
                make_blobs(*classes, *dims, train_size / classes, *spread, *seed)?,
                make_blobs(*classes, *dims, test_size / classes, *spread, seed + 1)?,
            ),
            DatasetSpec::Spirals {
                train_size,
                test_size,
                noise,
                seed,
            } => (
                make_spirals(train_size / 2, *noise, *seed)?,
                make_spirals(test_size / 2, *noise, seed + 1)?,
            ),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                load_idx(train_images, train_labels)?,
                load_idx(test_images, test_labels)?,
            ),
        };
        let test = test.with_split(Split::Test);
        if test.feat_len() != train.feat_len() {
            return Err(CliError::Config(format!(
                "[dataset] train examples have {} features but test examples have {}",
                train.feat_len(),
                test.feat_len()
            )));
        }
        if test.class_count() > train.class_count() {
            return Err(CliError::Config(format!(
                "[dataset] test labels reach class {} but the train set implies {} classes",
                test.class_count() - 1,
                train.class_count()
            )));
        }
        Ok((train, test))
    }

    /// Input shape and class count come from the training data.
    pub fn build_model(&self, train: &Dataset) -> Result<Model> {
        match &self.model {
            ModelSpec::Mlp { hidden } => {
                Ok(build_mlp(hidden, train.feat_len(), train.class_count())?)
            }
            ModelSpec::Cnn { channels, kernel } => {
                let shape = train.shape();
                if shape.len() != 3 {
                    return Err(CliError::Config(format!(
                        "[model] kind = cnn requires channel-height-width data, got shape {shape:?}"
                    )));
                }
                Ok(build_cnn(
                    channels,
                    *kernel,
                    (shape[0], shape[1], shape[2]),
                    train.class_count(),
                )?)
            }
        }
    }

    /// Reseeds the three training streams from one base value so sweeps
    /// can vary a single integer per run.
    pub fn apply_seed_override(&mut self, seed: u64) {
        self.train.seed_init = seed;
        self.train.seed_batches = seed.wrapping_add(1);
        self.train.seed_noise = seed.wrapping_add(2);
    }

    /// Full config text with every default materialized. Parsing it back
    /// yields a config equal to `self`.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "[model]").unwrap();
        match &self.model {
            ModelSpec::Mlp { hidden } => {
                writeln!(w, "kind = mlp").unwrap();
                writeln!(w, "hidden = {}", join(hidden)).unwrap();
            }
            ModelSpec::Cnn { channels, kernel } => {
                writeln!(w, "kind = cnn").unwrap();
                writeln!(w, "channels = {}", join(channels)).unwrap();
                writeln!(w, "kernel = {kernel}").unwrap();
            }
        }
        writeln!(w, "\n[dataset]").unwrap();
        match &self.dataset {
            DatasetSpec::Blobs {
                classes,
                dims,
                train_size,
                test_size,
                spread,
                seed,
            } => {
                writeln!(w, "kind = blobs").unwrap();
                writeln!(w, "classes = {classes}").unwrap();
                writeln!(w, "dims = {dims}").unwrap();
                writeln!(w, "train_size = {train_size}").unwrap();
                writeln!(w, "test_size = {test_size}").unwrap();
                writeln!(w, "spread = {spread}").unwrap();
                writeln!(w, "seed = {seed}").unwrap();
            }
            DatasetSpec::Spirals {
                train_size,
                test_size,
                noise,
                seed,
            } => {
                writeln!(w, "kind = spirals").unwrap();
                writeln!(w, "train_size = {train_size}").unwrap();
                writeln!(w, "test_size = {test_size}").unwrap();
                writeln!(w, "noise = {noise}").unwrap();
                writeln!(w, "seed = {seed}").unwrap();
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                writeln!(w, "kind = idx").unwrap();
                writeln!(w, "train_images = {}", train_images.display()).unwrap();
                writeln!(w, "train_labels = {}", train_labels.display()).unwrap();
                writeln!(w, "test_images = {}", test_images.display()).unwrap();
                writeln!(w, "test_labels = {}", test_labels.display()).unwrap();
            }
        }
        writeln!(w, "\n[rule]").unwrap();
        writeln!(w, "variant = {}", self.rule.variant.name()).unwrap();
        writeln!(w, "rho = {}", self.rule.rho).unwrap();
        writeln!(w, "gamma = {}", self.rule.gamma).unwrap();
        writeln!(w, "alpha = {}", self.rule.alpha).unwrap();
        if let Some(policy) = self.rule.policy {
            writeln!(w, "policy = {}", policy_name(policy)).unwrap();
        }
        writeln!(w, "\n[train]").unwrap();
        writeln!(w, "epochs = {}", self.train.epochs).unwrap();
        writeln!(w, "batch_size = {}", self.train.batch_size).unwrap();
        writeln!(w, "lr0 = {}", self.train.lr0).unwrap();
        writeln!(w, "momentum = {}", self.train.momentum).unwrap();
        writeln!(w, "weight_decay = {}", self.train.weight_decay).unwrap();
        writeln!(w, "seed_init = {}", self.train.seed_init).unwrap();
        writeln!(w, "seed_batches = {}", self.train.seed_batches).unwrap();
        writeln!(w, "seed_noise = {}", self.train.seed_noise).unwrap();
        writeln!(w, "\n[exec]").unwrap();
        let mode = match self.exec.mode {
            ExecMode::Sequential => "sequential",
            ExecMode::Parallel => "parallel",
        };
        writeln!(w, "mode = {mode}").unwrap();
        writeln!(w, "workers = {}", self.exec.workers).unwrap();
        writeln!(w, "\n[probe]").unwrap();
        writeln!(w, "slice = {}", self.probe.slice).unwrap();
        writeln!(w, "filter_norms = {}", self.probe.filter_norms).unwrap();
        writeln!(w, "radius = {}", self.probe.radius).unwrap();
        writeln!(w, "slice_t_min = {}", self.probe.slice_t_min).unwrap();
        writeln!(w, "slice_t_max = {}", self.probe.slice_t_max).unwrap();
        writeln!(w, "slice_points = {}", self.probe.slice_points).unwrap();
        writeln!(w, "direction_seed = {}", self.probe.direction_seed).unwrap();
        writeln!(w, "radius_gammas = {}", join(&self.probe.radius_gammas)).unwrap();
        writeln!(w, "radius_samples = {}", self.probe.radius_samples).unwrap();
        writeln!(w, "radius_seed = {}", self.probe.radius_seed).unwrap();
        writeln!(w, "corrupt_seed = {}", self.probe.corrupt_seed).unwrap();
        writeln!(w, "\n[output]").unwrap();
        writeln!(w, "dir = {}", self.out_dir.display()).unwrap();
        s
    }
}
