//! The four experiment commands and the CSV artifacts they write.
//!
//! Every artifact is deterministic given the config (wall-clock times go
//! to their own files, timing.csv and bench.csv, so metrics.csv and the
//! probe outputs are byte-identical across reruns).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rwp_core::{
    benchmark_step_time, corrupt, evaluate, filter_norm_stats, flat_width, landscape_slice,
    load_checkpoint, radius_sweep, save_checkpoint, train, BatchPolicy, CorruptionKind,
    CorruptionSpec, Executor, MetricsRecord, ParamVector, SlicePlan, TrainError, UpdateRule,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProbeName {
    Slice,
    FilterNorms,
    Radius,
}

/// Trains per the config and writes metrics.csv, timing.csv, resolved.cfg,
/// and final.ckpt. A numeric abort still writes the completed epochs and
/// the last finite parameters (last_good.ckpt) before exiting nonzero.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.build_datasets()?;
    let model = cfg.build_model(&train_set)?;
    let rule = cfg.rule.to_update_rule();
    let executor = Executor::new(cfg.exec.to_plan())?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("resolved.cfg"), cfg.resolved_text())?;

    match train(&model, &rule, &cfg.train, &train_set, &test_set, &executor) {
        Ok(out) => {
            write_metrics(&cfg.out_dir, &out.metrics)?;
            save_checkpoint(&cfg.out_dir.join("final.ckpt"), &out.params)?;
            match out.metrics.last() {
                Some(last) => println!(
                    "trained {} epochs; final train loss {:.4}, test accuracy {:.4}",
                    out.metrics.len(),
                    last.train_loss,
                    last.test_accuracy
                ),
                None => println!("0 epochs requested; wrote the initial parameters"),
            }
            Ok(())
        }
        Err(TrainError::Invalid(e)) => Err(CliError::Config(e.to_string())),
        Err(TrainError::Aborted(abort)) => {
            write_metrics(&cfg.out_dir, &abort.metrics)?;
            save_checkpoint(&cfg.out_dir.join("last_good.ckpt"), &abort.last_good)?;
            Err(CliError::Numeric(format!(
                "{}; last-good parameters written to last_good.ckpt",
                abort.error
            )))
        }
    }
}

fn write_metrics(out: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut metrics =
        String::from("epoch,train_loss,test_accuracy,learning_rate,degenerate_gradient_count\n");
    let mut timing = String::from("epoch,epoch_wall_ns\n");
    for r in records {
        writeln!(
            metrics,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.test_accuracy, r.learning_rate, r.degenerate_gradient_count
        )
        .unwrap();
        writeln!(timing, "{},{}", r.epoch, r.epoch_wall_ns).unwrap();
    }
    fs::write(out.join("metrics.csv"), metrics)?;
    fs::write(out.join("timing.csv"), timing)?;
    Ok(())
}

fn check_param_count(checkpoint: &Path, params: &ParamVector, expected: usize) -> Result<()> {
    if params.len() != expected {
        return Err(CliError::Config(format!(
            "checkpoint {} has {} parameters but the configured model expects {}",
            checkpoint.display(),
            params.len(),
            expected
        )));
    }
    Ok(())
}

/// Runs the probes selected by `which` (or by the config toggles when
/// `which` is None) against a checkpoint. The slice is evaluated on the
/// training set; filter norms and the radius sweep need only the params.
pub fn cmd_probe(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    which: Option<ProbeName>,
) -> Result<()> {
    cfg.validate()?;
    let params = load_checkpoint(checkpoint)?;
    let (train_set, _test_set) = cfg.build_datasets()?;
    let model = cfg.build_model(&train_set)?;
    check_param_count(checkpoint, &params, model.param_len())?;
    let selected = |p: ProbeName| match which {
        Some(w) => w == p,
        None => match p {
            ProbeName::Slice => cfg.probe.slice,
            ProbeName::FilterNorms => cfg.probe.filter_norms,
            ProbeName::Radius => cfg.probe.radius,
        },
    };
    fs::create_dir_all(&cfg.out_dir)?;

    if selected(ProbeName::Slice) {
        let plan = SlicePlan::new(
            cfg.probe.slice_t_min,
            cfg.probe.slice_t_max,
            cfg.probe.slice_points,
            cfg.probe.direction_seed,
        )?;
        let slice = landscape_slice(&model, &params, &train_set, &plan)?;
        let mut s = String::from("t,loss,accuracy\n");
        for i in 0..slice.ts.len() {
            writeln!(
                s,
                "{},{},{}",
                slice.ts[i], slice.losses[i], slice.accuracies[i]
            )
            .unwrap();
        }
        fs::write(cfg.out_dir.join("slice.csv"), s)?;
        println!(
            "slice: flat width {:.4} over [{}, {}]",
            flat_width(&slice),
            cfg.probe.slice_t_min,
            cfg.probe.slice_t_max
        );
    }
    if selected(ProbeName::FilterNorms) {
        let stats = filter_norm_stats(&params, model.partition())?;
        let mut s = String::from("field,value\n");
        writeln!(s, "mean,{}", stats.mean).unwrap();
        writeln!(s, "std,{}", stats.std).unwrap();
        writeln!(s, "cv,{}", stats.cv).unwrap();
        writeln!(s, "mean_square,{}", stats.mean_square).unwrap();
        writeln!(s, "filter_count,{}", model.partition().filter_count()).unwrap();
        writeln!(s, "histogram_upper,{}", stats.histogram_upper).unwrap();
        for (i, count) in stats.histogram.iter().enumerate() {
            writeln!(s, "bin_{i:02},{count}").unwrap();
        }
        fs::write(cfg.out_dir.join("filternorms.csv"), s)?;
        println!("filter norms: mean {:.4}, cv {:.4}", stats.mean, stats.cv);
    }
    if selected(ProbeName::Radius) {
        let sweep = radius_sweep(
            &params,
            model.partition(),
            &cfg.probe.radius_gammas,
            cfg.probe.radius_samples,
            cfg.probe.radius_seed,
        )?;
        let mut s = String::from("gamma,mean_radius,weight_norm\n");
        for (gamma, radius) in &sweep.points {
            writeln!(s, "{},{},{}", gamma, radius, sweep.weight_norm).unwrap();
        }
        fs::write(cfg.out_dir.join("radius.csv"), s)?;
        println!(
            "radius sweep over {} magnitudes; weight norm {:.4}",
            sweep.points.len(),
            sweep.weight_norm
        );
    }
    Ok(())
}

/// Benchmarks the three headline rules (plain descent, worst-case, random)
/// and writes bench.csv: per-rule medians plus the cross-rule ratios.
pub fn cmd_bench(cfg: &ExperimentConfig, iterations: usize) -> Result<()> {
    cfg.validate()?;
    let (train_set, _test_set) = cfg.build_datasets()?;
    let model = cfg.build_model(&train_set)?;
    // Canonical batch policies: the worst-case rule shares the batch, the
    // random rule draws an independent one. Magnitudes come from the
    // config (explicit or documented defaults).
    let rules = [
        UpdateRule::Sgd,
        UpdateRule::Sam {
            rho: cfg.rule.rho,
            policy: BatchPolicy::SameBatch,
        },
        UpdateRule::Rwp {
            gamma: cfg.rule.gamma,
            alpha: cfg.rule.alpha,
            policy: BatchPolicy::DifferentBatch,
        },
    ];
    let reports = benchmark_step_time(
        &model,
        &train_set,
        &rules,
        &cfg.train,
        iterations,
        cfg.exec.to_plan(),
    )?;

    let mut s = String::from("rule,sequential_ns,parallel_ns,speedup,iterations\n");
    for (name, r) in &reports {
        writeln!(
            s,
            "{},{},{},{},{}",
            name, r.sequential_ns, r.parallel_ns, r.speedup, r.iterations
        )
        .unwrap();
        println!(
            "{name}: sequential {} ns, parallel {} ns",
            r.sequential_ns, r.parallel_ns
        );
    }
    let report = |name: &str| reports.iter().find(|(n, _)| n == name).map(|(_, r)| r);
    if let (Some(sgd), Some(sam), Some(rwp)) = (report("sgd"), report("sam"), report("rwp")) {
        let ratios = [
            (
                "ratio_sam_sgd",
                sam.sequential_ns as f64 / sgd.sequential_ns as f64,
            ),
            (
                "ratio_rwp_seq_sam",
                rwp.sequential_ns as f64 / sam.sequential_ns as f64,
            ),
            (
                "ratio_rwp_par_sam",
                rwp.parallel_ns as f64 / sam.sequential_ns as f64,
            ),
        ];
        for (name, v) in ratios {
            writeln!(s, "{name},,,{v},{iterations}").unwrap();
            println!("{name} = {v:.4}");
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("bench.csv"), s)?;
    Ok(())
}

/// Evaluates a checkpoint on corrupted copies of the test set and writes
/// corrupt.csv: one row per (kind, severity), a warning row for each kind
/// the data shape cannot support, and a severity-5 summary row.
pub fn cmd_corrupt_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    cfg.validate()?;
    let params = load_checkpoint(checkpoint)?;
    let (train_set, test_set) = cfg.build_datasets()?;
    let model = cfg.build_model(&train_set)?;
    check_param_count(checkpoint, &params, model.param_len())?;
    let clean = evaluate(&model, &params, &test_set.to_batch())?.accuracy;
    let image_shaped = test_set.shape().len() == 3;

    let mut s = String::from("kind,severity,accuracy,clean_accuracy,note\n");
    let mut severity5 = Vec::new();
    for (kind_idx, kind) in CorruptionKind::ALL.iter().enumerate() {
        if kind.needs_image_shape() && !image_shaped {
            writeln!(
                s,
                "{},0,,{},skipped: dataset is not image-shaped",
                kind.name(),
                clean
            )
            .unwrap();
            continue;
        }
        for severity in 1..=5u8 {
            let spec = CorruptionSpec::new(*kind, severity)?;
            let seed = cfg.probe.corrupt_seed + (kind_idx as u64) * 16 + severity as u64;
            let corrupted = corrupt(&test_set, &spec, seed)?;
            let acc = evaluate(&model, &params, &corrupted.to_batch())?.accuracy;
            writeln!(s, "{},{},{},{},", kind.name(), severity, acc, clean).unwrap();
            if severity == 5 {
                severity5.push(acc);
            }
        }
    }
    let avg5 = severity5.iter().sum::<f64>() / severity5.len() as f64;
    writeln!(
        s,
        "all,5,{},{},mean over {} kinds",
        avg5,
        clean,
        severity5.len()
    )
    .unwrap();
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("corrupt.csv"), s)?;
    println!("clean accuracy {clean:.4}; severity-5 mean {avg5:.4}");
    Ok(())
}
