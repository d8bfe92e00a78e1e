//! Diagnostics over trained weights: 1-D loss-landscape slices along
//! filter-normalized random directions, filter-norm distribution
//! statistics, and perturbation-radius sweeps.
//!
//! Everything here is read-only over model, parameters, and data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::model::{evaluate, Model};
use crate::params::{FilterPartition, ParamVector};
use crate::perturb::{measured_radius, RwpNoiseSpec};

/// Abscissa grid and direction seed for a landscape slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicePlan {
    pub t_min: f64,
    pub t_max: f64,
    pub n_points: usize,
    pub direction_seed: u64,
}

impl SlicePlan {
    pub fn new(t_min: f64, t_max: f64, n_points: usize, direction_seed: u64) -> Result<SlicePlan> {
        if !(t_min < t_max) {
            return Err(CoreError::Config(format!(
                "slice range [{t_min}, {t_max}] must be increasing"
            )));
        }
        if n_points < 2 {
            return Err(CoreError::Config(format!(
                "slice needs at least 2 points, got {n_points}"
            )));
        }
        Ok(SlicePlan {
            t_min,
            t_max,
            n_points,
            direction_seed,
        })
    }
}

/// Loss and accuracy sampled along one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceResult {
    pub ts: Vec<f64>,
    pub losses: Vec<f64>,
    pub accuracies: Vec<f64>,
}

/// Random Gaussian direction rescaled per filter so each filter block has
/// the same norm as the corresponding weight block; non-filter entries
/// (and blocks of zero-norm filters) are zero.
pub fn filter_normalized_direction(
    params: &ParamVector,
    partition: &FilterPartition,
    seed: u64,
) -> Result<ParamVector> {
    if partition.covered_len() != params.len() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("partition covering {} parameters", partition.covered_len()),
            got: format!("{} parameters", params.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = ParamVector::zeros(params.len());
    for filter in partition.filters() {
        let mut target_sq = 0.0;
        let mut drawn_sq = 0.0;
        for i in filter.range.clone() {
            target_sq += params[i] * params[i];
            // Draw unconditionally so the stream position is value-free.
            let z: f64 = StandardNormal.sample(&mut rng);
            dir[i] = z;
            drawn_sq += z * z;
        }
        if target_sq == 0.0 || drawn_sq == 0.0 {
            for i in filter.range.clone() {
                dir[i] = 0.0;
            }
        } else {
            let scale = (target_sq / drawn_sq).sqrt();
            for i in filter.range.clone() {
                dir[i] *= scale;
            }
        }
    }
    Ok(dir)
}

/// Evaluates `eval` at `n_points` evenly spaced abscissae.
pub(crate) fn slice_curve<F: FnMut(f64) -> (f64, f64)>(
    plan: &SlicePlan,
    mut eval: F,
) -> SliceResult {
    let n = plan.n_points;
    let mut ts = Vec::with_capacity(n);
    let mut losses = Vec::with_capacity(n);
    let mut accuracies = Vec::with_capacity(n);
    for i in 0..n {
        let t = plan.t_min + (plan.t_max - plan.t_min) * i as f64 / (n - 1) as f64;
        let (loss, acc) = eval(t);
        ts.push(t);
        losses.push(loss);
        accuracies.push(acc);
    }
    SliceResult {
        ts,
        losses,
        accuracies,
    }
}

/// Loss/accuracy of `params + t*d` over the plan's grid, with d the
/// filter-normalized direction for the plan's seed. `params` is never
/// modified; t = 0 reuses the unshifted parameters so that point is
/// bitwise equal to a direct evaluation.
pub fn landscape_slice(
    model: &Model,
    params: &ParamVector,
    dataset: &Dataset,
    plan: &SlicePlan,
) -> Result<SliceResult> {
    let dir = filter_normalized_direction(params, model.partition(), plan.direction_seed)?;
    let batch = dataset.to_batch();
    let mut first_err = None;
    let result = slice_curve(plan, |t| {
        let summary = if t == 0.0 {
            evaluate(model, params, &batch)
        } else {
            let mut shifted = params.clone();
            shifted.add_scaled(&dir, t);
            evaluate(model, &shifted, &batch)
        };
        match summary {
            Ok(s) => (s.mean_loss, s.accuracy),
            Err(e) => {
                // Shape errors only; overflow is already +inf in evaluate.
                if first_err.is_none() {
                    first_err = Some(e);
                }
                (f64::NAN, f64::NAN)
            }
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

/// Width of the contiguous run of slice points around t = 0 whose loss
/// stays within +1.0 of the center loss, counted as points times grid
/// step. Returns 0 when the center loss is not finite.
pub fn flat_width(slice: &SliceResult) -> f64 {
    let n = slice.ts.len();
    if n < 2 {
        return 0.0;
    }
    let step = slice.ts[1] - slice.ts[0];
    let center = (0..n)
        .min_by(|&a, &b| {
            slice.ts[a]
                .abs()
                .partial_cmp(&slice.ts[b].abs())
                .expect("slice abscissae must be finite")
        })
        .unwrap();
    if !slice.losses[center].is_finite() {
        return 0.0;
    }
    let threshold = slice.losses[center] + 1.0;
    let mut lo = center;
    while lo > 0 && slice.losses[lo - 1] <= threshold {
        lo -= 1;
    }
    let mut hi = center;
    while hi + 1 < n && slice.losses[hi + 1] <= threshold {
        hi += 1;
    }
    (hi - lo + 1) as f64 * step
}

/// Summary statistics of the per-filter norm distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterNormStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// std / mean; 0 when the mean is 0.
    pub cv: f64,
    pub mean_square: f64,
    /// Counts over 30 equal bins spanning [0, max_norm * 1.01].
    pub histogram: Vec<usize>,
    pub histogram_upper: f64,
}

pub const HISTOGRAM_BINS: usize = 30;

pub fn filter_norm_stats(
    params: &ParamVector,
    partition: &FilterPartition,
) -> Result<FilterNormStats> {
    if partition.covered_len() != params.len() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("partition covering {} parameters", partition.covered_len()),
            got: format!("{} parameters", params.len()),
        });
    }
    if partition.filter_count() == 0 {
        return Err(CoreError::Config("partition has no filters".into()));
    }
    let norms = partition.filter_norms(params);
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let mean_square = norms.iter().map(|v| v * v).sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let cv = if mean == 0.0 { 0.0 } else { std / mean };

    let max = norms.iter().cloned().fold(0.0, f64::max);
    let upper = max * 1.01;
    let mut histogram = vec![0usize; HISTOGRAM_BINS];
    for &v in &norms {
        let bin = if upper > 0.0 {
            ((v / upper * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        histogram[bin] += 1;
    }
    Ok(FilterNormStats {
        mean,
        std,
        cv,
        mean_square,
        histogram,
        histogram_upper: upper,
    })
}

/// Mean perturbation radius per magnitude, plus the weight norm for
/// context.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSweep {
    /// (gamma, mean noise norm) pairs, in input order.
    pub points: Vec<(f64, f64)>,
    pub weight_norm: f64,
}

pub fn radius_sweep(
    params: &ParamVector,
    partition: &FilterPartition,
    gammas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<RadiusSweep> {
    if n_samples < 100 {
        return Err(CoreError::Config(format!(
            "radius sweep needs at least 100 samples, got {n_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let spec = RwpNoiseSpec::new(gamma, seed)?;
        let radius = measured_radius(params, partition, &spec, n_samples, &mut rng)?;
        points.push((gamma, radius));
    }
    Ok(RadiusSweep {
        points,
        weight_norm: params.l2_norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::{build_mlp, init_uniform};
    use crate::params::{Filter, FilterShape};

    #[test]
    fn direction_norms_match_per_filter() {
        let model = build_mlp(&[8, 8], 4, 3).unwrap();
        let params = init_uniform(&model, 5);
        let dir = filter_normalized_direction(&params, model.partition(), 9).unwrap();
        for f in model.partition().filters() {
            let wn: f64 = f
                .range
                .clone()
                .map(|i| params[i] * params[i])
                .sum::<f64>()
                .sqrt();
            let dn: f64 = f.range.clone().map(|i| dir[i] * dir[i]).sum::<f64>().sqrt();
            assert!(
                (dn - wn).abs() <= 1e-12 * wn.max(1e-300),
                "filter {:?}",
                f.range
            );
        }
        for r in model.partition().non_filter() {
            for i in r.clone() {
                assert_eq!(dir[i], 0.0);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_direction() {
        let model = build_mlp(&[4], 3, 2).unwrap();
        let params = ParamVector::zeros(model.param_len());
        let dir = filter_normalized_direction(&params, model.partition(), 3).unwrap();
        assert!(dir.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direction_is_seed_deterministic() {
        let model = build_mlp(&[6], 4, 2).unwrap();
        let params = init_uniform(&model, 2);
        let a = filter_normalized_direction(&params, model.partition(), 11).unwrap();
        let b = filter_normalized_direction(&params, model.partition(), 11).unwrap();
        let c = filter_normalized_direction(&params, model.partition(), 12).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(!a.bitwise_eq(&c));
    }

    #[test]
    fn slice_center_is_bitwise_direct_evaluation() {
        let model = build_mlp(&[8], 2, 2).unwrap();
        let params = init_uniform(&model, 4);
        let data = make_blobs(2, 2, 20, 0.4, 6).unwrap();
        let plan = SlicePlan::new(-1.0, 1.0, 5, 7).unwrap();
        let before = params.clone();
        let slice = landscape_slice(&model, &params, &data, &plan).unwrap();
        assert!(params.bitwise_eq(&before), "params must not change");
        let direct = evaluate(&model, &params, &data.to_batch()).unwrap();
        assert_eq!(slice.ts[2], 0.0);
        assert_eq!(slice.losses[2].to_bits(), direct.mean_loss.to_bits());
        assert_eq!(slice.accuracies[2], direct.accuracy);
    }

    #[test]
    fn quadratic_toy_slice_reproduces_parabola() {
        // One parameter w starting at 0, direction 1: loss(t) = (t - 2)^2.
        let plan = SlicePlan::new(-1.0, 5.0, 25, 0).unwrap();
        let slice = slice_curve(&plan, |t| ((t - 2.0) * (t - 2.0), 1.0));
        for (i, &t) in slice.ts.iter().enumerate() {
            assert_eq!(slice.losses[i].to_bits(), ((t - 2.0) * (t - 2.0)).to_bits());
        }
    }

    #[test]
    fn flat_width_matches_dense_grid_oracle() {
        // loss(t) = (1.3 t)^2 has its +1.0 threshold at |t| = 1/1.3, which
        // avoids both grids' points.
        let eval = |t: f64| ((1.3 * t) * (1.3 * t), 1.0);
        let coarse_plan = SlicePlan::new(-2.0, 2.0, 41, 0).unwrap();
        let dense_plan = SlicePlan::new(-2.0, 2.0, 401, 0).unwrap();
        let coarse = flat_width(&slice_curve(&coarse_plan, eval));
        let dense = flat_width(&slice_curve(&dense_plan, eval));
        let coarse_step = 4.0 / 40.0;
        assert!(
            (coarse - dense).abs() <= coarse_step,
            "coarse {coarse} dense {dense}"
        );
        assert!((dense - 2.0 / 1.3).abs() < 0.02);
    }

    #[test]
    fn flat_width_of_flat_curve_spans_grid() {
        let plan = SlicePlan::new(-1.0, 1.0, 21, 0).unwrap();
        let slice = slice_curve(&plan, |_| (0.5, 1.0));
        // All 21 points qualify: 21 * 0.1 grid step.
        assert!((flat_width(&slice) - 2.1).abs() < 1e-12);
    }

    #[test]
    fn norm_stats_three_four_five() {
        let params = ParamVector::from_vec(vec![3.0, 4.0, 5.0]);
        let partition = FilterPartition::new(
            (0..3)
                .map(|i| Filter {
                    range: i..i + 1,
                    shape: FilterShape::Dense { fan_in: 1 },
                })
                .collect(),
            vec![],
        );
        let stats = filter_norm_stats(&params, &partition).unwrap();
        assert!((stats.mean - 4.0).abs() < 1e-15);
        assert!((stats.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((stats.std - 0.8165).abs() < 1e-4);
        assert!((stats.cv - stats.std / 4.0).abs() < 1e-15);
        assert_eq!(stats.histogram.iter().sum::<usize>(), 3);
    }

    #[test]
    fn equal_norms_give_zero_cv() {
        let params = ParamVector::from_vec(vec![2.0, 0.0, 0.0, 2.0]);
        let partition = FilterPartition::new(
            vec![
                Filter {
                    range: 0..2,
                    shape: FilterShape::Dense { fan_in: 2 },
                },
                Filter {
                    range: 2..4,
                    shape: FilterShape::Dense { fan_in: 2 },
                },
            ],
            vec![],
        );
        let stats = filter_norm_stats(&params, &partition).unwrap();
        assert_eq!(stats.cv, 0.0);
    }

    #[test]
    fn init_mean_square_is_near_one_third() {
        let model = build_mlp(&[32, 32], 16, 10).unwrap();
        let params = init_uniform(&model, 123);
        let stats = filter_norm_stats(&params, model.partition()).unwrap();
        assert!(
            (stats.mean_square - 1.0 / 3.0).abs() < 0.05,
            "{}",
            stats.mean_square
        );
    }

    #[test]
    fn histogram_counts_sum_to_filter_count() {
        let model = build_mlp(&[16, 8], 6, 4).unwrap();
        let params = init_uniform(&model, 8);
        let stats = filter_norm_stats(&params, model.partition()).unwrap();
        assert_eq!(
            stats.histogram.iter().sum::<usize>(),
            model.partition().filter_count()
        );
        assert_eq!(stats.histogram.len(), HISTOGRAM_BINS);
    }

    #[test]
    fn radius_sweep_is_monotone_and_doubles() {
        let model = build_mlp(&[8, 8], 4, 3).unwrap();
        let params = init_uniform(&model, 3);
        let sweep = radius_sweep(
            &params,
            model.partition(),
            &[0.005, 0.01, 0.02, 0.03],
            10_000,
            5,
        )
        .unwrap();
        for w in sweep.points.windows(2) {
            assert!(w[1].1 > w[0].1);
        }
        let ratio = sweep.points[2].1 / sweep.points[1].1;
        assert!((ratio - 2.0).abs() < 0.06, "ratio {ratio}");
        assert!((sweep.weight_norm - params.l2_norm()).abs() < 1e-15);
    }

    #[test]
    fn radius_sweep_rejects_small_samples() {
        let model = build_mlp(&[4], 2, 2).unwrap();
        let params = init_uniform(&model, 1);
        assert!(radius_sweep(&params, model.partition(), &[0.01], 99, 0).is_err());
    }
}
