//! Weight perturbations: filter-wise random Gaussian noise and first-order
//! worst-case (gradient-aligned) offsets, plus empirical radius measurement.
//!
//! The random noise draws per-entry standard normals for every filter weight
//! regardless of the current parameter values, so the RNG stream position
//! depends only on the partition. Entries whose standard deviation is zero
//! are written as literal 0.0.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::params::{FilterPartition, ParamVector};

/// Gradient norms at or below this are treated as degenerate for the
/// worst-case perturbation (the normalization in it is undefined at zero).
pub const DEGENERATE_GRAD_TOL: f64 = 1e-12;

/// Magnitude and stream seed for filter-wise random noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwpNoiseSpec {
    /// Noise magnitude multiplier; per-filter std is `gamma * ||w_k||`.
    pub gamma: f64,
    /// Seed of the dedicated noise RNG stream.
    pub seed: u64,
}

impl RwpNoiseSpec {
    pub fn new(gamma: f64, seed: u64) -> Result<RwpNoiseSpec> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(CoreError::Config(format!(
                "noise magnitude gamma must be finite and >= 0, got {gamma}"
            )));
        }
        Ok(RwpNoiseSpec { gamma, seed })
    }
}

/// Norm-ball radius for the worst-case perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamSpec {
    pub rho: f64,
}

impl SamSpec {
    pub fn new(rho: f64) -> Result<SamSpec> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(CoreError::Config(format!(
                "perturbation radius rho must be finite and > 0, got {rho}"
            )));
        }
        Ok(SamSpec { rho })
    }
}

fn check_partition(params: &ParamVector, partition: &FilterPartition) -> Result<()> {
    if partition.covered_len() != params.len() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("partition covering {} parameters", partition.covered_len()),
            got: format!("{} parameters", params.len()),
        });
    }
    Ok(())
}

/// Samples filter-wise Gaussian noise: each weight entry of filter k is
/// i.i.d. N(0, (gamma * ||w_k||)^2); non-filter entries are exactly zero.
pub fn sample_rwp_noise(
    params: &ParamVector,
    partition: &FilterPartition,
    spec: &RwpNoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ParamVector> {
    check_partition(params, partition)?;
    let mut noise = ParamVector::zeros(params.len());
    for filter in partition.filters() {
        let mut sq = 0.0;
        for i in filter.range.clone() {
            sq += params[i] * params[i];
        }
        let sigma = spec.gamma * sq.sqrt();
        for i in filter.range.clone() {
            // Always draw, so the stream position is value-independent.
            let z: f64 = StandardNormal.sample(rng);
            noise[i] = if sigma == 0.0 { 0.0 } else { sigma * z };
        }
    }
    Ok(noise)
}

/// First-order worst-case perturbation rho * grad / ||grad||.
///
/// Gradients with norm <= [`DEGENERATE_GRAD_TOL`] are rejected; the caller
/// decides whether to skip the perturbation for that step.
pub fn sam_perturbation(grad: &ParamVector, spec: &SamSpec) -> Result<ParamVector> {
    let norm = grad.l2_norm();
    if !(norm > DEGENERATE_GRAD_TOL) {
        return Err(CoreError::DegenerateGradient { norm });
    }
    let scale = spec.rho / norm;
    let mut eps = grad.clone();
    eps.scale(scale);
    Ok(eps)
}

/// Mean Euclidean norm of `n_samples` independent noise draws.
pub fn measured_radius(
    params: &ParamVector,
    partition: &FilterPartition,
    spec: &RwpNoiseSpec,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(CoreError::Config("radius needs at least 1 sample".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_samples {
        total += sample_rwp_noise(params, partition, spec, rng)?.l2_norm();
    }
    Ok(total / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Filter, FilterShape};
    use rand::SeedableRng;

    /// One filter spanning all of `params`, plus no bias block.
    fn single_filter(d: usize) -> FilterPartition {
        FilterPartition::new(
            vec![Filter {
                range: 0..d,
                shape: FilterShape::Dense { fan_in: d },
            }],
            vec![],
        )
    }

    /// One d-entry filter followed by a non-filter tail of `tail` entries.
    fn filter_with_tail(d: usize, tail: usize) -> FilterPartition {
        FilterPartition::new(
            vec![Filter {
                range: 0..d,
                shape: FilterShape::Dense { fan_in: d },
            }],
            vec![d..d + tail],
        )
    }

    #[test]
    fn gamma_zero_noise_is_zero() {
        let params = ParamVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.25]);
        let part = filter_with_tail(3, 2);
        let spec = RwpNoiseSpec::new(0.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = sample_rwp_noise(&params, &part, &spec, &mut rng).unwrap();
        assert!(noise.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_norm_filter_gets_zero_noise_and_tail_stays_zero() {
        // Filter 0 is all-zero, filter 1 is not; tail is non-filter.
        let params = ParamVector::from_vec(vec![0.0, 0.0, 1.0, 2.0, 9.0]);
        let part = FilterPartition::new(
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
            vec![4..5],
        );
        let spec = RwpNoiseSpec::new(0.05, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = sample_rwp_noise(&params, &part, &spec, &mut rng).unwrap();
        assert_eq!(noise[0], 0.0);
        assert_eq!(noise[1], 0.0);
        assert!(noise[2] != 0.0 || noise[3] != 0.0);
        assert_eq!(noise[4], 0.0);
    }

    #[test]
    fn noise_is_deterministic_per_rng_state() {
        let params = ParamVector::from_vec(vec![0.3, -0.4, 0.1, 0.9]);
        let part = single_filter(4);
        let spec = RwpNoiseSpec::new(0.01, 0).unwrap();
        let a = sample_rwp_noise(&params, &part, &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_rwp_noise(&params, &part, &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn per_entry_std_matches_gamma_times_norm() {
        // Filter [1,1,1,1] has norm 2; gamma 0.01 gives per-entry std 0.02.
        let params = ParamVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let part = single_filter(4);
        let spec = RwpNoiseSpec::new(0.01, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n_samples = 100_000;
        let mut sq_sum = 0.0;
        for _ in 0..n_samples {
            let noise = sample_rwp_noise(&params, &part, &spec, &mut rng).unwrap();
            for &v in noise.as_slice() {
                sq_sum += v * v;
            }
        }
        let std = (sq_sum / (4 * n_samples) as f64).sqrt();
        assert!((std - 0.02).abs() / 0.02 < 0.02, "std {std}");
    }

    #[test]
    fn measured_radius_matches_chi_mean() {
        // For a d=4 filter with sigma = gamma*||w||, ||noise|| follows a
        // scaled chi distribution with mean sigma * (3/4) * sqrt(2*pi).
        let params = ParamVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let part = single_filter(4);
        let spec = RwpNoiseSpec::new(0.02, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mean = measured_radius(&params, &part, &spec, 20_000, &mut rng).unwrap();
        let expected = 0.02 * 1.8799712059732503;
        assert!((mean - expected).abs() / expected < 0.015, "mean {mean}");
    }

    #[test]
    fn doubling_gamma_doubles_radius() {
        let params = ParamVector::from_vec(vec![0.2, -0.7, 0.4, 0.5, -0.1, 0.3]);
        let part = FilterPartition::new(
            vec![
                Filter {
                    range: 0..3,
                    shape: FilterShape::Dense { fan_in: 3 },
                },
                Filter {
                    range: 3..6,
                    shape: FilterShape::Dense { fan_in: 3 },
                },
            ],
            vec![],
        );
        let lo = RwpNoiseSpec::new(0.01, 0).unwrap();
        let hi = RwpNoiseSpec::new(0.02, 0).unwrap();
        let r_lo = measured_radius(
            &params,
            &part,
            &lo,
            10_000,
            &mut ChaCha8Rng::seed_from_u64(31),
        )
        .unwrap();
        let r_hi = measured_radius(
            &params,
            &part,
            &hi,
            10_000,
            &mut ChaCha8Rng::seed_from_u64(32),
        )
        .unwrap();
        let ratio = r_hi / r_lo;
        assert!((ratio - 2.0).abs() < 0.06, "ratio {ratio}");
    }

    #[test]
    fn gamma_zero_radius_is_zero() {
        let params = ParamVector::from_vec(vec![1.0, 2.0]);
        let part = single_filter(2);
        let spec = RwpNoiseSpec::new(0.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = measured_radius(&params, &part, &spec, 100, &mut rng).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn sam_perturbation_three_four_five() {
        let grad = ParamVector::from_vec(vec![3.0, 4.0]);
        let spec = SamSpec::new(0.05).unwrap();
        let eps = sam_perturbation(&grad, &spec).unwrap();
        assert!((eps[0] - 0.03).abs() < 1e-15);
        assert!((eps[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn sam_perturbation_norm_equals_rho() {
        let spec = SamSpec::new(0.05).unwrap();
        let grad = ParamVector::from_vec(vec![0.1, -7.0, 2.5, 1e-3]);
        let eps = sam_perturbation(&grad, &spec).unwrap();
        assert!((eps.l2_norm() - 0.05).abs() / 0.05 < 1e-9);
    }

    #[test]
    fn zero_gradient_is_degenerate() {
        let spec = SamSpec::new(0.05).unwrap();
        let grad = ParamVector::zeros(3);
        assert!(matches!(
            sam_perturbation(&grad, &spec),
            Err(CoreError::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn power_of_two_gradient_scaling_is_bitwise_invariant() {
        let spec = SamSpec::new(0.05).unwrap();
        let grad = ParamVector::from_vec(vec![0.3, -1.7, 0.02, 5.5]);
        let base = sam_perturbation(&grad, &spec).unwrap();
        for k in [-6i32, -1, 1, 8] {
            let mut scaled = grad.clone();
            scaled.scale(2f64.powi(k));
            let eps = sam_perturbation(&scaled, &spec).unwrap();
            assert!(eps.bitwise_eq(&base), "scale 2^{k}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(RwpNoiseSpec::new(-0.01, 0).is_err());
        assert!(RwpNoiseSpec::new(f64::NAN, 0).is_err());
        assert!(SamSpec::new(0.0).is_err());
        assert!(SamSpec::new(-1.0).is_err());
    }
}
