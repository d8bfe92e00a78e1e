//! Central finite-difference check of the reverse-mode gradients over a
//! seeded zoo of random small models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwp_core::model::{
    build_cnn, build_mlp, evaluate, init_uniform, kink_margin, loss_and_grad, Batch, Model,
};

const FD_STEP: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;
/// A single +-1e-5 parameter probe moves any relu input or pool gap by well
/// under 1e-4 on these models, so this margin keeps both probes on the same
/// smooth piece of the loss.
const SAFE_MARGIN: f64 = 1e-3;

fn random_batch(model: &Model, rng: &mut ChaCha8Rng) -> Batch {
    let n = rng.random_range(2..=4);
    let feat = model.input_len();
    let inputs: Vec<f64> = (0..n * feat).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..model.class_count()))
        .collect();
    Batch::new(inputs, labels, feat)
}

fn random_model(rng: &mut ChaCha8Rng) -> Model {
    loop {
        let use_cnn = rng.random_range(0..3) == 0;
        let candidate = if use_cnn {
            let side = rng.random_range(6..=9);
            let channels = vec![rng.random_range(2..=4)];
            build_cnn(&channels, 3, (1, side, side), rng.random_range(2..=3))
        } else {
            let depth = rng.random_range(1..=2);
            let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=8)).collect();
            build_mlp(&hidden, rng.random_range(2..=6), rng.random_range(2..=4))
        };
        match candidate {
            Ok(m) if m.param_len() <= 1000 => return m,
            _ => continue,
        }
    }
}

/// Max relative error between analytic and central finite-difference
/// gradients over every coordinate.
fn max_grad_error(model: &Model, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The derivative does not exist at relu kinks and pool ties, and a
    // central difference straddling one measures nothing; redraw until the
    // whole batch sits a safe margin away from them.
    let (params, batch) = loop {
        let params = init_uniform(model, rng.random::<u64>());
        let batch = random_batch(model, &mut rng);
        if kink_margin(model, &params, &batch).unwrap() > SAFE_MARGIN {
            break (params, batch);
        }
    };
    let (_, grad) = loss_and_grad(model, &params, &batch).unwrap();

    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus[i] += FD_STEP;
        let mut minus = params.clone();
        minus[i] -= FD_STEP;
        let lp = evaluate(model, &plus, &batch).unwrap().mean_loss;
        let lm = evaluate(model, &minus, &batch).unwrap().mean_loss;
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let analytic = grad[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradients_match_finite_differences_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFD);
    for case in 0..30u64 {
        let model = random_model(&mut rng);
        let err = max_grad_error(&model, 1000 + case);
        assert!(
            err < MAX_REL_ERR,
            "case {case}: max rel err {err} on model with {} params",
            model.param_len()
        );
    }
}

#[test]
fn fifty_parameter_mlp_meets_tight_tolerance() {
    // 5*6+6 hidden plus 6*2+2 head weights = 50 parameters.
    let model = build_mlp(&[6], 5, 2).unwrap();
    assert_eq!(model.param_len(), 50);
    let err = max_grad_error(&model, 0x50AD);
    assert!(err < 1e-5, "max rel err {err}");
}

#[test]
fn gradient_of_known_linear_softmax_is_exact() {
    // Linear head on one example: d(loss)/d(w_cj) = (p_c - [c = y]) * x_j,
    // d/d(b_c) = p_c - [c = y]. With zero weights p is uniform.
    let model = build_mlp(&[2], 2, 2).unwrap();
    // Only exercise the head by zeroing everything; hidden relu outputs 0,
    // so head bias gradients are (p_c - onehot) exactly.
    let params = rwp_core::ParamVector::zeros(model.param_len());
    let batch = Batch::new(vec![0.4, -0.2], vec![1], 2);
    let (loss, grad) = loss_and_grad(&model, &params, &batch).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-15);
    // Head biases are the last two parameters in the layout.
    let n = model.param_len();
    assert!((grad[n - 2] - 0.5).abs() < 1e-15);
    assert!((grad[n - 1] + 0.5).abs() < 1e-15);
}
