//! Dense-tensor forward evaluation and exact reverse-mode gradients for
//! small MLPs and CNNs.
//!
//! Models are immutable layer-graph descriptions over a flat `ParamVector`.
//! The softmax cross-entropy head is applied by the loss functions, not
//! stored as a layer; builders guarantee the last layer emits `class_count`
//! logits.
//!
//! Determinism contract: all reductions run in fixed index order, so equal
//! inputs produce bitwise equal losses and gradients on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::params::{Filter, FilterPartition, FilterShape, ParamVector};

/// One layer of the network. Offsets index into the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Dense {
        in_dim: usize,
        out_dim: usize,
        w_off: usize,
        b_off: usize,
    },
    Relu {
        dim: usize,
    },
    /// Valid padding, stride 1.
    Conv2d {
        c_in: usize,
        h_in: usize,
        w_in: usize,
        c_out: usize,
        k: usize,
        w_off: usize,
        b_off: usize,
    },
    /// 2x2 max-pool, stride 2; trailing odd row/column is dropped.
    MaxPool2 {
        c: usize,
        h_in: usize,
        w_in: usize,
    },
}

impl Layer {
    pub fn in_len(&self) -> usize {
        match *self {
            Layer::Dense { in_dim, .. } => in_dim,
            Layer::Relu { dim } => dim,
            Layer::Conv2d {
                c_in, h_in, w_in, ..
            } => c_in * h_in * w_in,
            Layer::MaxPool2 { c, h_in, w_in } => c * h_in * w_in,
        }
    }

    pub fn out_len(&self) -> usize {
        match *self {
            Layer::Dense { out_dim, .. } => out_dim,
            Layer::Relu { dim } => dim,
            Layer::Conv2d {
                c_out,
                h_in,
                w_in,
                k,
                ..
            } => c_out * (h_in - k + 1) * (w_in - k + 1),
            Layer::MaxPool2 { c, h_in, w_in } => c * (h_in / 2) * (w_in / 2),
        }
    }
}

/// Immutable model description: layer list, shapes, and filter partition.
#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    class_count: usize,
    param_len: usize,
    partition: FilterPartition,
}

impl Model {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn partition(&self) -> &FilterPartition {
        &self.partition
    }

    /// Head-only softmax model; used by tests that need a bare linear head.
    #[cfg(test)]
    pub(crate) fn linear(input_dim: usize, class_count: usize) -> Model {
        let mut layout = ParamLayout::new();
        let mut layers = Vec::new();
        layout.push_dense(&mut layers, input_dim, class_count);
        Model {
            layers,
            input_shape: vec![input_dim],
            class_count,
            param_len: layout.len,
            partition: layout.into_partition(),
        }
    }
}

/// Accumulates the flat parameter layout and filter partition during build.
struct ParamLayout {
    len: usize,
    filters: Vec<Filter>,
    non_filter: Vec<std::ops::Range<usize>>,
}

impl ParamLayout {
    fn new() -> Self {
        ParamLayout {
            len: 0,
            filters: Vec::new(),
            non_filter: Vec::new(),
        }
    }

    fn push_dense(&mut self, layers: &mut Vec<Layer>, in_dim: usize, out_dim: usize) {
        let w_off = self.len;
        for o in 0..out_dim {
            let start = w_off + o * in_dim;
            self.filters.push(Filter {
                range: start..start + in_dim,
                shape: FilterShape::Dense { fan_in: in_dim },
            });
        }
        self.len += in_dim * out_dim;
        let b_off = self.len;
        self.non_filter.push(b_off..b_off + out_dim);
        self.len += out_dim;
        layers.push(Layer::Dense {
            in_dim,
            out_dim,
            w_off,
            b_off,
        });
    }

    fn push_conv(
        &mut self,
        layers: &mut Vec<Layer>,
        c_in: usize,
        h_in: usize,
        w_in: usize,
        c_out: usize,
        k: usize,
    ) {
        let w_off = self.len;
        let per_filter = c_in * k * k;
        for co in 0..c_out {
            let start = w_off + co * per_filter;
            self.filters.push(Filter {
                range: start..start + per_filter,
                shape: FilterShape::Conv { c_in, kh: k, kw: k },
            });
        }
        self.len += c_out * per_filter;
        let b_off = self.len;
        self.non_filter.push(b_off..b_off + c_out);
        self.len += c_out;
        layers.push(Layer::Conv2d {
            c_in,
            h_in,
            w_in,
            c_out,
            k,
            w_off,
            b_off,
        });
    }

    fn into_partition(self) -> FilterPartition {
        FilterPartition::new(self.filters, self.non_filter)
    }
}

/// Builds an MLP of dense+relu blocks ending in a linear head.
///
/// Every dense output neuron (hidden and head) is one filter.
pub fn build_mlp(layer_sizes: &[usize], input_dim: usize, class_count: usize) -> Result<Model> {
    if layer_sizes.is_empty() {
        return Err(CoreError::Config(
            "mlp needs at least one hidden layer".into(),
        ));
    }
    if input_dim == 0 || class_count == 0 || layer_sizes.contains(&0) {
        return Err(CoreError::Config("mlp dimensions must be positive".into()));
    }

    let mut layout = ParamLayout::new();
    let mut layers = Vec::new();
    let mut prev = input_dim;
    for &width in layer_sizes {
        layout.push_dense(&mut layers, prev, width);
        layers.push(Layer::Relu { dim: width });
        prev = width;
    }
    layout.push_dense(&mut layers, prev, class_count);

    Ok(Model {
        layers,
        input_shape: vec![input_dim],
        class_count,
        param_len: layout.len,
        partition: layout.into_partition(),
    })
}

/// Builds a CNN of conv(valid, stride 1) -> relu -> 2x2 max-pool blocks,
/// flattened into a linear head.
///
/// One filter per conv output channel plus one per head neuron.
pub fn build_cnn(
    conv_channels: &[usize],
    kernel: usize,
    input_shape: (usize, usize, usize),
    class_count: usize,
) -> Result<Model> {
    let (c0, h0, w0) = input_shape;
    if conv_channels.is_empty() {
        return Err(CoreError::Config(
            "cnn needs at least one conv block".into(),
        ));
    }
    if kernel == 0
        || c0 == 0
        || h0 == 0
        || w0 == 0
        || class_count == 0
        || conv_channels.contains(&0)
    {
        return Err(CoreError::Config("cnn dimensions must be positive".into()));
    }

    let mut layout = ParamLayout::new();
    let mut layers = Vec::new();
    let (mut c, mut h, mut w) = (c0, h0, w0);
    for (i, &c_out) in conv_channels.iter().enumerate() {
        if h < kernel || w < kernel {
            return Err(CoreError::Config(format!(
                "conv block {i}: {h}x{w} input smaller than {kernel}x{kernel} kernel"
            )));
        }
        layout.push_conv(&mut layers, c, h, w, c_out, kernel);
        h = h - kernel + 1;
        w = w - kernel + 1;
        layers.push(Layer::Relu { dim: c_out * h * w });
        if h < 2 || w < 2 {
            return Err(CoreError::Config(format!(
                "conv block {i}: {h}x{w} too small for 2x2 max-pool"
            )));
        }
        layers.push(Layer::MaxPool2 {
            c: c_out,
            h_in: h,
            w_in: w,
        });
        h /= 2;
        w /= 2;
        c = c_out;
    }
    layout.push_dense(&mut layers, c * h * w, class_count);

    Ok(Model {
        layers,
        input_shape: vec![c0, h0, w0],
        class_count,
        param_len: layout.len,
        partition: layout.into_partition(),
    })
}

/// Initializes each filter i.i.d. from U(-sqrt(t), sqrt(t)) with
/// t = 1/fan_in; biases start at zero. Reproducible from the seed.
pub fn init_uniform(model: &Model, seed: u64) -> ParamVector {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(model.param_len());
    for filter in model.partition().filters() {
        let bound = (1.0 / filter.shape.weight_count() as f64).sqrt();
        for i in filter.range.clone() {
            let u: f64 = rng.random();
            params[i] = (2.0 * u - 1.0) * bound;
        }
    }
    params
}

/// A batch of examples with flattened features stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    feat_len: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, feat_len: usize) -> Batch {
        assert!(!labels.is_empty(), "batch must be nonempty");
        assert_eq!(inputs.len(), labels.len() * feat_len);
        Batch {
            inputs,
            labels,
            feat_len,
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn feat_len(&self) -> usize {
        self.feat_len
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.feat_len..(i + 1) * self.feat_len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Reusable per-call forward/backward buffers.
struct Scratch {
    /// acts[l] is the input to layer l; acts[n_layers] holds the logits.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    /// For each max-pool layer index, source index of each pooled output.
    pool_src: Vec<Vec<usize>>,
}

impl Scratch {
    fn new(model: &Model) -> Scratch {
        let mut sizes = Vec::with_capacity(model.layers.len() + 1);
        sizes.push(model.input_len());
        for layer in &model.layers {
            sizes.push(layer.out_len());
        }
        let acts: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        let deltas = acts.clone();
        let pool_src = model
            .layers
            .iter()
            .map(|l| match l {
                Layer::MaxPool2 { .. } => vec![0usize; l.out_len()],
                _ => Vec::new(),
            })
            .collect();
        Scratch {
            acts,
            deltas,
            pool_src,
        }
    }
}

fn forward_layer(layer: &Layer, params: &[f64], x: &[f64], y: &mut [f64], pool_src: &mut [usize]) {
    match *layer {
        Layer::Dense {
            in_dim,
            out_dim,
            w_off,
            b_off,
        } => {
            for o in 0..out_dim {
                let row = w_off + o * in_dim;
                let mut acc = params[b_off + o];
                for i in 0..in_dim {
                    acc += params[row + i] * x[i];
                }
                y[o] = acc;
            }
        }
        Layer::Relu { dim } => {
            for i in 0..dim {
                y[i] = if x[i] > 0.0 { x[i] } else { 0.0 };
            }
        }
        Layer::Conv2d {
            c_in,
            h_in,
            w_in,
            c_out,
            k,
            w_off,
            b_off,
        } => {
            let h_out = h_in - k + 1;
            let w_out = w_in - k + 1;
            for co in 0..c_out {
                let filt = w_off + co * c_in * k * k;
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let mut acc = params[b_off + co];
                        for ci in 0..c_in {
                            let plane = ci * h_in * w_in;
                            let wbase = filt + ci * k * k;
                            for ky in 0..k {
                                let xrow = plane + (oy + ky) * w_in + ox;
                                let wrow = wbase + ky * k;
                                for kx in 0..k {
                                    acc += params[wrow + kx] * x[xrow + kx];
                                }
                            }
                        }
                        y[(co * h_out + oy) * w_out + ox] = acc;
                    }
                }
            }
        }
        Layer::MaxPool2 { c, h_in, w_in } => {
            let h_out = h_in / 2;
            let w_out = w_in / 2;
            for ch in 0..c {
                let plane = ch * h_in * w_in;
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let mut best_idx = plane + (2 * oy) * w_in + 2 * ox;
                        let mut best = x[best_idx];
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let idx = plane + (2 * oy + ky) * w_in + 2 * ox + kx;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let out_idx = (ch * h_out + oy) * w_out + ox;
                        y[out_idx] = best;
                        pool_src[out_idx] = best_idx;
                    }
                }
            }
        }
    }
}

fn backward_layer(
    layer: &Layer,
    params: &[f64],
    x: &[f64],
    d_out: &[f64],
    d_in: &mut [f64],
    grad: &mut [f64],
    pool_src: &[usize],
) {
    d_in.fill(0.0);
    match *layer {
        Layer::Dense {
            in_dim,
            out_dim,
            w_off,
            b_off,
        } => {
            for o in 0..out_dim {
                let dz = d_out[o];
                let row = w_off + o * in_dim;
                grad[b_off + o] += dz;
                for i in 0..in_dim {
                    grad[row + i] += dz * x[i];
                    d_in[i] += params[row + i] * dz;
                }
            }
        }
        Layer::Relu { dim } => {
            for i in 0..dim {
                d_in[i] = if x[i] > 0.0 { d_out[i] } else { 0.0 };
            }
        }
        Layer::Conv2d {
            c_in,
            h_in,
            w_in,
            c_out,
            k,
            w_off,
            b_off,
        } => {
            let h_out = h_in - k + 1;
            let w_out = w_in - k + 1;
            for co in 0..c_out {
                let filt = w_off + co * c_in * k * k;
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let dz = d_out[(co * h_out + oy) * w_out + ox];
                        grad[b_off + co] += dz;
                        for ci in 0..c_in {
                            let plane = ci * h_in * w_in;
                            let wbase = filt + ci * k * k;
                            for ky in 0..k {
                                let xrow = plane + (oy + ky) * w_in + ox;
                                let wrow = wbase + ky * k;
                                for kx in 0..k {
                                    grad[wrow + kx] += dz * x[xrow + kx];
                                    d_in[xrow + kx] += params[wrow + kx] * dz;
                                }
                            }
                        }
                    }
                }
            }
        }
        Layer::MaxPool2 { c, h_in, w_in } => {
            let h_out = h_in / 2;
            let w_out = w_in / 2;
            let n = c * h_out * w_out;
            for i in 0..n {
                d_in[pool_src[i]] += d_out[i];
            }
        }
    }
}

/// Stable softmax cross-entropy from logits; returns loss and writes
/// d(loss)/d(logits) into `d_logits`.
fn softmax_ce(logits: &[f64], label: usize, d_logits: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &l) in d_logits.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *d = e;
        sum += e;
    }
    let loss = max + sum.ln() - logits[label];
    for d in d_logits.iter_mut() {
        *d /= sum;
    }
    d_logits[label] -= 1.0;
    loss
}

/// Loss-only variant of [`softmax_ce`].
fn softmax_ce_loss(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    max + sum.ln() - logits[label]
}

fn check_batch(model: &Model, params: &ParamVector, batch: &Batch) -> Result<()> {
    if batch.feat_len() != model.input_len() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("feature length {}", model.input_len()),
            got: format!("feature length {}", batch.feat_len()),
        });
    }
    if params.len() != model.param_len() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} parameters", model.param_len()),
            got: format!("{} parameters", params.len()),
        });
    }
    if let Some(&bad) = batch.labels().iter().find(|&&l| l >= model.class_count()) {
        return Err(CoreError::Config(format!(
            "label {bad} out of range for {} classes",
            model.class_count()
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch and its exact reverse-mode
/// gradient. Examples are reduced in index order.
pub fn loss_and_grad(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_batch(model, params, batch)?;
    let p = params.as_slice();
    let mut scratch = Scratch::new(model);
    let mut grad = ParamVector::zeros(model.param_len());
    let g = grad.as_mut_slice();
    let mut total_loss = 0.0;

    for ex in 0..batch.size() {
        scratch.acts[0].copy_from_slice(batch.input(ex));
        for (l, layer) in model.layers.iter().enumerate() {
            let (lo, hi) = split_pair(&mut scratch.acts, l);
            forward_layer(layer, p, lo, hi, &mut scratch.pool_src[l]);
            if let Some(_bad) = hi.iter().find(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite { layer: l });
            }
        }
        let n_layers = model.layers.len();
        let loss = softmax_ce(
            &scratch.acts[n_layers],
            batch.label(ex),
            &mut scratch.deltas[n_layers],
        );
        total_loss += loss;
        for (l, layer) in model.layers.iter().enumerate().rev() {
            let (d_in, d_out) = split_pair(&mut scratch.deltas, l);
            backward_layer(
                layer,
                p,
                &scratch.acts[l],
                d_out,
                d_in,
                g,
                &scratch.pool_src[l],
            );
        }
    }

    let n = batch.size() as f64;
    for v in g.iter_mut() {
        *v /= n;
    }
    Ok((total_loss / n, grad))
}

/// Borrows `bufs[l]` and `bufs[l+1]` simultaneously.
fn split_pair(bufs: &mut [Vec<f64>], l: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = bufs.split_at_mut(l + 1);
    (&mut a[l], &mut b[0])
}

/// Forward-only evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Mean loss and accuracy without gradients. Numeric overflow is reported
/// as +inf loss instead of an error; examples whose logits are all NaN
/// count as misclassified.
pub fn evaluate(model: &Model, params: &ParamVector, batch: &Batch) -> Result<EvalSummary> {
    check_batch(model, params, batch)?;
    let p = params.as_slice();
    let mut scratch = Scratch::new(model);
    let mut total_loss = 0.0;
    let mut correct = 0usize;

    for ex in 0..batch.size() {
        scratch.acts[0].copy_from_slice(batch.input(ex));
        for (l, layer) in model.layers.iter().enumerate() {
            let (lo, hi) = split_pair(&mut scratch.acts, l);
            forward_layer(layer, p, lo, hi, &mut scratch.pool_src[l]);
        }
        let logits = &scratch.acts[model.layers.len()];
        let loss = softmax_ce_loss(logits, batch.label(ex));
        total_loss += if loss.is_finite() {
            loss
        } else {
            f64::INFINITY
        };

        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in logits.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            match best {
                Some((_, bv)) if v <= bv => {}
                _ => best = Some((j, v)),
            }
        }
        if let Some((j, _)) = best {
            if j == batch.label(ex) {
                correct += 1;
            }
        }
    }

    Ok(EvalSummary {
        mean_loss: total_loss / batch.size() as f64,
        accuracy: correct as f64 / batch.size() as f64,
    })
}

/// Distance from the nearest non-smooth point of the loss along the batch:
/// the smallest relu pre-activation magnitude or max-pool top-two gap seen
/// in the forward passes. +inf when the model has no relu or pool layers.
/// Finite-difference gradient checks are only meaningful when this margin
/// comfortably exceeds the probe step.
pub fn kink_margin(model: &Model, params: &ParamVector, batch: &Batch) -> Result<f64> {
    check_batch(model, params, batch)?;
    let p = params.as_slice();
    let mut scratch = Scratch::new(model);
    let mut margin = f64::INFINITY;

    for ex in 0..batch.size() {
        scratch.acts[0].copy_from_slice(batch.input(ex));
        for (l, layer) in model.layers.iter().enumerate() {
            match *layer {
                Layer::Relu { .. } => {
                    for &v in scratch.acts[l].iter() {
                        margin = margin.min(v.abs());
                    }
                }
                Layer::MaxPool2 { c, h_in, w_in } => {
                    let x = &scratch.acts[l];
                    for ch in 0..c {
                        let plane = ch * h_in * w_in;
                        for oy in 0..h_in / 2 {
                            for ox in 0..w_in / 2 {
                                let base = plane + (2 * oy) * w_in + 2 * ox;
                                let window =
                                    [x[base], x[base + 1], x[base + w_in], x[base + w_in + 1]];
                                let mut top = f64::NEG_INFINITY;
                                let mut second = f64::NEG_INFINITY;
                                for &v in &window {
                                    if v > top {
                                        second = top;
                                        top = v;
                                    } else if v > second {
                                        second = v;
                                    }
                                }
                                margin = margin.min(top - second);
                            }
                        }
                    }
                }
                _ => {}
            }
            let (lo, hi) = split_pair(&mut scratch.acts, l);
            forward_layer(layer, p, lo, hi, &mut scratch.pool_src[l]);
        }
    }
    Ok(margin)
}
