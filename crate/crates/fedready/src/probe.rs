//! The probe network: a small fixed CNN used both as the shared model in
//! federated training and as the frozen feature extractor for dataset
//! embeddings.
//!
//! Architecture per layer: same-padding stride-1 convolution, ReLU, 2x2
//! max-pool (stride 2), finishing with flatten and a linear head. All
//! arithmetic is exact f64 with hand-written backprop; the gradient
//! tests below validate every parameter against central differences.

use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Shape of one convolutional stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
}

/// Static architecture description. Weights live in [`ProbeState`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSpec {
    pub input_channels: usize,
    pub input_side: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
    pub head_classes: usize,
}

/// Resolved dimensions of one conv stage.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerDims {
    pub in_channels: usize,
    pub in_side: usize,
    pub filters: usize,
    pub kernel: usize,
    /// Side length after the 2x2 pool.
    pub out_side: usize,
}

impl ProbeSpec {
    /// Two conv stages of 8 and 16 3x3 filters: the default probe for
    /// desk-scale experiments.
    pub fn desk_default(input_channels: usize, input_side: usize, head_classes: usize) -> ProbeSpec {
        ProbeSpec {
            input_channels,
            input_side,
            conv_layers: vec![
                ConvLayerSpec { filters: 8, kernel: 3 },
                ConvLayerSpec { filters: 16, kernel: 3 },
            ],
            head_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Structural("probe needs at least one input channel".into()));
        }
        if self.conv_layers.is_empty() {
            return Err(Error::Structural("probe needs at least one conv layer".into()));
        }
        if self.head_classes < 2 {
            return Err(Error::Structural(format!(
                "probe head needs >= 2 classes, got {}",
                self.head_classes
            )));
        }
        let mut side = self.input_side;
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.filters == 0 {
                return Err(Error::Structural(format!("conv layer {i} has zero filters")));
            }
            if layer.kernel == 0 || layer.kernel % 2 == 0 {
                return Err(Error::Structural(format!(
                    "conv layer {i} kernel must be odd (same padding), got {}",
                    layer.kernel
                )));
            }
            if side < 2 {
                return Err(Error::Structural(format!(
                    "input side {} too small: layer {i} would pool a {side}x{side} map",
                    self.input_side
                )));
            }
            side /= 2;
        }
        Ok(())
    }

    pub(crate) fn layer_dims(&self) -> Vec<LayerDims> {
        let mut dims = Vec::with_capacity(self.conv_layers.len());
        let mut channels = self.input_channels;
        let mut side = self.input_side;
        for layer in &self.conv_layers {
            dims.push(LayerDims {
                in_channels: channels,
                in_side: side,
                filters: layer.filters,
                kernel: layer.kernel,
                out_side: side / 2,
            });
            channels = layer.filters;
            side /= 2;
        }
        dims
    }

    /// Total number of conv filters across layers; the raw embedding
    /// length before any filters are skipped.
    pub fn total_filters(&self) -> usize {
        self.conv_layers.iter().map(|l| l.filters).sum()
    }

    /// Length of the flattened feature vector entering the head.
    pub fn feature_len(&self) -> usize {
        let dims = self.layer_dims();
        let last = dims.last().expect("validated spec has layers");
        last.filters * last.out_side * last.out_side
    }
}

/// Weights of one conv stage. Weight layout is [filter][in_channel][ky][kx].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(dims: &LayerDims) -> ConvLayer {
        ConvLayer {
            weights: vec![0.0; dims.filters * dims.in_channels * dims.kernel * dims.kernel],
            bias: vec![0.0; dims.filters],
        }
    }
}

/// Linear head. Weight layout is [feature][class].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(features: usize, classes: usize) -> DenseLayer {
        DenseLayer { weights: vec![0.0; features * classes], bias: vec![0.0; classes] }
    }
}

/// SGD momentum buffers, one slot per parameter. Client-local during
/// federated training and reset at the start of every round.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumBuffers {
    pub conv: Vec<ConvLayer>,
    pub head: DenseLayer,
}

/// Full mutable state of a probe: parameters plus optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeState {
    pub conv: Vec<ConvLayer>,
    pub head: DenseLayer,
    pub momentum: MomentumBuffers,
    /// Set by head fitting; Fisher estimation refuses to run without it.
    pub head_fitted: bool,
}

impl ProbeState {
    pub fn zeros(spec: &ProbeSpec) -> ProbeState {
        let dims = spec.layer_dims();
        let conv: Vec<ConvLayer> = dims.iter().map(ConvLayer::zeros).collect();
        let head = DenseLayer::zeros(spec.feature_len(), spec.head_classes);
        ProbeState {
            momentum: MomentumBuffers { conv: conv.clone(), head: head.clone() },
            conv,
            head,
            head_fitted: false,
        }
    }

    /// Clears optimizer history (used at the start of each local round).
    pub fn reset_momentum(&mut self, spec: &ProbeSpec) {
        let dims = spec.layer_dims();
        self.momentum.conv = dims.iter().map(ConvLayer::zeros).collect();
        self.momentum.head = DenseLayer::zeros(spec.feature_len(), spec.head_classes);
    }

    fn check_shapes(&self, spec: &ProbeSpec) -> Result<()> {
        let dims = spec.layer_dims();
        if self.conv.len() != dims.len() {
            return Err(Error::Structural(format!(
                "state has {} conv layers, spec has {}",
                self.conv.len(),
                dims.len()
            )));
        }
        for (i, (layer, d)) in self.conv.iter().zip(&dims).enumerate() {
            let want = d.filters * d.in_channels * d.kernel * d.kernel;
            if layer.weights.len() != want || layer.bias.len() != d.filters {
                return Err(Error::Structural(format!(
                    "conv layer {i} weight/bias lengths {}/{} do not match spec {}/{}",
                    layer.weights.len(),
                    layer.bias.len(),
                    want,
                    d.filters
                )));
            }
        }
        let want_w = spec.feature_len() * spec.head_classes;
        if self.head.weights.len() != want_w || self.head.bias.len() != spec.head_classes {
            return Err(Error::Structural(format!(
                "head weight/bias lengths {}/{} do not match spec {}/{}",
                self.head.weights.len(),
                self.head.bias.len(),
                want_w,
                spec.head_classes
            )));
        }
        Ok(())
    }
}

/// Parameter-shaped gradient container.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub conv: Vec<ConvLayer>,
    pub head: DenseLayer,
}

/// A mini-batch in [sample][channel][y][x] layout.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub side: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self, spec: &ProbeSpec) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Structural("empty batch".into()));
        }
        if self.channels != spec.input_channels || self.side != spec.input_side {
            return Err(Error::Structural(format!(
                "batch is {}x{}x{}, probe expects {}x{}x{}",
                self.channels, self.side, self.side,
                spec.input_channels, spec.input_side, spec.input_side
            )));
        }
        let want = self.len() * self.channels * self.side * self.side;
        if self.images.len() != want {
            return Err(Error::Structural(format!(
                "batch holds {} values, expected {want}",
                self.images.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= spec.head_classes) {
            return Err(Error::Structural(format!(
                "label {bad} out of range for {} classes",
                spec.head_classes
            )));
        }
        Ok(())
    }
}

/// Row-major matrix of per-sample feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Row-major logits, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub data: Vec<f64>,
    pub classes: usize,
}

impl Logits {
    pub fn rows(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }
}

/// 4-D activation block in [sample][channel][y][x] layout.
#[derive(Debug, Clone)]
pub(crate) struct Tensor {
    pub data: Vec<f64>,
    pub n: usize,
    pub c: usize,
    pub side: usize,
}

impl Tensor {
    fn zeros(n: usize, c: usize, side: usize) -> Tensor {
        Tensor { data: vec![0.0; n * c * side * side], n, c, side }
    }

    #[inline]
    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.side + y) * self.side + x
    }
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input tensor of each conv stage (stage 0 holds the batch images).
    inputs: Vec<Tensor>,
    /// Pre-activation conv outputs (for the ReLU mask).
    preacts: Vec<Tensor>,
    /// For each pooled cell, the flat index of the winning activation.
    pool_src: Vec<Vec<usize>>,
    /// Flattened final features, one row per sample.
    pub features: FeatureMatrix,
    batch_len: usize,
}

/// Same-padding stride-1 convolution of `input` with `layer`.
fn conv_forward(input: &Tensor, layer: &ConvLayer, dims: &LayerDims) -> Tensor {
    let mut out = Tensor::zeros(input.n, dims.filters, input.side);
    let k = dims.kernel;
    let pad = k / 2;
    let s = input.side;
    for n in 0..input.n {
        for f in 0..dims.filters {
            for y in 0..s {
                for x in 0..s {
                    let mut acc = layer.bias[f];
                    for c in 0..dims.in_channels {
                        for ky in 0..k {
                            let iy = (y + ky) as isize - pad as isize;
                            if iy < 0 || iy >= s as isize {
                                continue;
                            }
                            let w_base = ((f * dims.in_channels + c) * k + ky) * k;
                            let in_base = input.at(n, c, iy as usize, 0);
                            for kx in 0..k {
                                let ix = (x + kx) as isize - pad as isize;
                                if ix < 0 || ix >= s as isize {
                                    continue;
                                }
                                acc += layer.weights[w_base + kx] * input.data[in_base + ix as usize];
                            }
                        }
                    }
                    let idx = out.at(n, f, y, x);
                    out.data[idx] = acc;
                }
            }
        }
    }
    out
}

/// 2x2 stride-2 max pool. Returns the pooled tensor and, per pooled cell,
/// the flat index of the chosen source activation (first maximum wins on
/// ties, scanning row-major).
fn pool_forward(post: &Tensor) -> (Tensor, Vec<usize>) {
    let so = post.side / 2;
    let mut out = Tensor::zeros(post.n, post.c, so);
    let mut src = vec![0usize; out.data.len()];
    for n in 0..post.n {
        for c in 0..post.c {
            for py in 0..so {
                for px in 0..so {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = post.at(n, c, 2 * py + dy, 2 * px + dx);
                            if post.data[idx] > best {
                                best = post.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = out.at(n, c, py, px);
                    out.data[o] = best;
                    src[o] = best_idx;
                }
            }
        }
    }
    (out, src)
}

/// Runs the probe on a batch, producing logits and a cache for backward.
pub fn forward(spec: &ProbeSpec, state: &ProbeState, batch: &Batch) -> Result<(Logits, ForwardCache)> {
    spec.validate()?;
    state.check_shapes(spec)?;
    batch.validate(spec)?;

    let dims = spec.layer_dims();
    let n = batch.len();
    let mut current = Tensor {
        data: batch.images.clone(),
        n,
        c: batch.channels,
        side: batch.side,
    };

    let mut inputs = Vec::with_capacity(dims.len());
    let mut preacts = Vec::with_capacity(dims.len());
    let mut pool_src = Vec::with_capacity(dims.len());

    for (layer, d) in state.conv.iter().zip(&dims) {
        let z = conv_forward(&current, layer, d);
        let mut post = z.clone();
        for v in &mut post.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let (pooled, src) = pool_forward(&post);
        inputs.push(current);
        preacts.push(z);
        pool_src.push(src);
        current = pooled;
    }

    let feat_len = spec.feature_len();
    let features = FeatureMatrix { data: current.data, rows: n, cols: feat_len };

    let classes = spec.head_classes;
    let mut logits = vec![0.0; n * classes];
    for i in 0..n {
        let row = features.row(i);
        let out = &mut logits[i * classes..(i + 1) * classes];
        out.copy_from_slice(&state.head.bias);
        for (j, &f) in row.iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            let w = &state.head.weights[j * classes..(j + 1) * classes];
            for (o, &wj) in out.iter_mut().zip(w) {
                *o += f * wj;
            }
        }
    }

    Ok((
        Logits { data: logits, classes },
        ForwardCache { inputs, preacts, pool_src, features, batch_len: n },
    ))
}

/// Row-wise softmax with the max-subtraction trick.
pub fn softmax_rows(logits: &Logits) -> Vec<f64> {
    let classes = logits.classes;
    let mut probs = vec![0.0; logits.data.len()];
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut probs[i * classes..(i + 1) * classes];
        let mut sum = 0.0;
        for (o, &l) in out.iter_mut().zip(row) {
            *o = (l - m).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    probs
}

/// Mean cross-entropy over the batch plus the gradient with respect to
/// the logits (softmax minus one-hot, divided by batch size).
pub fn cross_entropy_loss(logits: &Logits, labels: &[usize]) -> Result<(f64, Logits)> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::Structural("cross entropy over an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Structural(format!(
            "{} label(s) for {n} logit row(s)",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.classes) {
        return Err(Error::Structural(format!(
            "label {bad} out of range for {} classes",
            logits.classes
        )));
    }
    let classes = logits.classes;
    let mut dlogits = vec![0.0; logits.data.len()];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &l in row {
            sum += (l - m).exp();
        }
        let log_z = m + sum.ln();
        loss += (log_z - row[labels[i]]) * inv_n;
        let out = &mut dlogits[i * classes..(i + 1) * classes];
        for (k, (o, &l)) in out.iter_mut().zip(row).enumerate() {
            let p = (l - m).exp() / sum;
            *o = (p - if k == labels[i] { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((loss, Logits { data: dlogits, classes }))
}

/// Backpropagates `dlogits` through the cached forward pass, returning
/// gradients for every parameter.
pub fn backward(
    spec: &ProbeSpec,
    state: &ProbeState,
    cache: &ForwardCache,
    dlogits: &Logits,
) -> Result<Gradient> {
    state.check_shapes(spec)?;
    let dims = spec.layer_dims();
    if cache.inputs.len() != dims.len() || cache.preacts.len() != dims.len() {
        return Err(Error::Structural(
            "forward cache does not match probe spec (stale cache?)".into(),
        ));
    }
    if dlogits.classes != spec.head_classes || dlogits.rows() != cache.batch_len {
        return Err(Error::Structural(format!(
            "dlogits is {}x{}, cache expects {}x{}",
            dlogits.rows(),
            dlogits.classes,
            cache.batch_len,
            spec.head_classes
        )));
    }
    for (i, d) in dims.iter().enumerate() {
        let t = &cache.inputs[i];
        if t.n != cache.batch_len || t.c != d.in_channels || t.side != d.in_side {
            return Err(Error::Structural(format!(
                "cached input {i} is {}x{}x{}, spec expects {}x{} (stale cache?)",
                t.c, t.side, t.side, d.in_channels, d.in_side
            )));
        }
    }
    if cache.features.cols != spec.feature_len() {
        return Err(Error::Structural("cached features do not match probe spec".into()));
    }

    let n = cache.batch_len;
    let classes = spec.head_classes;
    let feat_len = spec.feature_len();

    // Head gradients and gradient w.r.t. features.
    let mut head = DenseLayer::zeros(feat_len, classes);
    let mut dfeat = vec![0.0; n * feat_len];
    for i in 0..n {
        let drow = dlogits.row(i);
        let frow = cache.features.row(i);
        for (k, &d) in drow.iter().enumerate() {
            head.bias[k] += d;
        }
        for (j, &f) in frow.iter().enumerate() {
            let w = &state.head.weights[j * classes..(j + 1) * classes];
            let gw = &mut head.weights[j * classes..(j + 1) * classes];
            let mut acc = 0.0;
            for (k, &d) in drow.iter().enumerate() {
                gw[k] += f * d;
                acc += w[k] * d;
            }
            dfeat[i * feat_len + j] = acc;
        }
    }

    // Walk conv stages in reverse. `dpooled` starts as reshaped dfeat.
    let last = dims.last().expect("validated spec");
    let mut dpooled = Tensor {
        data: dfeat,
        n,
        c: last.filters,
        side: last.out_side,
    };

    let mut conv_grads: Vec<ConvLayer> = dims.iter().map(ConvLayer::zeros).collect();

    for l in (0..dims.len()).rev() {
        let d = &dims[l];
        let z = &cache.preacts[l];
        let input = &cache.inputs[l];

        // Un-pool: route each pooled-cell gradient to its argmax source,
        // then gate by the ReLU mask.
        let mut dz = Tensor::zeros(n, d.filters, d.in_side);
        for (cell, &src) in cache.pool_src[l].iter().enumerate() {
            dz.data[src] += dpooled.data[cell];
        }
        for (g, &pre) in dz.data.iter_mut().zip(&z.data) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }

        // Weight and bias gradients.
        let k = d.kernel;
        let pad = k / 2;
        let s = d.in_side;
        let grad = &mut conv_grads[l];
        for ni in 0..n {
            for f in 0..d.filters {
                for y in 0..s {
                    for x in 0..s {
                        let g = dz.data[dz.at(ni, f, y, x)];
                        if g == 0.0 {
                            continue;
                        }
                        grad.bias[f] += g;
                        for c in 0..d.in_channels {
                            for ky in 0..k {
                                let iy = (y + ky) as isize - pad as isize;
                                if iy < 0 || iy >= s as isize {
                                    continue;
                                }
                                let w_base = ((f * d.in_channels + c) * k + ky) * k;
                                let in_base = input.at(ni, c, iy as usize, 0);
                                for kx in 0..k {
                                    let ix = (x + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= s as isize {
                                        continue;
                                    }
                                    grad.weights[w_base + kx] += g * input.data[in_base + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }

        // Gradient w.r.t. this stage's input feeds the next iteration.
        if l > 0 {
            let mut dinput = Tensor::zeros(n, d.in_channels, s);
            let layer = &state.conv[l];
            for ni in 0..n {
                for f in 0..d.filters {
                    for y in 0..s {
                        for x in 0..s {
                            let g = dz.data[dz.at(ni, f, y, x)];
                            if g == 0.0 {
                                continue;
                            }
                            for c in 0..d.in_channels {
                                for ky in 0..k {
                                    let iy = (y + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= s as isize {
                                        continue;
                                    }
                                    let w_base = ((f * d.in_channels + c) * k + ky) * k;
                                    let in_base = dinput.at(ni, c, iy as usize, 0);
                                    for kx in 0..k {
                                        let ix = (x + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= s as isize {
                                            continue;
                                        }
                                        dinput.data[in_base + ix as usize] +=
                                            g * layer.weights[w_base + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dpooled = dinput;
        }
    }

    Ok(Gradient { conv: conv_grads, head })
}

/// Classic momentum SGD: v <- mu*v + g, theta <- theta - lr*v.
/// lr = 0 leaves the parameters untouched (buffers still accumulate).
pub fn sgd_momentum_step(
    state: &mut ProbeState,
    grad: &Gradient,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::Domain(format!("learning rate must be >= 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Domain(format!("momentum must be in [0, 1), got {momentum}")));
    }
    if grad.conv.len() != state.conv.len() {
        return Err(Error::Structural(format!(
            "gradient has {} conv layers, state has {}",
            grad.conv.len(),
            state.conv.len()
        )));
    }

    fn update(theta: &mut [f64], vel: &mut [f64], g: &[f64], lr: f64, mu: f64) -> Result<()> {
        if theta.len() != g.len() || vel.len() != g.len() {
            return Err(Error::Structural(format!(
                "parameter/gradient length mismatch: {} vs {}",
                theta.len(),
                g.len()
            )));
        }
        for ((t, v), &gi) in theta.iter_mut().zip(vel.iter_mut()).zip(g) {
            *v = mu * *v + gi;
            *t -= lr * *v;
        }
        Ok(())
    }

    for ((layer, vel), g) in state
        .conv
        .iter_mut()
        .zip(state.momentum.conv.iter_mut())
        .zip(&grad.conv)
    {
        update(&mut layer.weights, &mut vel.weights, &g.weights, lr, momentum)?;
        update(&mut layer.bias, &mut vel.bias, &g.bias, lr, momentum)?;
    }
    update(
        &mut state.head.weights,
        &mut state.momentum.head.weights,
        &grad.head.weights,
        lr,
        momentum,
    )?;
    update(
        &mut state.head.bias,
        &mut state.momentum.head.bias,
        &grad.head.bias,
        lr,
        momentum,
    )?;
    Ok(())
}

/// He-uniform initialization: weights uniform in (-b, b) with
/// b = sqrt(6 / fan_in); biases zero; momentum zero; head unfitted.
pub fn init_probe(spec: &ProbeSpec, rng: &mut Rng) -> Result<ProbeState> {
    spec.validate()?;
    let mut state = ProbeState::zeros(spec);
    for (layer, d) in state.conv.iter_mut().zip(spec.layer_dims()) {
        let fan_in = d.in_channels * d.kernel * d.kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        for w in &mut layer.weights {
            *w = (2.0 * rng.next_f64() - 1.0) * bound;
        }
    }
    let bound = (6.0 / spec.feature_len() as f64).sqrt();
    for w in &mut state.head.weights {
        *w = (2.0 * rng.next_f64() - 1.0) * bound;
    }
    Ok(state)
}

/// Fits a fresh linear head on a fixed feature matrix by mini-batch SGD
/// on cross-entropy, starting from zeros. The conv stack is untouched.
pub fn fit_linear_head(
    features: &FeatureMatrix,
    labels: &[usize],
    classes: usize,
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<DenseLayer> {
    if features.rows == 0 {
        return Err(Error::Domain("cannot fit a head on zero samples".into()));
    }
    if epochs == 0 {
        return Err(Error::Domain("head fitting needs at least one epoch".into()));
    }
    if labels.len() != features.rows {
        return Err(Error::Structural(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Structural(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Domain(format!("head learning rate must be > 0, got {lr}")));
    }

    const BATCH: usize = 32;
    let d = features.cols;
    let mut head = DenseLayer::zeros(d, classes);
    let mut order: Vec<usize> = (0..features.rows).collect();

    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(BATCH) {
            let m = chunk.len();
            let mut logits = vec![0.0; m * classes];
            for (bi, &i) in chunk.iter().enumerate() {
                let row = features.row(i);
                let out = &mut logits[bi * classes..(bi + 1) * classes];
                out.copy_from_slice(&head.bias);
                for (j, &f) in row.iter().enumerate() {
                    if f == 0.0 {
                        continue;
                    }
                    let w = &head.weights[j * classes..(j + 1) * classes];
                    for (o, &wj) in out.iter_mut().zip(w) {
                        *o += f * wj;
                    }
                }
            }
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, dlogits) = cross_entropy_loss(&Logits { data: logits, classes }, &batch_labels)?;
            for (bi, &i) in chunk.iter().enumerate() {
                let drow = dlogits.row(bi);
                let frow = features.row(i);
                for (k, &dk) in drow.iter().enumerate() {
                    head.bias[k] -= lr * dk;
                }
                for (j, &f) in frow.iter().enumerate() {
                    if f == 0.0 {
                        continue;
                    }
                    let gw = &mut head.weights[j * classes..(j + 1) * classes];
                    for (k, &dk) in drow.iter().enumerate() {
                        gw[k] -= lr * f * dk;
                    }
                }
            }
        }
    }
    Ok(head)
}

/// Mean cross-entropy of a (features, labels) set under a given head.
pub fn head_loss(features: &FeatureMatrix, labels: &[usize], head: &DenseLayer, classes: usize) -> Result<f64> {
    let n = features.rows;
    let mut logits = vec![0.0; n * classes];
    for i in 0..n {
        let row = features.row(i);
        let out = &mut logits[i * classes..(i + 1) * classes];
        out.copy_from_slice(&head.bias);
        for (j, &f) in row.iter().enumerate() {
            let w = &head.weights[j * classes..(j + 1) * classes];
            for (o, &wj) in out.iter_mut().zip(w) {
                *o += f * wj;
            }
        }
    }
    let (loss, _) = cross_entropy_loss(&Logits { data: logits, classes }, labels)?;
    Ok(loss)
}

// ---------------------------------------------------------------------
// Binary snapshot format: a header of little-endian u32 values
// (input_channels, input_side, n_layers, {filters, kernel}*, classes,
// head_fitted), then every f64 little-endian in declaration order:
// conv weights+bias per layer, head weights+bias, then the momentum
// buffers in the same order.
// ---------------------------------------------------------------------

pub fn serialize_probe(spec: &ProbeSpec, state: &ProbeState) -> Result<Vec<u8>> {
    spec.validate()?;
    state.check_shapes(spec)?;
    let mut out = Vec::new();
    let push_u32 = |out: &mut Vec<u8>, v: usize| {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    };
    push_u32(&mut out, spec.input_channels);
    push_u32(&mut out, spec.input_side);
    push_u32(&mut out, spec.conv_layers.len());
    for l in &spec.conv_layers {
        push_u32(&mut out, l.filters);
        push_u32(&mut out, l.kernel);
    }
    push_u32(&mut out, spec.head_classes);
    push_u32(&mut out, state.head_fitted as usize);

    let push_f64s = |out: &mut Vec<u8>, vs: &[f64]| {
        for v in vs {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for layer in &state.conv {
        push_f64s(&mut out, &layer.weights);
        push_f64s(&mut out, &layer.bias);
    }
    push_f64s(&mut out, &state.head.weights);
    push_f64s(&mut out, &state.head.bias);
    for layer in &state.momentum.conv {
        push_f64s(&mut out, &layer.weights);
        push_f64s(&mut out, &layer.bias);
    }
    push_f64s(&mut out, &state.momentum.head.weights);
    push_f64s(&mut out, &state.momentum.head.bias);
    Ok(out)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: "truncated header: expected 4 more bytes".into(),
            });
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let end = self.pos + 8 * count;
        if end > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: format!(
                    "truncated payload: {what} needs {count} f64 values ({} bytes missing)",
                    end - self.bytes.len()
                ),
            });
        }
        let vs = self.bytes[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = end;
        Ok(vs)
    }
}

pub fn deserialize_probe(bytes: &[u8]) -> Result<(ProbeSpec, ProbeState)> {
    let mut r = ByteReader { bytes, pos: 0 };
    let input_channels = r.u32()? as usize;
    let input_side = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Format {
            offset: 8,
            message: format!("implausible conv layer count {n_layers}"),
        });
    }
    let mut conv_layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let filters = r.u32()? as usize;
        let kernel = r.u32()? as usize;
        conv_layers.push(ConvLayerSpec { filters, kernel });
    }
    let head_classes = r.u32()? as usize;
    let head_fitted = match r.u32()? {
        0 => false,
        1 => true,
        v => {
            return Err(Error::Format {
                offset: r.pos - 4,
                message: format!("head_fitted flag must be 0 or 1, got {v}"),
            })
        }
    };
    let spec = ProbeSpec { input_channels, input_side, conv_layers, head_classes };
    spec.validate().map_err(|e| Error::Format {
        offset: 0,
        message: format!("header does not describe a valid probe: {e}"),
    })?;

    let dims = spec.layer_dims();
    let read_params = |r: &mut ByteReader| -> Result<(Vec<ConvLayer>, DenseLayer)> {
        let mut conv = Vec::with_capacity(dims.len());
        for (i, d) in dims.iter().enumerate() {
            let weights = r.f64s(d.filters * d.in_channels * d.kernel * d.kernel, &format!("conv layer {i} weights"))?;
            let bias = r.f64s(d.filters, &format!("conv layer {i} bias"))?;
            conv.push(ConvLayer { weights, bias });
        }
        let weights = r.f64s(spec.feature_len() * spec.head_classes, "head weights")?;
        let bias = r.f64s(spec.head_classes, "head bias")?;
        Ok((conv, DenseLayer { weights, bias }))
    };

    let (conv, head) = read_params(&mut r)?;
    let (mconv, mhead) = read_params(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: format!("{} trailing bytes after probe payload", bytes.len() - r.pos),
        });
    }
    let state = ProbeState {
        conv,
        head,
        momentum: MomentumBuffers { conv: mconv, head: mhead },
        head_fitted,
    };
    Ok((spec, state))
}
