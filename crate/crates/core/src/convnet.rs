//! One-dimensional convolutional network over one-hot DNA.
//!
//! Layout: a stack of valid (unpadded) cross-correlations, each followed by
//! ReLU and a pooling stage; the last conv layer is always global-max pooled.
//! A dense ReLU layer produces the embedding, and an affine layer plus
//! softmax produces the two class probabilities.
//!
//! All parameters live in one flat `Vec<f64>`:
//! for each conv layer `weights[filter][channel][tap]` then `bias[filter]`,
//! then the embedding layer `weights[out][in]`, `bias[out]`, then the output
//! layer `weights[class][emb]`, `bias[class]`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::OneHotTensor;
use crate::rng::{mix, rng_for};

pub const CONVNET_FORMAT: &str = "seqling-convnet";
pub const CONVNET_VERSION: u32 = 1;
const INPUT_CHANNELS: usize = 4;
const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    None,
    Max { width: usize },
    GlobalMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub pool: Pooling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvNetArch {
    pub conv_layers: Vec<ConvLayerSpec>,
    pub dense_embedding_dim: usize,
    pub max_len: usize,
}

impl Default for ConvNetArch {
    fn default() -> Self {
        ConvNetArch {
            conv_layers: vec![
                ConvLayerSpec {
                    filters: 32,
                    kernel_width: 8,
                    stride: 1,
                    pool: Pooling::Max { width: 4 },
                },
                ConvLayerSpec {
                    filters: 64,
                    kernel_width: 8,
                    stride: 1,
                    pool: Pooling::GlobalMax,
                },
            ],
            dense_embedding_dim: 64,
            max_len: 2000,
        }
    }
}

/// Resolved geometry of one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    in_channels: usize,
    in_len: usize,
    out_len: usize,
    pooled_len: usize,
}

impl ConvNetArch {
    /// Small two-layer network used in tests and quick experiments.
    pub fn tiny(max_len: usize) -> Self {
        ConvNetArch {
            conv_layers: vec![
                ConvLayerSpec {
                    filters: 4,
                    kernel_width: 4,
                    stride: 1,
                    pool: Pooling::Max { width: 2 },
                },
                ConvLayerSpec {
                    filters: 8,
                    kernel_width: 3,
                    stride: 1,
                    pool: Pooling::GlobalMax,
                },
            ],
            dense_embedding_dim: 8,
            max_len,
        }
    }

    fn shapes(&self) -> Result<Vec<LayerShape>> {
        let bad = |m: String| Error::Architecture(m);
        if self.conv_layers.is_empty() {
            return Err(bad("at least one conv layer is required".into()));
        }
        if self.max_len == 0 || self.dense_embedding_dim == 0 {
            return Err(bad("max_len and dense_embedding_dim must be positive".into()));
        }
        let mut shapes = Vec::new();
        let (mut channels, mut len) = (INPUT_CHANNELS, self.max_len);
        let last = self.conv_layers.len() - 1;
        for (i, l) in self.conv_layers.iter().enumerate() {
            if l.filters == 0 || l.kernel_width == 0 || l.stride == 0 {
                return Err(bad(format!("layer {i}: dimensions must be positive")));
            }
            if l.kernel_width > len {
                return Err(bad(format!(
                    "layer {i}: kernel width {} exceeds input length {len}",
                    l.kernel_width
                )));
            }
            let out_len = (len - l.kernel_width) / l.stride + 1;
            let pooled_len = match (l.pool, i == last) {
                (Pooling::GlobalMax, true) => 1,
                (_, true) => return Err(bad("the last conv layer must use global max pooling".into())),
                (Pooling::GlobalMax, false) => {
                    return Err(bad(format!("layer {i}: global max pooling is only allowed last")))
                }
                (Pooling::None, false) => out_len,
                (Pooling::Max { width }, false) => {
                    if width == 0 || width > out_len {
                        return Err(bad(format!("layer {i}: pool width {width} vs length {out_len}")));
                    }
                    out_len / width
                }
            };
            shapes.push(LayerShape {
                in_channels: channels,
                in_len: len,
                out_len,
                pooled_len,
            });
            channels = l.filters;
            len = pooled_len;
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(Layout::new(self, &self.shapes()?).total)
    }
}

#[derive(Debug, Clone)]
struct Layout {
    /// (weight offset, bias offset) per conv layer
    conv: Vec<(usize, usize)>,
    dense_w: usize,
    dense_b: usize,
    out_w: usize,
    out_b: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &ConvNetArch, shapes: &[LayerShape]) -> Layout {
        let mut off = 0;
        let mut conv = Vec::new();
        for (l, s) in arch.conv_layers.iter().zip(shapes) {
            let w = off;
            off += l.filters * s.in_channels * l.kernel_width;
            conv.push((w, off));
            off += l.filters;
        }
        let feat = arch.conv_layers.last().expect("validated").filters;
        let emb = arch.dense_embedding_dim;
        let dense_w = off;
        let dense_b = dense_w + emb * feat;
        let out_w = dense_b + emb;
        let out_b = out_w + CLASSES * emb;
        Layout {
            conv,
            dense_w,
            dense_b,
            out_w,
            out_b,
            total: out_b + CLASSES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Stop when held-out loss has not improved for this many epochs.
    pub early_stop_patience: Option<usize>,
    /// Fraction of the training data held out when early stopping is on.
    pub validation_fraction: f64,
    /// Weight each class by n / (2 * n_class) in the loss.
    pub balanced_loss: bool,
    /// Upper bound on the per-step gradient L2 norm.
    pub clip_norm: Option<f64>,
    /// Each epoch trains on every minority-class example plus an equally
    /// sized fresh draw from the majority class.
    pub undersample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 0.02,
            momentum: 0.9,
            seed: 0,
            early_stop_patience: None,
            validation_fraction: 0.1,
            balanced_loss: true,
            clip_norm: Some(1.0),
            undersample: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParam("momentum must be in [0,1)".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidParam("clip_norm must be finite and > 0".into()));
            }
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::InvalidParam("early_stop_patience must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidParam("validation_fraction must be in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probabilities: [f64; 2],
    pub embedding: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
struct Trace {
    /// Input of each conv layer, channel-major.
    inputs: Vec<Vec<f64>>,
    /// Post-ReLU conv output of each layer, filter-major.
    acts: Vec<Vec<f64>>,
    /// For each pooled cell, the index into `acts` it was taken from.
    argmax: Vec<Vec<usize>>,
    features: Vec<f64>,
    embedding: Vec<f64>,
    logits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetModel {
    arch: ConvNetArch,
    params: Vec<f64>,
    pub training_log: Vec<f64>,
}

/// Velocity state for SGD with momentum: `v <- mu v - lr g; p <- p + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescale the gradient so its L2 norm is at most this value.
    pub clip_norm: Option<f64>,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(n_params: usize, learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            clip_norm: None,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn with_clip_norm(mut self, clip_norm: Option<f64>) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for ((p, v), g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *v = self.momentum * *v - self.learning_rate * scale * g;
            *p += *v;
        }
    }
}

fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn cross_entropy(logits: [f64; 2], label: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label]
}

impl ConvNetModel {
    /// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
    pub fn init(arch: &ConvNetArch, seed: u64) -> Result<ConvNetModel> {
        let shapes = arch.shapes()?;
        let layout = Layout::new(arch, &shapes);
        let mut rng = rng_for(seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, params: &mut [f64]| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        for ((l, s), &(w, b)) in arch.conv_layers.iter().zip(&shapes).zip(&layout.conv) {
            fill(w..b, s.in_channels * l.kernel_width, &mut params);
        }
        let feat = arch.conv_layers.last().expect("validated").filters;
        fill(layout.dense_w..layout.dense_b, feat, &mut params);
        fill(layout.out_w..layout.out_b, arch.dense_embedding_dim, &mut params);
        Ok(ConvNetModel {
            arch: arch.clone(),
            params,
            training_log: Vec::new(),
        })
    }

    pub fn from_parts(arch: ConvNetArch, params: Vec<f64>, training_log: Vec<f64>) -> Result<ConvNetModel> {
        let expected = arch.parameter_count()?;
        if params.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(ConvNetModel {
            arch,
            params,
            training_log,
        })
    }

    pub fn arch(&self) -> &ConvNetArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> (Vec<LayerShape>, Layout) {
        let shapes = self.arch.shapes().expect("validated at construction");
        let layout = Layout::new(&self.arch, &shapes);
        (shapes, layout)
    }

    fn check_input(&self, x: &OneHotTensor) -> Result<()> {
        if x.max_len != self.arch.max_len || x.data.len() != INPUT_CHANNELS * x.max_len {
            return Err(Error::Dimension {
                expected: self.arch.max_len,
                got: x.max_len,
            });
        }
        Ok(())
    }

    fn trace(&self, x: &OneHotTensor) -> Trace {
        let (shapes, layout) = self.layout();
        let p = &self.params;
        let mut inputs = Vec::with_capacity(shapes.len());
        let mut acts = Vec::with_capacity(shapes.len());
        let mut argmax = Vec::with_capacity(shapes.len());
        let mut current = x.data.clone();
        for ((l, s), &(w_off, b_off)) in self.arch.conv_layers.iter().zip(&shapes).zip(&layout.conv) {
            let (kw, stride, ol) = (l.kernel_width, l.stride, s.out_len);
            let mut out = vec![0.0; l.filters * ol];
            for f in 0..l.filters {
                let row = &mut out[f * ol..(f + 1) * ol];
                row.fill(p[b_off + f]);
                for c in 0..s.in_channels {
                    let input = &current[c * s.in_len..(c + 1) * s.in_len];
                    for k in 0..kw {
                        let wv = p[w_off + (f * s.in_channels + c) * kw + k];
                        if wv == 0.0 {
                            continue;
                        }
                        if stride == 1 {
                            for (o, &xv) in row.iter_mut().zip(&input[k..k + ol]) {
                                *o += wv * xv;
                            }
                        } else {
                            for (t, o) in row.iter_mut().enumerate() {
                                *o += wv * input[t * stride + k];
                            }
                        }
                    }
                }
            }
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            let (pooled, idx) = match l.pool {
                Pooling::None => (out.clone(), (0..out.len()).collect()),
                Pooling::Max { width } => pool_max(&out, l.filters, ol, width, s.pooled_len),
                Pooling::GlobalMax => pool_max(&out, l.filters, ol, ol, 1),
            };
            inputs.push(std::mem::replace(&mut current, pooled));
            acts.push(out);
            argmax.push(idx);
        }
        let features = current;
        let emb = self.arch.dense_embedding_dim;
        let nf = features.len();
        let embedding: Vec<f64> = (0..emb)
            .map(|i| {
                let w = &p[layout.dense_w + i * nf..layout.dense_w + (i + 1) * nf];
                let z = p[layout.dense_b + i] + dot(w, &features);
                z.max(0.0)
            })
            .collect();
        let mut logits = [0.0; 2];
        for (j, l) in logits.iter_mut().enumerate() {
            let w = &p[layout.out_w + j * emb..layout.out_w + (j + 1) * emb];
            *l = p[layout.out_b + j] + dot(w, &embedding);
        }
        Trace {
            inputs,
            acts,
            argmax,
            features,
            embedding,
            logits,
        }
    }

    pub fn forward(&self, x: &OneHotTensor) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let t = self.trace(x);
        Ok(ForwardOutput {
            probabilities: softmax(t.logits),
            embedding: t.embedding,
        })
    }

    /// Post-ReLU, pre-pooling feature maps of every conv layer, each laid
    /// out `[filter][position]`.
    pub fn conv_activations(&self, x: &OneHotTensor) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self.trace(x).acts)
    }

    pub fn embed(&self, x: &OneHotTensor) -> Result<Vec<f64>> {
        self.forward(x).map(|o| o.embedding)
    }

    /// Positive-class probability.
    pub fn predict_proba(&self, x: &OneHotTensor) -> Result<f64> {
        self.forward(x).map(|o| o.probabilities[1])
    }

    /// Adds `weight * dLoss/dparams` for one example into `grad`; returns
    /// the unweighted cross-entropy.
    fn accumulate_gradient(&self, x: &OneHotTensor, label: usize, weight: f64, grad: &mut [f64]) -> f64 {
        let (shapes, layout) = self.layout();
        let p = &self.params;
        let t = self.trace(x);
        let loss = cross_entropy(t.logits, label);
        let probs = softmax(t.logits);
        let emb = self.arch.dense_embedding_dim;
        let nf = t.features.len();

        let mut dlogits = probs;
        dlogits[label] -= 1.0;
        dlogits.iter_mut().for_each(|d| *d *= weight);

        let mut dh = vec![0.0; emb];
        for (j, &dl) in dlogits.iter().enumerate() {
            grad[layout.out_b + j] += dl;
            for i in 0..emb {
                grad[layout.out_w + j * emb + i] += dl * t.embedding[i];
                dh[i] += p[layout.out_w + j * emb + i] * dl;
            }
        }
        let mut dcur = vec![0.0; nf];
        for i in 0..emb {
            // ReLU gate; embedding == 0 means the pre-activation was <= 0
            if t.embedding[i] <= 0.0 {
                continue;
            }
            let dz = dh[i];
            grad[layout.dense_b + i] += dz;
            let row = layout.dense_w + i * nf;
            for k in 0..nf {
                grad[row + k] += dz * t.features[k];
                dcur[k] += p[row + k] * dz;
            }
        }

        for li in (0..shapes.len()).rev() {
            let l = &self.arch.conv_layers[li];
            let s = shapes[li];
            let (w_off, b_off) = layout.conv[li];
            let (kw, stride, ol) = (l.kernel_width, l.stride, s.out_len);
            let act = &t.acts[li];
            // route pooled gradients back to the selected positions, gated by ReLU
            let mut dpre = vec![0.0; act.len()];
            for (cell, &src) in t.argmax[li].iter().enumerate() {
                if act[src] > 0.0 {
                    dpre[src] += dcur[cell];
                }
            }
            let input = &t.inputs[li];
            let need_input_grad = li > 0;
            let mut din = if need_input_grad {
                vec![0.0; s.in_channels * s.in_len]
            } else {
                Vec::new()
            };
            for f in 0..l.filters {
                for tpos in 0..ol {
                    let g = dpre[f * ol + tpos];
                    if g == 0.0 {
                        continue;
                    }
                    grad[b_off + f] += g;
                    let start = tpos * stride;
                    for c in 0..s.in_channels {
                        let wbase = w_off + (f * s.in_channels + c) * kw;
                        let ibase = c * s.in_len + start;
                        for k in 0..kw {
                            grad[wbase + k] += g * input[ibase + k];
                        }
                        if need_input_grad {
                            for k in 0..kw {
                                din[ibase + k] += g * p[wbase + k];
                            }
                        }
                    }
                }
            }
            dcur = din;
        }
        loss
    }

    /// Weighted mean cross-entropy over `batch`, forward pass only.
    pub fn loss(&self, batch: &[(&OneHotTensor, u8)], weights: Option<&[f64; 2]>) -> Result<f64> {
        let w = weights.copied().unwrap_or([1.0, 1.0]);
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in batch {
            self.check_input(x)?;
            let wy = w[*y as usize];
            num += wy * cross_entropy(self.trace(x).logits, *y as usize);
            den += wy;
        }
        Ok(num / den)
    }

    /// Gradient of the weighted mean cross-entropy over `batch`. Per-example
    /// gradients may be computed in parallel; they are summed in batch order.
    pub fn batch_gradient(&self, batch: &[(&OneHotTensor, u8)], weights: Option<&[f64; 2]>) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidParam("empty batch".into()));
        }
        for (x, y) in batch {
            self.check_input(x)?;
            if *y > 1 {
                return Err(Error::InvalidParam(format!("label {y} is not 0 or 1")));
            }
        }
        let w = weights.copied().unwrap_or([1.0, 1.0]);
        let total_w: f64 = batch.iter().map(|(_, y)| w[*y as usize]).sum();
        let parts: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .map(|(x, y)| {
                let mut g = vec![0.0; self.params.len()];
                let scale = w[*y as usize] / total_w;
                let l = self.accumulate_gradient(x, *y as usize, scale, &mut g);
                (scale * l, g)
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }

    /// One SGD-with-momentum step on `batch`; returns the pre-step batch loss.
    pub fn backward_and_step(
        &mut self,
        opt: &mut Sgd,
        batch: &[(&OneHotTensor, u8)],
        weights: Option<&[f64; 2]>,
        epoch: usize,
        batch_index: usize,
    ) -> Result<f64> {
        let (loss, grad) = self.batch_gradient(batch, weights)?;
        let diverged = Error::Divergence {
            epoch,
            batch: batch_index,
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged);
        }
        opt.step(&mut self.params, &grad);
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(diverged);
        }
        Ok(loss)
    }

    /// Mini-batch SGD with momentum over shuffled data. Deterministic in
    /// `config.seed` regardless of thread count.
    pub fn train(
        arch: &ConvNetArch,
        inputs: &[OneHotTensor],
        labels: &[u8],
        config: &TrainConfig,
    ) -> Result<ConvNetModel> {
        config.validate()?;
        if inputs.len() != labels.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        if n_pos == 0 || n_pos == labels.len() {
            return Err(Error::SingleClass);
        }
        let mut model = ConvNetModel::init(arch, mix(config.seed, 0))?;
        for x in inputs {
            model.check_input(x)?;
        }
        let mut rng = rng_for(mix(config.seed, 1));
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut holdout = Vec::new();
        if config.early_stop_patience.is_some() {
            order.shuffle(&mut rng);
            let n_val = ((inputs.len() as f64 * config.validation_fraction).round() as usize)
                .clamp(1, inputs.len() - 1);
            holdout = order.split_off(inputs.len() - n_val);
            order.sort_unstable();
        }
        let weights = if config.balanced_loss {
            let n = order.len() as f64;
            let pos = order.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let neg = n - pos;
            if pos == 0.0 || neg == 0.0 {
                return Err(Error::SingleClass);
            }
            Some([n / (2.0 * neg), n / (2.0 * pos)])
        } else {
            None
        };

        let val: Vec<(&OneHotTensor, u8)> = holdout.iter().map(|&i| (&inputs[i], labels[i])).collect();
        let mut opt = Sgd::new(model.params.len(), config.learning_rate, config.momentum).with_clip_norm(config.clip_norm);
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        let mut stale = 0;
        let (minority, mut majority): (Vec<usize>, Vec<usize>) = {
            let (pos, neg): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| labels[i] == 1);
            if pos.len() <= neg.len() {
                (pos, neg)
            } else {
                (neg, pos)
            }
        };
        if minority.is_empty() {
            return Err(Error::SingleClass);
        }
        let step_weights = if config.undersample { None } else { weights };
        for epoch in 0..config.epochs {
            let epoch_order = if config.undersample {
                majority.shuffle(&mut rng);
                let mut e: Vec<usize> = minority.iter().chain(&majority[..minority.len()]).copied().collect();
                e.shuffle(&mut rng);
                e
            } else {
                order.shuffle(&mut rng);
                order.clone()
            };
            let mut total = 0.0;
            for (bi, chunk) in epoch_order.chunks(config.batch_size).enumerate() {
                let batch: Vec<(&OneHotTensor, u8)> = chunk.iter().map(|&i| (&inputs[i], labels[i])).collect();
                let loss = model.backward_and_step(&mut opt, &batch, step_weights.as_ref(), epoch, bi)?;
                total += loss * chunk.len() as f64;
            }
            model.training_log.push(total / epoch_order.len() as f64);

            if let Some(patience) = config.early_stop_patience {
                let v = model.loss(&val, weights.as_ref())?;
                if !v.is_finite() {
                    return Err(Error::Divergence { epoch, batch: 0 });
                }
                match &best {
                    Some((b, _, _)) if v >= *b => {
                        stale += 1;
                        if stale >= patience {
                            break;
                        }
                    }
                    _ => {
                        best = Some((v, model.params.clone(), epoch));
                        stale = 0;
                    }
                }
            }
        }
        if let Some((_, params, epoch)) = best {
            model.params = params;
            model.training_log.truncate(epoch + 1);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ConvNetFile::from(self)).expect("convnet serializes")
    }

    pub fn from_json(text: &str) -> Result<ConvNetModel> {
        let f: ConvNetFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        f.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ConvNetModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::in_file(path, e))
    }

    /// `epoch,loss` CSV of the per-epoch mean training loss.
    pub fn training_log_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.training_log.iter().enumerate() {
            out.push_str(&format!("{},{l:.17e}\n", i + 1));
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Non-overlapping max pooling per filter row; the trailing remainder is
/// dropped. Ties resolve to the first position.
fn pool_max(x: &[f64], filters: usize, len: usize, width: usize, out_len: usize) -> (Vec<f64>, Vec<usize>) {
    let mut vals = Vec::with_capacity(filters * out_len);
    let mut idx = Vec::with_capacity(filters * out_len);
    for f in 0..filters {
        for j in 0..out_len {
            let start = f * len + j * width;
            let mut best = start;
            for i in start + 1..start + width {
                if x[i] > x[best] {
                    best = i;
                }
            }
            vals.push(x[best]);
            idx.push(best);
        }
    }
    (vals, idx)
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ConvNetFile {
    format: String,
    version: u32,
    arch: ConvNetArch,
    parameters: Vec<f64>,
    training_log: Vec<f64>,
}

impl From<&ConvNetModel> for ConvNetFile {
    fn from(m: &ConvNetModel) -> Self {
        ConvNetFile {
            format: CONVNET_FORMAT.into(),
            version: CONVNET_VERSION,
            arch: m.arch.clone(),
            parameters: m.params.clone(),
            training_log: m.training_log.clone(),
        }
    }
}

impl TryFrom<ConvNetFile> for ConvNetModel {
    type Error = Error;
    fn try_from(f: ConvNetFile) -> Result<Self> {
        if f.format != CONVNET_FORMAT || f.version != CONVNET_VERSION {
            return Err(Error::Model(format!("unsupported convnet format {} v{}", f.format, f.version)));
        }
        ConvNetModel::from_parts(f.arch, f.parameters, f.training_log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::one_hot_encode;

    #[test]
    fn default_parameter_count() {
        // conv1 32*4*8+32, conv2 64*32*8+64, dense 64*64+64, out 2*64+2
        let expected = (32 * 4 * 8 + 32) + (64 * 32 * 8 + 64) + (64 * 64 + 64) + (2 * 64 + 2);
        assert_eq!(ConvNetArch::default().parameter_count().unwrap(), expected);
        assert_eq!(expected, 21_794);
    }

    #[test]
    fn architecture_errors() {
        let mut a = ConvNetArch::tiny(3);
        assert!(matches!(ConvNetModel::init(&a, 0), Err(Error::Architecture(_))));
        a = ConvNetArch::tiny(16);
        a.conv_layers[1].pool = Pooling::None;
        assert!(a.validate().is_err());
        a = ConvNetArch::tiny(16);
        a.conv_layers[0].pool = Pooling::GlobalMax;
        assert!(a.validate().is_err());
        a = ConvNetArch::tiny(16);
        // 16-4+1 = 13 -> pool 2 -> 6; kernel 7 > 6
        a.conv_layers[1].kernel_width = 7;
        assert!(a.validate().is_err());
    }

    #[test]
    fn init_deterministic_zero_bias() {
        let arch = ConvNetArch::tiny(16);
        let a = ConvNetModel::init(&arch, 11).unwrap();
        let b = ConvNetModel::init(&arch, 11).unwrap();
        assert_eq!(a.params(), b.params());
        let (_, layout) = a.layout();
        for &(_, b_off) in &layout.conv {
            assert!(a.params()[b_off..b_off + 4].iter().all(|&v| v == 0.0));
        }
        assert!(a.params()[layout.dense_b..layout.out_w].iter().all(|&v| v == 0.0));
        assert!(a.params()[layout.out_b..].iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a.params()[..64].iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let arch = ConvNetArch::tiny(16);
        let mut m = ConvNetModel::init(&arch, 1).unwrap();
        m.params_mut().fill(0.0);
        let out = m.forward(&one_hot_encode("ACGTACGTACGTACGT", 16)).unwrap();
        assert_eq!(out.probabilities, [0.5, 0.5]);
        assert!(out.embedding.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_length_mismatch() {
        let m = ConvNetModel::init(&ConvNetArch::tiny(16), 1).unwrap();
        assert!(matches!(
            m.forward(&one_hot_encode("ACGT", 8)),
            Err(Error::Dimension { expected: 16, got: 8 })
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut m = ConvNetModel::init(&ConvNetArch::tiny(16), 2).unwrap();
        let before = m.params().to_vec();
        let x = one_hot_encode("ACGTTTGACCAGTACA", 16);
        let mut opt = Sgd::new(before.len(), 0.0, 0.9);
        let loss = m.backward_and_step(&mut opt, &[(&x, 1)], None, 0, 0).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(m.params(), &before[..]);
    }

    #[test]
    fn pooling_routes_to_first_max() {
        let (v, i) = pool_max(&[1.0, 3.0, 3.0, 0.0, 5.0, 2.0], 1, 6, 2, 3);
        assert_eq!(v, vec![3.0, 3.0, 5.0]);
        assert_eq!(i, vec![1, 2, 4]);
    }

    #[test]
    fn json_round_trip() {
        let m = ConvNetModel::init(&ConvNetArch::tiny(16), 3).unwrap();
        let back = ConvNetModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let bad = m.to_json().replacen("seqling-convnet", "other", 1);
        assert!(ConvNetModel::from_json(&bad).is_err());
    }
}
