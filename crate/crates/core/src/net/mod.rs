//! Compact dual-stream late-fusion CNN with hand-written reverse-mode
//! gradients.
//!
//! Each stream stacks [conv3x3 same-pad -> ReLU -> maxpool2x2] blocks, is
//! globally average-pooled, and the two stream feature vectors are
//! concatenated before a two-layer head. Plain SGD only: no momentum, no
//! weight decay.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{lr_at, mean_loss, train, EpochRecord, TrainConfig, TrainSample};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, MultiFeatureImage};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Conv channel widths per stream block.
    pub stream_channels: Vec<usize>,
    pub kernel_size: usize,
    pub num_classes: usize,
    pub fusion_hidden: usize,
    pub input_dims: (usize, usize),
    pub cxr_in_channels: usize,
    pub mf_in_channels: usize,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            stream_channels: vec![8, 16],
            kernel_size: 3,
            num_classes: 3,
            fusion_hidden: 32,
            input_dims: (64, 64),
            cxr_in_channels: 1,
            mf_in_channels: 3,
            init_seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stream_channels.is_empty() {
            return Err(Error::InvalidConfig("stream_channels is empty".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be >= 2".into()));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size == 0 {
            return Err(Error::InvalidConfig("kernel_size must be odd".into()));
        }
        let blocks = self.stream_channels.len() as u32;
        let (w, h) = self.input_dims;
        if w >> blocks == 0 || h >> blocks == 0 {
            return Err(Error::InvalidConfig(format!(
                "input {w}x{h} too small for {blocks} pooling blocks"
            )));
        }
        // the deepest conv still needs its padding to fit the feature map
        let (last_w, last_h) = (w >> (blocks - 1), h >> (blocks - 1));
        if last_w.min(last_h) <= self.kernel_size / 2 {
            return Err(Error::InvalidConfig(format!(
                "kernel {} does not fit the {last_w}x{last_h} deepest feature map",
                self.kernel_size
            )));
        }
        if self.fusion_hidden == 0 {
            return Err(Error::InvalidConfig("fusion_hidden must be >= 1".into()));
        }
        Ok(())
    }

    fn stream_feature_len(&self) -> usize {
        *self.stream_channels.last().expect("validated non-empty")
    }
}

/// `[out][in][k][k]` kernels plus per-output biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            kernel,
            weight: vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_ch + i) * self.kernel + ky) * self.kernel + kx]
    }
}

/// `[out][in]` weights plus per-output biases.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

/// All learnable tensors, shape-tagged by the config that built them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    pub cxr_convs: Vec<ConvLayer>,
    pub mf_convs: Vec<ConvLayer>,
    pub fusion: DenseLayer,
    pub head: DenseLayer,
}

/// Cotangents of [`ModelParams`], sharing its shape tree.
pub type Gradient = ModelParams;

impl ModelParams {
    fn zeros(config: &NetConfig) -> Self {
        let build_stream = |in_ch: usize| -> Vec<ConvLayer> {
            let mut layers = Vec::new();
            let mut prev = in_ch;
            for &ch in &config.stream_channels {
                layers.push(ConvLayer::zeros(ch, prev, config.kernel_size));
                prev = ch;
            }
            layers
        };
        let cxr_convs = build_stream(config.cxr_in_channels);
        let mf_convs = build_stream(config.mf_in_channels);
        let fusion = DenseLayer::zeros(config.fusion_hidden, 2 * config.stream_feature_len());
        let head = DenseLayer::zeros(config.num_classes, config.fusion_hidden);
        Self {
            config: config.clone(),
            cxr_convs,
            mf_convs,
            fusion,
            head,
        }
    }

    /// Gradient shaped like these params, all zeros.
    pub fn zeros_like(&self) -> Gradient {
        Self::zeros(&self.config)
    }

    /// Tensors in declaration order, the canonical flat layout shared by
    /// the optimizer, the checkpoint format and the gradient checks.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for layer in self.cxr_convs.iter().chain(&self.mf_convs) {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.fusion.weight);
        out.push(&self.fusion.bias);
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for layer in self.cxr_convs.iter_mut().chain(self.mf_convs.iter_mut()) {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.fusion.weight);
        out.push(&mut self.fusion.bias);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn shape_congruent(&self, other: &ModelParams) -> bool {
        self.config == other.config
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Kaiming-uniform fan-in initialization (bound `sqrt(6 / fan_in)`) from a
/// seeded stream; biases start at zero.
pub fn init_params(cfg: &NetConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let k = cfg.kernel_size;
    for layer in params
        .cxr_convs
        .iter_mut()
        .chain(params.mf_convs.iter_mut())
    {
        let bound = (6.0 / (layer.in_ch * k * k) as f64).sqrt();
        for w in layer.weight.iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
    }
    for dense in [&mut params.fusion, &mut params.head] {
        let bound = (6.0 / dense.in_dim as f64).sqrt();
        for w in dense.weight.iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Softmax output of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub probabilities: Vec<f64>,
}

impl ClassDistribution {
    /// Max-subtraction stabilized softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self {
            probabilities: exps.iter().map(|e| e / sum).collect(),
        }
    }

    /// Argmax with ties broken by the lowest class index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0usize, self.probabilities[0]);
        for (i, p) in self.probabilities.iter().enumerate().skip(1) {
            if *p > best.1 {
                best = (i, *p);
            }
        }
        best
    }
}

/// Cross-entropy of the true class: `-ln p[label]`, non-negative, zero only
/// on a one-hot hit. The distribution comes out of the stabilized softmax,
/// so this equals the stabilized log-softmax form to round-off.
pub fn loss_xent(dist: &ClassDistribution, label: usize) -> f64 {
    -(dist.probabilities[label].max(f64::MIN_POSITIVE)).ln()
}

/// Channel-major activation tensor.
#[derive(Debug, Clone)]
struct Tensor3 {
    ch: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    fn zeros(ch: usize, h: usize, w: usize) -> Self {
        Self {
            ch,
            h,
            w,
            data: vec![0.0; ch * h * w],
        }
    }

    #[inline]
    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let s = self.h * self.w;
        &mut self.data[c * s..(c + 1) * s]
    }
}

struct StreamCache {
    /// Input to each conv layer (index 0 is the raw stream input).
    inputs: Vec<Tensor3>,
    /// Conv outputs before ReLU.
    pre_relu: Vec<Tensor3>,
    /// Post-ReLU maps feeding each pool.
    post_relu: Vec<Tensor3>,
    /// Flat argmax index (into the post-ReLU plane) per pooled cell.
    pool_argmax: Vec<Vec<usize>>,
    /// Pooled output of the final block.
    final_pooled: Tensor3,
}

/// Everything backward needs from one forward pass.
pub struct ActivationCache {
    cxr: StreamCache,
    mf: StreamCache,
    concat: Vec<f64>,
    fusion_pre: Vec<f64>,
    hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub distribution: ClassDistribution,
}

fn conv_forward(layer: &ConvLayer, input: &Tensor3) -> Tensor3 {
    let (h, w) = (input.h, input.w);
    let k = layer.kernel;
    let pad = (k / 2) as isize;
    let mut out = Tensor3::zeros(layer.out_ch, h, w);
    for o in 0..layer.out_ch {
        out.plane_mut(o).fill(layer.bias[o]);
        for i in 0..layer.in_ch {
            let in_plane = input.plane(i);
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let weight = layer.w(o, i, ky, kx);
                    if weight == 0.0 {
                        continue;
                    }
                    let out_plane = out.plane_mut(o);
                    for y in 0..h as isize {
                        let sy = y + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let (x_lo, x_hi) = x_range(w, dx);
                        let out_row = &mut out_plane[y as usize * w..(y as usize + 1) * w];
                        let in_row = &in_plane[sy as usize * w..(sy as usize + 1) * w];
                        for x in x_lo..x_hi {
                            out_row[x] += weight * in_row[(x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn x_range(w: usize, dx: isize) -> (usize, usize) {
    if dx >= 0 {
        (0, w - dx as usize)
    } else {
        ((-dx) as usize, w)
    }
}

fn relu(t: &Tensor3) -> Tensor3 {
    Tensor3 {
        ch: t.ch,
        h: t.h,
        w: t.w,
        data: t.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

fn maxpool2(t: &Tensor3) -> (Tensor3, Vec<usize>) {
    let (ph, pw) = (t.h / 2, t.w / 2);
    let mut out = Tensor3::zeros(t.ch, ph, pw);
    let mut argmax = vec![0usize; t.ch * ph * pw];
    for c in 0..t.ch {
        let plane = t.plane(c);
        for y in 0..ph {
            for x in 0..pw {
                let mut best_idx = (2 * y) * t.w + 2 * x;
                let mut best = plane[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * y + dy) * t.w + (2 * x + dx);
                    if plane[idx] > best {
                        best = plane[idx];
                        best_idx = idx;
                    }
                }
                let oi = (c * ph + y) * pw + x;
                out.data[oi] = best;
                argmax[oi] = best_idx;
            }
        }
    }
    (out, argmax)
}

fn stream_forward(convs: &[ConvLayer], input: Tensor3) -> (Vec<f64>, StreamCache) {
    let mut inputs = Vec::with_capacity(convs.len());
    let mut pre_relu = Vec::with_capacity(convs.len());
    let mut post_relu = Vec::with_capacity(convs.len());
    let mut pool_argmax = Vec::with_capacity(convs.len());
    let mut current = input;
    for layer in convs {
        let pre = conv_forward(layer, &current);
        let post = relu(&pre);
        let (pooled, argmax) = maxpool2(&post);
        inputs.push(current);
        pre_relu.push(pre);
        post_relu.push(post);
        pool_argmax.push(argmax);
        current = pooled;
    }
    // global average pool
    let spatial = (current.h * current.w) as f64;
    let features: Vec<f64> = (0..current.ch)
        .map(|c| current.plane(c).iter().sum::<f64>() / spatial)
        .collect();
    (
        features,
        StreamCache {
            inputs,
            pre_relu,
            post_relu,
            pool_argmax,
            final_pooled: current,
        },
    )
}

fn dense_forward(layer: &DenseLayer, input: &[f64]) -> Vec<f64> {
    (0..layer.out_dim)
        .map(|o| {
            layer.bias[o]
                + layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim]
                    .iter()
                    .zip(input)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
        })
        .collect()
}

fn image_to_tensor(img: &GrayImage) -> Tensor3 {
    Tensor3 {
        ch: 1,
        h: img.height(),
        w: img.width(),
        data: img.pixels().to_vec(),
    }
}

fn mf_to_tensor(mf: &MultiFeatureImage) -> Tensor3 {
    let mut data = Vec::with_capacity(3 * mf.width() * mf.height());
    for c in 0..3 {
        data.extend_from_slice(mf.channel(c));
    }
    Tensor3 {
        ch: 3,
        h: mf.height(),
        w: mf.width(),
        data,
    }
}

/// Full forward pass: both streams, late fusion, softmax head.
pub fn forward(
    params: &ModelParams,
    cxr: &GrayImage,
    mf: &MultiFeatureImage,
) -> Result<(Vec<f64>, ClassDistribution, ActivationCache)> {
    let cfg = &params.config;
    let (w, h) = cfg.input_dims;
    if cxr.width() != w || cxr.height() != h {
        return Err(Error::DimMismatch {
            expected_w: w,
            expected_h: h,
            got_w: cxr.width(),
            got_h: cxr.height(),
        });
    }
    if mf.width() != w || mf.height() != h {
        return Err(Error::DimMismatch {
            expected_w: w,
            expected_h: h,
            got_w: mf.width(),
            got_h: mf.height(),
        });
    }

    let (cxr_feat, cxr_cache) = stream_forward(&params.cxr_convs, image_to_tensor(cxr));
    let (mf_feat, mf_cache) = stream_forward(&params.mf_convs, mf_to_tensor(mf));

    let mut concat = cxr_feat;
    concat.extend_from_slice(&mf_feat);

    let fusion_pre = dense_forward(&params.fusion, &concat);
    let hidden: Vec<f64> = fusion_pre.iter().map(|v| v.max(0.0)).collect();
    let logits = dense_forward(&params.head, &hidden);
    let distribution = ClassDistribution::from_logits(&logits);

    Ok((
        logits.clone(),
        distribution.clone(),
        ActivationCache {
            cxr: cxr_cache,
            mf: mf_cache,
            concat,
            fusion_pre,
            hidden,
            logits,
            distribution,
        },
    ))
}

/// Argmax prediction with its softmax confidence.
pub fn predict(
    params: &ModelParams,
    cxr: &GrayImage,
    mf: &MultiFeatureImage,
) -> Result<(usize, f64)> {
    let (_, dist, _) = forward(params, cxr, mf)?;
    Ok(dist.argmax())
}

fn conv_backward(
    layer: &ConvLayer,
    input: &Tensor3,
    d_out: &Tensor3,
    d_layer: &mut ConvLayer,
    want_d_input: bool,
) -> Option<Tensor3> {
    let (h, w) = (input.h, input.w);
    let k = layer.kernel;
    let pad = (k / 2) as isize;
    let mut d_input = want_d_input.then(|| Tensor3::zeros(input.ch, h, w));
    for o in 0..layer.out_ch {
        let d_plane = d_out.plane(o);
        d_layer.bias[o] += d_plane.iter().sum::<f64>();
        for i in 0..layer.in_ch {
            let in_plane = input.plane(i);
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let mut acc = 0.0;
                    for y in 0..h as isize {
                        let sy = y + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let (x_lo, x_hi) = x_range(w, dx);
                        let d_row = &d_plane[y as usize * w..(y as usize + 1) * w];
                        let in_row = &in_plane[sy as usize * w..(sy as usize + 1) * w];
                        for x in x_lo..x_hi {
                            acc += d_row[x] * in_row[(x as isize + dx) as usize];
                        }
                    }
                    d_layer.weight[((o * layer.in_ch + i) * k + ky) * k + kx] += acc;

                    if let Some(d_in) = d_input.as_mut() {
                        let weight = layer.w(o, i, ky, kx);
                        if weight != 0.0 {
                            let d_in_plane = d_in.plane_mut(i);
                            for y in 0..h as isize {
                                let sy = y + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let (x_lo, x_hi) = x_range(w, dx);
                                let d_row = &d_plane[y as usize * w..(y as usize + 1) * w];
                                let d_in_row =
                                    &mut d_in_plane[sy as usize * w..(sy as usize + 1) * w];
                                for x in x_lo..x_hi {
                                    d_in_row[(x as isize + dx) as usize] += weight * d_row[x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    d_input
}

#[allow(clippy::needless_range_loop)]
fn stream_backward(
    convs: &[ConvLayer],
    cache: &StreamCache,
    d_features: &[f64],
    d_convs: &mut [ConvLayer],
) {
    // distribute the GAP cotangent uniformly over the final pooled map
    let last = &cache.final_pooled;
    let spatial = (last.h * last.w) as f64;
    let mut d_pooled = Tensor3::zeros(last.ch, last.h, last.w);
    for c in 0..last.ch {
        let g = d_features[c] / spatial;
        d_pooled.plane_mut(c).fill(g);
    }

    for li in (0..convs.len()).rev() {
        // unpool: route each pooled cotangent to its argmax cell
        let post = &cache.post_relu[li];
        let mut d_post = Tensor3::zeros(post.ch, post.h, post.w);
        let (ph, pw) = (d_pooled.h, d_pooled.w);
        for c in 0..post.ch {
            let d_post_plane = d_post.plane_mut(c);
            for y in 0..ph {
                for x in 0..pw {
                    let oi = (c * ph + y) * pw + x;
                    d_post_plane[cache.pool_argmax[li][oi]] += d_pooled.data[oi];
                }
            }
        }
        // ReLU mask from the pre-activation
        let pre = &cache.pre_relu[li];
        let mut d_pre = d_post;
        for (d, p) in d_pre.data.iter_mut().zip(&pre.data) {
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        let d_input = conv_backward(
            &convs[li],
            &cache.inputs[li],
            &d_pre,
            &mut d_convs[li],
            li > 0,
        );
        if li > 0 {
            d_pooled = d_input.expect("requested");
        }
    }
}

/// Mean cross-entropy over the batch and its exact gradient.
#[allow(clippy::needless_range_loop)]
pub fn backward(
    params: &ModelParams,
    batch: &[(&GrayImage, &MultiFeatureImage)],
    labels: &[usize],
) -> Result<(f64, Gradient)> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch of {} with {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let n = batch.len() as f64;
    let mut grad = params.zeros_like();
    let mut loss_sum = 0.0;

    for ((cxr, mf), &label) in batch.iter().zip(labels) {
        let (_, dist, cache) = forward(params, cxr, mf)?;
        loss_sum += loss_xent(&dist, label);

        // d loss / d logits for mean loss: (softmax - onehot) / n
        let mut d_logits: Vec<f64> = dist.probabilities.iter().map(|p| p / n).collect();
        d_logits[label] -= 1.0 / n;

        // head
        let mut d_hidden = vec![0.0; params.head.in_dim];
        for o in 0..params.head.out_dim {
            grad.head.bias[o] += d_logits[o];
            for i in 0..params.head.in_dim {
                grad.head.weight[o * params.head.in_dim + i] += d_logits[o] * cache.hidden[i];
                d_hidden[i] += params.head.weight[o * params.head.in_dim + i] * d_logits[o];
            }
        }
        // fusion ReLU + dense
        let mut d_concat = vec![0.0; params.fusion.in_dim];
        for o in 0..params.fusion.out_dim {
            let d = if cache.fusion_pre[o] > 0.0 {
                d_hidden[o]
            } else {
                0.0
            };
            grad.fusion.bias[o] += d;
            for i in 0..params.fusion.in_dim {
                grad.fusion.weight[o * params.fusion.in_dim + i] += d * cache.concat[i];
                d_concat[i] += params.fusion.weight[o * params.fusion.in_dim + i] * d;
            }
        }
        let feat_len = params.config.stream_feature_len();
        stream_backward(
            &params.cxr_convs,
            &cache.cxr,
            &d_concat[..feat_len],
            &mut grad.cxr_convs,
        );
        stream_backward(
            &params.mf_convs,
            &cache.mf,
            &d_concat[feat_len..],
            &mut grad.mf_convs,
        );
    }
    Ok((loss_sum / n, grad))
}

/// Plain SGD update `theta' = theta - eta * g`, elementwise.
pub fn sgd_step(params: &ModelParams, grad: &Gradient, lr: f64) -> Result<ModelParams> {
    if !params.shape_congruent(grad) {
        return Err(Error::ShapeMismatch(
            "gradient shape tree differs from params".into(),
        ));
    }
    let mut next = params.clone();
    for (t, g) in next.tensors_mut().into_iter().zip(grad.tensors()) {
        for (v, d) in t.iter_mut().zip(g) {
            *v -= lr * d;
        }
    }
    Ok(next)
}
