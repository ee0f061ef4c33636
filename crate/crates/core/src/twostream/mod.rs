//! The two-stream model: an attention stream that regresses soft heat maps,
//! a feature stream producing feature maps, a learnable bilinear join
//! `P = A·W·Bᵀ`, and a fully connected classifier head.

pub mod train;

use std::path::Path;

use crate::error::{Error, Result};
use crate::net3d::layers::{sigmoid, softmax};
use crate::net3d::{Gradients, LayerKind, LayerSpec, Network, NetworkConfig, Trace};
use crate::poolgen::{bilinear_general_bwd, bilinear_general_fwd, HeatMapStack, PooledMatrix};
use crate::tensor::{Matrix, Tensor};

pub use train::{
    finetune_two_stream, run_schedule, train_attention, Groups, Phase, Schedule, TrainLog, TrainOptions, Trainable,
};

/// Heat-map regressor: the trunk up to the pooled conv layer, resized to
/// `M = N·L` output channels and capped with a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionNet {
    pub net: Network,
    pub n_joints: usize,
    pub clip_len: usize,
}

impl AttentionNet {
    pub fn new(trunk: &NetworkConfig, layer: &str, n_joints: usize, clip_len: usize, seed: u64) -> Result<Self> {
        let cfg = trunk.attention_head(layer, n_joints * clip_len)?;
        Ok(AttentionNet {
            net: Network::init(cfg, seed)?,
            n_joints,
            clip_len,
        })
    }

    pub fn from_network(net: Network, n_joints: usize, clip_len: usize) -> Result<Self> {
        let layers = &net.config().layers;
        let n = layers.len();
        if n < 2 || layers[n - 1].kind != LayerKind::Sigmoid || layers[n - 2].kind != LayerKind::Conv3d {
            return Err(Error::InvalidArgument("attention network must end with conv3d + sigmoid".into()));
        }
        let m = layers[n - 2].channels.unwrap_or(0);
        if m != n_joints * clip_len {
            return Err(Error::dims(
                "attention net",
                format!("{m} output channels for {n_joints} joints x {clip_len} frames"),
            ));
        }
        Ok(AttentionNet { net, n_joints, clip_len })
    }

    pub fn channels(&self) -> usize {
        self.n_joints * self.clip_len
    }

    /// Index of the final conv, whose output is the pre-sigmoid logits.
    fn logit_layer(&self) -> usize {
        self.net.num_layers() - 2
    }

    /// Traced pass up to the pre-sigmoid logits.
    pub fn forward_logits(&self, clip: &Tensor) -> Result<Trace> {
        self.net.forward_traced(clip, self.logit_layer())
    }

    pub fn heatmaps_from_logits(&self, logits: &Tensor) -> Result<HeatMapStack> {
        HeatMapStack::new(self.n_joints, self.clip_len, logits.map(sigmoid))
    }

    pub fn forward(&self, clip: &Tensor) -> Result<HeatMapStack> {
        let trace = self.forward_logits(clip)?;
        self.heatmaps_from_logits(trace.output())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.net.save(dir)
    }

    pub fn load(dir: impl AsRef<Path>, n_joints: usize, clip_len: usize) -> Result<Self> {
        AttentionNet::from_network(Network::load(dir)?, n_joints, clip_len)
    }
}

pub fn attention_fwd(model: &AttentionNet, clip: &Tensor) -> Result<HeatMapStack> {
    model.forward(clip)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Sigmoid cross-entropy between predicted maps (given as pre-sigmoid
/// logits) and target maps, summed over voxels and divided by the number of
/// maps `M`:
/// `ℓ = (1/M)·Σ [softplus(z) − p·z]`, which equals
/// `−(1/M)·Σ [p·log p̂ + (1 − p)·log(1 − p̂)]` with `p̂ = σ(z)`.
/// Also returns `∂ℓ/∂z = (p̂ − p)/M`.
pub fn attention_loss_logits(logits: &Tensor, target: &HeatMapStack) -> Result<(f64, Tensor)> {
    if logits.dims() != target.maps().dims() {
        return Err(Error::dims(
            "attention_loss",
            format!("prediction {:?} vs target {:?}", logits.dims(), target.maps().dims()),
        ));
    }
    let m = target.channels() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &p) in logits.data().iter().zip(target.maps().data()) {
        loss += softplus(z) - p * z;
        grad.push((sigmoid(z) - p) / m);
    }
    Ok((loss / m, Tensor::from_vec(logits.dims(), grad)?))
}

/// Loss between two heat-map stacks given as probabilities,
/// `−(1/M)·Σ [p·log p̂ + (1 − p)·log(1 − p̂)]` with `0·log 0 = 0`, so a
/// hard prediction equal to its target scores exactly 0. Prefer
/// [`attention_loss_logits`] when the logits are at hand.
pub fn attention_loss(pred: &HeatMapStack, target: &HeatMapStack) -> Result<f64> {
    if pred.maps().dims() != target.maps().dims() {
        return Err(Error::dims(
            "attention_loss",
            format!("prediction {:?} vs target {:?}", pred.maps().dims(), target.maps().dims()),
        ));
    }
    let xlogy = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    let mut s = 0.0;
    for (&q, &p) in pred.maps().data().iter().zip(target.maps().data()) {
        s -= xlogy(p, q) + xlogy(1.0 - p, 1.0 - q);
    }
    Ok(s / target.channels() as f64)
}

/// How often the argmax voxel of a predicted map lands on (or next to) the
/// one-hot voxel of its target.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Localization {
    pub exact: usize,
    /// Within one grid cell along every axis (Chebyshev distance ≤ 1).
    pub within_one: usize,
    /// Maps compared; targets without a marked voxel are skipped.
    pub maps: usize,
}

impl Localization {
    pub fn add(&mut self, other: Localization) {
        self.exact += other.exact;
        self.within_one += other.within_one;
        self.maps += other.maps;
    }

    pub fn exact_rate(&self) -> f64 {
        self.exact as f64 / self.maps.max(1) as f64
    }

    pub fn within_one_rate(&self) -> f64 {
        self.within_one as f64 / self.maps.max(1) as f64
    }
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn localization(pred: &HeatMapStack, target: &HeatMapStack) -> Result<Localization> {
    if pred.maps().dims() != target.maps().dims() {
        return Err(Error::dims(
            "localization",
            format!("prediction {:?} vs target {:?}", pred.maps().dims(), target.maps().dims()),
        ));
    }
    let [_, h, w] = target.map_shape();
    let vol = target.maps().len() / target.channels();
    let coords = |i: usize| [(i / (h * w)) as i64, ((i / w) % h) as i64, (i % w) as i64];
    let mut out = Localization::default();
    for (p, g) in pred.maps().data().chunks(vol).zip(target.maps().data().chunks(vol)) {
        let gi = first_argmax(g);
        if g[gi] <= 0.0 {
            continue;
        }
        let pi = first_argmax(p);
        let (a, b) = (coords(pi), coords(gi));
        out.maps += 1;
        out.exact += usize::from(pi == gi);
        out.within_one += usize::from((0..3).all(|k| (a[k] - b[k]).abs() <= 1));
    }
    Ok(out)
}

/// Classifier head taking the flattened `M·C` pooled matrix.
pub fn head_config(input_len: usize, hidden: Option<usize>, n_classes: usize) -> Result<NetworkConfig> {
    let mut layers = Vec::new();
    if let Some(h) = hidden {
        layers.push(LayerSpec::fc("head_fc1", h));
        layers.push(LayerSpec::pointwise("head_relu1", LayerKind::Relu));
    }
    layers.push(LayerSpec::fc("head_out", n_classes));
    layers.push(LayerSpec::pointwise("head_prob", LayerKind::Softmax));
    NetworkConfig::new([input_len, 1, 1, 1], layers)
}

/// Feature stream: `cfg` cut right after the blob named `layer`.
pub fn feature_trunk(cfg: &NetworkConfig, layer: &str) -> Result<NetworkConfig> {
    Ok(cfg.truncated(cfg.blob_end(layer)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamModel {
    pub attention: AttentionNet,
    pub feature: Network,
    /// `K × K` with `K = l·h·w` of the pooled layer.
    pub w: Matrix,
    pub head: Network,
}

/// Intermediate values of a forward pass, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct TwoStreamCache {
    att: Trace,
    feat: Trace,
    a: Matrix,
    b: Matrix,
    head: Trace,
    pub pooled: Matrix,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Gradients of every parameter group. Streams that were frozen during the
/// backward pass carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamGrads {
    pub attention: Option<Gradients>,
    pub feature: Option<Gradients>,
    pub w: Option<Matrix>,
    pub head: Gradients,
}

impl TwoStreamModel {
    /// Joins a (typically pre-trained) attention stream with a feature
    /// trunk. `W` starts as the identity and the head is freshly
    /// initialized from `seed`.
    pub fn new(attention: AttentionNet, feature: Network, hidden: Option<usize>, n_classes: usize, seed: u64) -> Result<Self> {
        let att_out = *attention.net.config().shapes()?.last().expect("non-empty");
        let feat_out = *feature.config().shapes()?.last().expect("non-empty");
        let k1: usize = att_out[1..].iter().product();
        let k2: usize = feat_out[1..].iter().product();
        if k1 != k2 {
            return Err(Error::dims(
                "two-stream join",
                format!("attention maps {att_out:?} vs feature maps {feat_out:?}"),
            ));
        }
        let head = Network::init(head_config(att_out[0] * feat_out[0], hidden, n_classes)?, seed)?;
        Ok(TwoStreamModel {
            attention,
            feature,
            w: Matrix::identity(k1),
            head,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.head.config().output_shape_of(&self.head.config().layers.last().expect("head").name).map_or(0, |s| s[0])
    }

    /// Pooled `M × C` representation, using `maps` in place of the
    /// attention stream's output when given.
    pub fn pooled(&self, clip: &Tensor, maps: Option<&HeatMapStack>) -> Result<PooledMatrix> {
        let a = match maps {
            Some(m) => m.to_matrix(),
            None => self.attention.forward(clip)?.to_matrix(),
        };
        let b = self.feature.forward(clip, None)?.to_matrix();
        PooledMatrix::new(bilinear_general_fwd(&a, &self.w, &b)?, self.attention.n_joints, self.attention.clip_len)
    }

    pub fn forward_cached(&self, clip: &Tensor) -> Result<TwoStreamCache> {
        let att = self.attention.forward_logits(clip)?;
        let a = att.output().map(sigmoid).to_matrix();
        let feat = self.feature.forward_traced(clip, self.feature.num_layers() - 1)?;
        let b = feat.output().to_matrix();
        let pooled = bilinear_general_fwd(&a, &self.w, &b)?;
        let x = Tensor::from_vec(&[pooled.rows() * pooled.cols(), 1, 1, 1], pooled.data().to_vec())?;
        // run the head up to its logits; the softmax is applied here so the
        // cross-entropy gradient can be formed directly
        let head = self.head.forward_traced(&x, self.head.num_layers() - 2)?;
        let logits = head.output().data().to_vec();
        let probs = softmax(&logits);
        Ok(TwoStreamCache {
            att,
            feat,
            a,
            b,
            head,
            pooled,
            logits,
            probs,
        })
    }

    /// Back-propagates `d_logits` (gradient w.r.t. the head's pre-softmax
    /// outputs). Streams marked frozen are skipped.
    pub fn backward_logits(
        &self,
        cache: &TwoStreamCache,
        d_logits: &[f64],
        train_attention: bool,
        train_feature: bool,
    ) -> Result<TwoStreamGrads> {
        let d = Tensor::from_vec(cache.head.output().dims(), d_logits.to_vec())?;
        let (head, d_x) = self.head.backward(&cache.head, &d, true)?;
        let d_x = d_x.ok_or_else(|| Error::MissingCache("head".into()))?;
        let d_p = Matrix::from_vec(cache.pooled.rows(), cache.pooled.cols(), d_x.into_data())?;
        let (d_a, d_w, d_b) = bilinear_general_bwd(&d_p, &cache.a, &self.w, &cache.b)?;
        let attention = if train_attention {
            // through the sigmoid: dz = dA·p̂(1 − p̂)
            let dz: Vec<f64> = d_a.data().iter().zip(cache.a.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
            let dz = Tensor::from_vec(cache.att.output().dims(), dz)?;
            Some(self.attention.net.backward(&cache.att, &dz, false)?.0)
        } else {
            None
        };
        let feature = if train_feature {
            let db = Tensor::from_vec(cache.feat.output().dims(), d_b.into_data())?;
            Some(self.feature.backward(&cache.feat, &db, false)?.0)
        } else {
            None
        };
        Ok(TwoStreamGrads {
            attention,
            feature,
            w: Some(d_w),
            head,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.attention.save(dir.join("attention"))?;
        self.feature.save(dir.join("feature"))?;
        self.head.save(dir.join("head"))?;
        self.w.to_tensor().save(dir.join("bilinear.jpt"))
    }

    pub fn load(dir: impl AsRef<Path>, n_joints: usize, clip_len: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let attention = AttentionNet::load(dir.join("attention"), n_joints, clip_len)?;
        let feature = Network::load(dir.join("feature"))?;
        let head = Network::load(dir.join("head"))?;
        let w = Matrix::from_tensor(&Tensor::load(dir.join("bilinear.jpt"))?)?;
        Ok(TwoStreamModel {
            attention,
            feature,
            w,
            head,
        })
    }
}

/// Class probabilities for one clip.
pub fn two_stream_fwd(model: &TwoStreamModel, clip: &Tensor) -> Result<Vec<f64>> {
    Ok(model.forward_cached(clip)?.probs)
}

/// Cross-entropy loss of `label` and the gradients of every parameter.
pub fn two_stream_bwd(model: &TwoStreamModel, cache: &TwoStreamCache, label: usize) -> Result<(f64, TwoStreamGrads)> {
    let (loss, d) = cross_entropy_grad(&cache.logits, label)?;
    Ok((loss, model.backward_logits(cache, &d, true, true)?))
}

/// Softmax cross-entropy of `label` computed from logits, and its gradient
/// w.r.t. the logits, `probs − onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!("label {label} outside 0..{}", logits.len())));
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
    let mut d = softmax(logits);
    d[label] -= 1.0;
    Ok((lse - logits[label], d))
}
