//! Mini-batch SGD with momentum over named parameter groups, phase
//! schedules with step decay, and resumable checkpoints.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{attention_loss_logits, cross_entropy_grad, AttentionNet, TwoStreamModel};
use crate::datakit::derive_seed;
use crate::error::{Error, Result};
use crate::net3d::{Gradients, LayerParams, Network};
use crate::poolgen::HeatMapStack;
use crate::report::{config_hash, VERSION};
use crate::tensor::{Matrix, Tensor};

/// Parameter-group patterns. A pattern selects every parameter whose key
/// equals it or starts with `pattern.`; `all` selects everything. Keys look
/// like `attention.conv5b.weight`, `feature.conv1a.bias`, `bilinear.w`,
/// `head.head_out.weight`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups(pub Vec<String>);

impl Groups {
    pub fn all() -> Groups {
        Groups(vec!["all".into()])
    }

    pub fn of(names: &[&str]) -> Groups {
        Groups(names.iter().map(|s| s.to_string()).collect())
    }

    pub fn matches(&self, key: &str) -> bool {
        self.0.iter().any(|g| g == "all" || key == g || key.starts_with(&format!("{g}.")))
    }

    /// True when some selected parameter lives under `prefix`.
    pub fn touches(&self, prefix: &str) -> bool {
        self.0.iter().any(|g| {
            g == "all" || g == prefix || g.starts_with(&format!("{prefix}.")) || prefix.starts_with(&format!("{g}."))
        })
    }
}

/// A model the schedule runner can train. Parameters are exposed as flat
/// slices under stable keys; gradients come back in the same order, with an
/// empty vector for parameters that were not differentiated.
pub trait Trainable: Sync {
    type Example: Sync;

    fn param_keys(&self) -> Vec<String>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;
    fn loss(&self, ex: &Self::Example) -> Result<f64>;
    fn loss_grad(&self, ex: &Self::Example, groups: &Groups) -> Result<(f64, Vec<Vec<f64>>)>;
    fn save_weights(&self, dir: &Path) -> Result<()>;
    fn load_weights(&mut self, dir: &Path) -> Result<()>;
    /// Architecture description, part of the checkpoint's config hash.
    fn describe(&self) -> serde_json::Value;
}

fn net_keys(prefix: &str, net: &Network) -> Vec<String> {
    let mut keys = Vec::new();
    for (spec, p) in net.config().layers.iter().zip(net.params()) {
        if p.is_some() {
            keys.push(format!("{prefix}.{}.weight", spec.name));
            keys.push(format!("{prefix}.{}.bias", spec.name));
        }
    }
    keys
}

fn net_slices_mut(net: &mut Network) -> Vec<&mut [f64]> {
    let mut out = Vec::new();
    for LayerParams { weight, bias } in net.params_mut().iter_mut().flatten() {
        out.push(weight.data_mut());
        out.push(bias.data_mut());
    }
    out
}

fn net_grads(net: &Network, g: Option<Gradients>) -> Vec<Vec<f64>> {
    let mut g = g.map(|g| g.0);
    let mut out = Vec::new();
    for (idx, p) in net.params().iter().enumerate() {
        if p.is_none() {
            continue;
        }
        match g.as_mut().and_then(|g| g[idx].take()) {
            Some(lp) => {
                out.push(lp.weight.into_data());
                out.push(lp.bias.into_data());
            }
            None => {
                out.push(Vec::new());
                out.push(Vec::new());
            }
        }
    }
    out
}

impl Trainable for AttentionNet {
    /// A clip and its target heat maps.
    type Example = (Tensor, HeatMapStack);

    fn param_keys(&self) -> Vec<String> {
        net_keys("attention", &self.net)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        net_slices_mut(&mut self.net)
    }

    fn loss(&self, (clip, target): &Self::Example) -> Result<f64> {
        let trace = self.forward_logits(clip)?;
        Ok(attention_loss_logits(trace.output(), target)?.0)
    }

    fn loss_grad(&self, (clip, target): &Self::Example, groups: &Groups) -> Result<(f64, Vec<Vec<f64>>)> {
        let trace = self.forward_logits(clip)?;
        let (loss, dz) = attention_loss_logits(trace.output(), target)?;
        let g = if groups.touches("attention") {
            Some(self.net.backward(&trace, &dz, false)?.0)
        } else {
            None
        };
        Ok((loss, net_grads(&self.net, g)))
    }

    fn save_weights(&self, dir: &Path) -> Result<()> {
        self.save(dir)
    }

    fn load_weights(&mut self, dir: &Path) -> Result<()> {
        *self = AttentionNet::load(dir, self.n_joints, self.clip_len)?;
        Ok(())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "attention": self.net.config(),
            "n_joints": self.n_joints,
            "clip_len": self.clip_len,
        })
    }
}

impl Trainable for TwoStreamModel {
    /// A clip and its class label.
    type Example = (Tensor, usize);

    fn param_keys(&self) -> Vec<String> {
        let mut keys = net_keys("attention", &self.attention.net);
        keys.extend(net_keys("feature", &self.feature));
        keys.push("bilinear.w".into());
        keys.extend(net_keys("head", &self.head));
        keys
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = net_slices_mut(&mut self.attention.net);
        out.extend(net_slices_mut(&mut self.feature));
        out.push(self.w.data_mut());
        out.extend(net_slices_mut(&mut self.head));
        out
    }

    fn loss(&self, (clip, label): &Self::Example) -> Result<f64> {
        let cache = self.forward_cached(clip)?;
        Ok(cross_entropy_grad(&cache.logits, *label)?.0)
    }

    fn loss_grad(&self, (clip, label): &Self::Example, groups: &Groups) -> Result<(f64, Vec<Vec<f64>>)> {
        let cache = self.forward_cached(clip)?;
        let (loss, d) = cross_entropy_grad(&cache.logits, *label)?;
        let g = self.backward_logits(&cache, &d, groups.touches("attention"), groups.touches("feature"))?;
        let mut out = net_grads(&self.attention.net, g.attention);
        out.extend(net_grads(&self.feature, g.feature));
        out.push(g.w.map(Matrix::into_data).unwrap_or_default());
        out.extend(net_grads(&self.head, Some(g.head)));
        Ok((loss, out))
    }

    fn save_weights(&self, dir: &Path) -> Result<()> {
        self.save(dir)
    }

    fn load_weights(&mut self, dir: &Path) -> Result<()> {
        *self = TwoStreamModel::load(dir, self.attention.n_joints, self.attention.clip_len)?;
        Ok(())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "attention": self.attention.net.config(),
            "feature": self.feature.config(),
            "head": self.head.config(),
            "n_joints": self.attention.n_joints,
            "clip_len": self.attention.clip_len,
        })
    }
}

fn default_momentum() -> f64 {
    0.9
}

fn default_groups() -> Vec<String> {
    vec!["all".into()]
}

/// One stretch of training at a base learning rate over some groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    #[serde(default)]
    pub name: String,
    pub lr: f64,
    pub steps: usize,
    #[serde(default = "default_groups")]
    pub groups: Vec<String>,
    /// Divide the rate by 10 every this many steps of the phase.
    #[serde(default)]
    pub decay_every: Option<usize>,
}

impl Phase {
    pub fn lr_at(&self, step_in_phase: usize) -> f64 {
        match self.decay_every {
            Some(k) if k > 0 => self.lr * 0.1f64.powi((step_in_phase / k) as i32),
            _ => self.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub batch_size: usize,
    pub phases: Vec<Phase>,
}

impl Schedule {
    pub fn single(lr: f64, steps: usize, batch_size: usize, groups: &[&str]) -> Schedule {
        Schedule {
            momentum: 0.9,
            batch_size,
            phases: vec![Phase {
                name: "train".into(),
                lr,
                steps,
                groups: groups.iter().map(|s| s.to_string()).collect(),
                decay_every: None,
            }],
        }
    }

    /// Head-only phase followed by a whole-network phase at a tenth of the
    /// rate.
    pub fn two_phase(lr: f64, head_steps: usize, all_steps: usize, batch_size: usize) -> Schedule {
        Schedule {
            momentum: 0.9,
            batch_size,
            phases: vec![
                Phase {
                    name: "head".into(),
                    lr,
                    steps: head_steps,
                    groups: vec!["head".into()],
                    decay_every: None,
                },
                Phase {
                    name: "all".into(),
                    lr: lr * 0.1,
                    steps: all_steps,
                    groups: vec!["all".into()],
                    decay_every: None,
                },
            ],
        }
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.steps).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        for p in &self.phases {
            if !(p.lr >= 0.0 && p.lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("phase `{}`: learning rate {}", p.name, p.lr)));
            }
            if p.groups.is_empty() {
                return Err(Error::InvalidArgument(format!("phase `{}` trains no groups", p.name)));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Schedule> {
        let s: Schedule = serde_json::from_str(s)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Schedule> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Schedule = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: e.line() as u64,
            msg: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: u64,
    /// Directory for checkpoints; nothing is written when `None`.
    pub checkpoint: Option<PathBuf>,
    /// Also checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Continue from the checkpoint in `checkpoint` if one exists.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Mean mini-batch loss of every step taken so far, including steps
    /// restored from a checkpoint.
    pub losses: Vec<f64>,
    pub config_hash: String,
    pub resumed_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub step: usize,
    pub seed: u64,
    pub version: String,
    pub loss_history: Vec<f64>,
}

impl CheckpointManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
        let path = dir.as_ref().join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            offset: e.line() as u64,
            msg: e.to_string(),
        })
    }
}

fn snap(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

fn save_checkpoint<M: Trainable>(
    dir: &Path,
    model: &mut M,
    velocity: &mut [Vec<f64>],
    manifest: &CheckpointManifest,
) -> Result<()> {
    // state is written as f32; round the live copy too so that continuing
    // in memory and resuming from disk follow the same trajectory
    model.param_slices_mut().into_iter().for_each(snap);
    velocity.iter_mut().for_each(|v| snap(v));
    model.save_weights(&dir.join("weights"))?;
    let flat: Vec<f64> = velocity.iter().flatten().copied().collect();
    Tensor::from_vec(&[flat.len().max(1)], if flat.is_empty() { vec![0.0] } else { flat })?
        .save(dir.join("velocity.jpt"))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))
}

/// Batch indices for a global step: a seeded draw without replacement.
fn batch_indices(seed: u64, step: usize, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, step as u64));
    rand::seq::index::sample(&mut rng, n, batch.min(n)).into_vec()
}

/// Runs every phase of `schedule`. Per step, a mini-batch is drawn, the
/// examples' gradients are computed in parallel and summed in batch order,
/// and the selected parameters take a momentum step
/// `v ← μ·v − lr·g`, `θ ← θ + v` with `g` the batch-mean gradient.
pub fn run_schedule<M: Trainable>(
    model: &mut M,
    data: &[M::Example],
    schedule: &Schedule,
    opts: &TrainOptions,
) -> Result<TrainLog> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let hash = config_hash(&serde_json::json!({
        "model": model.describe(),
        "schedule": schedule,
        "seed": opts.seed,
        "examples": data.len(),
    }))?;
    let keys = model.param_keys();
    let mut velocity: Vec<Vec<f64>> = model.param_slices_mut().iter().map(|s| vec![0.0; s.len()]).collect();
    let mut losses = Vec::new();
    let mut done = 0;
    let mut resumed_at = None;

    if let (true, Some(dir)) = (opts.resume, &opts.checkpoint) {
        if dir.join("manifest.json").exists() {
            let man = CheckpointManifest::load(dir)?;
            if man.config_hash != hash {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint {} was made with a different configuration",
                    dir.display()
                )));
            }
            model.load_weights(&dir.join("weights"))?;
            let flat = Tensor::load(dir.join("velocity.jpt"))?.into_data();
            let mut off = 0;
            for v in velocity.iter_mut() {
                let n = v.len();
                v.copy_from_slice(flat.get(off..off + n).ok_or_else(|| Error::dims("checkpoint", "velocity too short"))?);
                off += n;
            }
            done = man.step;
            losses = man.loss_history;
            resumed_at = Some(done);
        }
    }
    if let Some(dir) = &opts.checkpoint {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mu = schedule.momentum;
    let mut phase_start = 0;
    for phase in &schedule.phases {
        let groups = Groups(phase.groups.clone());
        let active: Vec<bool> = keys.iter().map(|k| groups.matches(k)).collect();
        for step in phase_start..phase_start + phase.steps {
            if step < done {
                continue;
            }
            let idx = batch_indices(opts.seed, step, data.len(), schedule.batch_size);
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> =
                idx.par_iter().map(|&i| model.loss_grad(&data[i], &groups)).collect();
            let mut loss = 0.0;
            let mut grad: Vec<Vec<f64>> = vec![Vec::new(); keys.len()];
            for r in results {
                let (l, g) = r?;
                loss += l;
                for (acc, gk) in grad.iter_mut().zip(g) {
                    if gk.is_empty() {
                        continue;
                    }
                    if acc.is_empty() {
                        *acc = gk;
                    } else {
                        acc.iter_mut().zip(&gk).for_each(|(a, b)| *a += b);
                    }
                }
            }
            let bs = idx.len() as f64;
            loss /= bs;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            let lr = phase.lr_at(step - phase_start);
            for (k, theta) in model.param_slices_mut().into_iter().enumerate() {
                if !active[k] || grad[k].is_empty() {
                    continue;
                }
                let v = &mut velocity[k];
                for ((t, vi), g) in theta.iter_mut().zip(v.iter_mut()).zip(&grad[k]) {
                    *vi = mu * *vi - lr * (g / bs);
                    *t += *vi;
                }
            }
            losses.push(loss);
            done = step + 1;
            if let Some(dir) = &opts.checkpoint {
                if opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0 && done < schedule.total_steps() {
                    let man = CheckpointManifest {
                        config_hash: hash.clone(),
                        step: done,
                        seed: opts.seed,
                        version: VERSION.into(),
                        loss_history: losses.clone(),
                    };
                    save_checkpoint(dir, model, &mut velocity, &man)?;
                }
            }
        }
        phase_start += phase.steps;
    }
    if let Some(dir) = &opts.checkpoint {
        let man = CheckpointManifest {
            config_hash: hash.clone(),
            step: done,
            seed: opts.seed,
            version: VERSION.into(),
            loss_history: losses.clone(),
        };
        save_checkpoint(dir, model, &mut velocity, &man)?;
    }
    Ok(TrainLog {
        losses,
        config_hash: hash,
        resumed_at,
    })
}

/// Mean loss over `data` without touching the parameters.
pub fn mean_loss<M: Trainable>(model: &M, data: &[M::Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("mean_loss"));
    }
    let ls: Vec<Result<f64>> = data.par_iter().map(|ex| model.loss(ex)).collect();
    let mut s = 0.0;
    for l in ls {
        s += l?;
    }
    Ok(s / data.len() as f64)
}

/// Pre-trains the attention stream on clips with hard target heat maps.
pub fn train_attention(
    model: &mut AttentionNet,
    data: &[(Tensor, HeatMapStack)],
    schedule: &Schedule,
    opts: &TrainOptions,
) -> Result<TrainLog> {
    run_schedule(model, data, schedule, opts)
}

/// Fine-tunes the joined model on labelled clips.
pub fn finetune_two_stream(
    model: &mut TwoStreamModel,
    data: &[(Tensor, usize)],
    schedule: &Schedule,
    opts: &TrainOptions,
) -> Result<TrainLog> {
    run_schedule(model, data, schedule, opts)
}
