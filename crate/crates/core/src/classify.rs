//! Linear classification of video descriptors and evaluation metrics.
//!
//! The classifier is L2-regularized multinomial logistic regression trained
//! by full-batch gradient descent. The regularization strength can be picked
//! by k-fold cross-validation on the training split.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jointmap::JointTrack;
use crate::net3d::layers::softmax;
use crate::poolgen::sidecar_path;
use crate::tensor::{dot, Matrix, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `n_classes × d`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub lambda: f64,
    pub max_epochs: usize,
    /// Stop once the objective changes by less than this between epochs.
    pub tol: f64,
    pub fit_bias: bool,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lambda: 1e-3,
            max_epochs: 3000,
            tol: 1e-6,
            fit_bias: true,
            seed: 0,
        }
    }
}

/// Result of a training run: the model and the objective after every epoch
/// (index 0 is the initial value).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: LinearModel,
    pub objective: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    lambda: f64,
    n_classes: usize,
    dim: usize,
}

impl LinearModel {
    pub fn n_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    /// Class logits `W·x + b`.
    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dims(
                "predict_scores",
                format!("descriptor of length {} for a model of dimension {}", x.len(), self.dim()),
            ));
        }
        Ok((0..self.n_classes()).map(|k| dot(self.weight.row(k), x) + self.bias[k]).collect())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.predict_scores(x)?))
    }

    /// Highest-scoring class; the lowest index wins ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_scores(x)?))
    }

    pub fn predict_all<T: AsRef<[f64]>>(&self, xs: &[T]) -> Result<Vec<usize>> {
        xs.iter().map(|x| self.predict(x.as_ref())).collect()
    }

    /// Writes the `[n_classes, d + 1]` parameter tensor (bias last) and a
    /// JSON manifest next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (k, d) = (self.n_classes(), self.dim());
        let mut data = Vec::with_capacity(k * (d + 1));
        for c in 0..k {
            data.extend_from_slice(self.weight.row(c));
            data.push(self.bias[c]);
        }
        Tensor::from_vec(&[k, d + 1], data)?.save(path)?;
        let man = ModelManifest {
            lambda: self.lambda,
            n_classes: k,
            dim: d,
        };
        let sp = sidecar_path(path);
        std::fs::write(&sp, serde_json::to_string_pretty(&man)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LinearModel> {
        let path = path.as_ref();
        let sp = sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let man: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: sp.clone(),
            offset: e.line() as u64,
            msg: e.to_string(),
        })?;
        let t = Tensor::load(path)?;
        if t.dims() != [man.n_classes, man.dim + 1] {
            return Err(Error::dims(
                "linear model",
                format!("parameters {:?} vs manifest {}x{}", t.dims(), man.n_classes, man.dim),
            ));
        }
        let mut weight = Matrix::zeros(man.n_classes, man.dim);
        let mut bias = vec![0.0; man.n_classes];
        for (c, row) in t.data().chunks(man.dim + 1).enumerate() {
            weight.data_mut()[c * man.dim..(c + 1) * man.dim].copy_from_slice(&row[..man.dim]);
            bias[c] = row[man.dim];
        }
        Ok(LinearModel {
            weight,
            bias,
            lambda: man.lambda,
        })
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_training_set<T: AsRef<[f64]>>(xs: &[T], labels: &[usize]) -> Result<(usize, usize)> {
    if xs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if xs.len() != labels.len() {
        return Err(Error::dims("train_linear", format!("{} descriptors, {} labels", xs.len(), labels.len())));
    }
    let d = xs[0].as_ref().len();
    if d == 0 || xs.iter().any(|x| x.as_ref().len() != d) {
        return Err(Error::dims("train_linear", "descriptors differ in length"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; n_classes];
    labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::InvalidArgument("training labels contain a single class".into()));
    }
    Ok((n_classes, d))
}

/// Mean cross-entropy plus `λ/2·‖W‖²` and its gradient.
fn objective_and_grad<T: AsRef<[f64]>>(
    model: &LinearModel,
    xs: &[T],
    labels: &[usize],
    grad_w: &mut Matrix,
    grad_b: &mut [f64],
) -> f64 {
    let (k, d) = (model.n_classes(), model.dim());
    grad_w.data_mut().fill(0.0);
    grad_b.fill(0.0);
    let n = xs.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(labels) {
        let x = x.as_ref();
        let logits: Vec<f64> = (0..k).map(|c| dot(model.weight.row(c), x) + model.bias[c]).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
        loss += lse - logits[y];
        for c in 0..k {
            let g = ((logits[c] - lse).exp() - if c == y { 1.0 } else { 0.0 }) / n;
            grad_b[c] += g;
            let row = &mut grad_w.data_mut()[c * d..(c + 1) * d];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
    }
    let reg: f64 = model.weight.data().iter().map(|w| w * w).sum();
    for (g, w) in grad_w.data_mut().iter_mut().zip(model.weight.data()) {
        *g += model.lambda * w;
    }
    loss / n + 0.5 * model.lambda * reg
}

/// Full-batch gradient descent with step `1 / L`, where `L` bounds the
/// curvature of the objective, so the objective never increases.
pub fn train_linear_report<T: AsRef<[f64]>>(xs: &[T], labels: &[usize], opts: &TrainOptions) -> Result<TrainReport> {
    let (k, d) = check_training_set(xs, labels)?;
    if !(opts.lambda >= 0.0 && opts.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", opts.lambda)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let w0 = (0..k * d).map(|_| rng.random_range(-1e-3..1e-3)).collect();
    let mut model = LinearModel {
        weight: Matrix::from_vec(k, d, w0)?,
        bias: vec![0.0; k],
        lambda: opts.lambda,
    };
    let max_sq = xs
        .iter()
        .map(|x| x.as_ref().iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let bias_term = if opts.fit_bias { 1.0 } else { 0.0 };
    let step = 1.0 / (0.5 * (max_sq + bias_term) + opts.lambda);

    let mut grad_w = Matrix::zeros(k, d);
    let mut grad_b = vec![0.0; k];
    let mut objective = vec![objective_and_grad(&model, xs, labels, &mut grad_w, &mut grad_b)];
    let mut converged = false;
    for _ in 0..opts.max_epochs {
        for (w, g) in model.weight.data_mut().iter_mut().zip(grad_w.data()) {
            *w -= step * g;
        }
        if opts.fit_bias {
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= step * g;
            }
        }
        let obj = objective_and_grad(&model, xs, labels, &mut grad_w, &mut grad_b);
        let prev = *objective.last().expect("initial objective");
        objective.push(obj);
        if !obj.is_finite() {
            return Err(Error::Diverged {
                step: objective.len() - 1,
                loss: obj,
            });
        }
        if (prev - obj).abs() < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(TrainReport {
        model,
        objective,
        converged,
    })
}

pub fn train_linear<T: AsRef<[f64]>>(
    xs: &[T],
    labels: &[usize],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearModel> {
    let opts = TrainOptions {
        lambda,
        max_epochs: epochs,
        seed,
        ..TrainOptions::default()
    };
    Ok(train_linear_report(xs, labels, &opts)?.model)
}

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Mean held-out accuracy of each candidate λ under stratified k-fold
/// cross-validation. Fold assignment is shuffled with `seed`.
pub fn cross_validate<T: AsRef<[f64]> + Sync>(
    xs: &[T],
    labels: &[usize],
    grid: &[f64],
    folds: usize,
    opts: &TrainOptions,
) -> Result<Vec<(f64, f64)>> {
    let (n_classes, _) = check_training_set(xs, labels)?;
    if folds < 2 || grid.is_empty() {
        return Err(Error::InvalidArgument(format!("need >= 2 folds and a non-empty grid, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut fold_of = vec![0usize; xs.len()];
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..xs.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold_of[i] = j % folds;
        }
    }
    grid.iter()
        .map(|&lambda| {
            let mut acc = 0.0;
            for f in 0..folds {
                let (mut tx, mut ty, mut vx, mut vy) = (vec![], vec![], vec![], vec![]);
                for i in 0..xs.len() {
                    if fold_of[i] == f {
                        vx.push(xs[i].as_ref());
                        vy.push(labels[i]);
                    } else {
                        tx.push(xs[i].as_ref());
                        ty.push(labels[i]);
                    }
                }
                let model = train_linear_report(&tx, &ty, &TrainOptions { lambda, ..*opts })?.model;
                acc += accuracy(&model.predict_all(&vx)?, &vy)?;
            }
            Ok((lambda, acc / folds as f64))
        })
        .collect()
}

/// Picks λ by cross-validation (larger λ wins ties) and retrains on the
/// whole training set.
pub fn train_linear_cv<T: AsRef<[f64]> + Sync>(
    xs: &[T],
    labels: &[usize],
    grid: &[f64],
    folds: usize,
    opts: &TrainOptions,
) -> Result<(LinearModel, Vec<(f64, f64)>)> {
    let scores = cross_validate(xs, labels, grid, folds, opts)?;
    let mut best = scores[0];
    for &(l, a) in &scores[1..] {
        if a > best.1 || (a == best.1 && l > best.0) {
            best = (l, a);
        }
    }
    let model = train_linear_report(xs, labels, &TrainOptions { lambda: best.0, ..*opts })?.model;
    Ok((model, scores))
}

fn check_pairs(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::dims("metrics", format!("{} predictions, {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Empty("metrics"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `n_classes × n_classes` counts; rows are true classes, columns predictions.
pub fn confusion(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_pairs(preds, labels)?;
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "class {} outside 0..{n_classes}",
                p.max(l)
            )));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Per-axis mean L1 joint error and its ratio to the frame size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointError {
    pub l1: (f64, f64),
    pub ratio: (f64, f64),
    pub count: usize,
}

/// Mean `|Δx|`, `|Δy|` over joints visible in the ground truth.
pub fn joint_error(gt: &JointTrack, est: &JointTrack, width: f64, height: f64) -> Result<JointError> {
    if (gt.n_joints(), gt.n_frames()) != (est.n_joints(), est.n_frames()) {
        return Err(Error::dims(
            "joint_error",
            format!(
                "{}x{} vs {}x{} (joints x frames)",
                gt.n_joints(),
                gt.n_frames(),
                est.n_joints(),
                est.n_frames()
            ),
        ));
    }
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (g, e) in gt.points().iter().zip(est.points()) {
        if g.visible {
            sx += (g.x - e.x).abs();
            sy += (g.y - e.y).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("joint_error: no visible joints"));
    }
    let l1 = (sx / n as f64, sy / n as f64);
    Ok(JointError {
        l1,
        ratio: (l1.0 / width, l1.1 / height),
        count: n,
    })
}
