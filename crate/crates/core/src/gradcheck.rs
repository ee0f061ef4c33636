//! Central finite differences for checking analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net3d::layers::*;
use crate::net3d::{LayerKind, LayerSpec, Network, NetworkConfig, Window};
use crate::poolgen::{bilinear_general_bwd, bilinear_general_fwd, hard_heatmaps};
use crate::jointmap::GridPoint;
use crate::tensor::{dot, Matrix, Tensor};
use crate::twostream::train::{Groups, Trainable};
use crate::twostream::{attention_loss_logits, feature_trunk, AttentionNet, TwoStreamModel};

/// Numerical gradient of the scalar function `f` at `x` by central
/// differences with step `eps`, one coordinate at a time.
pub fn central_difference(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.dims());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Largest elementwise relative error `|a − b| / max(|a|, |b|, floor)`.
///
/// `floor` is 1e-3 of the largest magnitude in either vector, so entries
/// that are negligible next to the dominant gradient are judged on that
/// scale instead of dividing round-off by a near-zero value.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let floor = 1e-3 * scale;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("consistent extents")
}

fn check(name: &str, threshold: f64, pairs: &[(&[f64], &[f64])]) -> CheckResult {
    let max_rel_error = pairs
        .iter()
        .map(|(a, n)| max_relative_error(a, n))
        .fold(0.0, f64::max);
    CheckResult {
        name: name.to_string(),
        max_rel_error,
        threshold,
    }
}

const EPS: f64 = 1e-5;

/// Every layer, the bilinear join, the attention loss and a tiny end-to-end
/// two-stream model, each compared against central differences.
pub fn suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // bilinear join
    let (a, w, b) = (
        rand_tensor(&mut rng, &[3, 4]),
        rand_tensor(&mut rng, &[4, 5]),
        rand_tensor(&mut rng, &[2, 5]),
    );
    let probe = rand_tensor(&mut rng, &[3, 2]);
    let m = |t: &Tensor| Matrix::from_tensor(t).expect("2-d");
    let f = |a: &Tensor, w: &Tensor, b: &Tensor| {
        dot(bilinear_general_fwd(&m(a), &m(w), &m(b)).expect("agreeing dims").data(), probe.data())
    };
    let (da, dw, db) = bilinear_general_bwd(&m(&probe), &m(&a), &m(&w), &m(&b))?;
    let na = central_difference(&a, EPS, |t| f(t, &w, &b));
    let nw = central_difference(&w, EPS, |t| f(&a, t, &b));
    let nb = central_difference(&b, EPS, |t| f(&a, &w, t));
    out.push(check(
        "bilinear",
        1e-6,
        &[(da.data(), na.data()), (dw.data(), nw.data()), (db.data(), nb.data())],
    ));

    // conv
    let win = Window {
        kernel: [3, 3, 3],
        stride: [1, 2, 1],
        padding: [1, 1, 1],
    };
    let x = rand_tensor(&mut rng, &[2, 4, 5, 5]);
    let cw = rand_tensor(&mut rng, &[3, 2, 3, 3, 3]);
    let cb = rand_tensor(&mut rng, &[3]);
    let y = conv3d_fwd(&x, &cw, &cb, &win)?;
    let probe = rand_tensor(&mut rng, y.dims());
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| dot(conv3d_fwd(x, w, b, &win).expect("valid").data(), probe.data());
    let (dx, dw, db) = conv3d_bwd(&probe, &x, &cw, &win, true)?;
    let dx = dx.expect("requested");
    let nx = central_difference(&x, EPS, |t| f(t, &cw, &cb));
    let nw = central_difference(&cw, EPS, |t| f(&x, t, &cb));
    let nb = central_difference(&cb, EPS, |t| f(&x, &cw, t));
    out.push(check(
        "conv3d",
        1e-6,
        &[(dx.data(), nx.data()), (dw.data(), nw.data()), (db.data(), nb.data())],
    ));

    // max pooling
    let pwin = Window {
        kernel: [2, 2, 2],
        stride: [2, 2, 2],
        padding: [0, 0, 0],
    };
    let x = rand_tensor(&mut rng, &[2, 4, 4, 4]);
    let (y, arg) = maxpool3d_fwd(&x, &pwin)?;
    let probe = rand_tensor(&mut rng, y.dims());
    let dx = maxpool3d_bwd(&probe, &arg, x.dims())?;
    let nx = central_difference(&x, EPS, |t| dot(maxpool3d_fwd(t, &pwin).expect("valid").0.data(), probe.data()));
    out.push(check("maxpool3d", 1e-6, &[(dx.data(), nx.data())]));

    // pointwise
    let x = rand_tensor(&mut rng, &[2, 2, 3, 3]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let probe = rand_tensor(&mut rng, x.dims());
    let d = relu_bwd(&probe, &x)?;
    let n = central_difference(&x, EPS, |t| dot(relu_fwd(t).data(), probe.data()));
    out.push(check("relu", 1e-6, &[(d.data(), n.data())]));
    let d = sigmoid_bwd(&probe, &sigmoid_fwd(&x))?;
    let n = central_difference(&x, EPS, |t| dot(sigmoid_fwd(t).data(), probe.data()));
    out.push(check("sigmoid", 1e-6, &[(d.data(), n.data())]));
    let d = softmax_bwd(&probe, &softmax_fwd(&x))?;
    let n = central_difference(&x, EPS, |t| dot(softmax_fwd(t).data(), probe.data()));
    out.push(check("softmax", 1e-6, &[(d.data(), n.data())]));

    // fully connected
    let fw = rand_tensor(&mut rng, &[5, 36]);
    let fb = rand_tensor(&mut rng, &[5]);
    let probe = rand_tensor(&mut rng, &[5, 1, 1, 1]);
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| dot(fc_fwd(x, w, b).expect("valid").data(), probe.data());
    let (dx, dw, db) = fc_bwd(&probe, &x, &fw, true)?;
    let dx = dx.expect("requested");
    let nx = central_difference(&x, EPS, |t| f(t, &fw, &fb));
    let nw = central_difference(&fw, EPS, |t| f(&x, t, &fb));
    let nb = central_difference(&fb, EPS, |t| f(&x, &fw, t));
    out.push(check(
        "fc",
        1e-6,
        &[(dx.data(), nx.data()), (dw.data(), nw.data()), (db.data(), nb.data())],
    ));

    // attention loss with respect to the pre-sigmoid maps
    let z = rand_tensor(&mut rng, &[2, 2, 3, 3]).map(|v| 3.0 * v);
    let pts: Vec<GridPoint> = (0..2)
        .map(|i| GridPoint {
            x: i,
            y: 2 - i,
            t: i,
            raw: [i as f64, (2 - i) as f64, i as f64],
            clamped: false,
            visible: true,
        })
        .collect();
    let target = hard_heatmaps(&pts, 1, 2, [2, 3, 3])?;
    let (_, g) = attention_loss_logits(&z, &target)?;
    let n = central_difference(&z, EPS, |t| attention_loss_logits(t, &target).expect("same shape").0);
    out.push(check("attention_loss", 1e-6, &[(g.data(), n.data())]));

    out.push(two_stream_check(seed)?);
    Ok(out)
}

/// The 1×4×8×8 two-stream model used by the end-to-end check.
pub fn tiny_two_stream(seed: u64) -> Result<TwoStreamModel> {
    let trunk = NetworkConfig::new(
        [1, 4, 8, 8],
        vec![
            LayerSpec::conv333("conv1", 2),
            LayerSpec::pointwise("relu1", LayerKind::Relu),
            LayerSpec::pool("pool1", [2, 2, 2], [2, 2, 2]),
            LayerSpec::conv333("conv2", 3),
            LayerSpec::pointwise("relu2", LayerKind::Relu),
        ],
    )?;
    let att = AttentionNet::new(&trunk, "conv2", 1, 4, seed)?;
    let feat = Network::init(feature_trunk(&trunk, "conv2")?, seed + 1)?;
    TwoStreamModel::new(att, feat, None, 2, seed + 2)
}

fn two_stream_check(seed: u64) -> Result<CheckResult> {
    let mut model = tiny_two_stream(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    model.w.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    // keep the softmax away from saturation so gradients dwarf round-off
    model.head.params_mut().iter_mut().flatten().for_each(|p| p.weight.scale(0.05));
    let ex = (rand_tensor(&mut rng, &[1, 4, 8, 8]), 1);
    let (_, grads) = model.loss_grad(&ex, &Groups::all())?;
    let mut worst: f64 = 0.0;
    for (k, g) in grads.iter().enumerate() {
        let mut num = vec![0.0; g.len()];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = model.param_slices_mut()[k][i];
            model.param_slices_mut()[k][i] = orig + EPS;
            let up = model.loss(&ex)?;
            model.param_slices_mut()[k][i] = orig - EPS;
            let down = model.loss(&ex)?;
            model.param_slices_mut()[k][i] = orig;
            *slot = (up - down) / (2.0 * EPS);
        }
        worst = worst.max(max_relative_error(g, &num));
    }
    Ok(CheckResult {
        name: "two_stream".into(),
        max_rel_error: worst,
        threshold: 1e-4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = central_difference(&x, 1e-5, |t| t.data().iter().map(|v| v * v * v).sum());
        let exact: Vec<f64> = x.data().iter().map(|v| 3.0 * v * v).collect();
        assert!(max_relative_error(&exact, g.data()) < 1e-9);
    }

    #[test]
    fn suite_passes() {
        for r in suite(3).unwrap() {
            assert!(r.passed(), "{} {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn relative_error_detects_wrong_sign() {
        assert!(max_relative_error(&[1.0, 2.0], &[1.0, -2.0]) > 1.0);
        assert_eq!(max_relative_error(&[0.0; 4], &[0.0; 4]), 0.0);
    }
}
