//! Forward and backward kernels for single-clip activations of shape
//! `[C, L, H, W]`.
//!
//! Every output element is accumulated in a fixed order, so the kernels are
//! bitwise deterministic; channel-level parallelism never splits a sum.

use rayon::prelude::*;

use super::config::Window;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match t.dims() {
        &[c, l, h, w] => Ok([c, l, h, w]),
        d => Err(Error::dims(op, format!("expected [C, L, H, W], got {d:?}"))),
    }
}

fn out_extent(input: usize, k: usize, s: usize, p: usize) -> usize {
    (input + 2 * p - k) / s + 1
}

/// Range of output positions `o` whose tap `o·s + k − p` lands inside `[0, n)`.
#[inline]
fn valid_range(n_out: usize, n_in: usize, s: usize, k: usize, p: usize) -> (usize, usize) {
    // o·s + k >= p  and  o·s + k − p < n_in
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    let hi = if n_in + p > k {
        ((n_in + p - k - 1) / s + 1).min(n_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Geometry of one conv application.
struct ConvGeom {
    ci_n: usize,
    co_n: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    out: [usize; 3],
}

impl ConvGeom {
    fn new(x: &Tensor, weight: &Tensor, win: &Window, op: &'static str) -> Result<ConvGeom> {
        let [ci_n, il, ih, iw] = dims4(x, op)?;
        let [co_n, wci, kt, ky, kx] = match weight.dims() {
            &[a, b, c, d, e] => [a, b, c, d, e],
            d => return Err(Error::dims(op, format!("weight dims {d:?}"))),
        };
        if wci != ci_n || [kt, ky, kx] != win.kernel {
            return Err(Error::dims(
                op,
                format!("input {:?} incompatible with weight {:?}", x.dims(), weight.dims()),
            ));
        }
        let [st, sy, sx] = win.stride;
        let [pt, py, px] = win.padding;
        if il + 2 * pt < kt || ih + 2 * py < ky || iw + 2 * px < kx {
            return Err(Error::dims(op, "kernel larger than padded input"));
        }
        Ok(ConvGeom {
            ci_n,
            co_n,
            input: [il, ih, iw],
            kernel: win.kernel,
            stride: win.stride,
            padding: win.padding,
            out: [
                out_extent(il, kt, st, pt),
                out_extent(ih, ky, sy, py),
                out_extent(iw, kx, sx, px),
            ],
        })
    }

    fn ksize(&self) -> usize {
        self.kernel.iter().product()
    }

    fn plane(&self) -> usize {
        self.out.iter().product()
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    /// Calls `f(tap, out_row_start, in_row_start, x0, x1)` for every kernel tap
    /// of one input channel and every output row, where output columns
    /// `x0..x1` read input columns `ox·sx + dx − px`.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let [il, ih, iw] = self.input;
        let [ol, oh, ow] = self.out;
        let [kt, ky, kx] = self.kernel;
        let [st, sy, sx] = self.stride;
        let [pt, py, px] = self.padding;
        for dt in 0..kt {
            let (t0, t1) = valid_range(ol, il, st, dt, pt);
            for dy in 0..ky {
                let (y0, y1) = valid_range(oh, ih, sy, dy, py);
                for dx in 0..kx {
                    let (x0, x1) = valid_range(ow, iw, sx, dx, px);
                    let tap = (dt * ky + dy) * kx + dx;
                    for ot in t0..t1 {
                        let it = ot * st + dt - pt;
                        for oy in y0..y1 {
                            let iy = oy * sy + dy - py;
                            f(tap, (ot * oh + oy) * ow, (it * ih + iy) * iw, x0, x1, dx);
                        }
                    }
                }
            }
        }
    }

    /// Unfolds `x` into `[C_in·k, L'·H'·W']` patch columns, zero where a tap
    /// falls into the padding.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (plane, in_plane, ks) = (self.plane(), self.in_plane(), self.ksize());
        let [sx, px] = [self.stride[2], self.padding[2]];
        let mut cols = vec![0.0; self.ci_n * ks * plane];
        cols.par_chunks_mut(ks * plane).enumerate().for_each(|(ci, block)| {
            let xin = &x[ci * in_plane..(ci + 1) * in_plane];
            self.for_each_row(|tap, orow, irow, x0, x1, dx| {
                let dst = &mut block[tap * plane + orow..];
                for ox in x0..x1 {
                    dst[ox] = xin[irow + ox * sx + dx - px];
                }
            });
        });
        cols
    }

    /// Adds patch-column gradients back onto the input positions they came
    /// from.
    fn col2im_channel(&self, dcols: &[f64], dx_channel: &mut [f64]) {
        let plane = self.plane();
        let [sx, px] = [self.stride[2], self.padding[2]];
        self.for_each_row(|tap, orow, irow, x0, x1, dx| {
            let src = &dcols[tap * plane + orow..];
            for ox in x0..x1 {
                dx_channel[irow + ox * sx + dx - px] += src[ox];
            }
        });
    }
}

/// 3D cross-correlation (no kernel flip) plus per-channel bias.
///
/// `weight` is `[C_out, C_in, kt, ky, kx]`, `bias` is `[C_out]`. Each output
/// starts from its bias and accumulates taps in `(C_in, kt, ky, kx)` order.
pub fn conv3d_fwd(x: &Tensor, weight: &Tensor, bias: &Tensor, win: &Window) -> Result<Tensor> {
    let g = ConvGeom::new(x, weight, win, "conv3d_fwd")?;
    if bias.len() != g.co_n {
        return Err(Error::dims("conv3d_fwd", format!("bias of length {} for {} outputs", bias.len(), g.co_n)));
    }
    let (plane, k) = (g.plane(), g.ci_n * g.ksize());
    let cols = g.im2col(x.data());
    let wd = weight.data();
    let mut out = vec![0.0; g.co_n * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(co, o)| {
        o.fill(bias.data()[co]);
        let wrow = &wd[co * k..(co + 1) * k];
        for (kk, &wv) in wrow.iter().enumerate() {
            let crow = &cols[kk * plane..(kk + 1) * plane];
            for (ov, &cv) in o.iter_mut().zip(crow) {
                *ov += wv * cv;
            }
        }
    });
    let [ol, oh, ow] = g.out;
    Tensor::from_vec(&[g.co_n, ol, oh, ow], out)
}

/// Gradients of [`conv3d_fwd`] with respect to input, weight and bias.
pub fn conv3d_bwd(
    d_out: &Tensor,
    x: &Tensor,
    weight: &Tensor,
    win: &Window,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let g = ConvGeom::new(x, weight, win, "conv3d_bwd")?;
    let [ol, oh, ow] = g.out;
    if d_out.dims() != [g.co_n, ol, oh, ow] {
        return Err(Error::dims(
            "conv3d_bwd",
            format!("dOut {:?} vs forward output {:?}", d_out.dims(), [g.co_n, ol, oh, ow]),
        ));
    }
    let (plane, ks) = (g.plane(), g.ksize());
    let k = g.ci_n * ks;
    let gd = d_out.data();
    let wd = weight.data();

    let db: Vec<f64> = (0..g.co_n)
        .map(|co| gd[co * plane..(co + 1) * plane].iter().sum())
        .collect();

    let cols = g.im2col(x.data());
    let mut dw = vec![0.0; weight.len()];
    dw.par_chunks_mut(k).enumerate().for_each(|(co, dwc)| {
        let grow = &gd[co * plane..(co + 1) * plane];
        for (kk, slot) in dwc.iter_mut().enumerate() {
            *slot = dot4(grow, &cols[kk * plane..(kk + 1) * plane]);
        }
    });
    drop(cols);

    let dx = if need_dx {
        let in_plane = g.in_plane();
        let mut dx = vec![0.0; x.len()];
        dx.par_chunks_mut(in_plane).enumerate().for_each(|(ci, dxc)| {
            // patch-column gradients of this input channel: Wᵀ·dOut
            let mut dcols = vec![0.0; ks * plane];
            for co in 0..g.co_n {
                let grow = &gd[co * plane..(co + 1) * plane];
                let wblock = &wd[co * k + ci * ks..co * k + (ci + 1) * ks];
                for (tap, &wv) in wblock.iter().enumerate() {
                    let drow = &mut dcols[tap * plane..(tap + 1) * plane];
                    for (d, &gv) in drow.iter_mut().zip(grow) {
                        *d += wv * gv;
                    }
                }
            }
            g.col2im_channel(&dcols, dxc);
        });
        Some(Tensor::from_vec(x.dims(), dx)?)
    } else {
        None
    };

    Ok((
        dx,
        Tensor::from_vec(weight.dims(), dw)?,
        Tensor::from_vec(&[g.co_n], db)?,
    ))
}

/// Dot product with four interleaved partial sums, combined in a fixed
/// order.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for lane in 0..4 {
            acc[lane] += a[4 * i + lane] * b[4 * i + lane];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Max pooling. Padded positions never win. Returns the output together
/// with the flat input index selected for each output element; on ties the
/// first index in scan order (t, then y, then x) wins.
pub fn maxpool3d_fwd(x: &Tensor, win: &Window) -> Result<(Tensor, Vec<usize>)> {
    let [c_n, il, ih, iw] = dims4(x, "maxpool3d_fwd")?;
    let [kt, ky, kx] = win.kernel;
    let [st, sy, sx] = win.stride;
    let [pt, py, px] = win.padding;
    if il + 2 * pt < kt || ih + 2 * py < ky || iw + 2 * px < kx {
        return Err(Error::dims("maxpool3d_fwd", "kernel larger than padded input"));
    }
    let (ol, oh, ow) = (
        out_extent(il, kt, st, pt),
        out_extent(ih, ky, sy, py),
        out_extent(iw, kx, sx, px),
    );
    let xd = x.data();
    let mut out = Vec::with_capacity(c_n * ol * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for c in 0..c_n {
        for ot in 0..ol {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dt in 0..kt {
                        let it = (ot * st + dt) as isize - pt as isize;
                        if it < 0 || it >= il as isize {
                            continue;
                        }
                        for dy in 0..ky {
                            let iy = (oy * sy + dy) as isize - py as isize;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            for dx in 0..kx {
                                let ix = (ox * sx + dx) as isize - px as isize;
                                if ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                let idx = ((c * il + it as usize) * ih + iy as usize) * iw + ix as usize;
                                if best_idx == usize::MAX || xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    if best_idx == usize::MAX {
                        return Err(Error::dims("maxpool3d_fwd", "window lies entirely in padding"));
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[c_n, ol, oh, ow], out)?, arg))
}

pub fn maxpool3d_bwd(d_out: &Tensor, argmax: &[usize], in_dims: &[usize]) -> Result<Tensor> {
    if d_out.len() != argmax.len() {
        return Err(Error::dims(
            "maxpool3d_bwd",
            format!("{} gradients for {} pooled outputs", d_out.len(), argmax.len()),
        ));
    }
    let mut dx = Tensor::zeros(in_dims);
    let d = dx.data_mut();
    for (&g, &i) in d_out.data().iter().zip(argmax) {
        d[i] += g;
    }
    Ok(dx)
}

pub fn relu_fwd(x: &Tensor) -> Tensor {
    // NaN passes through so divergence stays visible downstream
    x.map(|v| if v < 0.0 { 0.0 } else { v })
}

/// Subgradient 0 at the kink.
pub fn relu_bwd(d_out: &Tensor, x: &Tensor) -> Result<Tensor> {
    if d_out.dims() != x.dims() {
        return Err(Error::dims("relu_bwd", "gradient/input shape mismatch"));
    }
    let data = d_out
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.dims(), data)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_fwd(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}

/// Takes the forward *output* `y`.
pub fn sigmoid_bwd(d_out: &Tensor, y: &Tensor) -> Result<Tensor> {
    if d_out.dims() != y.dims() {
        return Err(Error::dims("sigmoid_bwd", "gradient/output shape mismatch"));
    }
    let data = d_out
        .data()
        .iter()
        .zip(y.data())
        .map(|(&g, &s)| g * s * (1.0 - s))
        .collect();
    Tensor::from_vec(y.dims(), data)
}

/// Dense layer on the flattened input. `weight` is `[out, in]`.
pub fn fc_fwd(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_out, n_in) = match weight.dims() {
        &[o, i] => (o, i),
        d => return Err(Error::dims("fc_fwd", format!("weight dims {d:?}"))),
    };
    if x.len() != n_in || bias.len() != n_out {
        return Err(Error::dims(
            "fc_fwd",
            format!("input of {} values for weight {:?}", x.len(), weight.dims()),
        ));
    }
    let wd = weight.data();
    let xd = x.data();
    let out = (0..n_out)
        .map(|o| bias.data()[o] + crate::tensor::dot(&wd[o * n_in..(o + 1) * n_in], xd))
        .collect();
    Tensor::from_vec(&[n_out, 1, 1, 1], out)
}

pub fn fc_bwd(
    d_out: &Tensor,
    x: &Tensor,
    weight: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (n_out, n_in) = match weight.dims() {
        &[o, i] => (o, i),
        d => return Err(Error::dims("fc_bwd", format!("weight dims {d:?}"))),
    };
    if d_out.len() != n_out || x.len() != n_in {
        return Err(Error::dims("fc_bwd", "gradient/input length mismatch"));
    }
    let g = d_out.data();
    let xd = x.data();
    let mut dw = vec![0.0; n_out * n_in];
    for o in 0..n_out {
        for (d, &xv) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(xd) {
            *d = g[o] * xv;
        }
    }
    let dx = if need_dx {
        let wd = weight.data();
        let mut dx = vec![0.0; n_in];
        for o in 0..n_out {
            for (d, &wv) in dx.iter_mut().zip(&wd[o * n_in..(o + 1) * n_in]) {
                *d += g[o] * wv;
            }
        }
        Some(Tensor::from_vec(x.dims(), dx)?)
    } else {
        None
    };
    Ok((
        dx,
        Tensor::from_vec(weight.dims(), dw)?,
        Tensor::from_vec(&[n_out], g.to_vec())?,
    ))
}

/// Softmax over all elements, stabilized by subtracting the maximum.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn softmax_fwd(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.dims(), softmax(x.data())).expect("same length")
}

/// Jacobian-vector product through softmax, given its output `y`.
pub fn softmax_bwd(d_out: &Tensor, y: &Tensor) -> Result<Tensor> {
    if d_out.dims() != y.dims() {
        return Err(Error::dims("softmax_bwd", "gradient/output shape mismatch"));
    }
    let inner = crate::tensor::dot(d_out.data(), y.data());
    let data = d_out
        .data()
        .iter()
        .zip(y.data())
        .map(|(&g, &s)| s * (g - inner))
        .collect();
    Tensor::from_vec(y.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn win(k: [usize; 3], s: [usize; 3], p: [usize; 3]) -> Window {
        Window {
            kernel: k,
            stride: s,
            padding: p,
        }
    }

    /// Direct seven-loop convolution used as the reference.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, win: &Window) -> Tensor {
        let [ci_n, il, ih, iw] = dims4(x, "").unwrap();
        let wd = w.dims();
        let co_n = wd[0];
        let [kt, ky, kx] = win.kernel;
        let [st, sy, sx] = win.stride;
        let [pt, py, px] = win.padding;
        let ol = (il + 2 * pt - kt) / st + 1;
        let oh = (ih + 2 * py - ky) / sy + 1;
        let ow = (iw + 2 * px - kx) / sx + 1;
        let mut out = Tensor::zeros(&[co_n, ol, oh, ow]);
        for co in 0..co_n {
            for ot in 0..ol {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..ci_n {
                            for dt in 0..kt {
                                for dy in 0..ky {
                                    for dx in 0..kx {
                                        let it = (ot * st + dt) as isize - pt as isize;
                                        let iy = (oy * sy + dy) as isize - py as isize;
                                        let ix = (ox * sx + dx) as isize - px as isize;
                                        if it < 0 || iy < 0 || ix < 0 || it >= il as isize || iy >= ih as isize || ix >= iw as isize {
                                            continue;
                                        }
                                        let xv = x.data()[((ci * il + it as usize) * ih + iy as usize) * iw + ix as usize];
                                        let wv = w.data()[(((co * ci_n + ci) * kt + dt) * ky + dy) * kx + dx];
                                        s += xv * wv;
                                    }
                                }
                            }
                        }
                        out.data_mut()[((co * ol + ot) * oh + oy) * ow + ox] = s + b.data()[co];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 4, 5, 5]);
        let w = Tensor::zeros(&[3, 2, 3, 3, 3]);
        let b = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv3d_fwd(&x, &w, &b, &win([3; 3], [1; 3], [1; 3])).unwrap();
        for (co, chunk) in y.data().chunks(4 * 5 * 5).enumerate() {
            assert!(chunk.iter().all(|&v| v == b.data()[co]));
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[1, 3, 4, 5]);
        let w = Tensor::filled(&[1, 1, 1, 1, 1], 1.0);
        let y = conv3d_fwd(&x, &w, &Tensor::zeros(&[1]), &win([1; 3], [1; 3], [0; 3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 4, 6, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        for wn in [
            win([3; 3], [1; 3], [1; 3]),
            win([3; 3], [2, 2, 2], [1; 3]),
            win([2, 3, 1], [1, 2, 3], [0, 1, 0]),
        ] {
            let w = if wn.kernel == [3; 3] {
                w.clone()
            } else {
                let [a, b2, c] = wn.kernel;
                rand_tensor(&mut rng, &[3, 2, a, b2, c])
            };
            let got = conv3d_fwd(&x, &w, &b, &wn).unwrap();
            let want = naive_conv(&x, &w, &b, &wn);
            assert_eq!(got.dims(), want.dims());
            let diff = got
                .data()
                .iter()
                .zip(want.data())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(diff < 1e-12, "max abs diff {diff}");
        }
    }

    #[test]
    fn conv_bwd_zero_and_bias_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[2, 4, 4, 4]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3, 3]);
        let wn = win([3; 3], [1; 3], [1; 3]);
        let (dx, dw, db) = conv3d_bwd(&Tensor::zeros(&[3, 4, 4, 4]), &x, &w, &wn, true).unwrap();
        assert_eq!(dx.unwrap().max_abs(), 0.0);
        assert_eq!(dw.max_abs(), 0.0);
        assert_eq!(db.max_abs(), 0.0);

        let g = rand_tensor(&mut rng, &[3, 4, 4, 4]);
        let (_, _, db) = conv3d_bwd(&g, &x, &w, &wn, false).unwrap();
        for co in 0..3 {
            let s: f64 = g.data()[co * 64..(co + 1) * 64].iter().sum();
            assert_eq!(db.data()[co], s);
        }
    }

    #[test]
    fn conv_bwd_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for wn in [win([3; 3], [1; 3], [1; 3]), win([2, 3, 3], [2, 1, 2], [0, 1, 1])] {
            let x = rand_tensor(&mut rng, &[2, 4, 4, 4]);
            let w = {
                let [a, b, c] = wn.kernel;
                rand_tensor(&mut rng, &[2, 2, a, b, c])
            };
            let b = rand_tensor(&mut rng, &[2]);
            let out_dims = conv3d_fwd(&x, &w, &b, &wn).unwrap().dims().to_vec();
            let probe = rand_tensor(&mut rng, &out_dims);
            let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
                crate::tensor::dot(conv3d_fwd(x, w, b, &wn).unwrap().data(), probe.data())
            };
            let (dx, dw, db) = conv3d_bwd(&probe, &x, &w, &wn, true).unwrap();
            let nx = central_difference(&x, 1e-5, |t| loss(t, &w, &b));
            let nw = central_difference(&w, 1e-5, |t| loss(&x, t, &b));
            let nb = central_difference(&b, 1e-5, |t| loss(&x, &w, t));
            assert!(max_relative_error(dx.unwrap().data(), nx.data()) < 1e-6);
            assert!(max_relative_error(dw.data(), nw.data()) < 1e-6);
            assert!(max_relative_error(db.data(), nb.data()) < 1e-6);
        }
    }

    #[test]
    fn maxpool_tie_goes_to_first_index() {
        let x = Tensor::filled(&[1, 2, 2, 2], 1.0);
        let (y, arg) = maxpool3d_fwd(&x, &win([2; 3], [2; 3], [0; 3])).unwrap();
        assert_eq!(y.data(), &[1.0]);
        assert_eq!(arg, vec![0]);
        let dx = maxpool3d_bwd(&Tensor::filled(&[1, 1, 1, 1], 3.0), &arg, x.dims()).unwrap();
        assert_eq!(dx.data(), &[3.0, 0., 0., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn maxpool_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[2, 4, 4, 6]);
        for wn in [win([2; 3], [2; 3], [0; 3]), win([1, 2, 2], [1, 2, 2], [0; 3]), win([3; 3], [2; 3], [1; 3])] {
            let (y, arg) = maxpool3d_fwd(&x, &wn).unwrap();
            let probe = rand_tensor(&mut rng, y.dims());
            let dx = maxpool3d_bwd(&probe, &arg, x.dims()).unwrap();
            let nx = central_difference(&x, 1e-5, |t| {
                crate::tensor::dot(maxpool3d_fwd(t, &wn).unwrap().0.data(), probe.data())
            });
            assert!(max_relative_error(dx.data(), nx.data()) < 1e-6);
        }
    }

    #[test]
    fn pointwise_values() {
        let r = relu_fwd(&Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap());
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn pointwise_and_fc_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // keep relu inputs away from the kink
        let x = rand_tensor(&mut rng, &[2, 2, 3, 3]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let probe = rand_tensor(&mut rng, x.dims());

        let d = relu_bwd(&probe, &x).unwrap();
        let n = central_difference(&x, 1e-5, |t| crate::tensor::dot(relu_fwd(t).data(), probe.data()));
        assert!(max_relative_error(d.data(), n.data()) < 1e-6);

        let y = sigmoid_fwd(&x);
        let d = sigmoid_bwd(&probe, &y).unwrap();
        let n = central_difference(&x, 1e-5, |t| crate::tensor::dot(sigmoid_fwd(t).data(), probe.data()));
        assert!(max_relative_error(d.data(), n.data()) < 1e-6);

        let y = softmax_fwd(&x);
        let d = softmax_bwd(&probe, &y).unwrap();
        let n = central_difference(&x, 1e-5, |t| crate::tensor::dot(softmax_fwd(t).data(), probe.data()));
        assert!(max_relative_error(d.data(), n.data()) < 1e-6);

        let w = rand_tensor(&mut rng, &[5, 36]);
        let b = rand_tensor(&mut rng, &[5]);
        let p5 = rand_tensor(&mut rng, &[5, 1, 1, 1]);
        let (dx, dw, db) = fc_bwd(&p5, &x, &w, true).unwrap();
        let f = |x: &Tensor, w: &Tensor, b: &Tensor| crate::tensor::dot(fc_fwd(x, w, b).unwrap().data(), p5.data());
        assert!(max_relative_error(dx.unwrap().data(), central_difference(&x, 1e-5, |t| f(t, &w, &b)).data()) < 1e-6);
        assert!(max_relative_error(dw.data(), central_difference(&w, 1e-5, |t| f(&x, t, &b)).data()) < 1e-6);
        assert!(max_relative_error(db.data(), central_difference(&b, 1e-5, |t| f(&x, &w, t)).data()) < 1e-6);
    }
}
