//! Heat maps and joint-guided pooling of feature maps.
//!
//! Pooling can be done by sampling the feature maps at grid points, or as a
//! bilinear product `P = A·Bᵀ` between flattened heat maps `A` (`M × lhw`)
//! and flattened feature maps `B` (`C × lhw`). With one-hot heat maps both
//! give identical results; the bilinear form also accepts soft weights and
//! the learnable generalization `P = A·W·Bᵀ`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jointmap::{map_joint, GridPoint, JointTrack, MappingScheme};
use crate::net3d::NetworkConfig;
use crate::tensor::{matmul, matmul_bt, Matrix, Tensor};

/// `M = N × L` weight volumes of size `l × h × w`, stored as a tensor
/// `[M, l, h, w]`. Channel `m = t·N + i` belongs to joint `i` at frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMapStack {
    n_joints: usize,
    clip_len: usize,
    maps: Tensor,
}

impl HeatMapStack {
    pub fn new(n_joints: usize, clip_len: usize, maps: Tensor) -> Result<Self> {
        let d = maps.dims();
        if d.len() != 4 || d[0] != n_joints * clip_len {
            return Err(Error::dims(
                "heat map stack",
                format!("{d:?} for {n_joints} joints x {clip_len} frames"),
            ));
        }
        if maps.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("heat map values must lie in [0, 1]".into()));
        }
        Ok(HeatMapStack {
            n_joints,
            clip_len,
            maps,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    pub fn channels(&self) -> usize {
        self.n_joints * self.clip_len
    }

    /// `(l, h, w)` of each map.
    pub fn map_shape(&self) -> [usize; 3] {
        let d = self.maps.dims();
        [d[1], d[2], d[3]]
    }

    pub fn maps(&self) -> &Tensor {
        &self.maps
    }

    /// The `M × lhw` matrix `A`.
    pub fn to_matrix(&self) -> Matrix {
        self.maps.to_matrix()
    }

    /// True when every channel is one-hot.
    pub fn is_hard(&self) -> bool {
        let vol: usize = self.map_shape().iter().product();
        self.maps.data().chunks(vol).all(|c| {
            c.iter().filter(|&&v| v == 1.0).count() == 1 && c.iter().all(|&v| v == 0.0 || v == 1.0)
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, layer: &str) -> Result<()> {
        let path = path.as_ref();
        self.maps.save(path)?;
        write_sidecar(
            path,
            &Sidecar {
                kind: "heatmaps".into(),
                n_joints: self.n_joints,
                clip_len: self.clip_len,
                channels: self.channels(),
                layer: layer.into(),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(HeatMapStack, Sidecar)> {
        let path = path.as_ref();
        let side = read_sidecar(path)?;
        let stack = HeatMapStack::new(side.n_joints, side.clip_len, Tensor::load(path)?)?;
        Ok((stack, side))
    }
}

/// Metadata written next to heat-map and pooled-matrix tensor files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: String,
    pub n_joints: usize,
    pub clip_len: usize,
    pub channels: usize,
    pub layer: String,
}

pub(crate) fn sidecar_path(tensor_path: &Path) -> PathBuf {
    tensor_path.with_extension("json")
}

fn write_sidecar(tensor_path: &Path, side: &Sidecar) -> Result<()> {
    let p = sidecar_path(tensor_path);
    std::fs::write(&p, serde_json::to_string_pretty(side)?).map_err(|e| Error::io(&p, e))
}

fn read_sidecar(tensor_path: &Path) -> Result<Sidecar> {
    let p = sidecar_path(tensor_path);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: p,
        offset: e.line() as u64,
        msg: e.to_string(),
    })
}

/// Grid points for every (frame, joint) of a clip in stack order.
pub fn clip_grid_points(
    joints: &JointTrack,
    cfg: &NetworkConfig,
    layer: &str,
    scheme: MappingScheme,
) -> Result<Vec<GridPoint>> {
    let mut out = Vec::with_capacity(joints.n_frames() * joints.n_joints());
    for t in 0..joints.n_frames() {
        for p in joints.frame(t) {
            out.push(map_joint(scheme, [p.x, p.y, t as f64], p.visible, cfg, layer)?);
        }
    }
    Ok(out)
}

/// One-hot heat maps at the given grid points (stack order).
pub fn hard_heatmaps(
    points: &[GridPoint],
    n_joints: usize,
    clip_len: usize,
    map_lhw: [usize; 3],
) -> Result<HeatMapStack> {
    let m = n_joints * clip_len;
    if points.len() != m {
        return Err(Error::dims(
            "hard_heatmaps",
            format!("{} points for {n_joints} joints x {clip_len} frames", points.len()),
        ));
    }
    let [l, h, w] = map_lhw;
    let vol = l * h * w;
    let mut maps = Tensor::zeros(&[m, l, h, w]);
    for (ch, p) in points.iter().enumerate() {
        if p.t >= l || p.y >= h || p.x >= w {
            return Err(Error::dims("hard_heatmaps", format!("grid point {p:?} outside {map_lhw:?}")));
        }
        maps.data_mut()[ch * vol + (p.t * h + p.y) * w + p.x] = 1.0;
    }
    HeatMapStack::new(n_joints, clip_len, maps)
}

/// Hard heat maps for a clip's joints in `layer`, using coordinate mapping.
pub fn make_heatmaps(joints: &JointTrack, cfg: &NetworkConfig, layer: &str, clip_len: usize) -> Result<HeatMapStack> {
    make_heatmaps_with(joints, cfg, layer, clip_len, MappingScheme::Coordinate)
}

pub fn make_heatmaps_with(
    joints: &JointTrack,
    cfg: &NetworkConfig,
    layer: &str,
    clip_len: usize,
    scheme: MappingScheme,
) -> Result<HeatMapStack> {
    if joints.n_frames() < clip_len {
        return Err(Error::InvalidArgument(format!(
            "joint track covers {} frames, clip needs {clip_len}",
            joints.n_frames()
        )));
    }
    let track = joints.window(0, clip_len)?;
    let points = clip_grid_points(&track, cfg, layer, scheme)?;
    let [_, l, h, w] = cfg.output_shape_of(layer)?;
    hard_heatmaps(&points, joints.n_joints(), clip_len, [l, h, w])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neighborhood {
    /// The single activation at the grid point.
    Point,
    /// Per-channel maximum over the 3×3×3 cube around the point, cut to
    /// the map bounds.
    Cube,
}

impl FromStr for Neighborhood {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Neighborhood::Point),
            "3" => Ok(Neighborhood::Cube),
            other => Err(Error::InvalidArgument(format!("neighborhood must be 1 or 3, got `{other}`"))),
        }
    }
}

impl fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Neighborhood::Point => "1",
            Neighborhood::Cube => "3",
        })
    }
}

/// Pools a `C`-vector from feature maps `[C, l, h, w]` at `p`.
pub fn sample_pool(featmaps: &Tensor, p: &GridPoint, neighborhood: Neighborhood) -> Result<Vec<f64>> {
    let &[c_n, l, h, w] = featmaps.dims() else {
        return Err(Error::dims("sample_pool", format!("feature maps {:?}", featmaps.dims())));
    };
    if p.t >= l || p.y >= h || p.x >= w {
        return Err(Error::dims("sample_pool", format!("grid point {p:?} outside {:?}", featmaps.dims())));
    }
    let vol = l * h * w;
    let d = featmaps.data();
    Ok(match neighborhood {
        Neighborhood::Point => {
            let off = (p.t * h + p.y) * w + p.x;
            (0..c_n).map(|c| d[c * vol + off]).collect()
        }
        Neighborhood::Cube => {
            let span = |v: usize, n: usize| v.saturating_sub(1)..(v + 2).min(n);
            (0..c_n)
                .map(|c| {
                    let mut best = f64::NEG_INFINITY;
                    for t in span(p.t, l) {
                        for y in span(p.y, h) {
                            for x in span(p.x, w) {
                                best = best.max(d[c * vol + (t * h + y) * w + x]);
                            }
                        }
                    }
                    best
                })
                .collect()
        }
    })
}

/// `M × C` pooled features with their `(N, L)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMatrix {
    matrix: Matrix,
    n_joints: usize,
    clip_len: usize,
}

impl PooledMatrix {
    pub fn new(matrix: Matrix, n_joints: usize, clip_len: usize) -> Result<Self> {
        if matrix.rows() != n_joints * clip_len {
            return Err(Error::dims(
                "pooled matrix",
                format!("{} rows for {n_joints} joints x {clip_len} frames", matrix.rows()),
            ));
        }
        Ok(PooledMatrix {
            matrix,
            n_joints,
            clip_len,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    pub fn channels(&self) -> usize {
        self.matrix.cols()
    }

    /// All rows concatenated, frame-major then joint.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrix.data().to_vec()
    }

    /// The `N·C` vector of frame `t`.
    pub fn frame_vector(&self, t: usize) -> &[f64] {
        let w = self.n_joints * self.channels();
        &self.matrix.data()[t * w..(t + 1) * w]
    }

    pub fn save(&self, path: impl AsRef<Path>, layer: &str) -> Result<()> {
        let path = path.as_ref();
        self.matrix.to_tensor().save(path)?;
        write_sidecar(
            path,
            &Sidecar {
                kind: "pooled".into(),
                n_joints: self.n_joints,
                clip_len: self.clip_len,
                channels: self.channels(),
                layer: layer.into(),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(PooledMatrix, Sidecar)> {
        let path = path.as_ref();
        let side = read_sidecar(path)?;
        let m = Matrix::from_tensor(&Tensor::load(path)?)?;
        Ok((PooledMatrix::new(m, side.n_joints, side.clip_len)?, side))
    }
}

/// Samples one row per grid point (stack order).
pub fn pool_sampled(
    featmaps: &Tensor,
    points: &[GridPoint],
    n_joints: usize,
    clip_len: usize,
    neighborhood: Neighborhood,
) -> Result<PooledMatrix> {
    let rows = points
        .iter()
        .map(|p| sample_pool(featmaps, p, neighborhood))
        .collect::<Result<Vec<_>>>()?;
    PooledMatrix::new(Matrix::from_rows(&rows)?, n_joints, clip_len)
}

/// `P = A·Bᵀ` for heat maps `A` (`M × K`) and feature maps `B` (`C × K`).
pub fn bilinear_product(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dims(
            "bilinear_product",
            format!("A is {}x{}, B is {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    matmul_bt(a, b)
}

/// Pools feature maps `[C, l, h, w]` with a heat-map stack.
pub fn pool_bilinear(featmaps: &Tensor, stack: &HeatMapStack) -> Result<PooledMatrix> {
    let p = bilinear_product(&stack.to_matrix(), &featmaps.to_matrix())?;
    PooledMatrix::new(p, stack.n_joints(), stack.clip_len())
}

/// `P = A·W·Bᵀ` with `A: M×K₁`, `W: K₁×K₂`, `B: C×K₂`.
pub fn bilinear_general_fwd(a: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != w.rows() || w.cols() != b.cols() {
        return Err(Error::dims(
            "bilinear_general_fwd",
            format!(
                "A {}x{}, W {}x{}, B {}x{}",
                a.rows(),
                a.cols(),
                w.rows(),
                w.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    matmul_bt(&matmul(a, w)?, b)
}

/// Gradients of `P = A·W·Bᵀ`:
/// `dA = dP·B·Wᵀ`, `dB = dPᵀ·A·W`, `dW = Aᵀ·dP·B`.
pub fn bilinear_general_bwd(
    d_p: &Matrix,
    a: &Matrix,
    w: &Matrix,
    b: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    if d_p.rows() != a.rows() || d_p.cols() != b.rows() || a.cols() != w.rows() || w.cols() != b.cols() {
        return Err(Error::dims(
            "bilinear_general_bwd",
            format!(
                "dP {}x{}, A {}x{}, W {}x{}, B {}x{}",
                d_p.rows(),
                d_p.cols(),
                a.rows(),
                a.cols(),
                w.rows(),
                w.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    let dp_b = matmul(d_p, b)?;
    let d_a = matmul_bt(&dp_b, w)?;
    let d_w = matmul(&a.transpose(), &dp_b)?;
    let d_b = matmul(&d_p.transpose(), &matmul(a, w)?)?;
    Ok((d_a, d_w, d_b))
}
