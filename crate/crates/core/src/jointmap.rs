//! Mapping body-joint coordinates in clip frames onto voxels of a layer's
//! feature maps.
//!
//! Two schemes are provided. [`ratio_scale`] multiplies each coordinate by
//! the size ratio between feature map and clip. [`map_to_layer`] folds the
//! kernel/stride/padding arithmetic of every preceding layer, keeping real
//! values through the chain and rounding once at the end.
//! [`closed_form_c3d`] is the collapsed form of that fold for the C3D
//! layer pattern and serves as an independent check on it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net3d::{LayerKind, LayerSpec, NetworkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// Joint positions for every frame of a video or clip, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrack {
    n_joints: usize,
    n_frames: usize,
    names: Vec<String>,
    points: Vec<JointPoint>,
}

impl JointTrack {
    pub fn new(n_joints: usize, n_frames: usize, names: Vec<String>, points: Vec<JointPoint>) -> Result<Self> {
        if n_joints == 0 || n_frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "joint track needs >= 1 joint and frame, got {n_joints}x{n_frames}"
            )));
        }
        if points.len() != n_joints * n_frames {
            return Err(Error::InvalidArgument(format!(
                "{} points for {n_joints} joints x {n_frames} frames",
                points.len()
            )));
        }
        if !names.is_empty() && names.len() != n_joints {
            return Err(Error::InvalidArgument(format!(
                "{} joint names for {n_joints} joints",
                names.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidArgument("joint coordinates must be finite".into()));
        }
        Ok(JointTrack {
            n_joints,
            n_frames,
            names,
            points,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn points(&self) -> &[JointPoint] {
        &self.points
    }

    pub fn get(&self, frame: usize, joint: usize) -> JointPoint {
        self.points[frame * self.n_joints + joint]
    }

    pub fn frame(&self, frame: usize) -> &[JointPoint] {
        &self.points[frame * self.n_joints..(frame + 1) * self.n_joints]
    }

    /// Frames `start..start + len`, re-based so the first becomes frame 0.
    pub fn window(&self, start: usize, len: usize) -> Result<JointTrack> {
        if start + len > self.n_frames || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "window {start}..{} outside {} frames",
                start + len,
                self.n_frames
            )));
        }
        Ok(JointTrack {
            n_joints: self.n_joints,
            n_frames: len,
            names: self.names.clone(),
            points: self.points[start * self.n_joints..(start + len) * self.n_joints].to_vec(),
        })
    }

    /// Applies `f` to every `(x, y)` pair; visibility is kept.
    pub fn map_xy(&self, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> JointTrack {
        let points = self
            .points
            .iter()
            .map(|p| {
                let (x, y) = f(p.x, p.y);
                JointPoint { x, y, visible: p.visible }
            })
            .collect();
        JointTrack {
            points,
            names: self.names.clone(),
            ..*self
        }
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> JointTrack {
        self.map_xy(|x, y| (x * sx, y * sy))
    }
}

/// A joint located in a feature map. `x`, `y`, `t` are valid voxel indices;
/// `raw` keeps the real-valued `(x, y, t)` before rounding and clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub x: usize,
    pub y: usize,
    pub t: usize,
    pub raw: [f64; 3],
    /// The joint lay outside the frame or its rounded position fell
    /// outside the map, and was clamped.
    pub clamped: bool,
    pub visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingScheme {
    Ratio,
    Coordinate,
}

impl FromStr for MappingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(MappingScheme::Ratio),
            "coordinate" => Ok(MappingScheme::Coordinate),
            other => Err(Error::InvalidArgument(format!("unknown mapping scheme `{other}`"))),
        }
    }
}

impl fmt::Display for MappingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            MappingScheme::Ratio => "ratio",
            MappingScheme::Coordinate => "coordinate",
        })
    }
}

/// Round half up.
#[inline]
pub fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

fn clamp_index(v: f64, extent: usize) -> (usize, bool) {
    let max = (extent - 1) as f64;
    if v < 0.0 {
        (0, true)
    } else if v > max {
        (extent - 1, true)
    } else {
        (v as usize, false)
    }
}

fn clamp_into(v: f64, extent: usize) -> (f64, bool) {
    let max = (extent - 1) as f64;
    if v < 0.0 {
        (0.0, true)
    } else if v > max {
        (max, true)
    } else {
        (v, false)
    }
}

fn finish(raw: [f64; 3], map_lhw: [usize; 3], pre_clamped: bool, visible: bool) -> GridPoint {
    let [l, h, w] = map_lhw;
    let (x, cx) = clamp_index(round_half_up(raw[0]), w);
    let (y, cy) = clamp_index(round_half_up(raw[1]), h);
    let (t, ct) = clamp_index(round_half_up(raw[2]), l);
    GridPoint {
        x,
        y,
        t,
        raw,
        clamped: pre_clamped || cx || cy || ct,
        visible,
    }
}

/// Scales `(x, y, t)` by the per-axis ratio `map_extent / clip_extent`,
/// rounds half up and clamps. Shapes are `(L, H, W)`.
pub fn ratio_scale(joint: [f64; 3], visible: bool, clip_lhw: [usize; 3], map_lhw: [usize; 3]) -> GridPoint {
    let r = |axis: usize| map_lhw[axis] as f64 / clip_lhw[axis] as f64;
    let raw = [joint[0] * r(2), joint[1] * r(1), joint[2] * r(0)];
    finish(raw, map_lhw, false, visible)
}

/// Carries a real-valued `(x, y, t)` from a layer's input to its output:
/// `(v + pad − (k − 1)/2) / stride` per axis for conv and pool layers,
/// identity for everything else.
pub fn map_through_layer(p: [f64; 3], spec: &LayerSpec) -> [f64; 3] {
    let Some(win) = spec.window() else {
        return p;
    };
    // window arrays are ordered (t, y, x)
    let step = |v: f64, axis: usize| {
        (v + win.padding[axis] as f64 - (win.kernel[axis] as f64 - 1.0) / 2.0) / win.stride[axis] as f64
    };
    [step(p[0], 2), step(p[1], 1), step(p[2], 0)]
}

/// Pre-rounding position of `joint` after every layer up to and including
/// `layer`.
pub fn fold_to_layer(joint: [f64; 3], cfg: &NetworkConfig, layer: &str) -> Result<[f64; 3]> {
    let end = cfg.layer_index(layer)?;
    let mut p = joint;
    for spec in &cfg.layers[..=end] {
        if matches!(spec.kind, LayerKind::Fc | LayerKind::Softmax) {
            return Err(Error::InvalidLayer {
                layer: spec.name.clone(),
                detail: "coordinates cannot be mapped through a fully-connected layer".into(),
            });
        }
        p = map_through_layer(p, spec);
    }
    Ok(p)
}

/// Coordinate-mapping scheme: clamp the joint into the clip, fold it
/// through the layers, round once (half up) and clamp into the map.
pub fn map_to_layer(joint: [f64; 3], visible: bool, cfg: &NetworkConfig, layer: &str) -> Result<GridPoint> {
    let [_, l_in, h_in, w_in] = cfg.input;
    let (x, cx) = clamp_into(joint[0], w_in);
    let (y, cy) = clamp_into(joint[1], h_in);
    let (t, ct) = clamp_into(joint[2], l_in);
    let raw = fold_to_layer([x, y, t], cfg, layer)?;
    let [_, l, h, w] = cfg.output_shape_of(layer)?;
    Ok(finish(raw, [l, h, w], cx || cy || ct, visible))
}

/// Maps a joint into `layer` with the chosen scheme.
pub fn map_joint(
    scheme: MappingScheme,
    joint: [f64; 3],
    visible: bool,
    cfg: &NetworkConfig,
    layer: &str,
) -> Result<GridPoint> {
    match scheme {
        MappingScheme::Coordinate => map_to_layer(joint, visible, cfg, layer),
        MappingScheme::Ratio => {
            let [_, l, h, w] = cfg.output_shape_of(layer)?;
            let [_, cl, ch, cw] = cfg.input;
            Ok(ratio_scale(joint, visible, [cl, ch, cw], [l, h, w]))
        }
    }
}

/// Spatial closed form for conv group `i` of C3D (`conv{i}a`/`conv{i}b`):
/// `(v − (2^{i−1} − 1)/2) / 2^{i−1}`. Valid for `1 ≤ i ≤ 5`.
pub fn closed_form_spatial(v: f64, i: u32) -> Result<f64> {
    if !(1..=5).contains(&i) {
        return Err(Error::OutOfRange {
            index: i as i64,
            range: "1..=5 (spatial)",
        });
    }
    let d = f64::from(1u32 << (i - 1));
    Ok((v - (d - 1.0) / 2.0) / d)
}

/// Temporal closed form `(t − (2^{i−2} − 1)/2) / 2^{i−2}`. The temporal
/// axis is pooled one fewer time than the spatial axes (pool1 keeps time),
/// so the form only holds for `2 ≤ i ≤ 5`.
pub fn closed_form_temporal(t: f64, i: u32) -> Result<f64> {
    if !(2..=5).contains(&i) {
        return Err(Error::OutOfRange {
            index: i as i64,
            range: "2..=5 (temporal)",
        });
    }
    let d = f64::from(1u32 << (i - 2));
    Ok((t - (d - 1.0) / 2.0) / d)
}

/// Pre-rounding `(x, y, t)` in conv group `i` of C3D.
pub fn closed_form_c3d(joint: [f64; 3], i: u32) -> Result<[f64; 3]> {
    Ok([
        closed_form_spatial(joint[0], i)?,
        closed_form_spatial(joint[1], i)?,
        closed_form_temporal(joint[2], i)?,
    ])
}

/// Conv group of a C3D layer name (`conv3b` → 3).
pub fn conv_group(layer: &str) -> Option<u32> {
    let rest = layer.strip_prefix("conv")?;
    let digit = rest.chars().next()?.to_digit(10)?;
    matches!(&rest[1..], "a" | "b").then_some(digit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_scale_examples() {
        let same = ratio_scale([5.0, 7.0, 3.0], true, [16, 32, 32], [16, 32, 32]);
        assert_eq!((same.x, same.y, same.t), (5, 7, 3));

        let g = ratio_scale([56.0, 0.0, 0.0], true, [16, 112, 112], [2, 7, 7]);
        assert_eq!(g.raw[0], 3.5);
        assert_eq!(g.x, 4);
        assert!(!g.clamped);

        let g = ratio_scale([111.0, 0.0, 0.0], true, [16, 112, 112], [2, 7, 7]);
        assert_eq!(g.raw[0], 6.9375);
        assert_eq!(g.x, 6);
        assert!(g.clamped);
    }

    #[test]
    fn single_layer_mapping() {
        let conv = LayerSpec::conv333("c", 4);
        assert_eq!(map_through_layer([4.0, 9.0, 2.0], &conv), [4.0, 9.0, 2.0]);
        let pool = LayerSpec::pool("p", [2; 3], [2; 3]);
        assert_eq!(map_through_layer([10.0, 10.0, 10.0], &pool), [4.75; 3]);
        let relu = LayerSpec::pointwise("r", LayerKind::Relu);
        assert_eq!(map_through_layer([3.2, 1.1, 0.0], &relu), [3.2, 1.1, 0.0]);
    }

    #[test]
    fn full_c3d_conv5b_examples() {
        let cfg = NetworkConfig::c3d(487);
        let g = map_to_layer([56.0, 56.0, 15.0], true, &cfg, "conv5b").unwrap();
        assert_eq!(g.raw, [3.03125, 3.03125, 1.4375]);
        assert_eq!((g.x, g.y, g.t), (3, 3, 1));

        let first = map_to_layer([17.0, 99.0, 4.0], true, &cfg, "conv1a").unwrap();
        assert_eq!((first.x, first.y, first.t), (17, 99, 4));
        assert!(map_to_layer([0.0; 3], true, &cfg, "fc6").is_err());
        assert!(matches!(
            map_to_layer([0.0; 3], true, &cfg, "nope"),
            Err(Error::UnknownLayer(_))
        ));
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_spatial(37.0, 1).unwrap(), 37.0);
        assert_eq!(closed_form_temporal(11.0, 2).unwrap(), 11.0);
        let c = closed_form_c3d([56.0, 56.0, 15.0], 5).unwrap();
        assert!((c[0] - 3.03125).abs() < 1e-9);
        assert!((c[2] - 1.4375).abs() < 1e-9);
        assert!(closed_form_temporal(3.0, 1).is_err());
        assert!(closed_form_spatial(3.0, 6).is_err());
        assert!(closed_form_c3d([0.0; 3], 1).is_err());
    }

    #[test]
    fn conv_group_names() {
        assert_eq!(conv_group("conv3b"), Some(3));
        assert_eq!(conv_group("conv1a"), Some(1));
        assert_eq!(conv_group("pool3"), None);
        assert_eq!(conv_group("conv3c"), None);
    }

    #[test]
    fn out_of_frame_joint_is_clamped_and_flagged() {
        let cfg = NetworkConfig::c3d_mini(3);
        let g = map_to_layer([-12.0, 40.0, 3.0], false, &cfg, "conv5b").unwrap();
        assert!(g.clamped);
        assert!(!g.visible);
        assert!(g.x < 2 && g.y < 2 && g.t < 2);
    }

    #[test]
    fn schemes_differ_on_asymmetric_point() {
        let cfg = NetworkConfig::c3d_mini(3);
        // x = 8: ratio gives 0.5 → 1, coordinate gives (8 − 7.5)/16 → 0
        let r = map_joint(MappingScheme::Ratio, [8.0, 8.0, 0.0], true, &cfg, "conv5b").unwrap();
        let c = map_joint(MappingScheme::Coordinate, [8.0, 8.0, 0.0], true, &cfg, "conv5b").unwrap();
        assert_eq!((r.x, c.x), (1, 0));
    }

    proptest! {
        #[test]
        fn fold_is_monotone(a in 0.0f64..112.0, b in 0.0f64..112.0) {
            let cfg = NetworkConfig::c3d(487);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for layer in ["conv2a", "conv3b", "conv5b", "pool5"] {
                let p = fold_to_layer([lo, lo, lo.min(15.0)], &cfg, layer).unwrap();
                let q = fold_to_layer([hi, hi, hi.min(15.0)], &cfg, layer).unwrap();
                prop_assert!(p[0] <= q[0] && p[1] <= q[1] && p[2] <= q[2]);
            }
        }

        #[test]
        fn mapped_points_index_valid_voxels(x in -50.0f64..200.0, y in -50.0f64..200.0, t in -3.0f64..20.0) {
            let cfg = NetworkConfig::c3d_mini(3);
            for layer in ["conv1a", "pool2", "conv4b", "conv5b"] {
                let [_, l, h, w] = cfg.output_shape_of(layer).unwrap();
                for scheme in [MappingScheme::Ratio, MappingScheme::Coordinate] {
                    let g = map_joint(scheme, [x, y, t], true, &cfg, layer).unwrap();
                    prop_assert!(g.x < w && g.y < h && g.t < l);
                }
            }
        }
    }
}
