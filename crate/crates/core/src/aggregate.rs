//! Clip-to-video aggregation of pooled features, and late score fusion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poolgen::{sidecar_path, PooledMatrix};
use crate::tensor::{l2_normalize, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    /// Concatenate a clip's pooled rows; average clips; L2-normalize.
    /// Length `C·N·L`.
    Basic,
    /// Max+min over frames within a clip, then over clips; L2-normalize.
    /// Length `4·C·N`.
    Advanced,
    /// Baseline without joints: spatio-temporal mean of each channel,
    /// averaged over clips. Length `C`.
    GlobalAverage,
}

impl FromStr for AggregationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(AggregationKind::Basic),
            "advanced" => Ok(AggregationKind::Advanced),
            "global-avg" => Ok(AggregationKind::GlobalAverage),
            other => Err(Error::InvalidArgument(format!("unknown aggregation `{other}`"))),
        }
    }
}

impl fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            AggregationKind::Basic => "basic",
            AggregationKind::Advanced => "advanced",
            AggregationKind::GlobalAverage => "global-avg",
        })
    }
}

/// Fixed-length video feature with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
    pub kind: AggregationKind,
    pub channels: usize,
    pub n_joints: usize,
    pub clip_len: usize,
}

impl Descriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>, video_id: &str, label: Option<usize>) -> Result<()> {
        let path = path.as_ref();
        Tensor::from_vec(&[self.values.len()], self.values.clone())?.save(path)?;
        let side = DescriptorSidecar {
            kind: self.kind,
            channels: self.channels,
            n_joints: self.n_joints,
            clip_len: self.clip_len,
            video_id: video_id.to_string(),
            label,
        };
        let sp = sidecar_path(path);
        std::fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Descriptor, DescriptorSidecar)> {
        let path = path.as_ref();
        let sp = sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: DescriptorSidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: sp.clone(),
            offset: e.line() as u64,
            msg: e.to_string(),
        })?;
        let values = Tensor::load(path)?.into_data();
        Ok((
            Descriptor {
                values,
                kind: side.kind,
                channels: side.channels,
                n_joints: side.n_joints,
                clip_len: side.clip_len,
            },
            side,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorSidecar {
    pub kind: AggregationKind,
    pub channels: usize,
    pub n_joints: usize,
    pub clip_len: usize,
    pub video_id: String,
    pub label: Option<usize>,
}

/// Rows of `P` concatenated frame-major: `[f^{1,1}, …, f^{N,1}, f^{1,2}, …, f^{N,L}]`.
pub fn clip_vector_basic(p: &PooledMatrix) -> Vec<f64> {
    p.flatten()
}

fn check_same_len<T: AsRef<[f64]>>(vs: &[T], op: &'static str) -> Result<usize> {
    let d = vs.first().ok_or(Error::Empty(op))?.as_ref().len();
    if vs.iter().any(|v| v.as_ref().len() != d) {
        return Err(Error::dims(op, "vectors differ in length"));
    }
    Ok(d)
}

/// Elementwise mean of the clip vectors followed by L2 normalization.
pub fn video_descriptor_basic<T: AsRef<[f64]>>(clips: &[T], channels: usize, n_joints: usize, clip_len: usize) -> Result<Descriptor> {
    let d = check_same_len(clips, "video_descriptor_basic")?;
    let mut mean = vec![0.0; d];
    for c in clips {
        for (m, v) in mean.iter_mut().zip(c.as_ref()) {
            *m += v;
        }
    }
    let k = clips.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok(Descriptor {
        values: l2_normalize(&mean),
        kind: AggregationKind::Basic,
        channels,
        n_joints,
        clip_len,
    })
}

/// `[elementwise max, elementwise min]` over a non-empty set of vectors.
pub fn maxmin_pool<T: AsRef<[f64]>>(vs: &[T]) -> Result<Vec<f64>> {
    let d = check_same_len(vs, "maxmin_pool")?;
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut lo = vec![f64::INFINITY; d];
    for v in vs {
        for (j, &x) in v.as_ref().iter().enumerate() {
            hi[j] = hi[j].max(x);
            lo[j] = lo[j].min(x);
        }
    }
    hi.extend(lo);
    Ok(hi)
}

/// Max+min pooling over the `L` frame vectors of each clip, then over
/// clips, then L2 normalization.
pub fn video_descriptor_advanced(clips: &[PooledMatrix]) -> Result<Descriptor> {
    let first = clips.first().ok_or(Error::Empty("video_descriptor_advanced"))?;
    let (c, n, l) = (first.channels(), first.n_joints(), first.clip_len());
    if clips.iter().any(|p| (p.channels(), p.n_joints()) != (c, n)) {
        return Err(Error::dims("video_descriptor_advanced", "clips differ in layout"));
    }
    let clip_descs = clips
        .iter()
        .map(|p| {
            let frames: Vec<&[f64]> = (0..p.clip_len()).map(|t| p.frame_vector(t)).collect();
            maxmin_pool(&frames)
        })
        .collect::<Result<Vec<_>>>()?;
    let video = maxmin_pool(&clip_descs)?;
    Ok(Descriptor {
        values: l2_normalize(&video),
        kind: AggregationKind::Advanced,
        channels: c,
        n_joints: n,
        clip_len: l,
    })
}

pub fn video_descriptor(kind: AggregationKind, clips: &[PooledMatrix]) -> Result<Descriptor> {
    match kind {
        AggregationKind::Basic => {
            let first = clips.first().ok_or(Error::Empty("video_descriptor"))?;
            let vecs: Vec<Vec<f64>> = clips.iter().map(clip_vector_basic).collect();
            video_descriptor_basic(&vecs, first.channels(), first.n_joints(), first.clip_len())
        }
        AggregationKind::Advanced => video_descriptor_advanced(clips),
        AggregationKind::GlobalAverage => Err(Error::InvalidArgument(
            "global-average descriptors are built from feature maps, not pooled matrices".into(),
        )),
    }
}

/// Joint-free baseline: per clip the mean of each channel over all
/// positions of `[C, l, h, w]`, averaged over clips and L2-normalized.
pub fn global_average_descriptor(featmaps: &[Tensor]) -> Result<Descriptor> {
    let first = featmaps.first().ok_or(Error::Empty("global_average_descriptor"))?;
    let c = first.dims()[0];
    let clip_vecs = featmaps
        .iter()
        .map(|f| {
            if f.dims() != first.dims() {
                return Err(Error::dims("global_average_descriptor", "clips differ in shape"));
            }
            let vol = f.len() / c;
            Ok(f.data().chunks(vol).map(|ch| ch.iter().sum::<f64>() / vol as f64).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut d = video_descriptor_basic(&clip_vecs, c, 1, 1)?;
    d.kind = AggregationKind::GlobalAverage;
    Ok(d)
}

/// Weighted elementwise sum of per-model class scores. `None` weights
/// means equal weights.
pub fn fuse_scores<T: AsRef<[f64]>>(scores: &[T], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = check_same_len(scores, "fuse_scores")?;
    let equal;
    let weights = match weights {
        Some(w) => w,
        None => {
            equal = vec![1.0 / scores.len() as f64; scores.len()];
            &equal
        }
    };
    if weights.len() != scores.len() {
        return Err(Error::dims(
            "fuse_scores",
            format!("{} weights for {} score vectors", weights.len(), scores.len()),
        ));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("fusion weights must sum to 1".into()));
    }
    let mut out = vec![0.0; n];
    for (s, &w) in scores.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(s.as_ref()) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{l2_norm, Matrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pooled(rng: &mut ChaCha8Rng, c: usize, n: usize, l: usize) -> PooledMatrix {
        let m = Matrix::from_vec(n * l, c, (0..n * l * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        PooledMatrix::new(m, n, l).unwrap()
    }

    #[test]
    fn basic_clip_vector_is_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = pooled(&mut rng, 5, 1, 1);
        assert_eq!(clip_vector_basic(&p), p.matrix().row(0).to_vec());
        let p = pooled(&mut rng, 3, 2, 4);
        assert_eq!(clip_vector_basic(&p).len(), 24);
    }

    #[test]
    fn basic_video_descriptor_cases() {
        let v = vec![3.0, 4.0];
        let d = video_descriptor_basic(std::slice::from_ref(&v), 2, 1, 1).unwrap();
        assert_eq!(d.values, vec![0.6, 0.8]);

        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let d = video_descriptor_basic(&[v, neg], 2, 1, 1).unwrap();
        assert_eq!(d.values, vec![0.0, 0.0]);

        assert!(matches!(
            video_descriptor_basic::<Vec<f64>>(&[], 1, 1, 1),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn basic_matches_naive_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clips: Vec<Vec<f64>> = (0..4).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let d = video_descriptor_basic(&clips, 10, 1, 1).unwrap();
        let mut mean = [0.0; 10];
        for j in 0..10 {
            mean[j] = (clips[0][j] + clips[1][j] + clips[2][j] + clips[3][j]) / 4.0;
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..10 {
            assert!((d.values[j] - mean[j] / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn maxmin_examples() {
        assert_eq!(maxmin_pool(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap(), vec![3.0, 5.0, 1.0, 2.0]);
        assert_eq!(maxmin_pool(&[vec![7.0, -1.0]]).unwrap(), vec![7.0, -1.0, 7.0, -1.0]);
        assert!(maxmin_pool::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn advanced_single_clip_single_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = pooled(&mut rng, 3, 2, 1);
        let d = video_descriptor_advanced(std::slice::from_ref(&p)).unwrap();
        let v = p.flatten();
        let rep: Vec<f64> = [v.clone(), v.clone(), v.clone(), v].concat();
        let want = l2_normalize(&rep);
        assert_eq!(d.values.len(), 4 * 3 * 2);
        for (a, b) in d.values.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fusion_cases() {
        let s = vec![0.2, 0.5, 0.3];
        assert_eq!(fuse_scores(std::slice::from_ref(&s), Some(&[1.0])).unwrap(), s);
        assert_eq!(fuse_scores(&[s.clone(), s.clone()], Some(&[0.5, 0.5])).unwrap(), s);
        assert!(fuse_scores(&[s.clone(), vec![1.0]], None).is_err());
        assert!(fuse_scores(&[s.clone(), s], Some(&[0.7, 0.7])).is_err());

        // each model alone picks class 0 or class 1; together class 2 wins
        let a = vec![0.45, 0.10, 0.45 - 0.01];
        let b = vec![0.10, 0.45, 0.45 - 0.01];
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        let fused = fuse_scores(&[a.clone(), b.clone()], None).unwrap();
        assert_eq!((argmax(&a), argmax(&b), argmax(&fused)), (0, 1, 2));
    }

    #[test]
    fn global_average_length() {
        let f = Tensor::filled(&[5, 2, 2, 2], 1.0);
        let d = global_average_descriptor(&[f.clone(), f]).unwrap();
        assert_eq!(d.len(), 5);
        assert!((l2_norm(&d.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn descriptor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jpt");
        let d = Descriptor {
            values: vec![0.5, -0.25, 0.125],
            kind: AggregationKind::Advanced,
            channels: 3,
            n_joints: 1,
            clip_len: 4,
        };
        d.save(&path, "vid7", Some(2)).unwrap();
        let (back, side) = Descriptor::load(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(side.video_id, "vid7");
        assert_eq!(side.label, Some(2));
    }

    proptest! {
        #[test]
        fn dimension_contracts(c in 1usize..6, n in 1usize..4, l in 1usize..5, k in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clips: Vec<PooledMatrix> = (0..k).map(|_| pooled(&mut rng, c, n, l)).collect();
            let basic = video_descriptor(AggregationKind::Basic, &clips).unwrap();
            let adv = video_descriptor(AggregationKind::Advanced, &clips).unwrap();
            prop_assert_eq!(basic.len(), c * n * l);
            prop_assert_eq!(adv.len(), 4 * c * n);
            prop_assert!((l2_norm(&basic.values) - 1.0).abs() < 1e-12);
            prop_assert!((l2_norm(&adv.values) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariance(seed in any::<u64>(), rot in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clips: Vec<PooledMatrix> = (0..3).map(|_| pooled(&mut rng, 2, 2, 3)).collect();
            let mut rotated = clips.clone();
            rotated.rotate_left(rot);
            prop_assert_eq!(
                video_descriptor_advanced(&clips).unwrap(),
                video_descriptor_advanced(&rotated).unwrap()
            );
            let b1 = video_descriptor(AggregationKind::Basic, &clips).unwrap();
            let b2 = video_descriptor(AggregationKind::Basic, &rotated).unwrap();
            for (x, y) in b1.values.iter().zip(&b2.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }

            // frames within a clip: reverse the frame order of clip 0
            let p = &clips[0];
            let (n, l) = (p.n_joints(), p.clip_len());
            let rows: Vec<Vec<f64>> = (0..l).rev().flat_map(|t| {
                (0..n).map(move |i| p.matrix().row(t * n + i).to_vec())
            }).collect();
            let mut shuffled = clips.clone();
            shuffled[0] = PooledMatrix::new(Matrix::from_rows(&rows).unwrap(), n, l).unwrap();
            prop_assert_eq!(
                video_descriptor_advanced(&clips).unwrap(),
                video_descriptor_advanced(&shuffled).unwrap()
            );
        }

        #[test]
        fn maxmin_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vs: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut rev = vs.clone();
            rev.reverse();
            prop_assert_eq!(maxmin_pool(&vs).unwrap(), maxmin_pool(&rev).unwrap());
        }
    }
}
