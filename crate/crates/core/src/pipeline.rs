//! End-to-end descriptor pipelines: clip a video, run the network up to the
//! pooled layer, pool at the mapped joints, aggregate, then classify.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{global_average_descriptor, video_descriptor, AggregationKind, Descriptor};
use crate::classify::{accuracy, confusion, train_linear_cv, LinearModel, TrainOptions, DEFAULT_LAMBDA_GRID};
use crate::datakit::{add_joint_noise, derive_seed, split_clips, NoiseSpec, VideoSample};
use crate::error::{Error, Result};
use crate::jointmap::{JointTrack, MappingScheme};
use crate::net3d::Network;
use crate::poolgen::{clip_grid_points, pool_sampled, Neighborhood};

/// How descriptors are extracted from a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSettings {
    pub layer: String,
    pub scheme: MappingScheme,
    pub neighborhood: Neighborhood,
    pub aggregation: AggregationKind,
    pub clip_len: usize,
    pub overlap: usize,
}

impl Default for ExtractSettings {
    fn default() -> Self {
        ExtractSettings {
            layer: "conv5b".into(),
            scheme: MappingScheme::Coordinate,
            neighborhood: Neighborhood::Point,
            aggregation: AggregationKind::Basic,
            clip_len: 16,
            overlap: 8,
        }
    }
}

/// Descriptor of one video using `joints` (the video's own joints, or a
/// perturbed copy) to place the pooling points.
pub fn video_jdd(net: &Network, video: &VideoSample, joints: &JointTrack, s: &ExtractSettings) -> Result<Descriptor> {
    let cfg = net.config();
    let end = cfg.blob_end(&s.layer)?;
    let with_joints = VideoSample {
        joints: joints.clone(),
        ..video.clone()
    };
    let clips = split_clips(&with_joints, s.clip_len, s.overlap)?;
    let mut featmaps = Vec::with_capacity(clips.len());
    for clip in &clips {
        featmaps.push(net.forward_to(&clip.frames, end)?);
    }
    if s.aggregation == AggregationKind::GlobalAverage {
        return global_average_descriptor(&featmaps);
    }
    let pooled = clips
        .iter()
        .zip(&featmaps)
        .map(|(clip, fm)| {
            let pts = clip_grid_points(&clip.joints, cfg, &s.layer, s.scheme)?;
            pool_sampled(fm, &pts, clip.joints.n_joints(), s.clip_len, s.neighborhood)
        })
        .collect::<Result<Vec<_>>>()?;
    video_descriptor(s.aggregation, &pooled)
}

/// Joint noise applied before extraction. Video `i` draws from
/// `derive_seed(seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointNoise {
    pub alpha: f64,
    pub seed: u64,
}

/// Descriptors for every video, in input order. Videos are processed in
/// parallel.
pub fn extract_all(
    net: &Network,
    videos: &[VideoSample],
    s: &ExtractSettings,
    noise: Option<JointNoise>,
) -> Result<Vec<Descriptor>> {
    videos
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let joints = match noise {
                Some(n) if n.alpha > 0.0 => {
                    let (h, w) = v.frame_size();
                    let spec = NoiseSpec::new(n.alpha, derive_seed(n.seed, i as u64))?;
                    add_joint_noise(&v.joints, &spec, w as f64, h as f64)
                }
                _ => v.joints.clone(),
            };
            video_jdd(net, v, &joints, s)
        })
        .collect()
}

/// Test-set results of a linear classifier trained on descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub lambda: f64,
    pub cv_scores: Vec<(f64, f64)>,
    pub predictions: Vec<usize>,
    pub confusion: Vec<Vec<usize>>,
}

/// Trains with λ chosen by 3-fold cross-validation on the training split and
/// scores the test split.
pub fn train_and_evaluate(
    train: &[Descriptor],
    train_labels: &[usize],
    test: &[Descriptor],
    test_labels: &[usize],
    opts: &TrainOptions,
) -> Result<(LinearModel, Evaluation)> {
    let xs: Vec<&[f64]> = train.iter().map(|d| d.values.as_slice()).collect();
    let (model, cv_scores) = train_linear_cv(&xs, train_labels, &DEFAULT_LAMBDA_GRID, 3, opts)?;
    let tx: Vec<&[f64]> = test.iter().map(|d| d.values.as_slice()).collect();
    let predictions = model.predict_all(&tx)?;
    let n_classes = model.n_classes().max(test_labels.iter().max().map_or(0, |m| m + 1));
    let eval = Evaluation {
        accuracy: accuracy(&predictions, test_labels)?,
        lambda: model.lambda,
        cv_scores,
        confusion: confusion(&predictions, test_labels, n_classes)?,
        predictions,
    };
    Ok((model, eval))
}

/// Extracts descriptors for both splits and evaluates.
pub fn descriptor_accuracy(
    net: &Network,
    train: &[VideoSample],
    test: &[VideoSample],
    s: &ExtractSettings,
    noise: Option<JointNoise>,
    opts: &TrainOptions,
) -> Result<Evaluation> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("descriptor_accuracy"));
    }
    let tr = extract_all(net, train, s, noise)?;
    // distinct noise streams for the test videos
    let test_noise = noise.map(|n| JointNoise {
        seed: derive_seed(n.seed, u64::MAX),
        ..n
    });
    let te = extract_all(net, test, s, test_noise)?;
    let trl: Vec<usize> = train.iter().map(|v| v.label).collect();
    let tel: Vec<usize> = test.iter().map(|v| v.label).collect();
    Ok(train_and_evaluate(&tr, &trl, &te, &tel, opts)?.1)
}
