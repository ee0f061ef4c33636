//! Synthetic skeleton videos: bright Gaussian blobs (the joints) moving over
//! a static textured background. The class decides how the body moves.
//! Optional distractor blobs drift through the scene independently of the
//! class, as background clutter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, VideoSample};
use crate::error::{Error, Result};
use crate::jointmap::{JointPoint, JointTrack};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trajectory {
    Up,
    Down,
    Circle,
    Scissor,
    Left,
    Right,
}

impl Trajectory {
    pub const ALL: [Trajectory; 6] = [
        Trajectory::Up,
        Trajectory::Down,
        Trajectory::Circle,
        Trajectory::Scissor,
        Trajectory::Left,
        Trajectory::Right,
    ];

    pub fn for_class(label: usize) -> Trajectory {
        Trajectory::ALL[label % Trajectory::ALL.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_videos: usize,
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub n_joints: usize,
    pub seed: u64,
    pub blob_sigma: f64,
    pub texture_amplitude: f64,
    /// Per-pixel uniform noise added to every frame; 0 for clean renders.
    pub pixel_noise: f64,
    /// Class-independent blobs drifting in straight lines and bouncing off
    /// the frame border.
    pub distractors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 3,
            n_videos: 30,
            channels: 1,
            frames: 24,
            height: 32,
            width: 32,
            n_joints: 4,
            seed: 0,
            blob_sigma: 1.5,
            texture_amplitude: 0.15,
            pixel_noise: 0.0,
            distractors: 3,
        }
    }
}

/// Generates `n_videos` videos of shape `(channels, frames, height, width)`
/// with `n_joints` joints. Labels cycle through the classes.
pub fn synth_generate(
    n_classes: usize,
    n_videos: usize,
    shape: [usize; 4],
    n_joints: usize,
    seed: u64,
) -> Result<Vec<VideoSample>> {
    let [channels, frames, height, width] = shape;
    generate(&SynthConfig {
        n_classes,
        n_videos,
        channels,
        frames,
        height,
        width,
        n_joints,
        seed,
        ..SynthConfig::default()
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<VideoSample>> {
    if cfg.n_classes < 2 || cfg.n_classes > Trajectory::ALL.len() {
        return Err(Error::InvalidArgument(format!(
            "synthetic classes must be in 2..={}, got {}",
            Trajectory::ALL.len(),
            cfg.n_classes
        )));
    }
    if cfg.n_joints == 0 || cfg.frames < 2 || cfg.height < 16 || cfg.width < 16 || cfg.channels == 0 {
        return Err(Error::InvalidArgument(format!("unsupported synthetic shape {cfg:?}")));
    }
    (0..cfg.n_videos)
        .map(|v| {
            let label = v % cfg.n_classes;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, v as u64));
            let joints = trajectory(cfg, Trajectory::for_class(label), &mut rng)?;
            let frames = render(cfg, &joints, &mut rng);
            VideoSample::new(format!("synth{v:04}"), frames, joints, label)
        })
        .collect()
}

fn trajectory(cfg: &SynthConfig, kind: Trajectory, rng: &mut ChaCha8Rng) -> Result<JointTrack> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let n = cfg.n_joints;
    let radius = 0.16 * w.min(h);
    let phase = rng.random_range(0.0..2.0 * PI);
    let offsets: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            if n == 1 {
                (0.0, 0.0)
            } else {
                let a = phase + 2.0 * PI * i as f64 / n as f64;
                (radius * a.cos(), radius * a.sin())
            }
        })
        .collect();
    let start = rng.random_range(0.66..0.74);
    let travel = rng.random_range(0.36..0.44);
    let cross = rng.random_range(0.42..0.58);
    let circ_amp = rng.random_range(0.18..0.24);
    let circ_phase = rng.random_range(0.0..2.0 * PI);
    let spin = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let scissor_amp = rng.random_range(0.16..0.22);

    let mut points = Vec::with_capacity(cfg.frames * n);
    for t in 0..cfg.frames {
        let s = t as f64 / (cfg.frames - 1) as f64;
        let (cx, cy) = match kind {
            Trajectory::Up => (cross * w, (start - travel * s) * h),
            Trajectory::Down => (cross * w, (1.0 - start + travel * s) * h),
            Trajectory::Left => ((start - travel * s) * w, cross * h),
            Trajectory::Right => ((1.0 - start + travel * s) * w, cross * h),
            Trajectory::Circle => {
                let a = circ_phase + spin * 2.0 * PI * s;
                ((0.5 + circ_amp * a.cos()) * w, (0.5 + circ_amp * a.sin()) * h)
            }
            Trajectory::Scissor => (0.5 * w, 0.5 * h),
        };
        for (i, &(ox, oy)) in offsets.iter().enumerate() {
            let swing = if kind == Trajectory::Scissor {
                let dir = if i % 2 == 0 { 1.0 } else { -1.0 };
                dir * scissor_amp * w * (2.0 * PI * s).sin()
            } else {
                0.0
            };
            let x = (cx + ox + swing).clamp(2.0, w - 3.0);
            let y = (cy + oy).clamp(2.0, h - 3.0);
            points.push(JointPoint { x, y, visible: true });
        }
    }
    let names = (0..n).map(|i| format!("joint{i}")).collect();
    JointTrack::new(n, cfg.frames, names, points)
}

fn render(cfg: &SynthConfig, joints: &JointTrack, rng: &mut ChaCha8Rng) -> Tensor {
    let (h, w) = (cfg.height, cfg.width);
    // static background: a few random low-frequency waves scaled into [0, amp]
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.1..0.6),
                rng.random_range(0.1..0.6),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut texture = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = waves
                .iter()
                .map(|&(fx, fy, p)| (fx * x as f64 + fy * y as f64 + p).sin())
                .sum::<f64>()
                / waves.len() as f64;
            texture[y * w + x] = cfg.texture_amplitude * 0.5 * (v + 1.0);
        }
    }
    let clutter = distractor_paths(cfg, rng);
    let inv = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
    let mut frame_data = Vec::with_capacity(cfg.frames * h * w);
    for t in 0..cfg.frames {
        let pts = joints.frame(t);
        for y in 0..h {
            for x in 0..w {
                let mut v = texture[y * w + x];
                for p in pts {
                    let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
                    v += (-d2 * inv).exp();
                }
                for path in &clutter {
                    let (px, py) = path[t];
                    let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                    v += (-d2 * inv).exp();
                }
                if cfg.pixel_noise > 0.0 {
                    v += rng.random_range(0.0..cfg.pixel_noise);
                }
                frame_data.push(v);
            }
        }
    }
    let mut data = Vec::with_capacity(cfg.channels * frame_data.len());
    for _ in 0..cfg.channels {
        data.extend_from_slice(&frame_data);
    }
    Tensor::from_vec(&[cfg.channels, cfg.frames, h, w], data).expect("consistent extents")
}

/// Reflects `v` into `[lo, hi]`.
fn bounce(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let m = (v - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

fn distractor_paths(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<(f64, f64)>> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    (0..cfg.distractors)
        .map(|_| {
            let (x0, y0) = (rng.random_range(2.0..w - 3.0), rng.random_range(2.0..h - 3.0));
            let dir = rng.random_range(0.0..2.0 * PI);
            let speed = rng.random_range(0.4..1.2);
            (0..cfg.frames)
                .map(|t| {
                    let s = speed * t as f64;
                    (bounce(x0 + s * dir.cos(), 2.0, w - 3.0), bounce(y0 + s * dir.sin(), 2.0, h - 3.0))
                })
                .collect()
        })
        .collect()
}
