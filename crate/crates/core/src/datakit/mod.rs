//! Videos, clip windows, joint noise, the synthetic dataset generator, and
//! dataset file I/O.

pub mod io;
pub mod noise;
pub mod synth;

use crate::error::{Error, Result};
use crate::jointmap::JointTrack;
use crate::tensor::Tensor;

pub use io::{
    load_dataset, read_dataset_manifest, read_skeleton, read_video_tensor, write_dataset, write_skeleton,
    write_video_tensor, Manifest, ManifestEntry,
};
pub use noise::{add_joint_noise, NoiseSpec};
pub use synth::{generate, synth_generate, SynthConfig, Trajectory};

/// A video as a `[C, T, H, W]` tensor with per-frame joints and a label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub frames: Tensor,
    pub joints: JointTrack,
    pub label: usize,
}

impl VideoSample {
    pub fn new(id: impl Into<String>, frames: Tensor, joints: JointTrack, label: usize) -> Result<Self> {
        if frames.dims().len() != 4 {
            return Err(Error::dims("video", format!("frames {:?}, expected [C, T, H, W]", frames.dims())));
        }
        if frames.dims()[1] != joints.n_frames() {
            return Err(Error::dims(
                "video",
                format!("{} frames but joints cover {}", frames.dims()[1], joints.n_frames()),
            ));
        }
        Ok(VideoSample {
            id: id.into(),
            frames,
            joints,
            label,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.dims()[1]
    }

    /// `(H, W)` of a frame.
    pub fn frame_size(&self) -> (usize, usize) {
        (self.frames.dims()[2], self.frames.dims()[3])
    }
}

/// A window of a video with joints re-based to the window's first frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub start: usize,
    pub frames: Tensor,
    pub joints: JointTrack,
}

/// Frames `start..start + len` of a `[C, T, H, W]` tensor.
pub fn frame_window(frames: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let &[c, t, h, w] = frames.dims() else {
        return Err(Error::dims("frame_window", format!("{:?}", frames.dims())));
    };
    if start + len > t || len == 0 {
        return Err(Error::InvalidArgument(format!("window {start}..{} outside {t} frames", start + len)));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(c * len * plane);
    for ch in 0..c {
        let base = (ch * t + start) * plane;
        out.extend_from_slice(&frames.data()[base..base + len * plane]);
    }
    Tensor::from_vec(&[c, len, h, w], out)
}

fn check_length(t: usize, clip_len: usize) -> Result<()> {
    if clip_len == 0 || t < clip_len {
        return Err(Error::InvalidArgument(format!(
            "video of {t} frames is shorter than the clip length {clip_len}"
        )));
    }
    Ok(())
}

/// Start frames of overlapping windows: `0, s, 2s, …` with
/// `s = clip_len − overlap`, plus one window flush with the last frame when
/// the regular windows stop short of it.
pub fn clip_starts(t: usize, clip_len: usize, overlap: usize) -> Result<Vec<usize>> {
    check_length(t, clip_len)?;
    if overlap >= clip_len {
        return Err(Error::InvalidArgument(format!("overlap {overlap} must be below clip length {clip_len}")));
    }
    let step = clip_len - overlap;
    let mut starts: Vec<usize> = (0..).map(|k| k * step).take_while(|s| s + clip_len <= t).collect();
    let last = *starts.last().expect("t >= clip_len");
    if last + clip_len < t {
        starts.push(t - clip_len);
    }
    Ok(starts)
}

fn clips_at(video: &VideoSample, starts: &[usize], clip_len: usize) -> Result<Vec<Clip>> {
    starts
        .iter()
        .map(|&s| {
            Ok(Clip {
                start: s,
                frames: frame_window(&video.frames, s, clip_len)?,
                joints: video.joints.window(s, clip_len)?,
            })
        })
        .collect()
}

pub fn split_clips(video: &VideoSample, clip_len: usize, overlap: usize) -> Result<Vec<Clip>> {
    let starts = clip_starts(video.n_frames(), clip_len, overlap)?;
    clips_at(video, &starts, clip_len)
}

/// First, middle and last windows.
pub fn three_clip_starts(t: usize, clip_len: usize) -> Result<[usize; 3]> {
    check_length(t, clip_len)?;
    Ok([0, (t - clip_len) / 2, t - clip_len])
}

pub fn sample_three_clips(video: &VideoSample, clip_len: usize) -> Result<Vec<Clip>> {
    let starts = three_clip_starts(video.n_frames(), clip_len)?;
    clips_at(video, &starts, clip_len)
}

/// Nearest-neighbour resize of every frame to `h × w`, with the joints
/// rescaled by the same ratios.
pub fn resize_video(video: &VideoSample, h: usize, w: usize) -> Result<VideoSample> {
    let &[c, t, ih, iw] = video.frames.dims() else {
        return Err(Error::dims("resize_video", format!("{:?}", video.frames.dims())));
    };
    if (ih, iw) == (h, w) {
        return Ok(video.clone());
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize to {h}x{w}")));
    }
    let src = |dst: usize, from: usize, to: usize| ((dst as f64 + 0.5) * from as f64 / to as f64) as usize;
    let rows: Vec<usize> = (0..h).map(|y| src(y, ih, h).min(ih - 1)).collect();
    let cols: Vec<usize> = (0..w).map(|x| src(x, iw, w).min(iw - 1)).collect();
    let mut data = Vec::with_capacity(c * t * h * w);
    for plane in video.frames.data().chunks(ih * iw) {
        for &y in &rows {
            data.extend(cols.iter().map(|&x| plane[y * iw + x]));
        }
    }
    let frames = Tensor::from_vec(&[c, t, h, w], data)?;
    let joints = video.joints.scaled(w as f64 / iw as f64, h as f64 / ih as f64);
    VideoSample::new(video.id.clone(), frames, joints, video.label)
}

/// Mixes a base seed with an index (splitmix64) so per-item streams are
/// independent and reproducible.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
