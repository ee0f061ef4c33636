//! Skeleton, video-tensor and dataset-manifest files.
//!
//! Skeletons are JSON:
//!
//! ```json
//! { "video_id": "v1", "frame_count": 2, "joint_count": 1, "joint_names": ["head"],
//!   "frames": [[[10.0, 12.0, 1]], [[11.0, 12.5, 0]]] }
//! ```
//!
//! each joint being `[x, y, visible]` in pixels of the original frame.
//! Manifests list videos with their tensor and skeleton paths (relative to
//! the manifest's directory), label and split tag.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::VideoSample;
use crate::error::{Error, Result};
use crate::jointmap::{JointPoint, JointTrack};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SkeletonFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video_id: Option<String>,
    frame_count: usize,
    joint_count: usize,
    #[serde(default)]
    joint_names: Vec<String>,
    frames: Vec<Vec<[f64; 3]>>,
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: e.line() as u64,
        msg: format!("line {} column {}: {e}", e.line(), e.column()),
    }
}

fn invalid(path: &Path, msg: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        msg,
    }
}

pub fn read_skeleton(path: impl AsRef<Path>) -> Result<JointTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SkeletonFile = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    if file.frames.len() != file.frame_count {
        return Err(invalid(
            path,
            format!("frame_count {} but {} frames listed", file.frame_count, file.frames.len()),
        ));
    }
    let mut points = Vec::with_capacity(file.frame_count * file.joint_count);
    for (t, frame) in file.frames.iter().enumerate() {
        if frame.len() != file.joint_count {
            return Err(invalid(
                path,
                format!("frame {t} lists {} joints, expected {}", frame.len(), file.joint_count),
            ));
        }
        for (i, &[x, y, vis]) in frame.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(invalid(path, format!("frame {t} joint {i}: non-finite coordinate")));
            }
            let visible = match vis {
                v if v == 1.0 => true,
                v if v == 0.0 => false,
                v => return Err(invalid(path, format!("frame {t} joint {i}: visibility {v} is not 0 or 1"))),
            };
            points.push(JointPoint { x, y, visible });
        }
    }
    JointTrack::new(file.joint_count, file.frame_count, file.joint_names, points)
        .map_err(|e| invalid(path, e.to_string()))
}

pub fn write_skeleton(path: impl AsRef<Path>, joints: &JointTrack, video_id: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let frames = (0..joints.n_frames())
        .map(|t| {
            joints
                .frame(t)
                .iter()
                .map(|p| [p.x, p.y, if p.visible { 1.0 } else { 0.0 }])
                .collect()
        })
        .collect();
    let file = SkeletonFile {
        video_id: video_id.map(str::to_string),
        frame_count: joints.n_frames(),
        joint_count: joints.n_joints(),
        joint_names: joints.names().to_vec(),
        frames,
    };
    std::fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
}

/// Reads a `[C, T, H, W]` video tensor.
pub fn read_video_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let t = Tensor::load(path)?;
    if t.dims().len() != 4 {
        return Err(invalid(path, format!("video tensor must be 4-D, got {:?}", t.dims())));
    }
    Ok(t)
}

pub fn write_video_tensor(path: impl AsRef<Path>, frames: &Tensor) -> Result<()> {
    if frames.dims().len() != 4 {
        return Err(Error::dims("write_video_tensor", format!("{:?}", frames.dims())));
    }
    frames.save(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub video: PathBuf,
    pub skeleton: PathBuf,
    pub label: usize,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    pub videos: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestRepr {
    Full {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        n_classes: Option<usize>,
        videos: Vec<ManifestEntry>,
    },
    List(Vec<ManifestEntry>),
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn entries_in<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.videos.iter().filter(move |e| e.split == split)
    }

    pub fn class_count(&self) -> usize {
        self.n_classes
            .unwrap_or_else(|| self.videos.iter().map(|e| e.label + 1).max().unwrap_or(0))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Parses a manifest (either `{"seed": …, "videos": [...]}` or a bare list)
/// and checks that every referenced file exists.
pub fn read_dataset_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let repr: ManifestRepr = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    let (seed, n_classes, videos) = match repr {
        ManifestRepr::Full { seed, n_classes, videos } => (seed, n_classes, videos),
        ManifestRepr::List(videos) => (None, None, videos),
    };
    let manifest = Manifest {
        seed,
        n_classes,
        videos,
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    for e in &manifest.videos {
        for p in [&e.video, &e.skeleton] {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(Error::MissingFile {
                    id: e.id.clone(),
                    path: full,
                });
            }
        }
    }
    Ok(manifest)
}

pub fn load_entry(manifest: &Manifest, e: &ManifestEntry) -> Result<VideoSample> {
    let frames = read_video_tensor(manifest.resolve(&e.video))?;
    let joints = read_skeleton(manifest.resolve(&e.skeleton))?;
    VideoSample::new(e.id.clone(), frames, joints, e.label)
}

/// Loads every video of the manifest together with its split tag.
pub fn load_dataset(manifest: &Manifest) -> Result<Vec<(VideoSample, String)>> {
    manifest
        .videos
        .iter()
        .map(|e| Ok((load_entry(manifest, e)?, e.split.clone())))
        .collect()
}

/// Writes `videos/<id>.jpt`, `skeletons/<id>.json` and `manifest.json`
/// under `dir`. Returns the manifest path.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    samples: &[(VideoSample, String)],
    seed: Option<u64>,
    n_classes: Option<usize>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["videos", "skeletons"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut videos = Vec::with_capacity(samples.len());
    for (s, split) in samples {
        let video = PathBuf::from("videos").join(format!("{}.jpt", s.id));
        let skeleton = PathBuf::from("skeletons").join(format!("{}.json", s.id));
        write_video_tensor(dir.join(&video), &s.frames)?;
        write_skeleton(dir.join(&skeleton), &s.joints, Some(&s.id))?;
        videos.push(ManifestEntry {
            id: s.id.clone(),
            video,
            skeleton,
            label: s.label,
            split: split.clone(),
        });
    }
    let manifest = Manifest {
        seed,
        n_classes,
        videos,
        root: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::synth_generate;

    #[test]
    fn skeleton_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let pts = vec![
            JointPoint { x: 1.5, y: 2.0, visible: true },
            JointPoint { x: -3.0, y: 400.25, visible: false },
        ];
        let track = JointTrack::new(1, 2, vec!["head".into()], pts).unwrap();
        write_skeleton(&p, &track, Some("v")).unwrap();
        assert_eq!(read_skeleton(&p).unwrap(), track);
    }

    #[test]
    fn skeleton_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, r#"{"frame_count":2,"joint_count":1,"frames":[[[1,2,1]]]}"#).unwrap();
        let err = read_skeleton(&p).unwrap_err().to_string();
        assert!(err.contains("bad.json"), "{err}");
        std::fs::write(&p, r#"{"frame_count":1,"joint_count":1,"frames":[[[1,2,0.5]]]}"#).unwrap();
        assert!(read_skeleton(&p).is_err());
        std::fs::write(&p, r#"{"frame_count":1,"joint_count":1,"frames":[[[1,2"#).unwrap();
        assert!(matches!(read_skeleton(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn truncated_video_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.jpt");
        write_video_tensor(&p, &Tensor::zeros(&[1, 2, 3, 3])).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        let err = read_video_tensor(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 24, .. }), "{err}");
    }

    #[test]
    fn dataset_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let vids = synth_generate(2, 4, [1, 16, 16, 16], 2, 1).unwrap();
        let samples: Vec<_> = vids.into_iter().map(|v| (v, "train".to_string())).collect();
        let mpath = write_dataset(dir.path(), &samples, Some(1), Some(2)).unwrap();
        let m = read_dataset_manifest(&mpath).unwrap();
        assert_eq!(m.seed, Some(1));
        let loaded = load_dataset(&m).unwrap();
        for ((a, _), (b, _)) in loaded.iter().zip(&samples) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.joints, b.joints);
            // frames go through float32 on disk
            for (x, y) in a.frames.data().iter().zip(b.frames.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }

        std::fs::remove_file(dir.path().join("skeletons").join(format!("{}.json", samples[2].0.id))).unwrap();
        match read_dataset_manifest(&mpath) {
            Err(Error::MissingFile { id, .. }) => assert_eq!(id, samples[2].0.id),
            other => panic!("expected missing file, got {other:?}"),
        }
    }

    #[test]
    fn bare_list_manifest_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let vids = synth_generate(2, 1, [1, 4, 16, 16], 1, 1).unwrap();
        let samples: Vec<_> = vids.into_iter().map(|v| (v, "test".to_string())).collect();
        let mpath = write_dataset(dir.path(), &samples, None, None).unwrap();
        let full: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
        std::fs::write(&mpath, full["videos"].to_string()).unwrap();
        let m = read_dataset_manifest(&mpath).unwrap();
        assert_eq!(m.videos.len(), 1);
        assert_eq!(m.seed, None);
    }
}
