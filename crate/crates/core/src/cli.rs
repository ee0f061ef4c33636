//! The `jpool` command line: every subcommand validates its arguments, runs
//! one pipeline, writes its outputs under `--out` and a `report.json` with
//! the configuration hash, seeds and metrics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::aggregate::{fuse_scores, AggregationKind};
use crate::classify::{accuracy, argmax, confusion, TrainOptions as LinearOptions};
use crate::datakit::{
    derive_seed, generate, load_dataset, read_dataset_manifest, resize_video, split_clips, write_dataset, Manifest,
    SynthConfig, VideoSample,
};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::jointmap::MappingScheme;
use crate::net3d::{Network, NetworkConfig};
use crate::pipeline::{extract_all, train_and_evaluate, ExtractSettings, JointNoise};
use crate::poolgen::{make_heatmaps_with, HeatMapStack, Neighborhood};
use crate::report::RunReport;
use crate::tensor::Tensor;
use crate::twostream::train::mean_loss;
use crate::twostream::{
    feature_trunk, finetune_two_stream, localization, train_attention, AttentionNet, Localization, Schedule,
    TrainOptions, TwoStreamModel,
};

#[derive(Debug, Parser)]
#[command(name = "jpool", version, about = "Joint-guided pooling of 3D convolutional features")]
pub struct Cli {
    /// Worker threads for per-video and per-example parallelism.
    #[arg(long, env = "JPOOL_THREADS", global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic skeleton-video dataset.
    Synth(SynthArgs),
    /// Write one descriptor file per video.
    Extract(ExtractArgs),
    /// Pre-train the attention stream on ground-truth heat maps.
    TrainAttention(TrainAttentionArgs),
    /// Fine-tune the two-stream model on class labels.
    Finetune(FinetuneArgs),
    /// Train a linear classifier on train-split descriptors and test it.
    Classify(ClassifyArgs),
    /// Score a predictions file.
    Eval(EvalArgs),
    /// Compare every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Classification accuracy as a function of joint noise.
    NoiseSweep(NoiseSweepArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 180)]
    pub videos: usize,
    /// The first this many videos form the train split, the rest the test split.
    #[arg(long, default_value_t = 120)]
    pub train: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub joints: usize,
    #[arg(long, default_value_t = 3)]
    pub distractors: usize,
    #[arg(long, env = "JPOOL_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `c3d-mini`, `c3d`, a network config JSON, or a saved network directory.
    #[arg(long, default_value = "c3d-mini")]
    pub net: String,
    #[arg(long, default_value = "conv5b")]
    pub layer: String,
    /// Overrides the manifest seed.
    #[arg(long, env = "JPOOL_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PoolArgs {
    #[arg(long, default_value = "coordinate")]
    pub scheme: MappingScheme,
    #[arg(long, default_value = "1")]
    pub neighborhood: Neighborhood,
    #[arg(long, default_value = "basic")]
    pub agg: AggregationKind,
    #[arg(long, default_value_t = 16)]
    pub clip_len: usize,
    #[arg(long, default_value_t = 8)]
    pub overlap: usize,
}

impl PoolArgs {
    fn settings(&self, layer: &str) -> ExtractSettings {
        ExtractSettings {
            layer: layer.to_string(),
            scheme: self.scheme,
            neighborhood: self.neighborhood,
            aggregation: self.agg,
            clip_len: self.clip_len,
            overlap: self.overlap,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    /// Joint noise ratio applied before pooling.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Maximum gradient-descent epochs of the linear classifier.
    #[arg(long, default_value_t = 3000)]
    pub epochs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NoiseSweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,0.5")]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 3000)]
    pub epochs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// JSON list of `{"id", "label", "prediction"}` records.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScheduleArgs {
    /// Schedule JSON; overrides `--lr`, `--epochs` and `--batch`.
    #[arg(long)]
    pub lr_schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Passes over the training clips.
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
}

impl ScheduleArgs {
    fn steps(&self, n: usize) -> usize {
        (self.epochs * n).div_ceil(self.batch.max(1)).max(1)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainAttentionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value = "coordinate")]
    pub scheme: MappingScheme,
    /// Checkpoint directory; training resumes from it when it holds a
    /// checkpoint of the same run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Pre-trained attention stream (a `train-attention` output directory).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Width of a hidden fully connected layer in the head.
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, env = "JPOOL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command.
pub fn main_with<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::parse_from(args))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Extract(a) => cmd_extract(&a),
        Command::TrainAttention(a) => cmd_train_attention(&a),
        Command::Finetune(a) => cmd_finetune(&a),
        Command::Classify(a) => cmd_classify(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::NoiseSweep(a) => cmd_noise_sweep(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds or loads the network named by `--net`.
pub fn load_network(spec: &str, n_classes: usize, seed: u64) -> Result<Network> {
    match spec {
        "c3d-mini" => Network::init(NetworkConfig::c3d_mini(n_classes), seed),
        "c3d" => Network::init(NetworkConfig::c3d(n_classes), seed),
        path => {
            let p = Path::new(path);
            if p.is_dir() {
                Network::load(p)
            } else if p.is_file() {
                Network::init(NetworkConfig::load(p)?, seed)
            } else {
                Err(Error::InvalidArgument(format!("--net `{path}` is neither a known network nor a path")))
            }
        }
    }
}

/// A manifest's videos resized to the network input, with the seed the run
/// uses.
struct Dataset {
    manifest: Manifest,
    videos: Vec<(VideoSample, String)>,
    seed: u64,
}

impl Dataset {
    fn load(data: &DataArgs, input: [usize; 4]) -> Result<Dataset> {
        let manifest = read_dataset_manifest(&data.manifest)?;
        let seed = data.seed.or(manifest.seed).unwrap_or(0);
        let videos = load_dataset(&manifest)?
            .into_iter()
            .map(|(v, split)| Ok((resize_video(&v, input[2], input[3])?, split)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, videos, seed })
    }

    fn split(&self, name: &str) -> Vec<VideoSample> {
        self.videos
            .iter()
            .filter(|(_, s)| s == name)
            .map(|(v, _)| v.clone())
            .collect()
    }

    fn require(&self, name: &str) -> Result<Vec<VideoSample>> {
        let v = self.split(name);
        if v.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "manifest {} has no `{name}` videos",
                self.manifest.root.display()
            )));
        }
        Ok(v)
    }

    fn n_joints(&self) -> Result<usize> {
        self.videos
            .first()
            .map(|(v, _)| v.joints.n_joints())
            .ok_or(Error::Empty("manifest"))
    }
}

fn network_for(data: &DataArgs) -> Result<(Network, Dataset)> {
    // the manifest is read twice: once for the class count, once resized
    let manifest = read_dataset_manifest(&data.manifest)?;
    let seed = data.seed.or(manifest.seed).unwrap_or(0);
    let net = load_network(&data.net, manifest.class_count().max(2), seed)?;
    net.config().layer_index(&data.layer)?;
    let ds = Dataset::load(data, net.config().input)?;
    Ok((net, ds))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.train > a.videos {
        return Err(Error::InvalidArgument(format!("--train {} exceeds --videos {}", a.train, a.videos)));
    }
    let seed = a.seed.unwrap_or(0);
    let cfg = SynthConfig {
        n_classes: a.classes,
        n_videos: a.videos,
        frames: a.frames,
        height: a.size,
        width: a.size,
        n_joints: a.joints,
        distractors: a.distractors,
        seed,
        ..SynthConfig::default()
    };
    let samples: Vec<(VideoSample, String)> = generate(&cfg)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, if i < a.train { "train" } else { "test" }.to_string()))
        .collect();
    let path = write_dataset(&a.out, &samples, Some(seed), Some(a.classes))?;
    let mut report = RunReport::new("synth", a)?.seed("synth", seed);
    report.metric("videos", samples.len())?;
    report.save(a.out.join("report.json"))?;
    println!("wrote {} videos to {}", samples.len(), path.display());
    Ok(())
}

pub fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let (net, ds) = network_for(&a.data)?;
    let s = a.pool.settings(&a.data.layer);
    let videos: Vec<VideoSample> = ds.videos.iter().map(|(v, _)| v.clone()).collect();
    let noise = (a.alpha > 0.0).then_some(JointNoise {
        alpha: a.alpha,
        seed: derive_seed(ds.seed, 1),
    });
    let descs = extract_all(&net, &videos, &s, noise)?;
    let dir = a.data.out.join("descriptors");
    create_dir(&dir)?;
    for (v, d) in videos.iter().zip(&descs) {
        d.save(dir.join(format!("{}.jpt", v.id)), &v.id, Some(v.label))?;
    }
    let mut report = RunReport::new("extract", a)?.seed("run", ds.seed);
    report.metric("videos", descs.len())?;
    report.metric("descriptor_len", descs.first().map_or(0, |d| d.len()))?;
    report.save(a.data.out.join("report.json"))?;
    println!(
        "{} descriptors of length {} in {}",
        descs.len(),
        descs.first().map_or(0, |d| d.len()),
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: usize,
    pub prediction: usize,
}

/// Accuracy of one classification run and what it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOutcome {
    pub accuracy: f64,
    pub lambda: f64,
    pub descriptor_len: usize,
    pub records: Vec<PredictionRecord>,
    pub confusion: Vec<Vec<usize>>,
}

fn classify_once(
    net: &Network,
    ds: &Dataset,
    s: &ExtractSettings,
    alpha: f64,
    epochs: usize,
) -> Result<(crate::classify::LinearModel, ClassifyOutcome)> {
    let train = ds.require("train")?;
    let test = ds.require("test")?;
    let noise = JointNoise {
        alpha,
        seed: derive_seed(ds.seed, 1),
    };
    let tr = extract_all(net, &train, s, Some(noise))?;
    let te = extract_all(
        net,
        &test,
        s,
        Some(JointNoise {
            seed: derive_seed(noise.seed, u64::MAX),
            ..noise
        }),
    )?;
    let opts = LinearOptions {
        max_epochs: epochs,
        seed: derive_seed(ds.seed, 2),
        ..LinearOptions::default()
    };
    let trl: Vec<usize> = train.iter().map(|v| v.label).collect();
    let tel: Vec<usize> = test.iter().map(|v| v.label).collect();
    let (model, eval) = train_and_evaluate(&tr, &trl, &te, &tel, &opts)?;
    let records = test
        .iter()
        .zip(&eval.predictions)
        .map(|(v, &p)| PredictionRecord {
            id: v.id.clone(),
            label: v.label,
            prediction: p,
        })
        .collect();
    Ok((
        model,
        ClassifyOutcome {
            accuracy: eval.accuracy,
            lambda: eval.lambda,
            descriptor_len: tr.first().map_or(0, |d| d.len()),
            records,
            confusion: eval.confusion,
        },
    ))
}

pub fn cmd_classify(a: &ClassifyArgs) -> Result<()> {
    let (net, ds) = network_for(&a.data)?;
    let s = a.pool.settings(&a.data.layer);
    let (model, out) = classify_once(&net, &ds, &s, a.alpha, a.epochs)?;
    create_dir(&a.data.out)?;
    model.save(a.data.out.join("model.jpt"))?;
    write_text(
        &a.data.out.join("predictions.json"),
        &serde_json::to_string_pretty(&out.records)?,
    )?;
    let mut report = RunReport::new("classify", a)?.seed("run", ds.seed);
    report.metric("accuracy", out.accuracy)?;
    report.metric("lambda", out.lambda)?;
    report.metric("descriptor_len", out.descriptor_len)?;
    report.metric("confusion", &out.confusion)?;
    report.save(a.data.out.join("report.json"))?;
    println!("accuracy {:.4} (lambda {})", out.accuracy, out.lambda);
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.predictions).map_err(|e| Error::io(&a.predictions, e))?;
    let records: Vec<PredictionRecord> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: a.predictions.clone(),
        offset: e.line() as u64,
        msg: e.to_string(),
    })?;
    let preds: Vec<usize> = records.iter().map(|r| r.prediction).collect();
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let acc = accuracy(&preds, &labels)?;
    let k = preds.iter().chain(&labels).max().map_or(0, |m| m + 1);
    let conf = confusion(&preds, &labels, k)?;
    if let Some(out) = &a.out {
        let mut report = RunReport::new("eval", a)?;
        report.metric("accuracy", acc)?;
        report.metric("confusion", &conf)?;
        report.save(out.join("report.json"))?;
    }
    println!("accuracy {acc}");
    Ok(())
}

pub fn cmd_noise_sweep(a: &NoiseSweepArgs) -> Result<()> {
    if a.alphas.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("noise ratios must be finite and >= 0: {:?}", a.alphas)));
    }
    let (net, ds) = network_for(&a.data)?;
    let s = a.pool.settings(&a.data.layer);
    let mut csv = String::from("alpha,accuracy\n");
    let mut rows = Vec::new();
    for &alpha in &a.alphas {
        let (_, out) = classify_once(&net, &ds, &s, alpha, a.epochs)?;
        writeln!(csv, "{alpha},{}", out.accuracy).expect("writing to a String");
        println!("alpha {alpha}: accuracy {:.4}", out.accuracy);
        rows.push((alpha, out.accuracy));
    }
    create_dir(&a.data.out)?;
    write_text(&a.data.out.join("noise_sweep.csv"), &csv)?;
    let mut report = RunReport::new("noise-sweep", a)?.seed("run", ds.seed);
    report.metric("accuracy_by_alpha", &rows)?;
    report.save(a.data.out.join("report.json"))?;
    Ok(())
}

fn schedule_from(a: &ScheduleArgs, n_examples: usize, two_phase: bool) -> Result<Schedule> {
    match &a.lr_schedule {
        Some(p) => Schedule::load(p),
        None if two_phase => {
            let steps = a.steps(n_examples);
            Ok(Schedule::two_phase(a.lr, steps, steps, a.batch))
        }
        None => Ok(Schedule::single(a.lr, a.steps(n_examples), a.batch, &["all"])),
    }
}

/// Training clips with their target heat maps.
pub fn attention_examples(
    videos: &[VideoSample],
    cfg: &NetworkConfig,
    layer: &str,
    scheme: MappingScheme,
    clip_len: usize,
    overlap: usize,
) -> Result<Vec<(Tensor, HeatMapStack)>> {
    let mut out = Vec::new();
    for v in videos {
        for c in split_clips(v, clip_len, overlap)? {
            let maps = make_heatmaps_with(&c.joints, cfg, layer, clip_len, scheme)?;
            out.push((c.frames, maps));
        }
    }
    Ok(out)
}

/// Held-out localization of a trained attention stream.
pub fn attention_localization(att: &AttentionNet, data: &[(Tensor, HeatMapStack)]) -> Result<Localization> {
    let mut total = Localization::default();
    for (clip, gt) in data {
        total.add(localization(&att.forward(clip)?, gt)?);
    }
    Ok(total)
}

pub fn cmd_train_attention(a: &TrainAttentionArgs) -> Result<()> {
    let (net, ds) = network_for(&a.data)?;
    let cfg = net.config().clone();
    let clip_len = cfg.input[1];
    let n_joints = ds.n_joints()?;
    let train = attention_examples(&ds.require("train")?, &cfg, &a.data.layer, a.scheme, clip_len, clip_len / 2)?;
    let test = attention_examples(&ds.split("test"), &cfg, &a.data.layer, a.scheme, clip_len, clip_len / 2)?;
    let schedule = schedule_from(&a.schedule, train.len(), false)?;
    let mut att = AttentionNet::new(&cfg, &a.data.layer, n_joints, clip_len, derive_seed(ds.seed, 3))?;
    let held = if test.is_empty() { &train } else { &test };
    let before = mean_loss(&att, held)?;
    let opts = TrainOptions {
        seed: derive_seed(ds.seed, 4),
        checkpoint: a.checkpoint.clone(),
        checkpoint_every: 0,
        resume: a.checkpoint.is_some(),
    };
    let log = train_attention(&mut att, &train, &schedule, &opts)?;
    let after = mean_loss(&att, held)?;
    let loc = attention_localization(&att, held)?;
    att.save(a.data.out.join("attention"))?;
    let mut report = RunReport::new("train-attention", a)?
        .seed("run", ds.seed)
        .seed("init", derive_seed(ds.seed, 3))
        .seed("batches", derive_seed(ds.seed, 4));
    report.metric("losses", &log.losses)?;
    report.metric("held_out_loss_before", before)?;
    report.metric("held_out_loss_after", after)?;
    report.metric("within_one_cell", loc.within_one_rate())?;
    report.metric("exact_voxel", loc.exact_rate())?;
    report.metric("schedule_hash", &log.config_hash)?;
    report.save(a.data.out.join("report.json"))?;
    println!(
        "held-out loss {before:.4} -> {after:.4}; argmax within one cell {:.3}, exact {:.3}",
        loc.within_one_rate(),
        loc.exact_rate()
    );
    Ok(())
}

/// Labelled clips of `videos`.
pub fn labelled_clips(videos: &[VideoSample], clip_len: usize, overlap: usize) -> Result<Vec<(Tensor, usize)>> {
    let mut out = Vec::new();
    for v in videos {
        for c in split_clips(v, clip_len, overlap)? {
            out.push((c.frames, v.label));
        }
    }
    Ok(out)
}

/// Video-level accuracy of the two-stream model: clip scores are averaged
/// per video.
pub fn two_stream_video_accuracy(model: &TwoStreamModel, videos: &[VideoSample]) -> Result<f64> {
    let clip_len = model.attention.clip_len;
    let mut preds = Vec::with_capacity(videos.len());
    for v in videos {
        let scores = split_clips(v, clip_len, clip_len / 2)?
            .iter()
            .map(|c| crate::twostream::two_stream_fwd(model, &c.frames))
            .collect::<Result<Vec<_>>>()?;
        preds.push(argmax(&fuse_scores(&scores, None)?));
    }
    let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
    accuracy(&preds, &labels)
}

pub fn cmd_finetune(a: &FinetuneArgs) -> Result<()> {
    let (net, ds) = network_for(&a.data)?;
    let cfg = net.config().clone();
    let clip_len = cfg.input[1];
    let n_joints = ds.n_joints()?;
    let n_classes = ds.manifest.class_count().max(2);
    let att = match &a.checkpoint {
        Some(dir) => AttentionNet::load(dir.join("attention"), n_joints, clip_len)
            .or_else(|_| AttentionNet::load(dir, n_joints, clip_len))?,
        None => AttentionNet::new(&cfg, &a.data.layer, n_joints, clip_len, derive_seed(ds.seed, 3))?,
    };
    let feat_cfg = feature_trunk(&cfg, &a.data.layer)?;
    // the feature stream starts from the given network's trunk weights
    let feat = Network::from_params(feat_cfg.clone(), net.params()[..feat_cfg.layers.len()].to_vec())?;
    let mut model = TwoStreamModel::new(att, feat, a.hidden, n_classes, derive_seed(ds.seed, 5))?;
    let train_videos = ds.require("train")?;
    let train = labelled_clips(&train_videos, clip_len, clip_len / 2)?;
    let schedule = schedule_from(&a.schedule, train.len(), true)?;
    let opts = TrainOptions {
        seed: derive_seed(ds.seed, 6),
        checkpoint: Some(a.data.out.join("checkpoint")),
        checkpoint_every: 0,
        resume: true,
    };
    let log = finetune_two_stream(&mut model, &train, &schedule, &opts)?;
    model.save(a.data.out.join("model"))?;
    let train_acc = two_stream_video_accuracy(&model, &train_videos)?;
    let test_videos = ds.split("test");
    let test_acc = if test_videos.is_empty() {
        None
    } else {
        Some(two_stream_video_accuracy(&model, &test_videos)?)
    };
    let mut report = RunReport::new("finetune", a)?
        .seed("run", ds.seed)
        .seed("head", derive_seed(ds.seed, 5))
        .seed("batches", derive_seed(ds.seed, 6));
    report.metric("losses", &log.losses)?;
    report.metric("train_accuracy", train_acc)?;
    report.metric("test_accuracy", test_acc)?;
    report.save(a.data.out.join("report.json"))?;
    match test_acc {
        Some(t) => println!("train accuracy {train_acc:.4}, test accuracy {t:.4}"),
        None => println!("train accuracy {train_acc:.4}"),
    }
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let results = gradcheck::suite(a.seed)?;
    for r in &results {
        println!(
            "{:<16} max rel err {:.3e}  (< {:.0e})  {}",
            r.name,
            r.max_rel_error,
            r.threshold,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        let mut report = RunReport::new("gradcheck", a)?.seed("run", a.seed);
        report.metric("checks", &results)?;
        report.save(out.join("report.json"))?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("gradient check failed for {}", failed.join(", "))))
    }
}
