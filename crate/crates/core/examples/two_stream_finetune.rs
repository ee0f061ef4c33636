//! Joins an attention stream and a feature stream with a learnable bilinear
//! product and fine-tunes the model on class labels: first the head, then
//! everything at a tenth of the rate.

use jpool::cli::{labelled_clips, two_stream_video_accuracy};
use jpool::datakit::synth_generate;
use jpool::net3d::{Network, NetworkConfig};
use jpool::twostream::{feature_trunk, finetune_two_stream, AttentionNet, Schedule, TrainOptions, TwoStreamModel};

fn main() -> jpool::Result<()> {
    let cfg = NetworkConfig::c3d_mini(3);
    let videos = synth_generate(3, 24, [1, 16, 32, 32], 4, 3)?;
    let (train, test) = videos.split_at(18);
    let attention = AttentionNet::new(&cfg, "conv5b", 4, 16, 1)?;
    let feature = Network::init(feature_trunk(&cfg, "conv5b")?, 2)?;
    let mut model = TwoStreamModel::new(attention, feature, None, 3, 3)?;

    let clips = labelled_clips(train, 16, 8)?;
    let schedule = Schedule::two_phase(0.003, 80, 10, 6);
    let log = finetune_two_stream(&mut model, &clips, &schedule, &TrainOptions::default())?;
    println!("loss {:.4} -> {:.4}", log.losses[0], log.losses[log.losses.len() - 1]);
    println!("train accuracy {:.3}", two_stream_video_accuracy(&model, train)?);
    println!("test accuracy  {:.3}", two_stream_video_accuracy(&model, test)?);
    Ok(())
}
