use jpool::cli::{attention_examples, labelled_clips, two_stream_video_accuracy};
use jpool::datakit::synth_generate;
use jpool::jointmap::MappingScheme;
use jpool::net3d::{Network, NetworkConfig};
use jpool::twostream::train::mean_loss;
use jpool::twostream::{
    feature_trunk, finetune_two_stream, train_attention, AttentionNet, Schedule, TrainOptions, TwoStreamModel,
};

#[test]
fn attention_overfits_one_clip() {
    let cfg = NetworkConfig::c3d_mini(3);
    let videos = synth_generate(3, 1, [1, 16, 32, 32], 4, 21).unwrap();
    let mut data = attention_examples(&videos, &cfg, "conv5b", MappingScheme::Coordinate, 16, 8).unwrap();
    data.truncate(1);
    let mut att = AttentionNet::new(&cfg, "conv5b", 4, 16, 21).unwrap();
    let schedule = Schedule::single(0.1, 500, 1, &["all"]);
    let log = train_attention(&mut att, &data, &schedule, &TrainOptions::default()).unwrap();
    let first = log.losses.iter().position(|&l| l < 0.05);
    assert!(first.is_some(), "final loss {}", log.losses.last().unwrap());
    assert!(mean_loss(&att, &data).unwrap() < 0.05);
}

#[test]
fn finetune_fits_training_set() {
    let cfg = NetworkConfig::c3d_mini(3);
    let videos = synth_generate(3, 12, [1, 16, 32, 32], 4, 3).unwrap();
    let attention = AttentionNet::new(&cfg, "conv5b", 4, 16, 1).unwrap();
    let feature = Network::init(feature_trunk(&cfg, "conv5b").unwrap(), 2).unwrap();
    let mut model = TwoStreamModel::new(attention, feature, None, 3, 3).unwrap();
    let clips = labelled_clips(&videos, 16, 8).unwrap();
    let schedule = Schedule::two_phase(0.005, 80, 20, 6);
    let log = finetune_two_stream(&mut model, &clips, &schedule, &TrainOptions::default()).unwrap();
    let acc = two_stream_video_accuracy(&model, &videos).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}, last loss {}", log.losses.last().unwrap());
}
