//! Accuracy as Gaussian noise is added to the joint positions.

use jpool::classify::TrainOptions;
use jpool::datakit::synth_generate;
use jpool::net3d::{Network, NetworkConfig};
use jpool::pipeline::{descriptor_accuracy, ExtractSettings, JointNoise};

fn main() -> jpool::Result<()> {
    let videos = synth_generate(3, 180, [1, 16, 32, 32], 4, 7)?;
    let (train, test) = videos.split_at(120);
    let net = Network::init(NetworkConfig::c3d_mini(3), 7)?;
    let s = ExtractSettings::default();
    println!("alpha,accuracy");
    for alpha in [0.0, 0.1, 0.3, 0.5] {
        let noise = JointNoise { alpha, seed: 5 };
        let e = descriptor_accuracy(&net, train, test, &s, Some(noise), &TrainOptions::default())?;
        println!("{alpha},{:.4}", e.accuracy);
    }
    Ok(())
}
