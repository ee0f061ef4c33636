//! Pre-trains the attention stream to regress joint heat maps.

use jpool::cli::{attention_examples, attention_localization};
use jpool::datakit::synth_generate;
use jpool::jointmap::MappingScheme;
use jpool::net3d::NetworkConfig;
use jpool::twostream::train::mean_loss;
use jpool::twostream::{train_attention, AttentionNet, Schedule, TrainOptions};

fn main() -> jpool::Result<()> {
    let cfg = NetworkConfig::c3d_mini(3);
    let videos = synth_generate(3, 40, [1, 16, 32, 32], 4, 7)?;
    let (train, test) = videos.split_at(30);
    let train = attention_examples(train, &cfg, "conv5b", MappingScheme::Coordinate, 16, 8)?;
    let test = attention_examples(test, &cfg, "conv5b", MappingScheme::Coordinate, 16, 8)?;

    let mut att = AttentionNet::new(&cfg, "conv5b", 4, 16, 7)?;
    println!("held-out loss before: {:.4}", mean_loss(&att, &test)?);
    let schedule = Schedule::single(0.1, 40, 10, &["all"]);
    let log = train_attention(&mut att, &train, &schedule, &TrainOptions::default())?;
    for (step, loss) in log.losses.iter().enumerate().step_by(10) {
        println!("step {step:>3}  loss {loss:.4}");
    }
    println!("held-out loss after: {:.4}", mean_loss(&att, &test)?);
    let loc = attention_localization(&att, &test)?;
    println!(
        "argmax within one cell {:.3}, exact voxel {:.3}",
        loc.within_one_rate(),
        loc.exact_rate()
    );
    Ok(())
}
