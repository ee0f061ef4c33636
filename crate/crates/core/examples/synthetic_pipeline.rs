//! Synthetic videos through the whole descriptor pipeline, against a
//! joint-free global-average baseline.

use jpool::aggregate::AggregationKind;
use jpool::classify::TrainOptions;
use jpool::datakit::synth_generate;
use jpool::net3d::{Network, NetworkConfig};
use jpool::pipeline::{descriptor_accuracy, ExtractSettings};

fn main() -> jpool::Result<()> {
    let videos = synth_generate(3, 180, [1, 16, 32, 32], 4, 7)?;
    let (train, test) = videos.split_at(120);
    let net = Network::init(NetworkConfig::c3d_mini(3), 7)?;
    for agg in [AggregationKind::Basic, AggregationKind::Advanced, AggregationKind::GlobalAverage] {
        let s = ExtractSettings { aggregation: agg, ..Default::default() };
        let e = descriptor_accuracy(&net, train, test, &s, None, &TrainOptions::default())?;
        println!("{agg:<10} accuracy {:.3} (lambda {})", e.accuracy, e.lambda);
    }
    Ok(())
}
