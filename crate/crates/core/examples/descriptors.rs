//! Descriptor lengths of the aggregation schemes, on the mini network and
//! for full-size C3D layouts.

use jpool::aggregate::{video_descriptor, AggregationKind};
use jpool::datakit::synth_generate;
use jpool::net3d::{Network, NetworkConfig};
use jpool::pipeline::{video_jdd, ExtractSettings};
use jpool::poolgen::PooledMatrix;
use jpool::Matrix;

fn main() -> jpool::Result<()> {
    let net = Network::init(NetworkConfig::c3d_mini(3), 7)?;
    let video = &synth_generate(3, 1, [1, 40, 32, 32], 4, 7)?[0];
    for agg in [AggregationKind::Basic, AggregationKind::Advanced, AggregationKind::GlobalAverage] {
        let s = ExtractSettings { aggregation: agg, ..Default::default() };
        let d = video_jdd(&net, video, &video.joints, &s)?;
        println!("mini conv5b, 4 joints, {agg:<10}: {} values", d.len());
    }
    // full C3D conv5b has 512 channels; 13 or 15 joints, 16-frame clips
    for n_joints in [13, 15] {
        let pooled = PooledMatrix::new(Matrix::zeros(n_joints * 16, 512), n_joints, 16)?;
        for agg in [AggregationKind::Basic, AggregationKind::Advanced] {
            let d = video_descriptor(agg, std::slice::from_ref(&pooled))?;
            println!("C3D conv5b, {n_joints} joints, {agg:<8}: {} values", d.len());
        }
    }
    Ok(())
}
