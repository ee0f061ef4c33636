//! Sampling activations at joints is a bilinear product with one-hot heat
//! maps.

use jpool::jointmap::{JointPoint, JointTrack, MappingScheme};
use jpool::net3d::{Network, NetworkConfig};
use jpool::poolgen::{clip_grid_points, hard_heatmaps, pool_bilinear, pool_sampled, Neighborhood};

fn main() -> jpool::Result<()> {
    let cfg = NetworkConfig::c3d_mini(3);
    let net = Network::init(cfg.clone(), 1)?;
    let clip = jpool::Tensor::from_vec(
        &cfg.input,
        (0..cfg.input.iter().product::<usize>()).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect(),
    )?;
    let layer = "conv3b";
    let fm = net.forward_to(&clip, cfg.blob_end(layer)?)?;

    let pts: Vec<JointPoint> = (0..16)
        .flat_map(|t| {
            [
                JointPoint { x: 4.0 + t as f64, y: 10.0, visible: true },
                JointPoint { x: 25.0, y: 28.0 - t as f64, visible: true },
            ]
        })
        .collect();
    let track = JointTrack::new(2, 16, vec!["hand".into(), "foot".into()], pts)?;
    let grid = clip_grid_points(&track, &cfg, layer, MappingScheme::Coordinate)?;

    let sampled = pool_sampled(&fm, &grid, 2, 16, Neighborhood::Point)?;
    let [_, l, h, w] = cfg.output_shape_of(layer)?;
    let maps = hard_heatmaps(&grid, 2, 16, [l, h, w])?;
    let product = pool_bilinear(&fm, &maps)?;

    let same = sampled
        .flatten()
        .iter()
        .zip(product.flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("feature maps {:?}, pooled matrix {}x{}", fm.dims(), sampled.matrix().rows(), sampled.matrix().cols());
    println!("sampling == one-hot bilinear product, bitwise: {same}");

    let cube = pool_sampled(&fm, &grid, 2, 16, Neighborhood::Cube)?;
    println!("first row, point vs cube: {:.4} vs {:.4}", sampled.matrix().get(0, 0), cube.matrix().get(0, 0));
    Ok(())
}
