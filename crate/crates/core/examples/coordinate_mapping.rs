//! Where does a joint land in each conv layer of C3D? Compares the layer
//! fold, the closed forms and plain ratio scaling.

use jpool::jointmap::{closed_form_c3d, conv_group, fold_to_layer, map_joint, MappingScheme};
use jpool::net3d::NetworkConfig;

fn main() -> jpool::Result<()> {
    let cfg = NetworkConfig::c3d(101);
    let joint = [37.0, 90.0, 11.0];
    println!("joint (x, y, t) = {joint:?} in a 16x112x112 clip\n");
    println!("{:<8} {:>24} {:>24} {:>12} {:>12}", "layer", "fold", "closed form", "coordinate", "ratio");
    for layer in cfg.layers.iter().map(|l| l.name.as_str()) {
        let Some(i) = conv_group(layer).filter(|&i| i >= 2) else {
            continue;
        };
        let fold = fold_to_layer(joint, &cfg, layer)?;
        let closed = closed_form_c3d(joint, i)?;
        let c = map_joint(MappingScheme::Coordinate, joint, true, &cfg, layer)?;
        let r = map_joint(MappingScheme::Ratio, joint, true, &cfg, layer)?;
        println!(
            "{layer:<8} {:>24} {:>24} {:>12} {:>12}",
            format!("{:.3?}", fold),
            format!("{:.3?}", closed),
            format!("({},{},{})", c.x, c.y, c.t),
            format!("({},{},{})", r.x, r.y, r.t),
        );
    }
    Ok(())
}
