use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation shape `(channels, length, height, width)`. Fully-connected
/// outputs use `(n, 1, 1, 1)`.
pub type Shape = [usize; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv3d,
    Pool3d,
    Relu,
    Sigmoid,
    Fc,
    Softmax,
}

impl LayerKind {
    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::Conv3d | LayerKind::Fc)
    }

    /// Conv and pool layers move coordinates; everything else is pointwise
    /// or collapses space entirely.
    pub fn is_windowed(self) -> bool {
        matches!(self, LayerKind::Conv3d | LayerKind::Pool3d)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv3d => "conv3d",
            LayerKind::Pool3d => "pool3d",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Fc => "fc",
            LayerKind::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

/// Kernel, stride and zero-padding along `(t, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<[usize; 3]>,
}

impl LayerSpec {
    pub fn conv(name: &str, channels: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv3d,
            channels: Some(channels),
            kernel: Some(kernel),
            stride: Some(stride),
            padding: Some(padding),
        }
    }

    /// The 3×3×3, stride 1, padding 1 convolution used throughout C3D.
    pub fn conv333(name: &str, channels: usize) -> Self {
        LayerSpec::conv(name, channels, [3; 3], [1; 3], [1; 3])
    }

    pub fn pool(name: &str, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Pool3d,
            channels: None,
            kernel: Some(kernel),
            stride: Some(stride),
            padding: Some([0; 3]),
        }
    }

    pub fn fc(name: &str, channels: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Fc,
            channels: Some(channels),
            kernel: None,
            stride: None,
            padding: None,
        }
    }

    pub fn pointwise(name: &str, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            channels: None,
            kernel: None,
            stride: None,
            padding: None,
        }
    }

    pub fn window(&self) -> Option<Window> {
        if !self.kind.is_windowed() {
            return None;
        }
        Some(Window {
            kernel: self.kernel?,
            stride: self.stride.unwrap_or([1; 3]),
            padding: self.padding.unwrap_or([0; 3]),
        })
    }

    fn invalid(&self, detail: impl Into<String>) -> Error {
        Error::InvalidLayer {
            layer: self.name.clone(),
            detail: detail.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LayerKind::Conv3d | LayerKind::Pool3d => {
                let kernel = self.kernel.ok_or_else(|| self.invalid("missing kernel"))?;
                if kernel.contains(&0) {
                    return Err(self.invalid("kernel extents must be >= 1"));
                }
                if self.stride.unwrap_or([1; 3]).contains(&0) {
                    return Err(self.invalid("stride extents must be >= 1"));
                }
                if self.kind == LayerKind::Conv3d && self.channels.unwrap_or(0) == 0 {
                    return Err(self.invalid("conv3d needs channels >= 1"));
                }
                if self.kind == LayerKind::Pool3d && self.channels.is_some() {
                    return Err(self.invalid("pool3d carries no channel count"));
                }
            }
            LayerKind::Fc => {
                if self.channels.unwrap_or(0) == 0 {
                    return Err(self.invalid("fc needs channels >= 1"));
                }
                if self.kernel.is_some() || self.stride.is_some() || self.padding.is_some() {
                    return Err(self.invalid("fc carries no window"));
                }
            }
            LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Softmax => {
                if self.channels.is_some()
                    || self.kernel.is_some()
                    || self.stride.is_some()
                    || self.padding.is_some()
                {
                    return Err(self.invalid(format!("{} carries no shape parameters", self.kind)));
                }
            }
        }
        Ok(())
    }
}

/// Output extent of a sliding window: `floor((in + 2·pad − kernel)/stride) + 1`.
fn window_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Shape produced by `spec` applied to an input of shape `input`.
pub fn output_shape(spec: &LayerSpec, input: Shape) -> Result<Shape> {
    spec.validate()?;
    match spec.kind {
        LayerKind::Conv3d | LayerKind::Pool3d => {
            let w = spec.window().expect("validated");
            let mut out = [0usize; 4];
            out[0] = if spec.kind == LayerKind::Conv3d {
                spec.channels.expect("validated")
            } else {
                input[0]
            };
            for axis in 0..3 {
                out[axis + 1] =
                    window_extent(input[axis + 1], w.kernel[axis], w.stride[axis], w.padding[axis])
                        .filter(|&e| e >= 1)
                        .ok_or_else(|| {
                            spec.invalid(format!("non-positive output extent for input {input:?}"))
                        })?;
            }
            Ok(out)
        }
        LayerKind::Fc => Ok([spec.channels.expect("validated"), 1, 1, 1]),
        LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Softmax => Ok(input),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `(channels, L, H, W)` of a single clip.
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkConfig {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let cfg = NetworkConfig { input, layers };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::InvalidShape(format!("input shape {:?}", self.input)));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidShape("network has no layers".into()));
        }
        let mut seen = HashSet::new();
        for l in &self.layers {
            if !seen.insert(l.name.as_str()) {
                return Err(l.invalid("duplicate layer name"));
            }
        }
        self.shapes().map(|_| ())
    }

    /// Input shape of every layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut s = self.input;
        shapes.push(s);
        for l in &self.layers {
            s = output_shape(l, s)?;
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn output_shape_of(&self, name: &str) -> Result<Shape> {
        let idx = self.layer_index(name)?;
        Ok(self.shapes()?[idx + 1])
    }

    /// Index of the last layer whose output is the feature blob called
    /// `name`: a conv layer together with any ReLU immediately after it,
    /// matching frameworks that apply ReLU in place.
    pub fn blob_end(&self, name: &str) -> Result<usize> {
        let mut idx = self.layer_index(name)?;
        if self.layers[idx].kind == LayerKind::Conv3d {
            while idx + 1 < self.layers.len() && self.layers[idx + 1].kind == LayerKind::Relu {
                idx += 1;
            }
        }
        Ok(idx)
    }

    /// Layers `0..=idx` as a standalone config.
    pub fn truncated(&self, idx: usize) -> NetworkConfig {
        NetworkConfig {
            input: self.input,
            layers: self.layers[..=idx].to_vec(),
        }
    }

    /// Trunk up to and including conv layer `layer`, resized to `channels`
    /// outputs and followed by a sigmoid. This is the attention stream.
    pub fn attention_head(&self, layer: &str, channels: usize) -> Result<NetworkConfig> {
        let idx = self.layer_index(layer)?;
        if self.layers[idx].kind != LayerKind::Conv3d {
            return Err(self.layers[idx].invalid("attention output must be a conv3d layer"));
        }
        let mut cfg = self.truncated(idx);
        cfg.layers[idx].channels = Some(channels);
        cfg.layers
            .push(LayerSpec::pointwise(&format!("{layer}_sigmoid"), LayerKind::Sigmoid));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Standard C3D: 8 convs, 5 pools, 3 fc layers.
    pub fn c3d(n_classes: usize) -> NetworkConfig {
        c3d_family([3, 16, 112, 112], [64, 128, 256, 256, 512, 512, 512, 512], [4096, 4096], n_classes)
    }

    /// Reduced-width C3D on single-channel 16×32×32 clips. Same kernel,
    /// stride and padding pattern as [`NetworkConfig::c3d`].
    pub fn c3d_mini(n_classes: usize) -> NetworkConfig {
        c3d_family([1, 16, 32, 32], [8, 16, 32, 32, 32, 32, 32, 32], [64, 64], n_classes)
    }

    pub fn from_json_str(s: &str) -> Result<NetworkConfig> {
        let cfg: NetworkConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NetworkConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: NetworkConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: e.line() as u64,
            msg: format!("line {} column {}: {e}", e.line(), e.column()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Builds a C3D-shaped network with the given conv widths
/// (conv1a, conv2a, conv3a, conv3b, conv4a, conv4b, conv5a, conv5b).
pub fn c3d_family(input: Shape, widths: [usize; 8], fc: [usize; 2], n_classes: usize) -> NetworkConfig {
    use LayerKind::*;
    let names = ["1a", "2a", "3a", "3b", "4a", "4b", "5a", "5b"];
    let mut layers = Vec::new();
    for (i, (suffix, &w)) in names.iter().zip(&widths).enumerate() {
        layers.push(LayerSpec::conv333(&format!("conv{suffix}"), w));
        layers.push(LayerSpec::pointwise(&format!("relu{suffix}"), Relu));
        // pools follow conv1a, conv2a, conv3b, conv4b, conv5b
        let pool = match i {
            0 => Some(("pool1", [1, 2, 2], [1, 2, 2])),
            1 => Some(("pool2", [2; 3], [2; 3])),
            3 => Some(("pool3", [2; 3], [2; 3])),
            5 => Some(("pool4", [2; 3], [2; 3])),
            7 => Some(("pool5", [2; 3], [2; 3])),
            _ => None,
        };
        if let Some((name, k, s)) = pool {
            layers.push(LayerSpec::pool(name, k, s));
        }
    }
    layers.push(LayerSpec::fc("fc6", fc[0]));
    layers.push(LayerSpec::pointwise("relu6", Relu));
    layers.push(LayerSpec::fc("fc7", fc[1]));
    layers.push(LayerSpec::pointwise("relu7", Relu));
    layers.push(LayerSpec::fc("fc8", n_classes));
    layers.push(LayerSpec::pointwise("prob", Softmax));
    NetworkConfig { input, layers }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_examples() {
        let conv = LayerSpec::conv333("c", 8);
        assert_eq!(output_shape(&conv, [4, 16, 32, 32]).unwrap(), [8, 16, 32, 32]);
        let pool1 = LayerSpec::pool("p1", [1, 2, 2], [1, 2, 2]);
        assert_eq!(output_shape(&pool1, [4, 16, 32, 32]).unwrap(), [4, 16, 16, 16]);
        let pool = LayerSpec::pool("p", [2; 3], [2; 3]);
        assert_eq!(output_shape(&pool, [4, 16, 16, 16]).unwrap(), [4, 8, 8, 8]);
    }

    #[test]
    fn output_shape_rejects_empty_result() {
        let pool = LayerSpec::pool("p", [2; 3], [2; 3]);
        assert!(output_shape(&pool, [4, 1, 8, 8]).is_err());
    }

    #[test]
    fn pointwise_layers_reject_shape_params() {
        let mut relu = LayerSpec::pointwise("r", LayerKind::Relu);
        relu.kernel = Some([1; 3]);
        assert!(relu.validate().is_err());
        let mut conv = LayerSpec::conv333("c", 4);
        conv.stride = Some([0, 1, 1]);
        assert!(conv.validate().is_err());
    }

    #[test]
    fn conv5b_shapes() {
        let mini = NetworkConfig::c3d_mini(3);
        assert_eq!(mini.output_shape_of("conv5b").unwrap(), [32, 2, 2, 2]);
        let full = NetworkConfig::c3d(487);
        assert_eq!(full.output_shape_of("conv5b").unwrap(), [512, 2, 7, 7]);
        assert_eq!(full.output_shape_of("conv1a").unwrap(), [64, 16, 112, 112]);
        assert_eq!(full.output_shape_of("pool1").unwrap(), [64, 16, 56, 56]);
    }

    #[test]
    fn blob_end_includes_inplace_relu() {
        let mini = NetworkConfig::c3d_mini(3);
        let conv = mini.layer_index("conv5b").unwrap();
        assert_eq!(mini.blob_end("conv5b").unwrap(), conv + 1);
        assert_eq!(mini.blob_end("pool5").unwrap(), conv + 2);
    }

    #[test]
    fn json_round_trip_and_duplicates() {
        let mini = NetworkConfig::c3d_mini(3);
        let back = NetworkConfig::from_json_str(&mini.to_json()).unwrap();
        assert_eq!(back, mini);

        let mut dup = mini.clone();
        dup.layers[1].name = "conv1a".into();
        assert!(dup.validate().is_err());
    }

    #[test]
    fn attention_head_replaces_relu_with_sigmoid() {
        let mini = NetworkConfig::c3d_mini(3);
        let att = mini.attention_head("conv5b", 64).unwrap();
        let last = att.layers.last().unwrap();
        assert_eq!(last.kind, LayerKind::Sigmoid);
        assert_eq!(att.shapes().unwrap().last().unwrap(), &[64, 2, 2, 2]);
        assert!(mini.attention_head("pool5", 4).is_err());
    }
}
