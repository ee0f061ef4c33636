use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LayerKind, LayerSpec, NetworkConfig};
use super::layers;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights and bias of a conv or fc layer. Conv weights are
/// `[C_out, C_in, kt, ky, kx]`, fc weights `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(&self) -> LayerParams {
        LayerParams {
            weight: Tensor::zeros(self.weight.dims()),
            bias: Tensor::zeros(self.bias.dims()),
        }
    }

    pub fn add_assign(&mut self, other: &LayerParams) {
        self.weight.add_assign(&other.weight);
        self.bias.add_assign(&other.bias);
    }
}

/// Per-layer gradients; `None` for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Option<LayerParams>>);

impl Gradients {
    pub fn zeros_for(net: &Network) -> Gradients {
        Gradients(
            net.params
                .iter()
                .map(|p| p.as_ref().map(LayerParams::zeros_like))
                .collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            if let (Some(a), Some(b)) = (a, b) {
                a.add_assign(b);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for p in self.0.iter_mut().flatten() {
            p.weight.scale(s);
            p.bias.scale(s);
        }
    }
}

/// Everything the backward pass needs from a forward pass: the input of
/// every executed layer, its final output, and max-pool selections.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl Trace {
    /// Output of the last executed layer.
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds the input at least")
    }

    /// Output of layer `idx`.
    pub fn activation(&self, idx: usize) -> Option<&Tensor> {
        self.acts.get(idx + 1)
    }

    pub fn layers_run(&self) -> usize {
        self.acts.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: Vec<Option<LayerParams>>,
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], bound: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
        .expect("extent product matches")
}

impl Network {
    /// Uniform weights, ±sqrt(6/fan_in) for conv layers (variance kept
    /// through ReLU stacks) and ±sqrt(6/(fan_in+fan_out)) for fc layers;
    /// zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Network> {
        config.validate()?;
        let shapes = config.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .layers
            .iter()
            .zip(&shapes)
            .map(|(spec, input)| match spec.kind {
                LayerKind::Conv3d => {
                    let co = spec.channels.expect("validated");
                    let k = spec.kernel.expect("validated");
                    let vol = k[0] * k[1] * k[2];
                    let dims = [co, input[0], k[0], k[1], k[2]];
                    Some(LayerParams {
                        weight: uniform(&mut rng, &dims, (6.0 / (input[0] * vol) as f64).sqrt()),
                        bias: Tensor::zeros(&[co]),
                    })
                }
                LayerKind::Fc => {
                    let out = spec.channels.expect("validated");
                    let fan_in: usize = input.iter().product();
                    Some(LayerParams {
                        weight: uniform(&mut rng, &[out, fan_in], (6.0 / (fan_in + out) as f64).sqrt()),
                        bias: Tensor::zeros(&[out]),
                    })
                }
                _ => None,
            })
            .collect();
        Ok(Network { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: Vec<Option<LayerParams>>) -> Result<Network> {
        let reference = Network::init(config.clone(), 0)?;
        if params.len() != reference.params.len() {
            return Err(Error::InvalidShape(format!(
                "{} parameter slots for {} layers",
                params.len(),
                reference.params.len()
            )));
        }
        for ((spec, want), got) in config.layers.iter().zip(&reference.params).zip(&params) {
            let ok = match (want, got) {
                (None, None) => true,
                (Some(w), Some(g)) => w.weight.dims() == g.weight.dims() && w.bias.dims() == g.bias.dims(),
                _ => false,
            };
            if !ok {
                return Err(Error::InvalidLayer {
                    layer: spec.name.clone(),
                    detail: "parameter shapes do not match the layer spec".into(),
                });
            }
        }
        Ok(Network { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    pub fn layer_params(&self, name: &str) -> Result<Option<&LayerParams>> {
        Ok(self.params[self.config.layer_index(name)?].as_ref())
    }

    pub fn layer_params_mut(&mut self, name: &str) -> Result<Option<&mut LayerParams>> {
        let idx = self.config.layer_index(name)?;
        Ok(self.params[idx].as_mut())
    }

    pub fn num_layers(&self) -> usize {
        self.config.layers.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.dims() != self.config.input {
            return Err(Error::dims(
                "network input",
                format!("clip {:?}, network expects {:?}", x.dims(), self.config.input),
            ));
        }
        Ok(())
    }

    fn run_layer(&self, idx: usize, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        let spec: &LayerSpec = &self.config.layers[idx];
        let p = self.params[idx].as_ref();
        Ok(match spec.kind {
            LayerKind::Conv3d => {
                let p = p.expect("conv layer has params");
                (layers::conv3d_fwd(x, &p.weight, &p.bias, &spec.window().expect("validated"))?, None)
            }
            LayerKind::Pool3d => {
                let (y, arg) = layers::maxpool3d_fwd(x, &spec.window().expect("validated"))?;
                (y, Some(arg))
            }
            LayerKind::Relu => (layers::relu_fwd(x), None),
            LayerKind::Sigmoid => (layers::sigmoid_fwd(x), None),
            LayerKind::Fc => {
                let p = p.expect("fc layer has params");
                (layers::fc_fwd(x, &p.weight, &p.bias)?, None)
            }
            LayerKind::Softmax => (layers::softmax_fwd(x), None),
        })
    }

    /// Output of layer `end` (inclusive) for a single clip.
    pub fn forward_to(&self, x: &Tensor, end: usize) -> Result<Tensor> {
        self.check_input(x)?;
        let mut a = x.clone();
        for idx in 0..=end.min(self.num_layers() - 1) {
            a = self.run_layer(idx, &a)?.0;
        }
        Ok(a)
    }

    /// Activations of the named layer, or of the whole network when `upto`
    /// is `None`.
    pub fn forward(&self, x: &Tensor, upto: Option<&str>) -> Result<Tensor> {
        let end = match upto {
            Some(name) => self.config.layer_index(name)?,
            None => self.num_layers() - 1,
        };
        self.forward_to(x, end)
    }

    pub fn forward_traced(&self, x: &Tensor, end: usize) -> Result<Trace> {
        self.check_input(x)?;
        let end = end.min(self.num_layers() - 1);
        let mut acts = Vec::with_capacity(end + 2);
        let mut argmax = Vec::with_capacity(end + 1);
        acts.push(x.clone());
        for idx in 0..=end {
            let (y, arg) = self.run_layer(idx, acts.last().unwrap())?;
            acts.push(y);
            argmax.push(arg);
        }
        Ok(Trace { acts, argmax })
    }

    /// Back-propagates `d_out` (gradient w.r.t. the trace's final output)
    /// through every traced layer. Returns parameter gradients and, when
    /// requested, the gradient w.r.t. the network input.
    pub fn backward(
        &self,
        trace: &Trace,
        d_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Gradients, Option<Tensor>)> {
        let n = trace.layers_run();
        if n == 0 || n > self.num_layers() || trace.argmax.len() != n {
            return Err(Error::MissingCache(
                self.config.layers.first().map(|l| l.name.clone()).unwrap_or_default(),
            ));
        }
        if d_out.dims() != trace.output().dims() {
            return Err(Error::dims(
                "network backward",
                format!("dOut {:?} vs output {:?}", d_out.dims(), trace.output().dims()),
            ));
        }
        let mut grads = Gradients(vec![None; self.num_layers()]);
        let mut g = d_out.clone();
        for idx in (0..n).rev() {
            let spec = &self.config.layers[idx];
            let x = &trace.acts[idx];
            let y = &trace.acts[idx + 1];
            let want_dx = idx > 0 || need_input_grad;
            g = match spec.kind {
                LayerKind::Conv3d => {
                    let p = self.params[idx].as_ref().expect("conv params");
                    let (dx, dw, db) =
                        layers::conv3d_bwd(&g, x, &p.weight, &spec.window().expect("validated"), want_dx)?;
                    grads.0[idx] = Some(LayerParams { weight: dw, bias: db });
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                LayerKind::Fc => {
                    let p = self.params[idx].as_ref().expect("fc params");
                    let (dx, dw, db) = layers::fc_bwd(&g, x, &p.weight, want_dx)?;
                    grads.0[idx] = Some(LayerParams { weight: dw, bias: db });
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                LayerKind::Pool3d => {
                    let arg = trace.argmax[idx]
                        .as_ref()
                        .ok_or_else(|| Error::MissingCache(spec.name.clone()))?;
                    layers::maxpool3d_bwd(&g, arg, x.dims())?
                }
                LayerKind::Relu => layers::relu_bwd(&g, x)?,
                LayerKind::Sigmoid => layers::sigmoid_bwd(&g, y)?,
                LayerKind::Softmax => layers::softmax_bwd(&g, y)?,
            };
            if idx == 0 {
                return Ok((grads, need_input_grad.then_some(g)));
            }
        }
        Ok((grads, None))
    }

    /// Writes `config.json` plus one `<layer>.weight.jpt` / `<layer>.bias.jpt`
    /// pair per parameterized layer.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.json");
        std::fs::write(&cfg_path, self.config.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
        for (spec, p) in self.config.layers.iter().zip(&self.params) {
            if let Some(p) = p {
                p.weight.save(dir.join(format!("{}.weight.jpt", spec.name)))?;
                p.bias.save(dir.join(format!("{}.bias.jpt", spec.name)))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Network> {
        let dir = dir.as_ref();
        let config = NetworkConfig::load(dir.join("config.json"))?;
        let mut params = Vec::with_capacity(config.layers.len());
        for spec in &config.layers {
            params.push(if spec.kind.has_params() {
                Some(LayerParams {
                    weight: Tensor::load(dir.join(format!("{}.weight.jpt", spec.name)))?,
                    bias: Tensor::load(dir.join(format!("{}.bias.jpt", spec.name)))?,
                })
            } else {
                None
            });
        }
        Network::from_params(config, params)
    }

    /// Rounds every parameter to float32 precision, the precision weights
    /// are stored with on disk.
    pub fn snap_to_f32(&mut self) {
        for p in self.params.iter_mut().flatten() {
            for v in p.weight.data_mut().iter_mut().chain(p.bias.data_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Activations of layer `upto` (or the final output) for one clip.
pub fn network_fwd(net: &Network, clip: &Tensor, upto: Option<&str>) -> Result<Tensor> {
    net.forward(clip, upto)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use crate::net3d::config::c3d_family;
    use crate::net3d::layers::conv3d_fwd;

    fn clip(cfg: &NetworkConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.input.iter().product();
        Tensor::from_vec(&cfg.input, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn first_layer_equals_single_conv() {
        let cfg = NetworkConfig::c3d_mini(3);
        let net = Network::init(cfg.clone(), 1).unwrap();
        let x = clip(&cfg, 2);
        let p = net.layer_params("conv1a").unwrap().unwrap();
        let want = conv3d_fwd(&x, &p.weight, &p.bias, &cfg.layers[0].window().unwrap()).unwrap();
        assert_eq!(network_fwd(&net, &x, Some("conv1a")).unwrap(), want);
    }

    #[test]
    fn mini_conv5b_shape_and_determinism() {
        let cfg = NetworkConfig::c3d_mini(3);
        let net = Network::init(cfg.clone(), 1).unwrap();
        let x = clip(&cfg, 3);
        let a = net.forward(&x, Some("conv5b")).unwrap();
        assert_eq!(a.dims(), &[32, 2, 2, 2]);
        let b = net.forward(&x, Some("conv5b")).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        let probs = net.forward(&x, None).unwrap();
        assert!((probs.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(net.forward(&x, Some("conv9")), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = NetworkConfig::c3d_mini(3);
        assert_eq!(Network::init(cfg.clone(), 9).unwrap(), Network::init(cfg, 9).unwrap());
    }

    #[test]
    fn backward_requires_matching_trace() {
        let cfg = NetworkConfig::c3d_mini(3);
        let net = Network::init(cfg.clone(), 1).unwrap();
        let trace = net.forward_traced(&clip(&cfg, 1), 2).unwrap();
        let wrong = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(net.backward(&trace, &wrong, false).is_err());
        let empty = Trace {
            acts: vec![clip(&cfg, 1)],
            argmax: vec![],
        };
        assert!(matches!(
            net.backward(&empty, &wrong, false),
            Err(Error::MissingCache(_))
        ));
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        let cfg = c3d_family([1, 4, 8, 8], [2, 2, 2, 2, 2, 2, 2, 2], [4, 4], 3);
        // pool4 reduces a 1×1×1 map too far for this input; stop at conv3b
        let cut = cfg.layer_index("relu3b").unwrap();
        let mut layers = cfg.truncated(cut).layers;
        layers.push(LayerSpec::fc("fc", 3));
        let cfg = NetworkConfig::new(cfg.input, layers).unwrap();
        let net = Network::init(cfg.clone(), 4).unwrap();
        let x = clip(&cfg, 5);
        let end = net.num_layers() - 1;
        let probe = Tensor::from_vec(&[3, 1, 1, 1], vec![0.3, -1.1, 0.7]).unwrap();
        let trace = net.forward_traced(&x, end).unwrap();
        let (grads, dx) = net.backward(&trace, &probe, true).unwrap();
        let f = |n: &Network, x: &Tensor| crate::tensor::dot(n.forward_to(x, end).unwrap().data(), probe.data());
        let ndx = central_difference(&x, 1e-5, |t| f(&net, t));
        assert!(max_relative_error(dx.unwrap().data(), ndx.data()) < 1e-6);
        for (idx, g) in grads.0.iter().enumerate() {
            let Some(g) = g else { continue };
            let w = &net.params[idx].as_ref().unwrap().weight;
            let nw = central_difference(w, 1e-5, |t| {
                let mut n2 = net.clone();
                n2.params[idx].as_mut().unwrap().weight = t.clone();
                f(&n2, &x)
            });
            let err = max_relative_error(g.weight.data(), nw.data());
            assert!(err < 1e-6, "layer {idx}: {err}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = Network::init(NetworkConfig::c3d_mini(3), 1).unwrap();
        net.snap_to_f32();
        net.save(dir.path()).unwrap();
        assert_eq!(Network::load(dir.path()).unwrap(), net);
    }
}
