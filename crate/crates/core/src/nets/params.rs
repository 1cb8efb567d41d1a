use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Bound, ModelConfig, AE_KERNEL, UNET_KERNEL, UP_FACTOR};
use crate::diffengine::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One learnable tensor in the layer list.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Inputs feeding each output element; 0 marks a bias.
    pub fan_in: usize,
    /// Runs of this many consecutive elements start out equal. Transposed
    /// convolutions tie their `s³` taps so the initial upsampling is a
    /// nearest-neighbor copy with no sub-voxel pattern.
    pub tied: usize,
}

fn layer(out: &mut Vec<ParamSpec>, prefix: &str, weight: Vec<usize>, fan_in: usize, bias: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: weight,
        fan_in,
        tied: 1,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![bias],
        fan_in: 0,
        tied: 1,
    });
}

fn conv(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize, k: usize) {
    layer(out, prefix, vec![c_out, c_in, k, k, k], c_in * k * k * k, c_out);
}

fn conv_t(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize) {
    let s = UP_FACTOR;
    // kernel == stride: each output voxel sees exactly C_in inputs
    layer(out, prefix, vec![c_in, c_out, s, s, s], c_in, c_out);
    let w = out.len() - 2;
    out[w].tied = s * s * s;
}

/// The full layer list in construction order.
pub fn layer_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let u = &cfg.unet;
    let ch = |s: usize| u.channels << s;
    let k = UNET_KERNEL;
    for s in 0..u.depth {
        let c_in = if s == 0 { 1 } else { ch(s - 1) };
        conv(&mut out, &format!("unet.enc{s}.conv0"), c_in, ch(s), k);
        conv(&mut out, &format!("unet.enc{s}.conv1"), ch(s), ch(s), k);
        conv(&mut out, &format!("unet.enc{s}.conv2"), ch(s), ch(s), k);
    }
    let mid_in = if u.depth == 0 { 1 } else { ch(u.depth - 1) };
    let mid = ch(u.depth);
    conv(&mut out, "unet.mid.conv0", mid_in, mid, k);
    conv(&mut out, "unet.mid.conv1", mid, mid, k);
    conv(&mut out, "unet.mid.conv2", mid, mid, k);
    for s in (0..u.depth).rev() {
        conv_t(&mut out, &format!("unet.up{s}"), ch(s + 1), ch(s));
        conv(&mut out, &format!("unet.dec{s}.conv0"), 2 * ch(s), ch(s), k);
        conv(&mut out, &format!("unet.dec{s}.conv1"), ch(s), ch(s), k);
        conv(&mut out, &format!("unet.dec{s}.conv2"), ch(s), ch(s), k);
    }
    conv(&mut out, "unet.head", ch(0), u.labels, 1);

    let a = &cfg.autoencoder;
    let c = a.channels;
    let flat = c * a.bottleneck().pow(3);
    for i in 0..u.labels {
        for s in 0..a.stages {
            let c_in = if s == 0 { 1 } else { c };
            conv(&mut out, &format!("ae{i}.enc{s}"), c_in, c, AE_KERNEL);
        }
        layer(&mut out, &format!("ae{i}.fc_in"), vec![c, flat], flat, c);
        layer(&mut out, &format!("ae{i}.fc_out"), vec![flat, c], c, flat);
        for s in 0..a.stages {
            let c_out = if s + 1 == a.stages { 1 } else { c };
            conv_t(&mut out, &format!("ae{i}.dec{s}"), c, c_out);
        }
    }
    out
}

/// Every learnable tensor of the U-Net and the `L` autoencoders.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// He fan-in normal weights, zero biases; deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = layer_specs(&config);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs {
            let t = if spec.fan_in == 0 {
                Tensor::zeros(spec.shape)
            } else {
                let sd = (2.0 / spec.fan_in as f64).sqrt();
                let mut last = T::zero();
                Tensor::from_fn(spec.shape, |i| {
                    if i % spec.tied == 0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        last = T::lit(sd * z);
                    }
                    last
                })
            };
            names.push(spec.name);
            tensors.push(t);
        }
        Ok(Self {
            config,
            seed,
            names,
            tensors,
        })
    }

    /// Rebuild from named tensors, checking them against the layer list.
    pub fn from_named(config: ModelConfig, seed: u64, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let specs = layer_specs(&config);
        if specs.len() != named.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.into_iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Invalid(format!(
                    "parameter `{name}` {:?} does not match layer `{}` {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config,
            seed,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Register every tensor on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Result<Bound<'_, T>> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { params: self, vars })
    }

    /// Wrap leaves that are already on a tape, one per tensor in order
    /// (a gradient checker registers its own).
    pub fn bind_existing(&self, vars: Vec<Var>) -> Result<Bound<'_, T>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::Invalid(format!(
                "{} vars for {} parameters",
                vars.len(),
                self.tensors.len()
            )));
        }
        Ok(Bound { params: self, vars })
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            seed: self.seed,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Parameter count as a function of the configuration alone.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    layer_specs(cfg)
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}
