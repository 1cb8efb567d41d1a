//! The partitioning U-Net and the per-label low-capacity autoencoders.
//!
//! Parameters live in [`ModelParams`] under stable dotted names
//! (`unet.enc0.conv1.weight`, `ae3.fc_in.bias`, ...). A forward pass binds
//! them onto a [`Tape`] and returns the handles of the label probabilities
//! `y`, the reconstructions `z_i` and the embeddings `e_i`, all on the same
//! tape so one backward call reaches both networks.

mod autoencoder;
mod checkpoint;
mod params;
mod unet;

pub use autoencoder::autoencoder_forward;
pub use checkpoint::Checkpoint;
pub use params::{layer_specs, parameter_count, ModelParams, ParamSpec};
pub use unet::unet_forward;

use serde::{Deserialize, Serialize};

use crate::diffengine::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::volio::{Mask, Volume};

/// Convolution geometry of the U-Net stages: spatial-preserving 3³ kernels.
pub const UNET_KERNEL: usize = 3;
/// Autoencoder downsampling: 3³ kernel, stride 2, padding 1.
pub const AE_KERNEL: usize = 3;
/// Transposed convolutions double each extent with a 2³ kernel.
pub const UP_FACTOR: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    /// Channels after the first convolution (`C_s`).
    pub channels: usize,
    /// Number of partition labels (`L`).
    pub labels: usize,
    /// Number of max-pool / transposed-conv stage pairs.
    pub depth: usize,
    /// Cubic input extent.
    pub extent: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Channels of every conv layer and embedding length (`C_a`).
    pub channels: usize,
    /// Stride-2 downsampling stages.
    pub stages: usize,
    pub extent: usize,
}

impl AutoencoderConfig {
    pub fn bottleneck(&self) -> usize {
        self.extent >> self.stages
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub unet: UNetConfig,
    pub autoencoder: AutoencoderConfig,
}

impl ModelConfig {
    /// 96³ inputs, `C_s = 32`, `L = 16`, bottlenecks at 6³.
    pub fn paper_scale(ae_channels: usize) -> Self {
        Self::new(32, 16, 3, 96, ae_channels, 4)
    }

    /// 32³ inputs with the autoencoder bottleneck at 4³.
    pub fn desk_scale(unet_channels: usize, labels: usize, ae_channels: usize) -> Self {
        Self::new(unet_channels, labels, 3, 32, ae_channels, 3)
    }

    pub fn new(
        unet_channels: usize,
        labels: usize,
        depth: usize,
        extent: usize,
        ae_channels: usize,
        ae_stages: usize,
    ) -> Self {
        Self {
            unet: UNetConfig {
                channels: unet_channels,
                labels,
                depth,
                extent,
            },
            autoencoder: AutoencoderConfig {
                channels: ae_channels,
                stages: ae_stages,
                extent,
            },
        }
    }

    pub fn labels(&self) -> usize {
        self.unet.labels
    }

    pub fn extent(&self) -> usize {
        self.unet.extent
    }

    pub fn validate(&self) -> Result<()> {
        let u = &self.unet;
        let a = &self.autoencoder;
        let bad = |m: String| Err(Error::Config(m));
        if u.channels == 0 || a.channels == 0 {
            return bad("channel counts must be >= 1".into());
        }
        if u.labels == 0 {
            return bad("at least one label is required".into());
        }
        if u.extent == 0 || !u.extent.is_multiple_of(1 << u.depth) {
            return bad(format!(
                "extent {} is not divisible by 2^depth = {}",
                u.extent,
                1 << u.depth
            ));
        }
        if a.extent != u.extent {
            return bad(format!(
                "autoencoder extent {} differs from U-Net extent {}",
                a.extent, u.extent
            ));
        }
        if a.stages == 0 || !a.extent.is_multiple_of(1 << a.stages) {
            return bad(format!(
                "autoencoder extent {} is not divisible by 2^stages = {}",
                a.extent,
                1 << a.stages
            ));
        }
        Ok(())
    }
}

/// Parameters bound to a tape, aligned with [`ModelParams`] order.
pub struct Bound<'a, T> {
    params: &'a ModelParams<T>,
    vars: Vec<Var>,
}

impl<'a, T: Real> Bound<'a, T> {
    pub fn var(&self, name: &str) -> Var {
        self.vars[self.params.index_of(name).unwrap_or_else(|| panic!("no parameter `{name}`"))]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }
}

/// Handles of one joint forward pass.
pub struct ForwardVars {
    pub y: Var,
    pub z: Vec<Var>,
    pub e: Vec<Var>,
}

/// Concrete outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct PartitionOutputs<T> {
    /// `L×D×H×W` label probabilities.
    pub y: Tensor<T>,
    /// One `1×D×H×W` reconstruction per label.
    pub z: Vec<Tensor<T>>,
    /// One length-`C_a` embedding per label.
    pub e: Vec<Tensor<T>>,
}

fn check_input<T: Real>(tape: &Tape<T>, x: Var, extent: usize) -> Result<()> {
    let s = tape.value(x).shape();
    if s != [1, extent, extent, extent] {
        return Err(Error::shape(
            "forward",
            format!("input {:?} does not match configured extent {extent}³", s),
        ));
    }
    Ok(())
}

/// Partition `x` with the U-Net, then run autoencoder `i` on `x ⊙ y_i`
/// for every label.
pub fn autoatlas_forward<T: Real>(tape: &mut Tape<T>, net: &Bound<'_, T>, x: Var) -> Result<ForwardVars> {
    let y = unet_forward(tape, net, x)?;
    let labels = net.config().labels();
    let mut z = Vec::with_capacity(labels);
    let mut e = Vec::with_capacity(labels);
    for i in 0..labels {
        let yi = tape.channel(y, i)?;
        let masked = tape.mul(x, yi)?;
        let (zi, ei) = autoencoder_forward(tape, net, i, masked)?;
        z.push(zi);
        e.push(ei);
    }
    Ok(ForwardVars { y, z, e })
}

/// Inference without gradient bookkeeping.
pub fn infer<T: Real>(params: &ModelParams<T>, x: &Volume) -> Result<PartitionOutputs<T>> {
    let mut tape = Tape::new();
    let net = params.bind(&mut tape, false)?;
    let xv = tape.constant(x.to_tensor())?;
    let out = autoatlas_forward(&mut tape, &net, xv)?;
    Ok(PartitionOutputs {
        y: tape.value(out.y).clone(),
        z: out.z.iter().map(|&v| tape.value(v).clone()).collect(),
        e: out.e.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

/// `x̂_j = w_j · Σ_i z_{i,j} y_{i,j}`. Used for evaluation only.
pub fn compose_reconstruction<T: Real>(y: &Tensor<T>, z: &[Tensor<T>], w: &Mask) -> Result<Volume> {
    let (labels, sp) = match y.shape() {
        [l, d, h, ww] => (*l, d * h * ww),
        s => return Err(Error::shape("compose_reconstruction", format!("y {:?}", s))),
    };
    if z.len() != labels || z.iter().any(|t| t.len() != sp) || w.data().len() != sp {
        return Err(Error::shape(
            "compose_reconstruction",
            "y, z and w disagree in label count or voxel count",
        ));
    }
    let yd = y.data();
    let out = (0..sp)
        .map(|j| {
            if !w.get(j) {
                return 0.0;
            }
            let mut acc = T::zero();
            for (i, zi) in z.iter().enumerate() {
                acc += zi.data()[j] * yd[i * sp + j];
            }
            acc.f64() as f32
        })
        .collect();
    let (d, h, ww) = y.spatial().expect("4d");
    Volume::new([d, h, ww], out)
}

#[cfg(test)]
mod tests;
