use super::{check_input, Bound, UNET_KERNEL, UP_FACTOR};
use crate::diffengine::{Real, Tape, Var};
use crate::error::Result;

fn conv_relu<T: Real>(tape: &mut Tape<T>, net: &Bound<'_, T>, name: &str, x: Var) -> Result<Var> {
    let w = net.var(&format!("{name}.weight"));
    let b = net.var(&format!("{name}.bias"));
    let c = tape.conv3d(x, w, b, 1, UNET_KERNEL / 2)?;
    tape.relu(c)
}

fn stage<T: Real>(tape: &mut Tape<T>, net: &Bound<'_, T>, prefix: &str, mut x: Var) -> Result<Var> {
    for j in 0..3 {
        x = conv_relu(tape, net, &format!("{prefix}.conv{j}"), x)?;
    }
    Ok(x)
}

/// Label probabilities `L×D×H×W` for a `1×D×H×W` input.
///
/// Contracting stages (three conv+ReLU, the first doubling channels) end in
/// a 2³ max-pool; expansive stages upsample with a stride-2 transposed conv
/// that halves channels, concatenate the matching contracting output and
/// apply three conv+ReLU. A 1×1×1 conv maps to `L` channels before the
/// per-voxel softmax.
pub fn unet_forward<T: Real>(tape: &mut Tape<T>, net: &Bound<'_, T>, x: Var) -> Result<Var> {
    let cfg = net.config().unet;
    check_input(tape, x, cfg.extent)?;
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut h = x;
    for s in 0..cfg.depth {
        let out = stage(tape, net, &format!("unet.enc{s}"), h)?;
        skips.push(out);
        h = tape.maxpool3d(out, 2)?;
    }
    h = stage(tape, net, "unet.mid", h)?;
    for s in (0..cfg.depth).rev() {
        let up = tape.conv_transpose3d(
            h,
            net.var(&format!("unet.up{s}.weight")),
            net.var(&format!("unet.up{s}.bias")),
            UP_FACTOR,
        )?;
        let cat = tape.concat_channels(up, skips[s])?;
        h = stage(tape, net, &format!("unet.dec{s}"), cat)?;
    }
    let logits = tape.conv3d(h, net.var("unet.head.weight"), net.var("unet.head.bias"), 1, 0)?;
    tape.softmax_channels(logits)
}
