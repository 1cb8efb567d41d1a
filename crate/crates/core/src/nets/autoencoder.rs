use super::{Bound, AE_KERNEL, UP_FACTOR};
use crate::diffengine::{Real, Tape, Var};
use crate::error::{Error, Result};

/// Autoencoder `i` on a masked `1×D×H×W` input; returns the reconstruction
/// `z_i` (same shape) and the bottleneck embedding `e_i` (length `C_a`).
///
/// No skip connections: everything passes through the two fully connected
/// layers around `e_i`. Every conv is followed by ReLU except the last
/// transposed conv, which produces `z_i`.
pub fn autoencoder_forward<T: Real>(
    tape: &mut Tape<T>,
    net: &Bound<'_, T>,
    i: usize,
    masked: Var,
) -> Result<(Var, Var)> {
    let cfg = net.config().autoencoder;
    let n = cfg.extent;
    if tape.value(masked).shape() != [1, n, n, n] {
        return Err(Error::shape(
            "autoencoder",
            format!("input {:?}, expected [1, {n}, {n}, {n}]", tape.value(masked).shape()),
        ));
    }
    let c = cfg.channels;
    let b = cfg.bottleneck();
    let p = |s: &str| format!("ae{i}.{s}");

    let mut h = masked;
    for s in 0..cfg.stages {
        let name = p(&format!("enc{s}"));
        let conv = tape.conv3d(
            h,
            net.var(&format!("{name}.weight")),
            net.var(&format!("{name}.bias")),
            2,
            AE_KERNEL / 2,
        )?;
        h = tape.relu(conv)?;
    }
    let flat = tape.reshape(h, &[c * b * b * b])?;
    let e = tape.linear(flat, net.var(&p("fc_in.weight")), net.var(&p("fc_in.bias")))?;
    let expanded = tape.linear(e, net.var(&p("fc_out.weight")), net.var(&p("fc_out.bias")))?;
    h = tape.reshape(expanded, &[c, b, b, b])?;
    for s in 0..cfg.stages {
        let name = p(&format!("dec{s}"));
        h = tape.conv_transpose3d(
            h,
            net.var(&format!("{name}.weight")),
            net.var(&format!("{name}.bias")),
            UP_FACTOR,
        )?;
        if s + 1 < cfg.stages {
            h = tape.relu(h)?;
        }
    }
    Ok((h, e))
}
