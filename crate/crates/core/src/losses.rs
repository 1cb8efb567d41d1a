//! Reconstruction error (RE), neighborhood label similarity (NLS) and
//! anti-devouring (AD) losses, recorded on a tape so they differentiate
//! through both the label probabilities and the reconstructions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffengine::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::volio::Mask;

/// Floor applied to the NLS log argument.
pub const NLS_LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_re: f64,
    pub lambda_nls: f64,
    pub lambda_ad: f64,
    /// Minimum label frequency is `u_i = c / L`.
    pub c: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_re: 1.0,
            lambda_nls: 0.005,
            lambda_ad: 0.1,
            c: 0.9,
            epsilon: 1e-10,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda_re", self.lambda_re), ("lambda_nls", self.lambda_nls), ("lambda_ad", self.lambda_ad)] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {l}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::Config(format!(
                "c must lie in (0, 1] so that the minimum frequencies sum to at most 1, got {}",
                self.c
            )));
        }
        Ok(())
    }

    /// Per-label minimum frequencies `u_i = c / L`.
    pub fn min_frequencies(&self, labels: usize) -> Vec<f64> {
        vec![self.c / labels as f64; labels]
    }
}

/// Unordered 26-adjacent voxel pairs with both endpoints in the foreground.
#[derive(Clone, Debug)]
pub struct NeighborPairs {
    pairs: Arc<[(u32, u32)]>,
}

impl NeighborPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }
}

/// The 13 offsets that are lexicographically positive among the 26
/// neighbors, so that every unordered pair is produced once.
fn half_neighborhood() -> Vec<(isize, isize, isize)> {
    let mut v = Vec::with_capacity(13);
    for dd in -1..=1isize {
        for dh in -1..=1isize {
            for dw in -1..=1isize {
                if (dd, dh, dw) > (0, 0, 0) {
                    v.push((dd, dh, dw));
                }
            }
        }
    }
    v
}

pub fn neighbor_pairs(w: &Mask) -> NeighborPairs {
    let [d, h, wd] = w.extent();
    let offsets = half_neighborhood();
    let mut pairs = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..wd {
                let k = (z * h + y) * wd + x;
                if !w.get(k) {
                    continue;
                }
                for &(dz, dy, dx) in &offsets {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if nz < 0 || ny < 0 || nx < 0 || nz >= d as isize || ny >= h as isize || nx >= wd as isize {
                        continue;
                    }
                    let l = (nz as usize * h + ny as usize) * wd + nx as usize;
                    if w.get(l) {
                        pairs.push((k as u32, l as u32));
                    }
                }
            }
        }
    }
    NeighborPairs { pairs: pairs.into() }
}

/// Per-sample constants shared by the three losses.
pub struct LossContext<T> {
    pub weights: Arc<Vec<T>>,
    pub foreground: usize,
    pub pairs: NeighborPairs,
}

impl<T: Real> LossContext<T> {
    pub fn new(w: &Mask) -> Result<Self> {
        if w.count() == 0 {
            return Err(Error::Invalid("empty foreground mask".into()));
        }
        Ok(Self {
            weights: Arc::new(w.weights()),
            foreground: w.count(),
            pairs: neighbor_pairs(w),
        })
    }
}

fn sum_all<T: Real>(tape: &mut Tape<T>, terms: &[Var]) -> Result<Var> {
    let mut acc = *terms.first().ok_or_else(|| Error::Invalid("no terms".into()))?;
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// `(1/w̄) Σ_i Σ_j w_j y_{i,j} |x_j − z_{i,j}|²`.
pub fn re_loss<T: Real>(tape: &mut Tape<T>, x: Var, y: Var, z: &[Var], ctx: &LossContext<T>) -> Result<Var> {
    let labels = tape.value(y).shape()[0];
    if z.len() != labels {
        return Err(Error::shape("re_loss", format!("{} reconstructions for {labels} labels", z.len())));
    }
    let mut terms = Vec::with_capacity(labels);
    for (i, &zi) in z.iter().enumerate() {
        let diff = tape.sub(x, zi)?;
        let sq = tape.mul(diff, diff)?;
        let yi = tape.channel(y, i)?;
        let weighted = tape.mul(yi, sq)?;
        terms.push(tape.weighted_sum(weighted, ctx.weights.clone())?);
    }
    let total = sum_all(tape, &terms)?;
    tape.scale(total, T::one() / T::lit(ctx.foreground as f64))
}

/// `−log( Σ_i (1/|𝒩|) Σ_{(k,l)∈𝒩} y_{i,k} y_{i,l} )`, log argument floored
/// at [`NLS_LOG_FLOOR`]. An empty pair set yields a constant 0.
pub fn nls_loss<T: Real>(tape: &mut Tape<T>, y: Var, pairs: &NeighborPairs) -> Result<Var> {
    if pairs.is_empty() {
        log::warn!("no foreground neighbor pairs; NLS loss set to 0");
        return tape.constant(crate::diffengine::Tensor::scalar(T::zero()));
    }
    let s = tape.pair_agreement(y, pairs.pairs.clone())?;
    let p = tape.scale(s, T::one() / T::lit(pairs.len() as f64))?;
    let l = tape.ln_clamped(p, T::lit(NLS_LOG_FLOOR))?;
    tape.scale(l, -T::one())
}

/// `(1/L) Σ_i max(−log( (1/(u_i w̄)) Σ_j w_j y_{i,j} + ε ), 0)`.
pub fn ad_loss<T: Real>(tape: &mut Tape<T>, y: Var, ctx: &LossContext<T>, weights: &LossWeights) -> Result<Var> {
    let labels = tape.value(y).shape()[0];
    let u = weights.min_frequencies(labels);
    let mut terms = Vec::with_capacity(labels);
    for (i, ui) in u.iter().enumerate() {
        let yi = tape.channel(y, i)?;
        let mass = tape.weighted_sum(yi, ctx.weights.clone())?;
        let frac = tape.scale(mass, T::lit(1.0 / (ui * ctx.foreground as f64)))?;
        let shifted = tape.offset(frac, T::lit(weights.epsilon))?;
        let log = tape.ln(shifted)?;
        let neg = tape.scale(log, -T::one())?;
        terms.push(tape.relu(neg)?);
    }
    let total = sum_all(tape, &terms)?;
    tape.scale(total, T::one() / T::lit(labels as f64))
}

/// Weighted total and its three components.
pub struct LossVars {
    pub total: Var,
    pub re: Var,
    pub nls: Var,
    pub ad: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub re: f64,
    pub nls: f64,
    pub ad: f64,
}

impl LossVars {
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> LossValues {
        let v = |x: Var| tape.value(x).item().f64();
        LossValues {
            total: v(self.total),
            re: v(self.re),
            nls: v(self.nls),
            ad: v(self.ad),
        }
    }
}

/// `λ_RE·L_RE + λ_NLS·L_NLS + λ_AD·L_AD`.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    y: Var,
    z: &[Var],
    ctx: &LossContext<T>,
    weights: &LossWeights,
) -> Result<LossVars> {
    let re = re_loss(tape, x, y, z, ctx)?;
    let nls = nls_loss(tape, y, &ctx.pairs)?;
    let ad = ad_loss(tape, y, ctx, weights)?;
    let a = tape.scale(re, T::lit(weights.lambda_re))?;
    let b = tape.scale(nls, T::lit(weights.lambda_nls))?;
    let c = tape.scale(ad, T::lit(weights.lambda_ad))?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(LossVars { total, re, nls, ad })
}
