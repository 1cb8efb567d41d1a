//! Evaluation of trained partitions: hard labels, overlap with reference
//! tissues, reconstruction error, label usage, probability histograms and
//! slice renderings.

mod render;
mod report;
mod split;

pub use render::{encode, importance_overlay, render_slice, slice_rgb, Axis, ImageFormat, Palette, SliceSource};
pub use report::{write_ablation_csv, write_hist_csv, write_overlap_csv, AblationRow};
pub use split::{evaluate_split, SplitEval, SubjectEval, SATURATION_MARGIN};

use crate::diffengine::{Real, Tensor};
use crate::error::{Error, Result};
use crate::volio::{LabelVolume, Mask, Volume};

/// Default `min_frac` for [`regions_used`].
pub const MIN_REGION_FRACTION: f64 = 0.001;
pub const HIST_BINS: usize = 50;

fn prob_dims<T: Real>(y: &Tensor<T>, w: &Mask) -> Result<(usize, usize)> {
    match y.shape() {
        [l, d, h, ww] if [*d, *h, *ww] == w.extent() && *l > 0 => Ok((*l, d * h * ww)),
        s => Err(Error::shape(
            "label field",
            format!("y {:?} does not match mask {:?}", s, w.extent()),
        )),
    }
}

/// Per-foreground-voxel argmax; ties go to the lowest label.
pub fn argmax_labels<T: Real>(y: &Tensor<T>, w: &Mask) -> Result<LabelVolume> {
    let (labels, sp) = prob_dims(y, w)?;
    let d = y.data();
    let out = (0..sp)
        .map(|j| {
            if !w.get(j) {
                return LabelVolume::BACKGROUND;
            }
            let mut best = 0;
            for i in 1..labels {
                if d[i * sp + j] > d[best * sp + j] {
                    best = i;
                }
            }
            best as i32
        })
        .collect();
    LabelVolume::new(w.extent(), out)
}

/// Mean and population std of overlap percentages across subjects.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapTable {
    /// `[partition][tissue]`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub subjects: usize,
}

impl OverlapTable {
    pub fn partitions(&self) -> usize {
        self.mean.len()
    }

    pub fn tissues(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }
}

/// Raw per-subject cells `100·|P_i ∩ T_k| / w̄`.
pub fn overlap_cells(part: &LabelVolume, tissue: &LabelVolume, w: &Mask, partitions: usize, tissues: usize) -> Result<Vec<Vec<f64>>> {
    if part.extent() != w.extent() || tissue.extent() != w.extent() {
        return Err(Error::shape("overlap", "partition, tissue and mask extents differ"));
    }
    let mut cells = vec![vec![0.0; tissues]; partitions];
    let total = w.count() as f64;
    for j in 0..w.data().len() {
        if !w.get(j) {
            continue;
        }
        let (Some(p), Some(t)) = (part.label(j), tissue.label(j)) else {
            continue;
        };
        if p >= partitions || t >= tissues {
            return Err(Error::Invalid(format!("label ({p}, {t}) outside a {partitions}×{tissues} table")));
        }
        cells[p][t] += 100.0 / total;
    }
    Ok(cells)
}

pub fn overlap_table(
    parts: &[LabelVolume],
    tissues: &[LabelVolume],
    masks: &[Mask],
    n_parts: usize,
    n_tissues: usize,
) -> Result<OverlapTable> {
    if parts.len() != tissues.len() || parts.len() != masks.len() {
        return Err(Error::Invalid("overlap inputs differ in subject count".into()));
    }
    let mut all = Vec::new();
    for ((p, t), w) in parts.iter().zip(tissues).zip(masks) {
        if w.count() == 0 {
            log::warn!("skipping subject with an empty mask in the overlap table");
            continue;
        }
        all.push(overlap_cells(p, t, w, n_parts, n_tissues)?);
    }
    let n = all.len() as f64;
    let mut mean = vec![vec![0.0; n_tissues]; n_parts];
    let mut std = vec![vec![0.0; n_tissues]; n_parts];
    if !all.is_empty() {
        for i in 0..n_parts {
            for k in 0..n_tissues {
                let m = all.iter().map(|c| c[i][k]).sum::<f64>() / n;
                let v = all.iter().map(|c| (c[i][k] - m).powi(2)).sum::<f64>() / n;
                mean[i][k] = m;
                std[i][k] = v.sqrt();
            }
        }
    }
    Ok(OverlapTable {
        mean,
        std,
        subjects: all.len(),
    })
}

/// `sqrt((1/w̄) Σ w_j (x̂_j − x_j)²)` for one subject.
pub fn recon_rmse(xhat: &Volume, x: &Volume, w: &Mask) -> Result<f64> {
    if xhat.extent() != x.extent() || x.extent() != w.extent() {
        return Err(Error::shape("recon_rmse", "volume and mask extents differ"));
    }
    if w.count() == 0 {
        return Err(Error::Invalid("recon_rmse over an empty mask".into()));
    }
    let s: f64 = xhat
        .data()
        .iter()
        .zip(x.data())
        .zip(w.data())
        .filter(|(_, &m)| m != 0)
        .map(|((&a, &b), _)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok((s / w.count() as f64).sqrt())
}

/// Labels holding strictly more than `min_frac` of the foreground.
pub fn regions_used(labels: &LabelVolume, w: &Mask, min_frac: f64) -> usize {
    let total = w.count();
    if total == 0 {
        return 0;
    }
    let mut counts = vec![0usize; labels.num_labels()];
    for j in (0..w.data().len()).filter(|&j| w.get(j)) {
        if let Some(c) = labels.label(j) {
            counts[c] += 1;
        }
    }
    counts
        .iter()
        .filter(|&&c| c as f64 / total as f64 > min_frac)
        .count()
}

/// Fraction of 6-adjacent foreground voxel pairs that share a label.
pub fn neighbor_agreement(labels: &LabelVolume, w: &Mask) -> f64 {
    let [d, h, wd] = w.extent();
    let (mut same, mut all) = (0usize, 0usize);
    for z in 0..d {
        for y in 0..h {
            for x in 0..wd {
                let k = (z * h + y) * wd + x;
                if !w.get(k) {
                    continue;
                }
                let mut visit = |l: usize| {
                    if w.get(l) {
                        all += 1;
                        same += (labels.data()[k] == labels.data()[l]) as usize;
                    }
                };
                if z + 1 < d {
                    visit(k + h * wd);
                }
                if y + 1 < h {
                    visit(k + wd);
                }
                if x + 1 < wd {
                    visit(k + 1);
                }
            }
        }
    }
    if all == 0 {
        1.0
    } else {
        same as f64 / all as f64
    }
}

/// Normalized histogram of foreground probabilities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbHistogram {
    pub counts: Vec<u64>,
}

impl ProbHistogram {
    pub fn new(bins: usize) -> Self {
        Self { counts: vec![0; bins] }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin `b` covers `[b/B, (b+1)/B)`; the last bin also holds 1.
    pub fn add<T: Real>(&mut self, y: &Tensor<T>, w: &Mask) -> Result<()> {
        let (labels, sp) = prob_dims(y, w)?;
        let b = self.bins();
        for i in 0..labels {
            for j in (0..sp).filter(|&j| w.get(j)) {
                let v = y.data()[i * sp + j].f64().clamp(0.0, 1.0);
                let bin = ((v * b as f64) as usize).min(b - 1);
                self.counts[bin] += 1;
            }
        }
        Ok(())
    }

    pub fn mass(&self) -> Vec<f64> {
        let n: u64 = self.counts.iter().sum();
        if n == 0 {
            return vec![0.0; self.bins()];
        }
        self.counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    /// `(low, high)` edges of every bin.
    pub fn edges(&self) -> Vec<(f64, f64)> {
        let b = self.bins() as f64;
        (0..self.bins()).map(|i| (i as f64 / b, (i + 1) as f64 / b)).collect()
    }
}

pub fn prob_histogram<T: Real>(fields: &[(&Tensor<T>, &Mask)], bins: usize) -> Result<ProbHistogram> {
    if bins == 0 {
        return Err(Error::Invalid("histogram needs at least one bin".into()));
    }
    let mut h = ProbHistogram::new(bins);
    for (y, w) in fields {
        h.add(*y, w)?;
    }
    Ok(h)
}

/// Fraction of foreground probabilities within `margin` of 0 or 1.
pub fn saturation<T: Real>(y: &Tensor<T>, w: &Mask, margin: f64) -> Result<f64> {
    let (labels, sp) = prob_dims(y, w)?;
    let mut hit = 0usize;
    for i in 0..labels {
        for j in (0..sp).filter(|&j| w.get(j)) {
            let v = y.data()[i * sp + j].f64();
            hit += (v <= margin || v >= 1.0 - margin) as usize;
        }
    }
    Ok(hit as f64 / (labels * w.count()).max(1) as f64)
}

#[cfg(test)]
mod tests;
