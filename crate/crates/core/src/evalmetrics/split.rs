use super::{
    argmax_labels, neighbor_agreement, overlap_table, prob_histogram, recon_rmse, regions_used, saturation, AblationRow,
    OverlapTable, ProbHistogram, HIST_BINS, MIN_REGION_FRACTION,
};
use crate::error::{Error, Result};
use crate::nets::{compose_reconstruction, infer, ModelParams};
use crate::volio::{DatasetManifest, LabelVolume, Mask, SplitTag, Volume};

/// Probabilities within this distance of 0 or 1 count as saturated.
pub const SATURATION_MARGIN: f64 = 0.05;

/// Per-subject outputs and scalar metrics of a trained model.
pub struct SubjectEval {
    pub id: String,
    pub labels: LabelVolume,
    pub recon: Volume,
    pub mask: Mask,
    pub tissue: Option<LabelVolume>,
    pub rmse: f64,
    pub regions: usize,
    pub agreement: f64,
    pub saturation: f64,
}

pub struct SplitEval {
    pub partitions: usize,
    pub subjects: Vec<SubjectEval>,
    pub hist: ProbHistogram,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl SplitEval {
    pub fn mean_rmse(&self) -> f64 {
        mean(self.subjects.iter().map(|s| s.rmse))
    }

    pub fn mean_agreement(&self) -> f64 {
        mean(self.subjects.iter().map(|s| s.agreement))
    }

    pub fn min_regions(&self) -> usize {
        self.subjects.iter().map(|s| s.regions).min().unwrap_or(0)
    }

    pub fn max_regions(&self) -> usize {
        self.subjects.iter().map(|s| s.regions).max().unwrap_or(0)
    }

    /// Saturated fraction of all foreground probabilities, pooled over subjects.
    pub fn pooled_saturation(&self) -> f64 {
        let (num, den) = self.subjects.iter().fold((0.0, 0.0), |(a, b), s| {
            let n = s.mask.count() as f64;
            (a + s.saturation * n, b + n)
        });
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Partition × tissue overlap; needs tissue labels for every subject.
    pub fn overlap(&self) -> Result<OverlapTable> {
        let tissues = self
            .subjects
            .iter()
            .map(|s| s.tissue.clone().ok_or_else(|| Error::Invalid(format!("subject `{}` has no tissue labels", s.id))))
            .collect::<Result<Vec<_>>>()?;
        let k = tissues.iter().map(LabelVolume::num_labels).max().unwrap_or(0);
        let parts: Vec<LabelVolume> = self.subjects.iter().map(|s| s.labels.clone()).collect();
        let masks: Vec<Mask> = self.subjects.iter().map(|s| s.mask.clone()).collect();
        overlap_table(&parts, &tissues, &masks, self.partitions, k)
    }

    pub fn ablation_row(&self, name: &str) -> AblationRow {
        AblationRow {
            name: name.into(),
            rmse: self.mean_rmse(),
            regions: self.min_regions(),
            neighbor_agreement: self.mean_agreement(),
        }
    }
}

/// Run the model over every subject of `tag` (inputs masked as in
/// training) and collect labels, reconstructions and metrics.
pub fn evaluate_split(params: &ModelParams<f32>, manifest: &DatasetManifest, tag: SplitTag) -> Result<SplitEval> {
    let mut subjects = Vec::new();
    let mut fields = Vec::new();
    for id in manifest.ids(tag) {
        let s = manifest.subject(id)?;
        let mask = manifest.load_mask(s)?;
        let x = manifest.load_volume(s)?.masked(&mask)?;
        let out = infer(params, &x)?;
        let labels = argmax_labels(&out.y, &mask)?;
        let recon = compose_reconstruction(&out.y, &out.z, &mask)?;
        subjects.push(SubjectEval {
            id: id.clone(),
            rmse: recon_rmse(&recon, &x, &mask)?,
            regions: regions_used(&labels, &mask, MIN_REGION_FRACTION),
            agreement: neighbor_agreement(&labels, &mask),
            saturation: saturation(&out.y, &mask, SATURATION_MARGIN)?,
            tissue: manifest.load_tissue(s)?,
            labels,
            recon,
            mask,
        });
        fields.push(out.y);
    }
    if subjects.is_empty() {
        return Err(Error::Invalid(format!("split {tag:?} has no subjects")));
    }
    let pairs: Vec<_> = fields.iter().zip(&subjects).map(|(y, s)| (y, &s.mask)).collect();
    let hist = prob_histogram(&pairs, HIST_BINS)?;
    Ok(SplitEval {
        partitions: params.config().labels(),
        subjects,
        hist,
    })
}
