//! Downstream regression on the concatenated per-partition embeddings:
//! feature extraction, standardization, ridge / kNN / MLP regressors with
//! grid-search cross-validation, scoring and permutation importance.

mod cv;
mod knn;
mod mlp;
mod ridge;

pub use cv::{grid_search_cv, knn_grid, ridge_grid, CvOptions, CvResult, FoldScheme, Regressor, RegressorKind};
pub use knn::{knn_predict, KnnModel};
pub use mlp::{mlp_fit, MlpConfig, MlpModel};
pub use ridge::{ridge_fit, RidgeModel};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nets::{infer, ModelParams};
use crate::volio::{DatasetManifest, SplitTag};

/// Subjects × features, grouped into equal-width column blocks (one per
/// partition, plus any appended noise block).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub x: DMatrix<f64>,
    pub block_width: usize,
    pub targets: BTreeMap<String, Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, x: DMatrix<f64>, block_width: usize, targets: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if block_width == 0 || !x.ncols().is_multiple_of(block_width) {
            return Err(Error::Invalid(format!(
                "{} columns do not split into blocks of {block_width}",
                x.ncols()
            )));
        }
        if ids.len() != x.nrows() || targets.values().any(|t| t.len() != x.nrows()) {
            return Err(Error::Invalid("ids, rows and targets disagree in length".into()));
        }
        Ok(Self {
            ids,
            x,
            block_width,
            targets,
        })
    }

    pub fn blocks(&self) -> usize {
        self.x.ncols() / self.block_width
    }

    /// Columns `[i·C_a, (i+1)·C_a)`.
    pub fn block_cols(&self, i: usize) -> std::ops::Range<usize> {
        i * self.block_width..(i + 1) * self.block_width
    }

    pub fn target(&self, name: &str) -> Result<&[f64]> {
        self.targets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Invalid(format!("no target `{name}`")))
    }

    /// Append one block of i.i.d. standard normal columns.
    pub fn with_noise_block(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.x.nrows();
        let c = self.x.ncols();
        let noise: Vec<f64> = (0..n * self.block_width)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let x = DMatrix::from_fn(n, c + self.block_width, |r, k| {
            if k < c {
                self.x[(r, k)]
            } else {
                noise[r * self.block_width + k - c]
            }
        });
        Self { x, ..self.clone() }
    }
}

/// Embeddings `[e_1, …, e_L]` of every subject in `tag`, in label order.
pub fn extract_embeddings(params: &ModelParams<f32>, manifest: &DatasetManifest, tag: SplitTag) -> Result<FeatureMatrix> {
    let cfg = params.config();
    let n = cfg.extent();
    let width = cfg.autoencoder.channels;
    let ids = manifest.ids(tag).to_vec();
    let mut rows = Vec::with_capacity(ids.len());
    let mut targets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for id in &ids {
        let s = manifest.subject(id)?;
        let x = manifest.load_volume(s)?;
        if x.extent() != [n, n, n] {
            return Err(Error::shape(
                "extract_embeddings",
                format!("subject `{id}` has extent {:?}, model expects {n}³", x.extent()),
            ));
        }
        let w = manifest.load_mask(s)?;
        let out = infer(params, &x.masked(&w)?)?;
        rows.push(out.e.iter().flat_map(|e| e.data().iter().map(|&v| v as f64)).collect::<Vec<_>>());
        for (k, v) in &s.targets {
            targets.entry(k.clone()).or_default().push(*v);
        }
    }
    targets.retain(|k, v| {
        let keep = v.len() == ids.len();
        if !keep {
            log::warn!("target `{k}` missing for some subjects; dropped");
        }
        keep
    });
    let cols = cfg.labels() * width;
    let x = DMatrix::from_fn(ids.len(), cols, |r, c| rows[r][c]);
    FeatureMatrix::new(ids, x, width, targets)
}

/// Per-column affine scaling fitted on training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population std; zero-variance columns keep 1 so they are only centered.
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Invalid("cannot fit a scaler on zero rows".into()));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64;
            mean.push(m);
            scale.push(if v > 0.0 { v.sqrt() } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::shape("scaler", format!("{} columns, fitted on {}", x.ncols(), self.mean.len())));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.mean[c]) / self.scale[c]
        }))
    }
}

/// Scale both sets with statistics of `train` only.
pub fn standardize(train: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, Scaler)> {
    let s = Scaler::fit(train)?;
    Ok((s.transform(train)?, s.transform(test)?, s))
}

fn check_pair(pred: &[f64], truth: &[f64], min: usize) -> Result<()> {
    if pred.len() != truth.len() || truth.len() < min {
        return Err(Error::Invalid(format!(
            "scoring needs equal lengths >= {min}, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// `1 − Σ(t−p)² / Σ(t−t̄)²`.
pub fn r2_score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let m = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Invalid("R² is undefined for a constant target".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (t - p).abs()).sum::<f64>() / truth.len() as f64)
}

/// Percent MAE increase after reordering the rows of `cols` by `perm`.
pub fn permuted_mae_increase(
    model: &dyn Regressor,
    x: &DMatrix<f64>,
    t: &[f64],
    cols: std::ops::Range<usize>,
    perm: &[usize],
) -> Result<f64> {
    if perm.len() != x.nrows() {
        return Err(Error::Invalid("permutation length differs from row count".into()));
    }
    let base = mae(&model.predict(x)?, t)?;
    let mut xp = x.clone();
    for (r, &src) in perm.iter().enumerate() {
        for c in cols.clone() {
            xp[(r, c)] = x[(src, c)];
        }
    }
    let permuted = mae(&model.predict(&xp)?, t)?;
    if base == 0.0 {
        return Err(Error::Invalid("baseline MAE is zero; percent increase undefined".into()));
    }
    Ok(100.0 * (permuted - base) / base)
}

/// Mean and standard error of the percent MAE increase over repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Importance {
    pub mean: f64,
    pub std_err: f64,
    pub reps: Vec<f64>,
}

pub fn permutation_importance(
    model: &dyn Regressor,
    x: &DMatrix<f64>,
    t: &[f64],
    cols: std::ops::Range<usize>,
    n_rep: usize,
    seed: u64,
) -> Result<Importance> {
    if n_rep == 0 {
        return Err(Error::Invalid("n_rep must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reps = Vec::with_capacity(n_rep);
    for _ in 0..n_rep {
        let mut perm: Vec<usize> = (0..x.nrows()).collect();
        perm.shuffle(&mut rng);
        reps.push(permuted_mae_increase(model, x, t, cols.clone(), &perm)?);
    }
    let n = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / n;
    let std_err = if reps.len() > 1 {
        (reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok(Importance { mean, std_err, reps })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub regressor: String,
    pub target: String,
    pub r2: f64,
    pub mae: f64,
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut s = String::from("regressor,target,r2,mae\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.regressor, r.target, r.r2, r.mae);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceRow {
    pub regressor: String,
    pub partition: String,
    pub score: f64,
    pub std_err: f64,
}

pub fn write_importance_csv(path: &Path, rows: &[ImportanceRow]) -> Result<()> {
    let mut s = String::from("regressor,partition,score,std_err\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.regressor, r.partition, r.score, r.std_err);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Outcome of tuning one regressor on training rows and scoring it on
/// held-out rows.
pub struct HeldOutReport {
    pub best: f64,
    pub r2: f64,
    pub mae: f64,
    /// One entry per named column block, in the order given.
    pub importance: Vec<(String, Importance)>,
}

/// Standardize with training statistics, pick the hyperparameter by
/// cross-validation on the training rows, refit, then score the test rows
/// and measure each block's permutation importance on them.
#[allow(clippy::too_many_arguments)]
pub fn held_out_regression(
    kind: RegressorKind,
    train: (&DMatrix<f64>, &[f64]),
    test: (&DMatrix<f64>, &[f64]),
    blocks: &[(String, std::ops::Range<usize>)],
    opts: &CvOptions,
    n_rep: usize,
) -> Result<HeldOutReport> {
    let (xtr, xte, _) = standardize(train.0, test.0)?;
    let cv = grid_search_cv(kind, &kind.default_grid(), &xtr, train.1, opts)?;
    let pred = cv.model.predict(&xte)?;
    let importance = blocks
        .iter()
        .enumerate()
        .map(|(i, (name, cols))| {
            let seed = opts.seed.wrapping_add(1 + i as u64);
            Ok((name.clone(), permutation_importance(cv.model.as_ref(), &xte, test.1, cols.clone(), n_rep, seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeldOutReport {
        best: cv.best,
        r2: r2_score(&pred, test.1)?,
        mae: mae(&pred, test.1)?,
        importance,
    })
}

#[cfg(test)]
mod tests;
