use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{knn::KnnModel, mlp_fit, r2_score, ridge_fit, MlpConfig};
use crate::error::{Error, Result};
use crate::par::{self, Mode};

pub trait Regressor: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressorKind {
    /// Hyperparameter: penalty α.
    Ridge,
    /// Hyperparameter: neighbor count k.
    Knn,
    /// Hyperparameter: L2 penalty α.
    Mlp,
}

impl RegressorKind {
    pub fn name(self) -> &'static str {
        match self {
            RegressorKind::Ridge => "ridge",
            RegressorKind::Knn => "knn",
            RegressorKind::Mlp => "mlp",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            RegressorKind::Knn => knn_grid().iter().map(|&k| k as f64).collect(),
            _ => ridge_grid(),
        }
    }

    pub fn fit(self, x: &DMatrix<f64>, t: &[f64], hp: f64, seed: u64) -> Result<Box<dyn Regressor>> {
        Ok(match self {
            RegressorKind::Ridge => Box::new(ridge_fit(x, t, hp)?),
            RegressorKind::Knn => {
                let k = hp as usize;
                if k == 0 || k > x.nrows() {
                    return Err(Error::Invalid(format!("k = {k} outside 1..={}", x.nrows())));
                }
                Box::new(KnnModel {
                    x: x.clone(),
                    t: t.to_vec(),
                    k,
                })
            }
            RegressorKind::Mlp => Box::new(mlp_fit(
                x,
                t,
                &MlpConfig {
                    alpha: hp,
                    seed,
                    ..Default::default()
                },
            )?),
        })
    }
}

impl std::str::FromStr for RegressorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge" | "lin" => Ok(Self::Ridge),
            "knn" | "nbr" => Ok(Self::Knn),
            "mlp" => Ok(Self::Mlp),
            _ => Err(Error::Invalid(format!("unknown regressor `{s}`"))),
        }
    }
}

/// 44 penalties `1e-5 · 10^(i/4)`, the last one below 1e6.
pub fn ridge_grid() -> Vec<f64> {
    (0..44).map(|i| 1e-5 * 10f64.powf(i as f64 / 4.0)).collect()
}

pub fn knn_grid() -> Vec<usize> {
    vec![
        1, 2, 3, 4, 5, 6, 8, 9, 11, 13, 16, 19, 22, 26, 32, 38, 45, 53, 64, 76, 90, 107, 128, 152, 181, 215,
    ]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FoldScheme {
    /// Fold `f` holds rows `[f·n/K, (f+1)·n/K)`.
    #[default]
    Contiguous,
    /// Contiguous folds over a seeded row shuffle.
    Shuffled(u64),
}

fn fold_rows(n: usize, folds: usize, scheme: FoldScheme) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let FoldScheme::Shuffled(seed) = scheme {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    (0..folds)
        .map(|f| order[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect()
}

fn select(x: &DMatrix<f64>, t: &[f64], rows: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
    (x.select_rows(rows), rows.iter().map(|&r| t[r]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CvOptions {
    pub folds: usize,
    pub scheme: FoldScheme,
    /// Seeds stochastic fits (MLP initialization).
    pub seed: u64,
    pub mode: Mode,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 3,
            scheme: FoldScheme::Contiguous,
            seed: 0,
            mode: Mode::Parallel,
        }
    }
}

pub struct CvResult {
    pub best: f64,
    /// Mean validation R² per grid value; `NEG_INFINITY` where a value is
    /// not applicable to some fold (e.g. k above the fold's row count).
    pub scores: Vec<f64>,
    pub model: Box<dyn Regressor>,
}

/// Pick the grid value with the best mean validation R², refit it on all
/// rows. Ties keep the earlier (smaller) grid value.
pub fn grid_search_cv(
    kind: RegressorKind,
    grid: &[f64],
    x: &DMatrix<f64>,
    t: &[f64],
    opts: &CvOptions,
) -> Result<CvResult> {
    let CvOptions {
        folds,
        scheme,
        seed,
        mode,
    } = *opts;
    let n = x.nrows();
    // every validation fold needs two rows for R² to be defined
    if folds < 2 || n < 2 * folds {
        return Err(Error::Invalid(format!(
            "{folds}-fold CV over {n} rows leaves a validation fold with fewer than 2 rows"
        )));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("empty hyperparameter grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let parts = fold_rows(n, folds, scheme);
    let splits: Vec<_> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..folds).filter(|&g| g != f).flat_map(|g| parts[g].clone()).collect();
            (select(x, t, &train), select(x, t, &parts[f]))
        })
        .collect();
    let jobs = sorted.len() * folds;
    let results = par::map_indexed(jobs, mode, |j| -> Result<f64> {
        let (g, f) = (j / folds, j % folds);
        let ((xt, tt), (xv, tv)) = &splits[f];
        let hp = sorted[g];
        if kind == RegressorKind::Knn && hp as usize > xt.nrows() {
            return Ok(f64::NEG_INFINITY);
        }
        let m = kind.fit(xt, tt, hp, seed)?;
        r2_score(&m.predict(xv)?, tv)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = results.chunks(folds).map(|c| c.iter().sum::<f64>() / folds as f64).collect();
    let mut best = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b: usize| s > scores[b]) {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| Error::Invalid("no grid value is applicable to every fold".into()))?;
    let hp = sorted[best];
    Ok(CvResult {
        best: hp,
        scores,
        model: kind.fit(x, t, hp, seed)?,
    })
}
