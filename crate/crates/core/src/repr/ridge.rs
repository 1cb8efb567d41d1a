use nalgebra::{DMatrix, DVector};

use super::Regressor;
use crate::error::{Error, Result};

/// Linear model `t ≈ x·coef + intercept`.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

/// Solve `(XcᵀXc + αI) β = Xcᵀtc` on column-centered data, so the intercept
/// is not penalized. The system is factored by Cholesky; when that fails
/// (singular at α = 0) the minimum-norm least-squares solution is taken
/// from an SVD instead.
pub fn ridge_fit(x: &DMatrix<f64>, t: &[f64], alpha: f64) -> Result<RidgeModel> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Invalid(format!("ridge alpha must be finite and >= 0, got {alpha}")));
    }
    let (n, p) = x.shape();
    if n == 0 || t.len() != n {
        return Err(Error::Invalid(format!("{n} rows vs {} targets", t.len())));
    }
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let t_mean = t.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |r, c| x[(r, c)] - means[c]);
    let tc = DVector::from_iterator(n, t.iter().map(|v| v - t_mean));
    let mut a = xc.transpose() * &xc;
    for i in 0..p {
        a[(i, i)] += alpha;
    }
    let b = xc.transpose() * &tc;
    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => xc
            .svd(true, true)
            .solve(&tc, 1e-12)
            .map_err(|e| Error::Invalid(format!("ridge solve failed: {e}")))?,
    };
    let coef: Vec<f64> = beta.iter().copied().collect();
    let intercept = t_mean - coef.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(RidgeModel { coef, intercept, alpha })
}

impl Regressor for RidgeModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.coef.len() {
            return Err(Error::shape("ridge", format!("{} columns, fitted on {}", x.ncols(), self.coef.len())));
        }
        Ok(x.row_iter()
            .map(|r| self.intercept + r.iter().zip(&self.coef).map(|(a, c)| a * c).sum::<f64>())
            .collect())
    }
}
