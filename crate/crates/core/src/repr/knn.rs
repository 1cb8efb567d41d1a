use nalgebra::DMatrix;

use super::Regressor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    pub x: DMatrix<f64>,
    pub t: Vec<f64>,
    pub k: usize,
}

/// Mean target of the `k` nearest training rows by Euclidean distance;
/// equal distances are ordered by training index.
pub fn knn_predict(x: &DMatrix<f64>, t: &[f64], query: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("k = {k} outside 1..={n}")));
    }
    if t.len() != n || query.ncols() != x.ncols() {
        return Err(Error::shape("knn", "training rows, targets and query columns disagree"));
    }
    Ok(query
        .row_iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = x
                .row_iter()
                .enumerate()
                .map(|(i, r)| ((r - q).norm_squared(), i))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[..k].iter().map(|&(_, i)| t[i]).sum::<f64>() / k as f64
        })
        .collect())
}

impl Regressor for KnnModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        knn_predict(&self.x, &self.t, x, self.k)
    }
}
