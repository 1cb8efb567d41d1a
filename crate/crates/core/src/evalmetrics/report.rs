use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{OverlapTable, ProbHistogram};
use crate::error::{Error, Result};

fn write(path: &Path, s: String) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Rows `AA_i`, one display column `TT_k` per tissue holding "mean (std)",
/// then machine-readable `TT_k_mean` / `TT_k_std` columns. Std is the
/// population std across subjects.
pub fn write_overlap_csv(path: &Path, t: &OverlapTable) -> Result<()> {
    let k = t.tissues();
    let mut s = String::from("partition");
    for j in 0..k {
        let _ = write!(s, ",TT_{j}");
    }
    for j in 0..k {
        let _ = write!(s, ",TT_{j}_mean,TT_{j}_pop_std");
    }
    s.push('\n');
    for i in 0..t.partitions() {
        let _ = write!(s, "AA_{i}");
        for j in 0..k {
            let _ = write!(s, ",{:.2} ({:.2})", t.mean[i][j], t.std[i][j]);
        }
        for j in 0..k {
            let _ = write!(s, ",{},{}", t.mean[i][j], t.std[i][j]);
        }
        s.push('\n');
    }
    write(path, s)
}

pub fn write_hist_csv(path: &Path, h: &ProbHistogram) -> Result<()> {
    let mut s = String::from("bin_low,bin_high,mass\n");
    for ((lo, hi), m) in h.edges().into_iter().zip(h.mass()) {
        let _ = writeln!(s, "{lo},{hi},{m}");
    }
    write(path, s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub rmse: f64,
    pub regions: usize,
    pub neighbor_agreement: f64,
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut s = String::from("run,rmse,regions,neighbor_agreement\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.name, r.rmse, r.regions, r.neighbor_agreement);
    }
    write(path, s)
}
