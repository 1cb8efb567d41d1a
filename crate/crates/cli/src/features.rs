//! Embedding feature CSV: `subject,split,<block>_e<k>...,target_<name>...`.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nalgebra::DMatrix;

pub const NOISE_BLOCK: &str = "NOISE";
const TARGET_PREFIX: &str = "target_";

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub subjects: Vec<String>,
    pub splits: Vec<String>,
    /// Block names in column order, each `width` columns wide.
    pub blocks: Vec<String>,
    pub width: usize,
    pub x: DMatrix<f64>,
    pub targets: BTreeMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn block_ranges(&self) -> Vec<(String, Range<usize>)> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.clone(), i * self.width..(i + 1) * self.width))
            .collect()
    }

    /// Rows of one split, as a matrix plus the row indices.
    pub fn rows(&self, split: &str) -> (DMatrix<f64>, Vec<usize>) {
        let idx: Vec<usize> = (0..self.subjects.len()).filter(|&r| self.splits[r] == split).collect();
        let m = DMatrix::from_fn(idx.len(), self.x.ncols(), |r, c| self.x[(idx[r], c)]);
        (m, idx)
    }
}

pub fn write_features(path: &Path, t: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["subject".to_string(), "split".to_string()];
    for b in &t.blocks {
        header.extend((0..t.width).map(|k| format!("{b}_e{k}")));
    }
    header.extend(t.targets.keys().map(|k| format!("{TARGET_PREFIX}{k}")));
    w.write_record(&header)?;
    for r in 0..t.subjects.len() {
        let mut rec = vec![t.subjects[r].clone(), t.splits[r].clone()];
        rec.extend(t.x.row(r).iter().map(|v| v.to_string()));
        rec.extend(t.targets.values().map(|v| v[r].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    ensure!(
        header.len() >= 3 && header[0] == "subject" && header[1] == "split",
        "{}: expected `subject,split,...` header",
        path.display()
    );
    let mut blocks: Vec<String> = Vec::new();
    let mut per_block: Vec<usize> = Vec::new();
    let mut target_names = Vec::new();
    let mut feature_cols = 0;
    for name in &header[2..] {
        if let Some(t) = name.strip_prefix(TARGET_PREFIX) {
            target_names.push(t.to_string());
            continue;
        }
        ensure!(target_names.is_empty(), "feature column `{name}` after target columns");
        let (block, k) = name
            .rsplit_once("_e")
            .with_context(|| format!("column `{name}` is neither `<block>_e<k>` nor `target_<name>`"))?;
        let k: usize = k.parse().with_context(|| format!("column `{name}`"))?;
        if blocks.last().map(String::as_str) != Some(block) {
            blocks.push(block.to_string());
            per_block.push(0);
        }
        let n = per_block.last_mut().expect("block pushed");
        ensure!(k == *n, "column `{name}` out of order");
        *n += 1;
        feature_cols += 1;
    }
    ensure!(!blocks.is_empty(), "{}: no feature columns", path.display());
    let width = per_block[0];
    if per_block.iter().any(|&n| n != width) {
        bail!("feature blocks have unequal widths {per_block:?}");
    }
    let mut subjects = Vec::new();
    let mut splits = Vec::new();
    let mut values = Vec::new();
    let mut targets: BTreeMap<String, Vec<f64>> = target_names.iter().map(|n| (n.clone(), Vec::new())).collect();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        ensure!(rec.len() == header.len(), "row {} has {} fields", line + 2, rec.len());
        subjects.push(rec[0].to_string());
        splits.push(rec[1].to_string());
        for c in 0..feature_cols {
            values.push(rec[2 + c].parse::<f64>().with_context(|| format!("row {} column {}", line + 2, header[2 + c]))?);
        }
        for (i, n) in target_names.iter().enumerate() {
            let v = &rec[2 + feature_cols + i];
            targets.get_mut(n).expect("target").push(v.parse().with_context(|| format!("row {} target {n}", line + 2))?);
        }
    }
    let x = DMatrix::from_row_slice(subjects.len(), feature_cols, &values);
    Ok(FeatureTable {
        subjects,
        splits,
        blocks,
        width,
        x,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = FeatureTable {
            subjects: vec!["a".into(), "b".into()],
            splits: vec!["train".into(), "test".into()],
            blocks: vec!["AA_0".into(), "AA_1".into(), NOISE_BLOCK.into()],
            width: 2,
            x: DMatrix::from_fn(2, 6, |r, c| r as f64 * 10.0 + c as f64 + 0.125),
            targets: BTreeMap::from([("strength".into(), vec![1.5, -2.0])]),
        };
        let p = dir.path().join("f.csv");
        write_features(&p, &t).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("subject,split,AA_0_e0,AA_0_e1,AA_1_e0,AA_1_e1,NOISE_e0,NOISE_e1,target_strength\n"));
        assert_eq!(read_features(&p).unwrap(), t);
        let (m, idx) = t.rows("test");
        assert_eq!(idx, [1]);
        assert_eq!(m[(0, 3)], 13.125);
    }

    #[test]
    fn rejects_ragged_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "subject,split,A_e0,A_e1,B_e0\ns,train,1,2,3\n").unwrap();
        assert!(read_features(&p).is_err());
        std::fs::write(&p, "subject,split,A_e1\ns,train,1\n").unwrap();
        assert!(read_features(&p).is_err());
    }
}
