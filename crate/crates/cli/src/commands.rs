use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use autoatlas::evalmetrics::{
    evaluate_split, importance_overlay, render_slice, write_ablation_csv, write_hist_csv, write_overlap_csv, Axis,
    Palette, SliceSource,
};
use autoatlas::nets::{Checkpoint, ModelParams};
use autoatlas::par::Mode;
use autoatlas::repr::{extract_embeddings, held_out_regression, write_importance_csv, write_scores_csv, CvOptions,
    FoldScheme, ImportanceRow, RegressorKind, ScoreRow};
use autoatlas::trainer::{load_samples, Trainer};
use autoatlas::volio::{
    phantom_generate, read_label_volume, write_label_volume, write_phantom, write_volume, DatasetManifest,
    PhantomConfig, SplitTag,
};
use clap::Args;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{write_run_json, RunConfig};
use crate::features::{read_features, write_features, FeatureTable, NOISE_BLOCK};

fn create_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let p = cfg.manifest_path()?;
    DatasetManifest::load(p).with_context(|| format!("loading manifest {}", p.display()))
}

fn load_params(path: &Path) -> Result<ModelParams<f32>> {
    let mut ck = Checkpoint::<f32>::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ModelParams::from_checkpoint(&mut ck)?)
}

fn parse_split(s: &str) -> Result<SplitTag> {
    Ok(SplitTag::from_str(s)?)
}

#[derive(Args, Debug, Serialize)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 32)]
    pub extent: usize,
    #[arg(long, default_value_t = 25)]
    pub subjects: usize,
    #[arg(long, default_value_t = 4)]
    pub tissues: usize,
    /// Trailing subjects held out for testing [default: one fifth].
    #[arg(long)]
    pub test: Option<usize>,
}

pub fn phantom(cfg: &mut RunConfig, a: PhantomArgs, threads: usize) -> Result<()> {
    let out = create_out(cfg)?;
    let mut pc = PhantomConfig::new(cfg.seed, a.extent, a.subjects, a.tissues);
    if let Some(t) = a.test {
        pc.n_test = t;
    }
    let ds = phantom_generate(&pc)?;
    write_phantom(&ds, &out)?;
    cfg.manifest = Some(out.join("manifest.json"));
    write_run_json(&out, "phantom", threads, cfg, &a)?;
    log::info!("wrote {} subjects to {}", ds.subjects.len(), out.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub labels: Option<usize>,
    #[arg(long)]
    pub unet_channels: Option<usize>,
    #[arg(long)]
    pub ae_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub ae_stages: Option<usize>,
    #[arg(long)]
    pub lambda_re: Option<f64>,
    #[arg(long)]
    pub lambda_nls: Option<f64>,
    #[arg(long)]
    pub lambda_ad: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier `train`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Process each batch on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Copy>(dst: &mut T, v: Option<T>) {
            if let Some(v) = v {
                *dst = v;
            }
        }
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        set(&mut cfg.trainer.epochs, self.epochs);
        set(&mut cfg.trainer.batch_size, self.batch_size);
        set(&mut cfg.trainer.adam.lr, self.lr);
        set(&mut cfg.trainer.checkpoint_every, self.checkpoint_every);
        set(&mut cfg.model.labels, self.labels);
        set(&mut cfg.model.unet_channels, self.unet_channels);
        set(&mut cfg.model.ae_channels, self.ae_channels);
        set(&mut cfg.model.depth, self.depth);
        set(&mut cfg.model.ae_stages, self.ae_stages);
        set(&mut cfg.loss.lambda_re, self.lambda_re);
        set(&mut cfg.loss.lambda_nls, self.lambda_nls);
        set(&mut cfg.loss.lambda_ad, self.lambda_ad);
    }
}

pub fn train(cfg: &mut RunConfig, a: TrainArgs, threads: usize) -> Result<()> {
    a.apply(cfg);
    cfg.validate()?;
    let out = create_out(cfg)?;
    let manifest = load_manifest(cfg)?;
    let first = manifest.ids(SplitTag::Train).first().context("manifest has no training subjects")?;
    let extent = manifest.load_volume(manifest.subject(first)?)?.extent();
    ensure!(extent[0] == extent[1] && extent[1] == extent[2], "volumes must be cubic, got {extent:?}");
    let model = cfg.model.resolve(extent[0]);
    model.validate().context("invalid config: model")?;
    write_run_json(&out, "train", threads, cfg, &a)?;

    let samples = load_samples(&manifest, SplitTag::Train)?;
    let mut tc = cfg.train_config();
    if a.sequential {
        tc.mode = Mode::Sequential;
    }
    let trainer = match &a.resume {
        Some(p) => Trainer::resume(p, &samples, tc)?,
        None => Trainer::new(ModelParams::init(model, cfg.seed)?, &samples, tc)?,
    };
    let mut trainer = trainer.with_output(&out)?;
    trainer.run()?;
    if let Some(last) = trainer.history().last() {
        log::info!(
            "epoch {}: total {:.5} (re {:.5}, nls {:.5}, ad {:.5})",
            last.epoch,
            last.total,
            last.re,
            last.nls,
            last.ad
        );
    }
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct PartitionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Slice orientation for the images: axial, coronal or sagittal.
    #[arg(long, default_value = "axial")]
    pub axis: String,
    /// Slice index [default: middle].
    #[arg(long)]
    pub slice: Option<usize>,
}

pub fn partition(cfg: &mut RunConfig, a: PartitionArgs, threads: usize) -> Result<()> {
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    let out = create_out(cfg)?;
    let axis = Axis::from_str(&a.axis)?;
    let manifest = load_manifest(cfg)?;
    let params = load_params(&a.checkpoint)?;
    write_run_json(&out, "partition", threads, cfg, &a)?;
    let eval = evaluate_split(&params, &manifest, parse_split(&a.split)?)?;
    let palette = Palette::default();
    for s in &eval.subjects {
        write_label_volume(out.join(format!("{}_labels.aavol", s.id)), &s.labels)?;
        write_volume(out.join(format!("{}_recon.aavol", s.id)), &s.recon)?;
        let idx = a.slice.unwrap_or(s.labels.extent()[0] / 2);
        render_slice(&SliceSource::Labels(&s.labels, &palette), axis, idx, &out.join(format!("{}_labels.png", s.id)))?;
        render_slice(&SliceSource::Intensity(&s.recon), axis, idx, &out.join(format!("{}_recon.png", s.id)))?;
    }
    log::info!("partitioned {} subjects into {}", eval.subjects.len(), out.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Append one block of standard-normal columns as a negative control.
    #[arg(long)]
    pub decoy_block: bool,
}

pub fn embed(cfg: &mut RunConfig, a: EmbedArgs, threads: usize) -> Result<()> {
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    let out = create_out(cfg)?;
    let manifest = load_manifest(cfg)?;
    let params = load_params(&a.checkpoint)?;
    write_run_json(&out, "embed", threads, cfg, &a)?;
    let mut parts = Vec::new();
    for (tag, name) in [(SplitTag::Train, "train"), (SplitTag::Test, "test")] {
        let mut fm = extract_embeddings(&params, &manifest, tag)?;
        if a.decoy_block {
            fm = fm.with_noise_block(cfg.seed.wrapping_add(tag as u64));
        }
        parts.push((fm, name));
    }
    let width = parts[0].0.block_width;
    let mut blocks: Vec<String> = (0..params.config().labels()).map(|i| format!("AA_{i}")).collect();
    if a.decoy_block {
        blocks.push(NOISE_BLOCK.into());
    }
    let rows: usize = parts.iter().map(|(f, _)| f.x.nrows()).sum();
    let cols = parts[0].0.x.ncols();
    let mut x = DMatrix::zeros(rows, cols);
    let (mut subjects, mut splits) = (Vec::new(), Vec::new());
    let mut targets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut r0 = 0;
    for (fm, name) in &parts {
        x.rows_mut(r0, fm.x.nrows()).copy_from(&fm.x);
        r0 += fm.x.nrows();
        subjects.extend(fm.ids.iter().cloned());
        splits.extend(std::iter::repeat_n(name.to_string(), fm.ids.len()));
        for (k, v) in &fm.targets {
            targets.entry(k.clone()).or_default().extend(v);
        }
    }
    targets.retain(|_, v| v.len() == rows);
    let table = FeatureTable {
        subjects,
        splits,
        blocks,
        width,
        x,
        targets,
    };
    write_features(&out.join("features.csv"), &table)
}

#[derive(Args, Debug, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// ridge, knn or mlp.
    #[arg(long, default_value = "ridge")]
    pub regressor: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// Shuffle CV folds with the run seed instead of contiguous blocks.
    #[arg(long)]
    pub shuffle_folds: bool,
    /// Permutations per block for importance scores.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Directory of `<id>_labels.aavol` files from `partition`; enables
    /// importance overlay volumes for those subjects.
    #[arg(long)]
    pub labels_dir: Option<PathBuf>,
}

pub fn predict(cfg: &mut RunConfig, a: PredictArgs, threads: usize) -> Result<()> {
    let out = create_out(cfg)?;
    let kind = RegressorKind::from_str(&a.regressor)?;
    let table = read_features(&a.features)?;
    let t = table
        .targets
        .get(&a.target)
        .with_context(|| format!("no target `{}` in {}", a.target, a.features.display()))?;
    write_run_json(&out, "predict", threads, cfg, &a)?;
    let (xtr, itr) = table.rows("train");
    let (xte, ite) = table.rows("test");
    ensure!(!itr.is_empty() && ite.len() >= 2, "need training rows and at least two test rows");
    let ttr: Vec<f64> = itr.iter().map(|&r| t[r]).collect();
    let tte: Vec<f64> = ite.iter().map(|&r| t[r]).collect();
    let opts = CvOptions {
        folds: a.folds,
        scheme: if a.shuffle_folds {
            FoldScheme::Shuffled(cfg.seed)
        } else {
            FoldScheme::Contiguous
        },
        seed: cfg.seed,
        ..CvOptions::default()
    };
    let rep = held_out_regression(kind, (&xtr, &ttr), (&xte, &tte), &table.block_ranges(), &opts, a.repeats)?;
    log::info!("{} on {}: best {} r2 {:.4} mae {:.4}", kind.name(), a.target, rep.best, rep.r2, rep.mae);
    write_scores_csv(
        &out.join("scores.csv"),
        &[ScoreRow {
            regressor: kind.name().into(),
            target: a.target.clone(),
            r2: rep.r2,
            mae: rep.mae,
        }],
    )?;
    let rows: Vec<ImportanceRow> = rep
        .importance
        .iter()
        .map(|(name, imp)| ImportanceRow {
            regressor: kind.name().into(),
            partition: name.clone(),
            score: imp.mean,
            std_err: imp.std_err,
        })
        .collect();
    write_importance_csv(&out.join("importance.csv"), &rows)?;

    if let Some(dir) = &a.labels_dir {
        let scores: Vec<f64> = rep
            .importance
            .iter()
            .filter(|(n, _)| n != NOISE_BLOCK)
            .map(|(_, imp)| imp.mean)
            .collect();
        for &r in &ite {
            let id = &table.subjects[r];
            let path = dir.join(format!("{id}_labels.aavol"));
            let labels = read_label_volume(&path).with_context(|| format!("reading {}", path.display()))?;
            if labels.num_labels() > scores.len() {
                bail!("{} has more labels than scored partitions", path.display());
            }
            write_volume(out.join(format!("{id}_importance.aavol")), &importance_overlay(&labels, &scores)?)?;
        }
    }
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// `name=checkpoint`, repeatable. The first run also produces the
    /// overlap table and probability histogram.
    #[arg(long = "run", required = true, value_parser = parse_run)]
    pub runs: Vec<(String, PathBuf)>,
}

fn parse_run(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected NAME=CHECKPOINT, got `{s}`")),
    }
}

pub fn evaluate(cfg: &mut RunConfig, a: EvaluateArgs, threads: usize) -> Result<()> {
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    let out = create_out(cfg)?;
    let manifest = load_manifest(cfg)?;
    let tag = parse_split(&a.split)?;
    write_run_json(&out, "evaluate", threads, cfg, &a)?;
    let mut rows = Vec::new();
    for (i, (name, ck)) in a.runs.iter().enumerate() {
        let eval = evaluate_split(&load_params(ck)?, &manifest, tag)?;
        if i == 0 {
            write_overlap_csv(&out.join("overlap.csv"), &eval.overlap()?)?;
            write_hist_csv(&out.join("hist.csv"), &eval.hist)?;
        }
        rows.push(eval.ablation_row(name));
    }
    write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    Ok(())
}
