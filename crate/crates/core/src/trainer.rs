//! Joint Adam minimization of the weighted loss over the U-Net and all
//! autoencoders, with resumable checkpoints and a per-epoch loss table.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossContext, LossValues, LossWeights};
use crate::nets::{autoatlas_forward, Checkpoint, ModelParams};
use crate::par::{self, Mode};
use crate::volio::{DatasetManifest, Mask, SplitTag, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let z = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self { m: z(), v: z(), t: 0 }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite; the error names the offending parameter.
pub fn adam_step<T: Real>(
    names: &[String],
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    cfg: &AdamConfig,
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Invalid(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("gradient {i} {:?} vs {:?}", g.shape(), p.shape())));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient {
                name: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1t, b2t, lr, eps) = (T::lit(b1), T::lit(b2), T::lit(cfg.lr), T::lit(cfg.eps));
    let (c1t, c2t) = (T::lit(c1), T::lit(c2));
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1t * *m + (T::one() - b1t) * g;
            *v = b2t * *v + (T::one() - b2t) * g * g;
            let mh = *m / c1t;
            let vh = *v / c2t;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossWeights,
    pub adam: AdamConfig,
    /// Write `epoch_NNNN.ckpt` every this many epochs; 0 keeps only the
    /// final checkpoint.
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 4,
            seed: 0,
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            checkpoint_every: 0,
            mode: Mode::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::Config(format!("adam.lr must be > 0, got {}", a.lr)));
        }
        for (name, b) in [("adam.beta1", a.beta1), ("adam.beta2", a.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if a.eps.is_nan() || a.eps <= 0.0 {
            return Err(Error::Config(format!("adam.eps must be > 0, got {}", a.eps)));
        }
        self.loss.validate()
    }
}

/// One training volume with its precomputed loss constants.
pub struct Sample {
    pub id: String,
    x: Tensor<f32>,
    ctx: LossContext<f32>,
}

impl Sample {
    /// `x` is zeroed outside `w`.
    pub fn new(id: impl Into<String>, x: &Volume, w: &Mask) -> Result<Self> {
        let x = x.masked(w)?.to_tensor::<f32>();
        Ok(Self {
            id: id.into(),
            x,
            ctx: LossContext::new(w)?,
        })
    }

    pub fn extent(&self) -> usize {
        self.x.shape()[1]
    }
}

/// Normalized, masked samples of one split.
pub fn load_samples(manifest: &DatasetManifest, tag: SplitTag) -> Result<Vec<Sample>> {
    if manifest.norm_constant.is_none() {
        return Err(Error::Invalid("dataset is not normalized".into()));
    }
    manifest
        .ids(tag)
        .iter()
        .map(|id| {
            let s = manifest.subject(id)?;
            Sample::new(id.clone(), &manifest.load_volume(s)?, &manifest.load_mask(s)?)
        })
        .collect()
}

/// Loss and gradients of one sample at the given parameters.
pub fn sample_gradients<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    ctx: &LossContext<T>,
    weights: &LossWeights,
) -> Result<(LossValues, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let net = params.bind(&mut tape, true)?;
    let xv = tape.constant(x.clone())?;
    let out = autoatlas_forward(&mut tape, &net, xv)?;
    let loss = total_loss(&mut tape, xv, out.y, &out.z, ctx, weights)?;
    let values = loss.values(&tape);
    let vars = net.vars().to_vec();
    let mut grads = tape.backward(loss.total)?;
    let g = vars
        .iter()
        .map(|&v| grads.take(v).expect("trainable leaf has a gradient"))
        .collect();
    Ok((values, g))
}

/// Mean per-sample losses of one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub re: f64,
    pub nls: f64,
    pub ad: f64,
}

pub const LOSS_HEADER: &str = "epoch,total,re,nls,ad";

pub fn write_loss_csv(path: &Path, rows: &[EpochLoss]) -> Result<()> {
    let mut s = String::from(LOSS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.total, r.re, r.nls, r.ad));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Training state between epochs.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    samples: &'a [Sample],
    params: ModelParams<f32>,
    adam: AdamState<f32>,
    history: Vec<EpochLoss>,
    out_dir: Option<PathBuf>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl<'a> Trainer<'a> {
    pub fn new(params: ModelParams<f32>, samples: &'a [Sample], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::Invalid("no training samples".into()));
        }
        let n = params.config().extent();
        if let Some(s) = samples.iter().find(|s| s.extent() != n) {
            return Err(Error::shape(
                "train",
                format!("sample `{}` has extent {}, model expects {n}", s.id, s.extent()),
            ));
        }
        let adam = AdamState::new(params.tensors());
        Ok(Self {
            cfg,
            samples,
            params,
            adam,
            history: Vec::new(),
            out_dir: None,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::save`].
    pub fn resume(path: impl AsRef<Path>, samples: &'a [Sample], cfg: TrainConfig) -> Result<Self> {
        let mut ck = Checkpoint::<f32>::load(path)?;
        let params = ModelParams::from_checkpoint(&mut ck)?;
        let mut tr = Self::new(params, samples, cfg)?;
        let names = tr.params.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let missing = || Error::Invalid(format!("checkpoint lacks optimizer state for `{name}`"));
            tr.adam.m[i] = ck.take(&format!("{ADAM_M}{name}")).ok_or_else(missing)?;
            tr.adam.v[i] = ck.take(&format!("{ADAM_V}{name}")).ok_or_else(missing)?;
        }
        tr.adam.t = ck
            .meta
            .get("adam_t")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Invalid("checkpoint lacks the Adam step".into()))?;
        tr.history = ck
            .meta
            .get("history")
            .map(|s| serde_json::from_str(s).map_err(|e| Error::Invalid(format!("bad loss history: {e}"))))
            .transpose()?
            .unwrap_or_default();
        Ok(tr)
    }

    /// Write checkpoints and `loss.csv` under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.out_dir = Some(dir);
        Ok(self)
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<f32> {
        self.params
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    /// Sample order of a given epoch; independent of any earlier epoch.
    pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self) -> Result<EpochLoss> {
        let epoch = self.history.len() + 1;
        let order = Self::epoch_order(self.cfg.seed, epoch, self.samples.len());
        let mut sums = LossValues::default();
        for batch in order.chunks(self.cfg.batch_size) {
            let params = &self.params;
            let samples = self.samples;
            let weights = self.cfg.loss;
            let results = par::map_indexed(batch.len(), self.cfg.mode, |k| {
                let s = &samples[batch[k]];
                par::flush_denormals(|| sample_gradients(params, &s.x, &s.ctx, &weights))
            });
            let mut mean: Option<Vec<Tensor<f32>>> = None;
            for (r, &idx) in results.into_iter().zip(batch) {
                let (v, g) = r.map_err(|e| Error::Diverged {
                    epoch,
                    msg: format!("sample `{}`: {e}", self.samples[idx].id),
                })?;
                if !v.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        msg: format!("non-finite loss on `{}`", self.samples[idx].id),
                    });
                }
                sums.total += v.total;
                sums.re += v.re;
                sums.nls += v.nls;
                sums.ad += v.ad;
                match &mut mean {
                    None => mean = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                                *x += *y;
                            }
                        }
                    }
                }
            }
            let mut grads = mean.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f32;
            for g in &mut grads {
                for x in g.data_mut() {
                    *x *= inv;
                }
            }
            let names = self.params.names().to_vec();
            adam_step(&names, self.params.tensors_mut(), &grads, &self.cfg.adam, &mut self.adam).map_err(|e| {
                Error::Diverged {
                    epoch,
                    msg: e.to_string(),
                }
            })?;
        }
        let n = self.samples.len() as f64;
        let row = EpochLoss {
            epoch,
            total: sums.total / n,
            re: sums.re / n,
            nls: sums.nls / n,
            ad: sums.ad / n,
        };
        log::info!(
            "epoch {epoch}: total {:.6} re {:.6} nls {:.6} ad {:.6}",
            row.total,
            row.re,
            row.nls,
            row.ad
        );
        self.history.push(row);
        if let Some(dir) = self.out_dir.clone() {
            write_loss_csv(&dir.join("loss.csv"), &self.history)?;
            if self.cfg.checkpoint_every > 0 && epoch.is_multiple_of(self.cfg.checkpoint_every) {
                self.save(dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
        Ok(row)
    }

    /// Run until `cfg.epochs` epochs are done, then write `final.ckpt` if an
    /// output directory is set. A diverged epoch leaves earlier checkpoints
    /// untouched.
    pub fn run(&mut self) -> Result<()> {
        while self.history.len() < self.cfg.epochs {
            self.run_epoch()?;
        }
        if let Some(dir) = self.out_dir.clone() {
            self.save(dir.join("final.ckpt"))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut ck = self.params.to_checkpoint();
        ck.meta.insert("epoch".into(), self.history.len().to_string());
        ck.meta.insert("adam_t".into(), self.adam.t.to_string());
        ck.meta.insert(
            "history".into(),
            serde_json::to_string(&self.history).expect("history serializes"),
        );
        for (i, name) in self.params.names().iter().enumerate() {
            ck.tensors.push((format!("{ADAM_M}{name}"), self.adam.m[i].clone()));
            ck.tensors.push((format!("{ADAM_V}{name}"), self.adam.v[i].clone()));
        }
        ck.save(path)
    }
}

/// Train from a fresh initialization; returns the final parameters and the
/// loss curve.
pub fn train(
    params: ModelParams<f32>,
    samples: &[Sample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelParams<f32>, Vec<EpochLoss>)> {
    let mut tr = Trainer::new(params, samples, cfg.clone())?;
    if let Some(dir) = out_dir {
        tr = tr.with_output(dir)?;
    }
    tr.run()?;
    let history = tr.history.clone();
    Ok((tr.into_params(), history))
}
