use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Regressor;
use crate::diffengine::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::trainer::{adam_step, AdamConfig, AdamState};

/// Hidden layer widths.
pub const MLP_HIDDEN: [usize; 2] = [4, 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlpConfig {
    pub alpha: f64,
    pub seed: u64,
    pub lr: f64,
    pub max_iter: usize,
    /// Stop once the best loss has not improved by this relative amount
    /// for `patience` consecutive iterations.
    pub tol: f64,
    pub patience: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            seed: 0,
            lr: 1e-3,
            max_iter: 100_000,
            tol: 1e-8,
            patience: 10,
        }
    }
}

/// `input → 4 → 2 → 1` with ReLU hidden layers and a linear output, fitted
/// to the standardized target.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    /// Weight, bias pairs per layer.
    pub layers: Vec<(Tensor<f64>, Tensor<f64>)>,
    pub t_mean: f64,
    pub t_scale: f64,
    pub iterations: usize,
    pub final_loss: f64,
    pub diverged: bool,
}

fn init(n_in: usize, seed: u64) -> Vec<(Tensor<f64>, Tensor<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = [n_in, MLP_HIDDEN[0], MLP_HIDDEN[1], 1];
    widths
        .windows(2)
        .map(|p| {
            let (i, o) = (p[0], p[1]);
            let bound = (6.0 / (i + o) as f64).sqrt();
            let w = Tensor::from_fn([o, i], |_| rng.random_range(-bound..bound));
            let b = Tensor::from_fn([o], |_| rng.random_range(-bound..bound));
            (w, b)
        })
        .collect()
}

fn to_tensor(x: &DMatrix<f64>) -> Tensor<f64> {
    Tensor::from_fn([x.nrows(), x.ncols()], |k| x[(k / x.ncols(), k % x.ncols())])
}

/// `vars` holds weight, bias pairs in layer order.
fn forward(tape: &mut Tape<f64>, x: crate::diffengine::Var, vars: &[crate::diffengine::Var]) -> Result<crate::diffengine::Var> {
    let mut h = x;
    let n_layers = vars.len() / 2;
    for l in 0..n_layers {
        h = tape.linear(h, vars[2 * l], vars[2 * l + 1])?;
        if l + 1 < n_layers {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Full-batch Adam on `½·mean((p − t)²) + α/(2N)·Σ‖W‖²`. A non-finite loss
/// stops the fit and keeps the best iterate seen.
pub fn mlp_fit(x: &DMatrix<f64>, t: &[f64], cfg: &MlpConfig) -> Result<MlpModel> {
    let n = x.nrows();
    if n == 0 || t.len() != n {
        return Err(Error::Invalid(format!("{n} rows vs {} targets", t.len())));
    }
    if cfg.alpha.is_nan() || cfg.alpha < 0.0 {
        return Err(Error::Invalid(format!("alpha must be >= 0, got {}", cfg.alpha)));
    }
    let t_mean = t.iter().sum::<f64>() / n as f64;
    let sd = (t.iter().map(|v| (v - t_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let t_scale = if sd > 0.0 { sd } else { 1.0 };
    let target = Tensor::new([n, 1], t.iter().map(|v| (v - t_mean) / t_scale).collect())?;
    let xt = to_tensor(x);

    let mut params: Vec<Tensor<f64>> = init(x.ncols(), cfg.seed)
        .into_iter()
        .flat_map(|(w, b)| [w, b])
        .collect();
    let names: Vec<String> = (0..params.len()).map(|i| format!("mlp.{i}")).collect();
    let adam = AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    };
    let mut state = AdamState::new(&params);
    let mut best = (f64::INFINITY, params.clone());
    let mut stale = 0;
    let mut iterations = 0;
    let mut diverged = false;
    for _ in 0..cfg.max_iter {
        let step = (|| -> Result<(f64, Vec<Tensor<f64>>)> {
            let mut tape = Tape::new();
            let vars = params.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
            let xv = tape.constant(xt.clone())?;
            let tv = tape.constant(target.clone())?;
            let out = forward(&mut tape, xv, &vars)?;
            let d = tape.sub(out, tv)?;
            let sq = tape.mul(d, d)?;
            let m = tape.mean(sq)?;
            let mut loss = tape.scale(m, 0.5)?;
            for w in vars.iter().step_by(2) {
                let s = tape.mul(*w, *w)?;
                let s = tape.sum(s)?;
                let s = tape.scale(s, cfg.alpha / (2.0 * n as f64))?;
                loss = tape.add(loss, s)?;
            }
            let value = tape.value(loss).item();
            let mut g = tape.backward(loss)?;
            Ok((value, vars.iter().map(|&v| g.take(v).expect("param grad")).collect()))
        })();
        let (loss, grads) = match step {
            Ok(r) if r.0.is_finite() => r,
            _ => {
                diverged = true;
                log::warn!("MLP fit diverged after {iterations} iterations; keeping best iterate");
                break;
            }
        };
        iterations += 1;
        if loss < best.0 * (1.0 - cfg.tol) {
            best = (loss, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if loss < best.0 {
                best = (loss, params.clone());
            }
            if stale >= cfg.patience {
                break;
            }
        }
        if adam_step(&names, &mut params, &grads, &adam, &mut state).is_err() {
            diverged = true;
            break;
        }
    }
    let layers = best.1.chunks(2).map(|p| (p[0].clone(), p[1].clone())).collect();
    Ok(MlpModel {
        layers,
        t_mean,
        t_scale,
        iterations,
        final_loss: best.0,
        diverged,
    })
}

impl Regressor for MlpModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.layers[0].0.shape()[1] {
            return Err(Error::shape("mlp", "column count differs from the fitted input"));
        }
        let mut tape = Tape::new();
        let vars = self
            .layers
            .iter()
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .map(|p| tape.constant(p))
            .collect::<Result<Vec<_>>>()?;
        let xv = tape.constant(to_tensor(x))?;
        let out = forward(&mut tape, xv, &vars)?;
        Ok(tape.value(out).data().iter().map(|v| v * self.t_scale + self.t_mean).collect())
    }
}
