//! Synthetic "brain" phantoms standing in for real MRI.
//!
//! Each subject is a smoothly warped ellipsoid holding nested tissue shells
//! (plus a pair of lateral blobs when there are at least four tissues). Every
//! tissue has its own mean intensity and its own sinusoidal texture
//! frequency. Subjects share topology but differ in overall size, shell
//! thickness and warp, so region volumes vary across the cohort. Two scalar
//! targets are attached: `strength`, an affine function of two region
//! volumes plus mild noise, and `decoy`, pure noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    foreground_mask, normalize_dataset, voxel_count, write_label_volume, write_mask, write_volume,
    DatasetManifest, LabelVolume, Mask, Split, Subject, Volume, DEFAULT_FOREGROUND_THRESHOLD,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub seed: u64,
    pub extent: usize,
    pub n_subjects: usize,
    pub n_tissues: usize,
    /// Number of trailing subjects assigned to the test split.
    pub n_test: usize,
}

impl PhantomConfig {
    pub fn new(seed: u64, extent: usize, n_subjects: usize, n_tissues: usize) -> Self {
        Self {
            seed,
            extent,
            n_subjects,
            n_tissues,
            n_test: n_subjects / 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhantomSubject {
    pub id: String,
    pub volume: Volume,
    pub mask: Mask,
    pub tissue: LabelVolume,
    pub targets: BTreeMap<String, f64>,
    /// Voxel count of each tissue.
    pub region_volumes: Vec<usize>,
    /// Noise-free part of the `strength` target.
    pub strength_signal: f64,
}

#[derive(Clone, Debug)]
pub struct PhantomDataset {
    pub config: PhantomConfig,
    pub subjects: Vec<PhantomSubject>,
}

/// Tissues whose volumes drive `strength`.
pub const STRENGTH_TISSUES: [usize; 2] = [0, 2];
const STRENGTH_COEF: [f64; 2] = [0.5, 0.8];
const STRENGTH_NOISE: f64 = 1.0;

const MEANS: [f32; 8] = [0.55, 0.72, 0.92, 0.25, 0.40, 0.82, 0.63, 0.33];
/// Texture cycles across the unit half-width.
const FREQS: [f32; 8] = [3.0, 5.0, 2.0, 7.0, 4.0, 6.0, 2.5, 5.5];
const TEXTURE_AMP: f32 = 0.06;
const NOISE_SD: f32 = 0.01;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f32; 3] {
    loop {
        let v = [normal(rng), normal(rng), normal(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [(v[0] / n) as f32, (v[1] / n) as f32, (v[2] / n) as f32];
        }
    }
}

struct Warp {
    amp: f32,
    terms: [[(f32, [f32; 3], f32); 3]; 3],
}

impl Warp {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut terms = [[(0.0, [0.0; 3], 0.0); 3]; 3];
        for axis in terms.iter_mut() {
            for (m, t) in axis.iter_mut().enumerate() {
                *t = (
                    1.0 + 0.5 * m as f32,
                    unit_vector(rng),
                    rng.random::<f32>() * std::f32::consts::TAU,
                );
            }
        }
        Self { amp: 0.035, terms }
    }

    fn apply(&self, u: [f32; 3]) -> [f32; 3] {
        let mut v = u;
        for (a, axis) in self.terms.iter().enumerate() {
            for &(f, dir, ph) in axis {
                let s = u[0] * dir[0] + u[1] * dir[1] + u[2] * dir[2];
                v[a] += self.amp * (std::f32::consts::PI * f * s + ph).sin();
            }
        }
        v
    }
}

struct Anatomy {
    radii: [f32; 3],
    /// Outer boundary (in normalized ellipsoidal radius) of shells 1.. .
    shells: Vec<f32>,
    blob_radius: f32,
    blob_offset: f32,
    warp: Warp,
    texture: Vec<([f32; 3], f32)>,
}

impl Anatomy {
    fn sample(rng: &mut ChaCha8Rng, n_tissues: usize) -> Self {
        let jitter = |rng: &mut ChaCha8Rng, sd: f64| (1.0 + sd * normal(rng)).clamp(0.8, 1.2) as f32;
        let radii = [0.78 * jitter(rng, 0.05), 0.70 * jitter(rng, 0.05), 0.66 * jitter(rng, 0.05)];
        let shells = (1..n_tissues)
            .map(|k| {
                let base = (1.0 - k as f32 / n_tissues as f32).powf(0.6);
                base * jitter(rng, 0.03)
            })
            .scan(1.0f32, |prev, b| {
                let b = b.min(*prev - 0.05).max(0.05);
                *prev = b;
                Some(b)
            })
            .collect();
        let texture = (0..n_tissues)
            .map(|_| (unit_vector(rng), rng.random::<f32>() * std::f32::consts::TAU))
            .collect();
        Self {
            radii,
            shells,
            blob_radius: 0.22 * jitter(rng, 0.1),
            blob_offset: 0.30 * jitter(rng, 0.05),
            warp: Warp::sample(rng),
            texture,
        }
    }

    /// Tissue at normalized coordinate `u`, or `None` outside the brain.
    fn tissue(&self, u: [f32; 3], n_tissues: usize) -> Option<usize> {
        let v = self.warp.apply(u);
        let q = [v[0] / self.radii[0], v[1] / self.radii[1], v[2] / self.radii[2]];
        let rho = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        if rho >= 1.0 {
            return None;
        }
        if n_tissues >= 4 {
            let blob = |side: f32| {
                let dx = (q[0] - side * self.blob_offset) / self.blob_radius;
                let dy = q[1] / self.blob_radius;
                let dz = (q[2] + 0.1) / (0.8 * self.blob_radius);
                dx * dx + dy * dy + dz * dz < 1.0
            };
            if blob(1.0) || blob(-1.0) {
                return Some(1);
            }
        }
        let mut t = 0;
        for (k, &b) in self.shells.iter().enumerate() {
            if rho < b {
                t = k + 1;
            }
        }
        if n_tissues >= 4 && t == 1 {
            // shell 1 is carried by the blobs; the ring between 0 and 2 stays 0
            t = 0;
        }
        Some(t)
    }
}

fn validate(cfg: &PhantomConfig) -> Result<()> {
    if cfg.extent < 4 {
        return Err(Error::Config(format!("phantom extent must be >= 4, got {}", cfg.extent)));
    }
    if !(1..=MEANS.len()).contains(&cfg.n_tissues) {
        return Err(Error::Config(format!(
            "n_tissues must be in 1..={}, got {}",
            MEANS.len(),
            cfg.n_tissues
        )));
    }
    if cfg.n_subjects == 0 || cfg.n_test >= cfg.n_subjects {
        return Err(Error::Config(format!(
            "need at least one training subject ({} subjects, {} test)",
            cfg.n_subjects, cfg.n_test
        )));
    }
    Ok(())
}

fn subject(cfg: &PhantomConfig, idx: usize, seed: u64) -> PhantomSubject {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.extent;
    let k = cfg.n_tissues;
    let anatomy = Anatomy::sample(&mut rng, k);
    let extent = [n; 3];
    let coord = |i: usize| 2.0 * (i as f32 + 0.5) / n as f32 - 1.0;

    let mut values = vec![0.0f32; voxel_count(extent)];
    let mut labels = vec![LabelVolume::BACKGROUND; voxel_count(extent)];
    let mut region_volumes = vec![0usize; k];
    for d in 0..n {
        for h in 0..n {
            for w in 0..n {
                let u = [coord(d), coord(h), coord(w)];
                let j = (d * n + h) * n + w;
                let noise = NOISE_SD * normal(&mut rng) as f32;
                if let Some(t) = anatomy.tissue(u, k) {
                    let (dir, ph) = anatomy.texture[t];
                    let s = u[0] * dir[0] + u[1] * dir[1] + u[2] * dir[2];
                    let tex = (std::f32::consts::PI * FREQS[t] * s + ph).sin();
                    values[j] = MEANS[t] * (1.0 + TEXTURE_AMP * tex) + noise;
                    labels[j] = t as i32;
                    region_volumes[t] += 1;
                }
            }
        }
    }
    let mask = Mask::from_fn(extent, |j| labels[j] != LabelVolume::BACKGROUND);
    let per_mille = |t: usize| 1000.0 * region_volumes.get(t).copied().unwrap_or(0) as f64 / (n * n * n) as f64;
    let strength_signal = 20.0
        + STRENGTH_TISSUES
            .iter()
            .zip(STRENGTH_COEF)
            .map(|(&t, c)| c * per_mille(t))
            .sum::<f64>();
    let mut targets = BTreeMap::new();
    targets.insert("strength".into(), strength_signal + STRENGTH_NOISE * normal(&mut rng));
    targets.insert("decoy".into(), normal(&mut rng));
    PhantomSubject {
        id: format!("sub{idx:04}"),
        volume: Volume::new(extent, values).expect("finite phantom"),
        mask,
        tissue: LabelVolume::new(extent, labels).expect("valid labels"),
        targets,
        region_volumes,
        strength_signal,
    }
}

/// Generate the cohort in memory. Identical configs give identical data.
pub fn phantom_generate(cfg: &PhantomConfig) -> Result<PhantomDataset> {
    validate(cfg)?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.n_subjects).map(|_| master.random()).collect();
    let subjects = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| subject(cfg, i, s))
        .collect();
    Ok(PhantomDataset {
        config: cfg.clone(),
        subjects,
    })
}

/// Write every subject as `AAVOL1` files plus `manifest.json` under `dir`,
/// with the normalization constant already computed from the training
/// split. Returns the manifest.
pub fn write_phantom(ds: &PhantomDataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_train = ds.subjects.len() - ds.config.n_test;
    let mut manifest = DatasetManifest {
        subjects: vec![],
        split: Split::default(),
        norm_constant: None,
        base_dir: dir.to_path_buf(),
    };
    for (i, s) in ds.subjects.iter().enumerate() {
        let vol = format!("{}_volume.aavol", s.id);
        let mask = format!("{}_mask.aavol", s.id);
        let tissue = format!("{}_tissue.aavol", s.id);
        write_volume(dir.join(&vol), &s.volume)?;
        debug_assert_eq!(
            foreground_mask(&s.volume, DEFAULT_FOREGROUND_THRESHOLD).ok().as_ref(),
            Some(&s.mask)
        );
        write_mask(dir.join(&mask), &s.mask)?;
        write_label_volume(dir.join(&tissue), &s.tissue)?;
        manifest.subjects.push(Subject {
            id: s.id.clone(),
            volume: vol.into(),
            mask: mask.into(),
            tissue: Some(tissue.into()),
            targets: s.targets.clone(),
        });
        if i < n_train {
            manifest.split.train.push(s.id.clone());
        } else {
            manifest.split.test.push(s.id.clone());
        }
    }
    normalize_dataset(&mut manifest)?;
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomConfig {
        PhantomConfig::new(7, 16, 6, 4)
    }

    #[test]
    fn deterministic_for_seed() {
        let a = phantom_generate(&small()).unwrap();
        let b = phantom_generate(&small()).unwrap();
        for (x, y) in a.subjects.iter().zip(&b.subjects) {
            assert_eq!(x.volume, y.volume);
            assert_eq!(x.tissue, y.tissue);
            assert_eq!(x.targets, y.targets);
        }
        let c = phantom_generate(&PhantomConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.subjects[0].volume, c.subjects[0].volume);
    }

    #[test]
    fn tissue_labels_partition_the_mask() {
        let ds = phantom_generate(&small()).unwrap();
        for s in &ds.subjects {
            for j in 0..s.mask.data().len() {
                assert_eq!(s.mask.get(j), s.tissue.label(j).is_some());
            }
            assert_eq!(s.region_volumes.iter().sum::<usize>(), s.mask.count());
            assert!(s.region_volumes.iter().all(|&v| v > 0), "{:?}", s.region_volumes);
            let fg = foreground_mask(&s.volume, DEFAULT_FOREGROUND_THRESHOLD).unwrap();
            assert_eq!(fg, s.mask);
        }
    }

    #[test]
    fn strength_tracks_region_volumes() {
        let ds = phantom_generate(&PhantomConfig::new(3, 16, 40, 4)).unwrap();
        let vox = 16f64.powi(3);
        let (a, b): (Vec<f64>, Vec<f64>) = ds
            .subjects
            .iter()
            .map(|s| {
                let v = |t: usize| 1000.0 * s.region_volumes[t] as f64 / vox;
                (0.5 * v(0) + 0.8 * v(2), s.targets["strength"])
            })
            .unzip();
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!(r > 0.9, "r = {r}");
        let decoy: Vec<f64> = ds.subjects.iter().map(|s| s.targets["decoy"]).collect();
        assert!(decoy.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(phantom_generate(&PhantomConfig::new(0, 2, 4, 4)).is_err());
        assert!(phantom_generate(&PhantomConfig::new(0, 16, 4, 0)).is_err());
        assert!(phantom_generate(&PhantomConfig { n_test: 4, ..PhantomConfig::new(0, 16, 4, 4) }).is_err());
    }
}
