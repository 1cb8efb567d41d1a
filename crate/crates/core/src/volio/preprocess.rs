use super::{DatasetManifest, Mask, SplitTag, Volume};
use crate::error::{Error, Result};

/// Relative threshold for [`foreground_mask`].
pub const DEFAULT_FOREGROUND_THRESHOLD: f32 = 0.05;

/// Compute the intensity normalization constant (mean over training volumes
/// of each volume's maximum), record it in the manifest and return it with
/// every subject's normalized volume, in manifest order.
///
/// Refuses to run when the manifest already carries a constant.
pub fn normalize_dataset(manifest: &mut DatasetManifest) -> Result<(f64, Vec<Volume>)> {
    if manifest.norm_constant.is_some() {
        return Err(Error::Invalid(
            "dataset is already normalized (norm_constant is set)".into(),
        ));
    }
    let train = manifest.ids(SplitTag::Train);
    if train.is_empty() {
        return Err(Error::Invalid("normalization needs a non-empty training split".into()));
    }
    let mut total = 0.0f64;
    for id in train {
        let v = manifest.load_raw_volume(manifest.subject(id)?)?;
        let m = v.max();
        if m <= 0.0 {
            return Err(Error::Invalid(format!(
                "training volume `{id}` has no positive voxels"
            )));
        }
        total += m as f64;
    }
    let constant = total / train.len() as f64;
    manifest.norm_constant = Some(constant);
    let volumes = manifest
        .subjects
        .iter()
        .map(|s| manifest.load_volume(s))
        .collect::<Result<Vec<_>>>()?;
    Ok((constant, volumes))
}

/// `w_j = 1` iff `x_j > rel_threshold · max(x)`.
pub fn foreground_mask(x: &Volume, rel_threshold: f32) -> Result<Mask> {
    let cut = rel_threshold * x.max();
    let m = Mask::from_fn(x.extent(), |j| x.data()[j] > cut);
    if m.count() == 0 {
        return Err(Error::Invalid("foreground mask is empty".into()));
    }
    Ok(m)
}

/// Mean-downsample by the smallest isotropic integer factor that fits the
/// cube, then zero-pad symmetrically (odd remainders go to the far side).
pub fn resize_to_cube(x: &Volume, target: usize) -> Result<Volume> {
    let e = x.extent();
    let largest = *e.iter().max().unwrap();
    let f = largest.div_ceil(target).max(1);
    if let Some(bad) = e.iter().find(|&&n| n % f != 0) {
        return Err(Error::Invalid(format!(
            "extent {e:?} needs a downsample factor of {f}, which does not divide {bad}; resample the volume first"
        )));
    }
    let small = [e[0] / f, e[1] / f, e[2] / f];
    let mut down = vec![0.0f32; small.iter().product()];
    let norm = 1.0 / (f * f * f) as f32;
    for d in 0..small[0] {
        for h in 0..small[1] {
            for w in 0..small[2] {
                let mut acc = 0.0f32;
                for a in 0..f {
                    for b in 0..f {
                        for c in 0..f {
                            acc += x.data()[x.index(d * f + a, h * f + b, w * f + c)];
                        }
                    }
                }
                down[(d * small[1] + h) * small[2] + w] = acc * norm;
            }
        }
    }
    let lo: Vec<usize> = small.iter().map(|&n| (target - n) / 2).collect();
    let mut out = vec![0.0f32; target * target * target];
    for d in 0..small[0] {
        for h in 0..small[1] {
            let src = &down[(d * small[1] + h) * small[2]..][..small[2]];
            let at = ((d + lo[0]) * target + h + lo[1]) * target + lo[2];
            out[at..at + small[2]].copy_from_slice(src);
        }
    }
    let sp = x.spacing();
    let f32f = f as f32;
    Volume::with_spacing([target; 3], out, [sp[0] * f32f, sp[1] * f32f, sp[2] * f32f])
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::volio::{write_volume, Split, Subject};

    #[test]
    fn mask_threshold_cases() {
        let v = Volume::new([1, 1, 4], vec![0.7; 4]).unwrap();
        assert_eq!(foreground_mask(&v, 0.05).unwrap().count(), 4);

        let v = Volume::new([1, 1, 2], vec![0.1, 0.9]).unwrap();
        assert_eq!(foreground_mask(&v, 0.5).unwrap().data(), &[0, 1]);

        let blob: Vec<f32> = (0..27).map(|j| if j == 13 || j == 4 { 0.8 } else { 0.0 }).collect();
        let v = Volume::new([3, 3, 3], blob.clone()).unwrap();
        let m = foreground_mask(&v, DEFAULT_FOREGROUND_THRESHOLD).unwrap();
        for (j, &b) in blob.iter().enumerate() {
            assert_eq!(m.get(j), b > 0.0);
        }

        assert!(foreground_mask(&Volume::zeros([2, 2, 2]), 0.05).is_err());
    }

    #[test]
    fn resize_identity_downsample_and_pad() {
        let v = Volume::new([2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        assert_eq!(resize_to_cube(&v, 2).unwrap(), v);

        // 4→2 along W: pairs (1,3) average to 2
        let data: Vec<f32> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let v = Volume::new([4, 4, 4], data).unwrap();
        let r = resize_to_cube(&v, 2).unwrap();
        assert!(r.data().iter().all(|&x| x == 2.0));
        assert_eq!(r.spacing(), [2.0; 3]);

        let v = Volume::new([90, 90, 90], vec![1.0; 90 * 90 * 90]).unwrap();
        let r = resize_to_cube(&v, 96).unwrap();
        assert_eq!(r.data()[r.index(2, 50, 50)], 0.0);
        assert_eq!(r.data()[r.index(3, 3, 3)], 1.0);
        assert_eq!(r.data()[r.index(92, 92, 92)], 1.0);
        assert_eq!(r.data()[r.index(93, 50, 50)], 0.0);
    }

    #[test]
    fn resize_rejects_fractional_factor() {
        let v = Volume::new([5, 4, 4], vec![1.0; 80]).unwrap();
        assert!(resize_to_cube(&v, 2).is_err());
    }

    fn manifest_with(dir: &std::path::Path, maxima: &[(&str, f32, bool)]) -> DatasetManifest {
        let mut subjects = vec![];
        let mut split = Split::default();
        for &(id, m, train) in maxima {
            let v = Volume::new([1, 1, 2], vec![m, m / 2.0]).unwrap();
            write_volume(dir.join(format!("{id}.vol")), &v).unwrap();
            subjects.push(Subject {
                id: id.into(),
                volume: format!("{id}.vol").into(),
                mask: format!("{id}.mask").into(),
                tissue: None,
                targets: BTreeMap::new(),
            });
            if train {
                split.train.push(id.into());
            } else {
                split.test.push(id.into());
            }
        }
        DatasetManifest {
            subjects,
            split,
            norm_constant: None,
            base_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn normalization_uses_training_maxima_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest_with(dir.path(), &[("a", 2.0, true), ("b", 4.0, true), ("c", 30.0, false)]);
        let (c, vols) = normalize_dataset(&mut m).unwrap();
        assert_eq!(c, 3.0);
        assert_eq!(m.norm_constant, Some(3.0));
        assert_eq!(vols[2].data()[0], 10.0);
        assert!(normalize_dataset(&mut m).is_err(), "double normalization must be refused");
    }

    #[test]
    fn normalization_rejects_all_zero_training_volume() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest_with(dir.path(), &[("a", 0.0, true)]);
        assert!(normalize_dataset(&mut m).is_err());
    }
}
