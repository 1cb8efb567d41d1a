//! Volumes, masks and label volumes: the on-disk `AAVOL1` container, dataset
//! manifests, intensity preprocessing and the synthetic phantom generator.

mod format;
mod manifest;
mod phantom;
mod preprocess;

use std::sync::OnceLock;

pub use format::{read_label_volume, read_mask, read_volume, write_label_volume, write_mask,
    write_volume, DType, HEADER_LEN, MAGIC};
pub use manifest::{DatasetManifest, Split, SplitTag, Subject};
pub use phantom::{phantom_generate, write_phantom, PhantomConfig, PhantomDataset, PhantomSubject, STRENGTH_TISSUES};
pub use preprocess::{foreground_mask, normalize_dataset, resize_to_cube, DEFAULT_FOREGROUND_THRESHOLD};

use crate::diffengine::{Real, Tensor};
use crate::error::{Error, Result};

/// `(D, H, W)` grid extents.
pub type Extent = [usize; 3];

pub(crate) fn voxel_count(e: Extent) -> usize {
    e[0] * e[1] * e[2]
}

/// Dense scalar field on a 3D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extent: Extent,
    data: Vec<f32>,
    spacing: [f32; 3],
}

impl Volume {
    pub fn new(extent: Extent, data: Vec<f32>) -> Result<Self> {
        Self::with_spacing(extent, data, [1.0; 3])
    }

    pub fn with_spacing(extent: Extent, data: Vec<f32>, spacing: [f32; 3]) -> Result<Self> {
        if extent.contains(&0) {
            return Err(Error::Invalid(format!("zero extent {extent:?}")));
        }
        if voxel_count(extent) != data.len() {
            return Err(Error::Invalid(format!(
                "extent {extent:?} needs {} voxels, got {}",
                voxel_count(extent),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("volume holds non-finite values".into()));
        }
        Ok(Self { extent, data, spacing })
    }

    pub fn zeros(extent: Extent) -> Self {
        Self {
            extent,
            data: vec![0.0; voxel_count(extent)],
            spacing: [1.0; 3],
        }
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.extent[1] + h) * self.extent[2] + w
    }

    /// Copy with every voxel outside `w` set to zero.
    pub fn masked(&self, w: &Mask) -> Result<Volume> {
        if w.extent() != self.extent {
            return Err(Error::shape(
                "mask",
                format!("volume {:?} vs mask {:?}", self.extent, w.extent()),
            ));
        }
        let mut out = self.clone();
        for (v, &m) in out.data.iter_mut().zip(w.data()) {
            if m == 0 {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    /// `1×D×H×W` tensor in the requested precision.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let [d, h, w] = self.extent;
        Tensor::new(
            [1, d, h, w],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
        .expect("extent matches data")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (d, h, w) = t
            .spatial()
            .filter(|_| t.shape()[0] == 1)
            .ok_or_else(|| Error::Invalid(format!("expected 1×D×H×W, got {:?}", t.shape())))?;
        Self::new([d, h, w], t.data().iter().map(|v| v.f64() as f32).collect())
    }
}

/// Binary foreground mask `w`.
#[derive(Clone, Debug)]
pub struct Mask {
    extent: Extent,
    data: Vec<u8>,
    count: OnceLock<usize>,
}

impl PartialEq for Mask {
    fn eq(&self, other: &Self) -> bool {
        self.extent == other.extent && self.data == other.data
    }
}

impl Mask {
    pub fn new(extent: Extent, data: Vec<u8>) -> Result<Self> {
        if voxel_count(extent) != data.len() || extent.contains(&0) {
            return Err(Error::Invalid(format!(
                "mask extent {extent:?} does not match {} values",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            extent,
            data,
            count: OnceLock::new(),
        })
    }

    pub fn from_fn(extent: Extent, f: impl Fn(usize) -> bool) -> Self {
        let data = (0..voxel_count(extent)).map(|j| f(j) as u8).collect();
        Self {
            extent,
            data,
            count: OnceLock::new(),
        }
    }

    pub fn full(extent: Extent) -> Self {
        Self::from_fn(extent, |_| true)
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, j: usize) -> bool {
        self.data[j] != 0
    }

    /// Foreground voxel count `w̄`.
    pub fn count(&self) -> usize {
        *self
            .count
            .get_or_init(|| self.data.iter().map(|&v| v as usize).sum())
    }

    pub fn weights<T: Real>(&self) -> Vec<T> {
        self.data
            .iter()
            .map(|&v| if v != 0 { T::one() } else { T::zero() })
            .collect()
    }
}

/// Integer label per voxel; foreground labels are in `[0, K)`, background
/// voxels carry [`LabelVolume::BACKGROUND`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    extent: Extent,
    data: Vec<i32>,
}

impl LabelVolume {
    pub const BACKGROUND: i32 = -1;

    pub fn new(extent: Extent, data: Vec<i32>) -> Result<Self> {
        if voxel_count(extent) != data.len() || extent.contains(&0) {
            return Err(Error::Invalid(format!(
                "label extent {extent:?} does not match {} values",
                data.len()
            )));
        }
        if data.iter().any(|&v| v < Self::BACKGROUND) {
            return Err(Error::Invalid("labels must be >= -1".into()));
        }
        Ok(Self { extent, data })
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn label(&self, j: usize) -> Option<usize> {
        (self.data[j] >= 0).then_some(self.data[j] as usize)
    }

    /// One past the largest foreground label.
    pub fn num_labels(&self) -> usize {
        self.data.iter().map(|&v| (v + 1) as usize).max().unwrap_or(0)
    }
}
