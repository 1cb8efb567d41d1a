use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volio::{LabelVolume, Mask, Volume};

/// Fixed colors per label; labels past 16 wrap around.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

const LABEL_COLORS: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

const BACKGROUND: [u8; 3] = [0, 0, 0];

impl Default for Palette {
    fn default() -> Self {
        Self {
            colors: LABEL_COLORS.to_vec(),
        }
    }
}

impl Palette {
    pub fn color(&self, label: usize) -> [u8; 3] {
        self.colors[label % self.colors.len()]
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }
}

/// Blue → cyan → yellow → red ramp for `t ∈ [0, 1]`.
fn heat(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let stops = [[0.0, 0.0, 0.6], [0.0, 0.8, 0.9], [1.0, 0.9, 0.1], [0.85, 0.05, 0.05]];
    let x = t * 3.0;
    let i = (x as usize).min(2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = ((stops[i][c] * (1.0 - f) + stops[i + 1][c] * f) * 255.0).round() as u8;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Fixed depth index; the image is H×W.
    Axial,
    /// Fixed height index; the image is D×W.
    Coronal,
    /// Fixed width index; the image is D×H.
    Sagittal,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" | "axial" => Ok(Axis::Axial),
            "1" | "coronal" => Ok(Axis::Coronal),
            "2" | "sagittal" => Ok(Axis::Sagittal),
            _ => Err(Error::Invalid(format!("unknown axis `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(p: &Path) -> Result<Self> {
        match p.extension().and_then(|e| e.to_str()) {
            Some("png") => Ok(Self::Png),
            Some("ppm") => Ok(Self::Ppm),
            _ => Err(Error::Invalid(format!("{}: expected a .png or .ppm path", p.display()))),
        }
    }
}

pub enum SliceSource<'a> {
    /// Grayscale, min-max scaled over the slice.
    Intensity(&'a Volume),
    Labels(&'a LabelVolume, &'a Palette),
    /// Scalar map over the foreground, min-max scaled over the slice.
    Overlay(&'a Volume, &'a Mask),
}

impl SliceSource<'_> {
    fn extent(&self) -> [usize; 3] {
        match self {
            SliceSource::Intensity(v) | SliceSource::Overlay(v, _) => v.extent(),
            SliceSource::Labels(l, _) => l.extent(),
        }
    }
}

/// Voxel indices of one slice in row-major image order, plus image size.
fn slice_indices(extent: [usize; 3], axis: Axis, index: usize) -> Result<(usize, usize, Vec<usize>)> {
    let [d, h, w] = extent;
    let fixed = match axis {
        Axis::Axial => d,
        Axis::Coronal => h,
        Axis::Sagittal => w,
    };
    if index >= fixed {
        return Err(Error::Invalid(format!("slice {index} outside extent {fixed} along {axis:?}")));
    }
    let at = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let (rows, cols) = match axis {
        Axis::Axial => (h, w),
        Axis::Coronal => (d, w),
        Axis::Sagittal => (d, h),
    };
    let mut idx = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            idx.push(match axis {
                Axis::Axial => at(index, r, c),
                Axis::Coronal => at(r, index, c),
                Axis::Sagittal => at(r, c, index),
            });
        }
    }
    Ok((cols, rows, idx))
}

fn min_max(values: impl Iterator<Item = f32>) -> (f32, f32) {
    values.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// RGB pixels of one slice: `(width, height, bytes)`.
pub fn slice_rgb(src: &SliceSource<'_>, axis: Axis, index: usize) -> Result<(usize, usize, Vec<u8>)> {
    let (width, height, idx) = slice_indices(src.extent(), axis, index)?;
    let mut rgb = Vec::with_capacity(idx.len() * 3);
    match src {
        SliceSource::Intensity(v) => {
            let (lo, hi) = min_max(idx.iter().map(|&j| v.data()[j]));
            for &j in &idx {
                let t = if hi > lo { (v.data()[j] - lo) / (hi - lo) } else { 0.0 };
                let g = (t * 255.0).round() as u8;
                rgb.extend_from_slice(&[g, g, g]);
            }
        }
        SliceSource::Labels(l, palette) => {
            for &j in &idx {
                rgb.extend_from_slice(&l.label(j).map_or(BACKGROUND, |c| palette.color(c)));
            }
        }
        SliceSource::Overlay(v, m) => {
            if v.extent() != m.extent() {
                return Err(Error::shape("render", "overlay and mask extents differ"));
            }
            let (lo, hi) = min_max(idx.iter().filter(|&&j| m.get(j)).map(|&j| v.data()[j]));
            for &j in &idx {
                let c = if !m.get(j) {
                    BACKGROUND
                } else if hi > lo {
                    heat(((v.data()[j] - lo) / (hi - lo)) as f64)
                } else {
                    heat(1.0)
                };
                rgb.extend_from_slice(&c);
            }
        }
    }
    Ok((width, height, rgb))
}

pub fn encode(width: usize, height: usize, rgb: &[u8], format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Ppm => {
            let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
            out.extend_from_slice(rgb);
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(BufWriter::new(&mut out), width as u32, height as u32);
                enc.set_color(png::ColorType::Rgb);
                enc.set_depth(png::BitDepth::Eight);
                let err = |e: png::EncodingError| Error::Invalid(format!("png encoding: {e}"));
                let mut w = enc.write_header().map_err(err)?;
                w.write_image_data(rgb).map_err(err)?;
            }
            Ok(out)
        }
    }
}

/// Render one orthogonal slice to `out`; the format follows the extension.
pub fn render_slice(src: &SliceSource<'_>, axis: Axis, index: usize, out: &Path) -> Result<()> {
    let format = ImageFormat::from_path(out)?;
    let (w, h, rgb) = slice_rgb(src, axis, index)?;
    let bytes = encode(w, h, &rgb, format)?;
    fs::write(out, bytes).map_err(|e| Error::io(out, e))
}

/// Voxel value = score of its partition; background 0.
pub fn importance_overlay(labels: &LabelVolume, scores: &[f64]) -> Result<Volume> {
    let data = labels
        .data()
        .iter()
        .map(|&l| {
            if l < 0 {
                Ok(0.0)
            } else {
                scores
                    .get(l as usize)
                    .map(|&s| s as f32)
                    .ok_or_else(|| Error::Invalid(format!("no score for label {l}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Volume::new(labels.extent(), data)
}
