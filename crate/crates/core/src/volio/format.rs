//! `AAVOL1` volume container.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "AAVOL1\0\0"
//!      8     1  dtype code (1 = f32, 2 = u8, 3 = i32)
//!      9     3  reserved, zero
//!     12    12  D, H, W as u32 little-endian
//!     24    12  voxel spacing (mm) as 3 × f32 little-endian
//!     36     …  voxels, row-major (W fastest), little-endian
//! ```

use std::fs;
use std::path::Path;

use super::{voxel_count, Extent, LabelVolume, Mask, Volume};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"AAVOL1\0\0";
pub const HEADER_LEN: usize = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    U8 = 2,
    I32 = 3,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(DType::F32),
            2 => Some(DType::U8),
            3 => Some(DType::I32),
            _ => None,
        }
    }
}

fn encode(dtype: DType, extent: Extent, spacing: [f32; 3], payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(dtype as u8);
    out.extend_from_slice(&[0; 3]);
    for e in extent {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend(payload);
    out
}

struct Raw<'a> {
    dtype: DType,
    extent: Extent,
    spacing: [f32; 3],
    payload: &'a [u8],
}

fn decode<'a>(path: &Path, bytes: &'a [u8]) -> Result<Raw<'a>> {
    let bad = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
    }
    if bytes[..8] != MAGIC {
        return Err(bad(0, "bad magic".into()));
    }
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| bad(8, format!("unknown dtype code {}", bytes[8])))?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let extent = [u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize];
    if extent.contains(&0) {
        return Err(bad(12, format!("zero extent {extent:?}")));
    }
    let spacing = [f32_at(24), f32_at(28), f32_at(32)];
    let need = voxel_count(extent) * dtype.width();
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < need {
        return Err(bad(
            bytes.len(),
            format!("truncated voxel data: expected {need} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(bad(HEADER_LEN + need, "trailing bytes after voxel data".into()));
    }
    Ok(Raw {
        dtype,
        extent,
        spacing,
        payload,
    })
}

fn read_typed(path: &Path, want: DType) -> Result<(Extent, [f32; 3], Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode(path, &bytes)?;
    if raw.dtype != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 8,
            msg: format!("expected dtype {want:?}, found {:?}", raw.dtype),
        });
    }
    Ok((raw.extent, raw.spacing, raw.payload.to_vec()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let payload = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    write_bytes(path.as_ref(), &encode(DType::F32, v.extent(), v.spacing(), payload))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (extent, spacing, payload) = read_typed(path, DType::F32)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::with_spacing(extent, data, spacing).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: HEADER_LEN as u64,
        msg: e.to_string(),
    })
}

pub fn write_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    write_bytes(path.as_ref(), &encode(DType::U8, m.extent(), [1.0; 3], m.data().to_vec()))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let (extent, _, payload) = read_typed(path, DType::U8)?;
    Mask::new(extent, payload).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: HEADER_LEN as u64,
        msg: e.to_string(),
    })
}

pub fn write_label_volume(path: impl AsRef<Path>, l: &LabelVolume) -> Result<()> {
    let payload = l.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    write_bytes(path.as_ref(), &encode(DType::I32, l.extent(), [1.0; 3], payload))
}

pub fn read_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let (extent, _, payload) = read_typed(path, DType::I32)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVolume::new(extent, data).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: HEADER_LEN as u64,
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..24).map(|i| (i as f32).sin() * 1e-3 + f32::EPSILON * i as f32).collect();
        let v = Volume::with_spacing([2, 3, 4], data, [2.0, 2.0, 1.5]).unwrap();
        let p = dir.path().join("v.aavol");
        write_volume(&p, &v).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back.extent(), v.extent());
        assert_eq!(back.spacing(), v.spacing());
        let bits = |x: &Volume| x.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&v));

        let m = Mask::from_fn([2, 3, 4], |j| j % 3 == 0);
        write_mask(dir.path().join("m"), &m).unwrap();
        assert_eq!(read_mask(dir.path().join("m")).unwrap(), m);

        let l = LabelVolume::new([2, 3, 4], (0..24).map(|i| i % 5 - 1).collect()).unwrap();
        write_label_volume(dir.path().join("l"), &l).unwrap();
        assert_eq!(read_label_volume(dir.path().join("l")).unwrap(), l);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn any_finite_volume_round_trips(
            ext in (1usize..5, 1usize..5, 1usize..5),
            seed in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::SUBNORMAL | proptest::num::f32::ZERO, 64),
            labels in proptest::collection::vec(-1i32..20, 64),
        ) {
            let e = [ext.0, ext.1, ext.2];
            let n = ext.0 * ext.1 * ext.2;
            let dir = tempfile::tempdir().unwrap();
            let v = Volume::new(e, seed[..n].to_vec()).unwrap();
            write_volume(dir.path().join("v"), &v).unwrap();
            let back = read_volume(dir.path().join("v")).unwrap();
            let bits = |x: &Volume| x.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            proptest::prop_assert_eq!(bits(&back), bits(&v));

            let l = LabelVolume::new(e, labels[..n].to_vec()).unwrap();
            write_label_volume(dir.path().join("l"), &l).unwrap();
            proptest::prop_assert_eq!(read_label_volume(dir.path().join("l")).unwrap(), l);

            let m = Mask::from_fn(e, |j| labels[j] >= 0);
            write_mask(dir.path().join("m"), &m).unwrap();
            proptest::prop_assert_eq!(read_mask(dir.path().join("m")).unwrap(), m);
        }
    }

    #[test]
    fn file_size_follows_header_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big");
        write_volume(&p, &Volume::zeros([96, 96, 96])).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), (HEADER_LEN + 4 * 96 * 96 * 96) as u64);
        assert_eq!(HEADER_LEN, 36);
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t");
        write_volume(&p, &Volume::zeros([4, 4, 4])).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        match read_volume(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 3),
            other => panic!("expected format error, got {other:?}"),
        }
        fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { offset: 20, .. })));
    }

    #[test]
    fn bad_magic_and_wrong_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b");
        write_volume(&p, &Volume::zeros([2, 2, 2])).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        assert!(matches!(read_mask(&p), Err(Error::Format { offset: 8, .. })));
        bytes[3] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { offset: 0, .. })));
    }
}
