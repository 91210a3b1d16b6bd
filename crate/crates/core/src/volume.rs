//! Scalar volumes: RAW + JSON sidecar loading, min-max normalization and
//! synthetic phantoms used as test fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("raw data has {actual} bytes, expected {expected} for the declared dims and depth")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("unsupported sample depth: {0} bits (expected 8 or 16)")]
    UnsupportedDepth(u8),
    #[error("invalid volume metadata: {0}")]
    InvalidMeta(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed sidecar: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    #[default]
    Little,
    Big,
}

/// Geometry and storage layout of a volume.
///
/// Serializes to exactly the sidecar schema
/// `{"dims":[nx,ny,nz],"spacing":[sx,sy,sz],"bits":8|16,"byte_order":"little"|"big"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub bits: u8,
    #[serde(default)]
    pub byte_order: ByteOrder,
    #[serde(skip)]
    pub source_path: String,
}

impl VolumeMeta {
    pub fn new(dims: [usize; 3]) -> Self {
        Self {
            dims,
            spacing: [1.0; 3],
            bits: 8,
            byte_order: ByteOrder::Little,
            source_path: String::new(),
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(VolumeError::InvalidMeta(format!(
                "every dimension must be at least 2, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::InvalidMeta(format!(
                "spacing must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        if self.bits != 8 && self.bits != 16 {
            return Err(VolumeError::UnsupportedDepth(self.bits));
        }
        Ok(())
    }

    /// Reads a JSON sidecar.
    pub fn from_sidecar(path: &Path) -> Result<Self, VolumeError> {
        let text = fs::read_to_string(path).map_err(|source| VolumeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let meta: VolumeMeta =
            serde_json::from_str(&text).map_err(|source| VolumeError::Sidecar {
                path: path.to_path_buf(),
                source,
            })?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_sidecar_json(&self) -> String {
        serde_json::to_string(self).expect("volume metadata always serializes")
    }
}

/// Immutable normalized scalar field, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    meta: VolumeMeta,
    intensities: Vec<f32>,
    raw_min: f64,
    raw_max: f64,
}

impl Volume {
    /// Builds a volume from samples already expressed in `[0, 1]`.
    pub fn from_intensities(meta: VolumeMeta, intensities: Vec<f32>) -> Result<Self, VolumeError> {
        meta.validate()?;
        if intensities.len() != meta.voxel_count() {
            return Err(VolumeError::SizeMismatch {
                expected: meta.voxel_count(),
                actual: intensities.len(),
            });
        }
        if let Some(bad) = intensities.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VolumeError::InvalidMeta(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            meta,
            intensities,
            raw_min: 0.0,
            raw_max: 1.0,
        })
    }

    /// Min-max normalizes arbitrary raw samples. A constant field maps to 0.
    pub fn from_raw_samples(meta: VolumeMeta, raw: &[f64]) -> Result<Self, VolumeError> {
        meta.validate()?;
        if raw.len() != meta.voxel_count() {
            return Err(VolumeError::SizeMismatch {
                expected: meta.voxel_count(),
                actual: raw.len(),
            });
        }
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let intensities = raw
            .iter()
            .map(|&v| {
                if range > 0.0 {
                    ((v - lo) / range) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            meta,
            intensities,
            raw_min: lo,
            raw_max: hi,
        })
    }

    pub fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    pub fn dims(&self) -> [usize; 3] {
        self.meta.dims
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn raw_min(&self) -> f64 {
        self.raw_min
    }

    pub fn raw_max(&self) -> f64 {
        self.raw_max
    }

    #[inline]
    pub fn linear_index(&self, [x, y, z]: [usize; 3]) -> usize {
        let [nx, ny, _] = self.meta.dims;
        x + nx * (y + ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.meta.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn contains(&self, [x, y, z]: [usize; 3]) -> bool {
        let [nx, ny, nz] = self.meta.dims;
        x < nx && y < ny && z < nz
    }

    #[inline]
    pub fn at(&self, p: [usize; 3]) -> f32 {
        self.intensities[self.linear_index(p)]
    }

    /// Re-quantizes to the original integer depth. Only meaningful for
    /// volumes that came from [`load_raw`].
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let range = self.raw_max - self.raw_min;
        let sample = |v: f32| (self.raw_min + f64::from(v) * range).round();
        match self.meta.bits {
            8 => self.intensities.iter().map(|&v| sample(v) as u8).collect(),
            _ => {
                let mut out = Vec::with_capacity(self.len() * 2);
                for &v in &self.intensities {
                    let s = sample(v) as u16;
                    match self.meta.byte_order {
                        ByteOrder::Little => out.extend_from_slice(&s.to_le_bytes()),
                        ByteOrder::Big => out.extend_from_slice(&s.to_be_bytes()),
                    }
                }
                out
            }
        }
    }
}

/// Decodes headerless RAW samples and min-max normalizes them.
pub fn load_raw(meta: VolumeMeta, bytes: &[u8]) -> Result<Volume, VolumeError> {
    if meta.bits != 8 && meta.bits != 16 {
        return Err(VolumeError::UnsupportedDepth(meta.bits));
    }
    meta.validate()?;
    let width = usize::from(meta.bits / 8);
    let expected = meta.voxel_count() * width;
    if bytes.len() != expected {
        return Err(VolumeError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let raw: Vec<u16> = match (meta.bits, meta.byte_order) {
        (8, _) => bytes.iter().map(|&b| u16::from(b)).collect(),
        (_, ByteOrder::Little) => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect(),
        (_, ByteOrder::Big) => bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
    };
    let lo = raw.iter().copied().min().unwrap_or(0);
    let hi = raw.iter().copied().max().unwrap_or(0);
    let range = f64::from(hi - lo);
    let intensities = raw
        .iter()
        .map(|&v| {
            if hi > lo {
                (f64::from(v - lo) / range) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(Volume {
        meta,
        intensities,
        raw_min: f64::from(lo),
        raw_max: f64::from(hi),
    })
}

/// Loads `raw_path` described by the sidecar at `meta_path`.
pub fn load_raw_file(raw_path: &Path, meta_path: &Path) -> Result<Volume, VolumeError> {
    let mut meta = VolumeMeta::from_sidecar(meta_path)?;
    meta.source_path = raw_path.display().to_string();
    let bytes = fs::read(raw_path).map_err(|source| VolumeError::Io {
        path: raw_path.to_path_buf(),
        source,
    })?;
    load_raw(meta, &bytes)
}

/// Synthetic fixture shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    Constant { value: f32 },
    /// Raw value equal to the x index, normalized to `x / (nx - 1)`.
    RampX,
    /// Two disjoint boxes of the given intensities on a zero background.
    TwoBlobs { first: f32, second: f32 },
    /// Raw value `a * x^2`; rescaled by its peak only when that exceeds 1.
    QuadraticX { a: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobLabel {
    Background,
    First,
    Second,
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume,
    /// Ground truth for [`PhantomKind::TwoBlobs`]; `None` for other kinds.
    pub labels: Option<Vec<BlobLabel>>,
}

/// Half-open voxel ranges of the two boxes in a two-blob phantom.
pub fn two_blob_boxes(dims: [usize; 3]) -> [[std::ops::Range<usize>; 3]; 2] {
    let part = |n: usize, a: usize, b: usize| (n * a / 8)..(n * b / 8);
    let [nx, ny, nz] = dims;
    [
        [part(nx, 1, 3), part(ny, 2, 6), part(nz, 2, 6)],
        [part(nx, 5, 7), part(ny, 2, 6), part(nz, 2, 6)],
    ]
}

pub fn make_phantom(kind: &PhantomKind, dims: [usize; 3]) -> Result<Phantom, VolumeError> {
    let meta = VolumeMeta::new(dims);
    meta.validate()?;
    let n = meta.voxel_count();
    let [nx, ny, _] = dims;
    let coords = |i: usize| [i % nx, (i / nx) % ny, i / (nx * ny)];
    match *kind {
        PhantomKind::Constant { value } => Ok(Phantom {
            volume: Volume::from_intensities(meta, vec![value; n])?,
            labels: None,
        }),
        PhantomKind::RampX => {
            let raw: Vec<f64> = (0..n).map(|i| coords(i)[0] as f64).collect();
            Ok(Phantom {
                volume: Volume::from_raw_samples(meta, &raw)?,
                labels: None,
            })
        }
        PhantomKind::QuadraticX { a } => {
            let raw: Vec<f64> = (0..n)
                .map(|i| {
                    let x = coords(i)[0] as f64;
                    a * x * x
                })
                .collect();
            let peak = raw.iter().copied().fold(0.0, f64::max);
            let volume = if peak <= 1.0 && a >= 0.0 {
                Volume::from_intensities(meta, raw.iter().map(|&v| v as f32).collect())?
            } else {
                Volume::from_raw_samples(meta, &raw)?
            };
            Ok(Phantom {
                volume,
                labels: None,
            })
        }
        PhantomKind::TwoBlobs { first, second } => {
            let boxes = two_blob_boxes(dims);
            let inside = |b: &[std::ops::Range<usize>; 3], p: [usize; 3]| {
                (0..3).all(|a| b[a].contains(&p[a]))
            };
            let labels: Vec<BlobLabel> = (0..n)
                .map(|i| {
                    let p = coords(i);
                    if inside(&boxes[0], p) {
                        BlobLabel::First
                    } else if inside(&boxes[1], p) {
                        BlobLabel::Second
                    } else {
                        BlobLabel::Background
                    }
                })
                .collect();
            let intensities = labels
                .iter()
                .map(|l| match l {
                    BlobLabel::First => first,
                    BlobLabel::Second => second,
                    BlobLabel::Background => 0.0,
                })
                .collect();
            Ok(Phantom {
                volume: Volume::from_intensities(meta, intensities)?,
                labels: Some(labels),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_volume_normalizes_to_zero() {
        let v = load_raw(VolumeMeta::new([2, 2, 2]), &[7; 8]).unwrap();
        assert!(v.intensities().iter().all(|&x| x == 0.0));
        assert_eq!((v.raw_min(), v.raw_max()), (7.0, 7.0));
    }

    #[test]
    fn ramp_bytes_normalize_affinely() {
        let bytes: Vec<u8> = (0..8).collect();
        let v = load_raw(VolumeMeta::new([2, 2, 2]), &bytes).unwrap();
        for (i, &x) in v.intensities().iter().enumerate() {
            assert!((f64::from(x) - i as f64 / 7.0).abs() < 1e-7);
        }
        assert_eq!(v.intensities()[7], 1.0);
    }

    #[test]
    fn size_mismatch_and_depth_errors() {
        assert!(matches!(
            load_raw(VolumeMeta::new([2, 2, 2]), &[0; 7]),
            Err(VolumeError::SizeMismatch {
                expected: 8,
                actual: 7
            })
        ));
        let mut meta = VolumeMeta::new([2, 2, 2]);
        meta.bits = 12;
        assert!(matches!(
            load_raw(meta, &[0; 12]),
            Err(VolumeError::UnsupportedDepth(12))
        ));
    }

    #[test]
    fn foot_sized_buffer_yields_full_voxel_count() {
        // Published Foot RAW: 256 * 256 * 256 one-byte samples.
        let bytes = vec![0u8; 16_777_216];
        let v = load_raw(VolumeMeta::new([256, 256, 256]), &bytes).unwrap();
        assert_eq!(v.len(), 16_777_216);
    }

    #[test]
    fn sixteen_bit_honors_byte_order() {
        let mut meta = VolumeMeta::new([2, 2, 2]);
        meta.bits = 16;
        meta.byte_order = ByteOrder::Big;
        let mut bytes = vec![0u8; 16];
        bytes[14] = 0x01; // last sample = 0x0100 big-endian
        let v = load_raw(meta.clone(), &bytes).unwrap();
        assert_eq!(v.raw_max(), 256.0);
        meta.byte_order = ByteOrder::Little;
        let v = load_raw(meta, &bytes).unwrap();
        assert_eq!(v.raw_max(), 1.0);
    }

    #[test]
    fn degenerate_dims_rejected() {
        assert!(matches!(
            load_raw(VolumeMeta::new([1, 2, 2]), &[0; 4]),
            Err(VolumeError::InvalidMeta(_))
        ));
    }

    #[test]
    fn sidecar_schema_is_exact() {
        let mut meta = VolumeMeta::new([256, 256, 256]);
        meta.source_path = "ignored".into();
        assert_eq!(
            meta.to_sidecar_json(),
            r#"{"dims":[256,256,256],"spacing":[1.0,1.0,1.0],"bits":8,"byte_order":"little"}"#
        );
        let parsed: VolumeMeta = serde_json::from_str(
            r#"{"dims":[4,5,6],"spacing":[0.5,0.5,1.2],"bits":16,"byte_order":"big"}"#,
        )
        .unwrap();
        assert_eq!(parsed.dims, [4, 5, 6]);
        assert_eq!(parsed.byte_order, ByteOrder::Big);
    }

    #[test]
    fn phantoms() {
        let c = make_phantom(&PhantomKind::Constant { value: 0.5 }, [8, 8, 8]).unwrap();
        assert!(c.volume.intensities().iter().all(|&v| v == 0.5));

        let r = make_phantom(&PhantomKind::RampX, [16, 16, 16]).unwrap();
        for x in 1..16 {
            let d = r.volume.at([x, 3, 4]) - r.volume.at([x - 1, 3, 4]);
            assert!((f64::from(d) - 1.0 / 15.0).abs() < 1e-6);
        }

        let b = make_phantom(
            &PhantomKind::TwoBlobs {
                first: 0.2,
                second: 0.9,
            },
            [32, 32, 32],
        )
        .unwrap();
        let labels = b.labels.unwrap();
        let mut seen = [0usize; 3];
        for (i, l) in labels.iter().enumerate() {
            let v = b.volume.intensities()[i];
            match l {
                BlobLabel::Background => {
                    seen[0] += 1;
                    assert_eq!(v, 0.0)
                }
                BlobLabel::First => {
                    seen[1] += 1;
                    assert_eq!(v, 0.2)
                }
                BlobLabel::Second => {
                    seen[2] += 1;
                    assert_eq!(v, 0.9)
                }
            }
        }
        assert_eq!(seen[1], 8 * 16 * 16);
        assert_eq!(seen[2], 8 * 16 * 16);
    }

    #[test]
    fn raw_round_trip_16_bit() {
        let mut meta = VolumeMeta::new([3, 2, 2]);
        meta.bits = 16;
        let bytes: Vec<u8> = [5u16, 900, 17, 65535, 0, 3, 3, 3, 12, 40000, 1, 2]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let v = load_raw(meta.clone(), &bytes).unwrap();
        assert_eq!(v.to_raw_bytes(), bytes);
        let again = load_raw(meta, &v.to_raw_bytes()).unwrap();
        assert_eq!(again.intensities(), v.intensities());
    }
}
