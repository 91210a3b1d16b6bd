//! Per-voxel feature vectors: normalized position, intensity, gradient
//! magnitude and Laplacian magnitude.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::volume::Volume;

pub const FEATURE_DIM: usize = 6;

pub const PX: usize = 0;
pub const PY: usize = 1;
pub const PZ: usize = 2;
pub const INTENSITY: usize = 3;
pub const GRAD_MAG: usize = 4;
pub const SECOND_DERIV: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("voxel index {index:?} outside volume dims {dims:?}")]
    IndexOutOfBounds { index: [usize; 3], dims: [usize; 3] },
    #[error("channel weights must be finite, non-negative and not all zero: {0:?}")]
    InvalidWeights([f64; FEATURE_DIM]),
    #[error("sampling stride must be at least 1")]
    ZeroStride,
}

/// `(px, py, pz, intensity, grad_mag, second_deriv)`, every channel in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f32; FEATURE_DIM]);

impl FeatureVector {
    pub fn position(&self) -> [f32; 3] {
        [self.0[PX], self.0[PY], self.0[PZ]]
    }
    pub fn intensity(&self) -> f32 {
        self.0[INTENSITY]
    }
    pub fn grad_mag(&self) -> f32 {
        self.0[GRAD_MAG]
    }
    pub fn second_deriv(&self) -> f32 {
        self.0[SECOND_DERIV]
    }
}

/// Per-channel scale factors used by every distance computation:
/// `d^2 = sum_c w_c * (a_c - b_c)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelWeights(pub [f64; FEATURE_DIM]);

impl Default for ChannelWeights {
    fn default() -> Self {
        Self([0.5, 0.5, 0.5, 1.0, 1.0, 1.0])
    }
}

impl ChannelWeights {
    pub fn uniform() -> Self {
        Self([1.0; FEATURE_DIM])
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let ok = self.0.iter().all(|w| w.is_finite() && *w >= 0.0) && self.0.iter().any(|w| *w > 0.0);
        if ok {
            Ok(())
        } else {
            Err(FeatureError::InvalidWeights(self.0))
        }
    }

    #[inline]
    pub fn distance_sq(&self, v: &FeatureVector, w: &[f64; FEATURE_DIM]) -> f64 {
        let mut acc = 0.0;
        for c in 0..FEATURE_DIM {
            let d = f64::from(v.0[c]) - w[c];
            acc += self.0[c] * d * d;
        }
        acc
    }

    #[inline]
    pub fn distance_sq_weights(&self, a: &[f64; FEATURE_DIM], b: &[f64; FEATURE_DIM]) -> f64 {
        let mut acc = 0.0;
        for c in 0..FEATURE_DIM {
            let d = a[c] - b[c];
            acc += self.0[c] * d * d;
        }
        acc
    }
}

fn check_index(volume: &Volume, index: [usize; 3]) -> Result<(), FeatureError> {
    if volume.contains(index) {
        Ok(())
    } else {
        Err(FeatureError::IndexOutOfBounds {
            index,
            dims: volume.dims(),
        })
    }
}

/// Central differences in the interior, one-sided at the faces.
pub fn gradient(volume: &Volume, index: [usize; 3]) -> Result<[f64; 3], FeatureError> {
    check_index(volume, index)?;
    Ok(gradient_unchecked(volume, index))
}

/// `|Δxx + Δyy + Δzz|`; an axis contributes 0 at its boundary faces.
pub fn second_derivative(volume: &Volume, index: [usize; 3]) -> Result<f64, FeatureError> {
    check_index(volume, index)?;
    Ok(laplacian_unchecked(volume, index).abs())
}

#[inline]
fn step(p: [usize; 3], axis: usize, forward: bool) -> [usize; 3] {
    let mut q = p;
    if forward {
        q[axis] += 1;
    } else {
        q[axis] -= 1;
    }
    q
}

fn gradient_unchecked(volume: &Volume, p: [usize; 3]) -> [f64; 3] {
    let dims = volume.dims();
    let f = |q: [usize; 3]| f64::from(volume.at(q));
    let mut g = [0.0; 3];
    for axis in 0..3 {
        let i = p[axis];
        let last = dims[axis] - 1;
        g[axis] = if i == 0 {
            f(step(p, axis, true)) - f(p)
        } else if i == last {
            f(p) - f(step(p, axis, false))
        } else {
            (f(step(p, axis, true)) - f(step(p, axis, false))) / 2.0
        };
    }
    g
}

fn laplacian_unchecked(volume: &Volume, p: [usize; 3]) -> f64 {
    let dims = volume.dims();
    let f = |q: [usize; 3]| f64::from(volume.at(q));
    let center = f(p);
    let mut sum = 0.0;
    for axis in 0..3 {
        let i = p[axis];
        if i == 0 || i == dims[axis] - 1 {
            continue;
        }
        sum += f(step(p, axis, true)) - 2.0 * center + f(step(p, axis, false));
    }
    sum
}

/// Feature vectors for every voxel plus the bounds used to normalize them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    dims: [usize; 3],
    vectors: Vec<FeatureVector>,
    norm_bounds: [(f64, f64); FEATURE_DIM],
    weights: ChannelWeights,
}

impl FeatureField {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }
    pub fn len(&self) -> usize {
        self.vectors.len()
    }
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
    pub fn norm_bounds(&self) -> &[(f64, f64); FEATURE_DIM] {
        &self.norm_bounds
    }
    pub fn weights(&self) -> ChannelWeights {
        self.weights
    }
}

fn normalize(v: f64, (lo, hi): (f64, f64)) -> f32 {
    if hi > lo {
        ((v - lo) / (hi - lo)) as f32
    } else {
        0.0
    }
}

pub fn build_feature_field(
    volume: &Volume,
    weights: ChannelWeights,
) -> Result<FeatureField, FeatureError> {
    weights.validate()?;
    let dims = volume.dims();
    // Raw (gradient magnitude, |laplacian|) per voxel.
    let raw: Vec<(f64, f64)> = par::map_indices(volume.len(), |i| {
        let p = volume.coords(i);
        let [gx, gy, gz] = gradient_unchecked(volume, p);
        (
            (gx * gx + gy * gy + gz * gz).sqrt(),
            laplacian_unchecked(volume, p).abs(),
        )
    });
    let bounds = |sel: fn(&(f64, f64)) -> f64| {
        raw.iter()
            .map(sel)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    };
    let grad_bounds = bounds(|r| r.0);
    let lap_bounds = bounds(|r| r.1);
    let intensity_bounds = volume
        .intensities()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(f64::from(v)), hi.max(f64::from(v)))
        });

    let scale = dims.map(|d| (d - 1) as f64);
    let intensities = volume.intensities();
    let vectors = par::map_indices(volume.len(), |i| {
        let p = volume.coords(i);
        FeatureVector([
            (p[0] as f64 / scale[0]) as f32,
            (p[1] as f64 / scale[1]) as f32,
            (p[2] as f64 / scale[2]) as f32,
            intensities[i],
            normalize(raw[i].0, grad_bounds),
            normalize(raw[i].1, lap_bounds),
        ])
    });
    Ok(FeatureField {
        dims,
        vectors,
        norm_bounds: [
            (0.0, scale[0]),
            (0.0, scale[1]),
            (0.0, scale[2]),
            intensity_bounds,
            grad_bounds,
            lap_bounds,
        ],
        weights,
    })
}

/// Every `stride`-th voxel of a seeded permutation of the voxel order.
pub fn sample_features(
    field: &FeatureField,
    stride: usize,
    seed: u64,
) -> Result<Vec<(usize, FeatureVector)>, FeatureError> {
    if stride == 0 {
        return Err(FeatureError::ZeroStride);
    }
    let mut order: Vec<u32> = (0..field.len() as u32).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .into_iter()
        .step_by(stride)
        .map(|i| (i as usize, field.vectors[i as usize]))
        .collect())
}

/// Stride giving roughly `target` samples out of `voxels`.
pub fn stride_for_target(voxels: usize, target: usize) -> usize {
    ((voxels as f64 / target.max(1) as f64).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_phantom, BlobLabel, PhantomKind, VolumeMeta};
    use rand::Rng;

    fn phantom(kind: PhantomKind, n: usize) -> Volume {
        make_phantom(&kind, [n, n, n]).unwrap().volume
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let v = phantom(PhantomKind::Constant { value: 0.5 }, 8);
        assert_eq!(gradient(&v, [3, 4, 5]).unwrap(), [0.0; 3]);
        for i in 0..v.len() {
            assert_eq!(second_derivative(&v, v.coords(i)).unwrap(), 0.0);
        }
        let field = build_feature_field(&v, ChannelWeights::default()).unwrap();
        assert!(field
            .vectors()
            .iter()
            .all(|f| f.grad_mag() == 0.0 && f.second_deriv() == 0.0));
    }

    #[test]
    fn ramp_slope_and_zero_laplacian() {
        let v = phantom(PhantomKind::RampX, 16);
        let g = gradient(&v, [7, 7, 7]).unwrap();
        assert!((g[0] - 1.0 / 15.0).abs() < 1e-7);
        assert_eq!(&g[1..], &[0.0, 0.0]);
        assert!(second_derivative(&v, [7, 7, 7]).unwrap() < 1e-7);
        // one-sided at the faces
        let g0 = gradient(&v, [0, 0, 0]).unwrap();
        assert!((g0[0] - 1.0 / 15.0).abs() < 1e-7);
    }

    #[test]
    fn quadratic_second_difference() {
        let v = phantom(PhantomKind::QuadraticX { a: 0.01 }, 8);
        let s = second_derivative(&v, [4, 3, 3]).unwrap();
        assert!((s - 0.02).abs() < 1e-6, "{s}");
    }

    #[test]
    fn out_of_bounds_index() {
        let v = phantom(PhantomKind::RampX, 4);
        assert!(matches!(
            gradient(&v, [4, 0, 0]),
            Err(FeatureError::IndexOutOfBounds { .. })
        ));
        assert!(second_derivative(&v, [0, 0, 9]).is_err());
    }

    #[test]
    fn position_endpoints() {
        let v = phantom(PhantomKind::RampX, 5);
        let f = build_feature_field(&v, ChannelWeights::default()).unwrap();
        assert_eq!(f.vectors()[0].position(), [0.0; 3]);
        assert_eq!(f.vectors()[f.len() - 1].position(), [1.0; 3]);
    }

    /// Straightforward per-voxel re-derivation with explicit neighbour reads.
    fn oracle(values: &[f32], n: usize, x: usize, y: usize, z: usize) -> ([f64; 3], f64) {
        let at = |x: usize, y: usize, z: usize| f64::from(values[x + n * (y + n * z)]);
        let c = at(x, y, z);
        let d1 = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
            (Some(l), Some(h)) => (h - l) / 2.0,
            (None, Some(h)) => h - c,
            (Some(l), None) => c - l,
            (None, None) => unreachable!(),
        };
        let d2 = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
            (Some(l), Some(h)) => h - 2.0 * c + l,
            _ => 0.0,
        };
        let xs = (x.checked_sub(1).map(|x| at(x, y, z)), (x + 1 < n).then(|| at(x + 1, y, z)));
        let ys = (y.checked_sub(1).map(|y| at(x, y, z)), (y + 1 < n).then(|| at(x, y + 1, z)));
        let zs = (z.checked_sub(1).map(|z| at(x, y, z)), (z + 1 < n).then(|| at(x, y, z + 1)));
        (
            [d1(xs.0, xs.1), d1(ys.0, ys.1), d1(zs.0, zs.1)],
            (d2(xs.0, xs.1) + d2(ys.0, ys.1) + d2(zs.0, zs.1)).abs(),
        )
    }

    #[test]
    fn derivatives_match_pointwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let values: Vec<f32> = (0..125).map(|_| rng.random::<f32>()).collect();
            let v = Volume::from_intensities(VolumeMeta::new([5, 5, 5]), values.clone()).unwrap();
            for z in 0..5 {
                for y in 0..5 {
                    for x in 0..5 {
                        let (g, s) = oracle(&values, 5, x, y, z);
                        assert_eq!(gradient(&v, [x, y, z]).unwrap(), g);
                        assert_eq!(second_derivative(&v, [x, y, z]).unwrap(), s);
                    }
                }
            }
        }
    }

    #[test]
    fn blob_interiors_share_feature_triples() {
        let p = make_phantom(
            &PhantomKind::TwoBlobs {
                first: 0.2,
                second: 0.9,
            },
            [32, 32, 32],
        )
        .unwrap();
        let labels = p.labels.unwrap();
        let f = build_feature_field(&p.volume, ChannelWeights::default()).unwrap();
        let boxes = crate::volume::two_blob_boxes([32, 32, 32]);
        for (blob, label) in [BlobLabel::First, BlobLabel::Second].into_iter().enumerate() {
            // interior = at least two voxels away from every face of the box
            let interior = |q: [usize; 3]| {
                (0..3).all(|a| q[a] >= boxes[blob][a].start + 2 && q[a] + 2 < boxes[blob][a].end)
            };
            let mut triples = Vec::new();
            for i in 0..f.len() {
                let q = p.volume.coords(i);
                if labels[i] == label && interior(q) {
                    let v = f.vectors()[i];
                    triples.push((v.intensity(), v.grad_mag(), v.second_deriv()));
                }
            }
            assert!(!triples.is_empty());
            assert!(triples.iter().all(|t| *t == triples[0]));
        }
    }

    #[test]
    fn sampling_counts_and_determinism() {
        let v = phantom(PhantomKind::RampX, 4);
        let f = build_feature_field(&v, ChannelWeights::default()).unwrap();
        let all = sample_features(&f, 1, 3).unwrap();
        assert_eq!(all.len(), 64);
        let mut ids: Vec<usize> = all.iter().map(|s| s.0).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 64);
        assert_eq!(sample_features(&f, 8, 3).unwrap().len(), 8);
        assert_eq!(sample_features(&f, 8, 3).unwrap(), sample_features(&f, 8, 3).unwrap());
        assert_eq!(sample_features(&f, 0, 3), Err(FeatureError::ZeroStride));
    }

    #[test]
    fn weights_validation() {
        assert!(ChannelWeights([0.0; 6]).validate().is_err());
        assert!(ChannelWeights([1.0, -1.0, 0.0, 0.0, 0.0, 0.0]).validate().is_err());
        assert!(ChannelWeights::default().validate().is_ok());
    }

    proptest::proptest! {
        #[test]
        fn channels_stay_in_unit_range(seed in 0u64..1000, n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..n * n * n).map(|_| rng.random::<f32>()).collect();
            let v = Volume::from_intensities(VolumeMeta::new([n, n, n]), values).unwrap();
            let f = build_feature_field(&v, ChannelWeights::default()).unwrap();
            for fv in f.vectors() {
                for c in fv.0 {
                    proptest::prop_assert!((0.0..=1.0).contains(&c));
                }
            }
            proptest::prop_assert_eq!(&f, &build_feature_field(&v, ChannelWeights::default()).unwrap());
        }
    }
}
