use serde::{Deserialize, Serialize};

use super::{SphericalLattice, SsomError};
use crate::features::{ChannelWeights, FeatureVector};
use crate::par;

/// Mean distance from each sample to its BMU's weight vector.
pub fn quantization_error(
    lattice: &SphericalLattice,
    samples: &[FeatureVector],
    channels: &ChannelWeights,
) -> Result<f64, SsomError> {
    if samples.is_empty() {
        return Err(SsomError::EmptySampleSet);
    }
    let d = par::map_indices(samples.len(), |i| lattice.bmu(&samples[i], channels).1);
    Ok(d.iter().sum::<f64>() / samples.len() as f64)
}

/// Fraction of samples whose best and second-best nodes are not neighbours.
pub fn topographic_error(
    lattice: &SphericalLattice,
    samples: &[FeatureVector],
    channels: &ChannelWeights,
) -> Result<f64, SsomError> {
    if samples.is_empty() {
        return Err(SsomError::EmptySampleSet);
    }
    let broken = par::map_indices(samples.len(), |i| match lattice.two_best(&samples[i], channels) {
        ((a, _), Some((b, _))) => !lattice.are_adjacent(a, b),
        _ => false,
    });
    Ok(broken.iter().filter(|&&b| b).count() as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UMatrix {
    pub values: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Mean weighted distance from each node to its lattice neighbours, plus a
/// min-max normalized copy (all zeros when every value is equal).
pub fn compute_umatrix(lattice: &SphericalLattice, channels: &ChannelWeights) -> UMatrix {
    let weights = lattice.weights();
    let values: Vec<f64> = (0..lattice.len())
        .map(|n| {
            let adj = lattice.neighbors(n);
            if adj.is_empty() {
                return 0.0;
            }
            let sum: f64 = adj
                .iter()
                .map(|&m| channels.distance_sq_weights(&weights[n], &weights[m as usize]).sqrt())
                .sum();
            sum / adj.len() as f64
        })
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalized = values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect();
    UMatrix { values, normalized }
}
