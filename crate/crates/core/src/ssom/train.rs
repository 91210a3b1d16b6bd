use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SphericalLattice, SsomError, TrainingParams};
use crate::features::{ChannelWeights, FeatureVector, FEATURE_DIM};

/// Above this node count neighbourhood rows are recomputed per sample instead
/// of being cached for the epoch (the cache is `n^2` floats).
const ROW_CACHE_LIMIT: usize = 2562;

/// Online Kohonen training on the sphere.
///
/// Each epoch visits every sample once in a seeded shuffled order and pulls
/// every node towards it by `eta(t) * exp(-g^2 / (2 sigma(t)^2))`, where `g`
/// is the geodesic angle between the node and the sample's BMU.
pub fn train(
    lattice: &mut SphericalLattice,
    samples: &[FeatureVector],
    params: &TrainingParams,
    channels: &ChannelWeights,
) -> Result<(), SsomError> {
    if samples.is_empty() {
        return Err(SsomError::EmptySampleSet);
    }
    params.validate()?;
    channels
        .validate()
        .map_err(|e| SsomError::InvalidParams(e.to_string()))?;

    let n = lattice.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let cache_rows = n <= ROW_CACHE_LIMIT;
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    let mut scratch = vec![0.0; n];
    // Last epoch's winner per sample: a close start makes the exact search prune more.
    let mut hints = vec![0usize; samples.len()];

    for epoch in 0..params.epochs {
        let eta = params.eta(epoch);
        let sigma = params.sigma(epoch);
        let denom = 2.0 * sigma * sigma;
        order.shuffle(&mut rng);
        if cache_rows {
            rows.clear();
            rows.resize(n, None);
        }
        for &s in &order {
            let v = &samples[s];
            let (winner, _) = lattice.bmu_sq(v, channels, hints[s]);
            hints[s] = winner;
            let kernel: &[f64] = if cache_rows {
                rows[winner].get_or_insert_with(|| neighbourhood_row(lattice, winner, denom))
            } else {
                for (m, h) in scratch.iter_mut().enumerate() {
                    let g = lattice.geodesic(m, winner);
                    *h = (-g * g / denom).exp();
                }
                &scratch
            };
            let x: [f64; FEATURE_DIM] = v.0.map(f64::from);
            for (w, &h) in lattice.weights.iter_mut().zip(kernel) {
                let rate = eta * h;
                if rate == 0.0 {
                    continue;
                }
                for c in 0..FEATURE_DIM {
                    let (lo, hi) = if w[c] < x[c] { (w[c], x[c]) } else { (x[c], w[c]) };
                    w[c] = (w[c] + rate * (x[c] - w[c])).clamp(lo, hi);
                }
            }
        }
    }
    lattice.trained = true;
    lattice.params = Some(params.clone());
    Ok(())
}

fn neighbourhood_row(lattice: &SphericalLattice, center: usize, denom: f64) -> Vec<f64> {
    (0..lattice.len())
        .map(|m| {
            let g = lattice.geodesic(m, center);
            (-g * g / denom).exp()
        })
        .collect()
}
