//! Spherical self-organizing map: icosphere lattice, online competitive
//! training, voxel assignment, U-matrix and quality metrics.

mod assign;
mod lattice;
mod metrics;
pub mod partition;
mod snapshot;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{assign_voxels, VoxelAssignment};
pub use lattice::{icosphere, node_count, SphericalLattice, MAX_LEVEL};
pub use metrics::{compute_umatrix, quantization_error, topographic_error, UMatrix};
pub use snapshot::LatticeSnapshot;
pub use train::train;

#[derive(Debug, Error, PartialEq)]
pub enum SsomError {
    #[error("subdivision level {0} outside 0..={max}", max = MAX_LEVEL)]
    LevelOutOfRange(u32),
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("malformed lattice: {0}")]
    Malformed(String),
}

/// Online training schedule. Radii are geodesic arcs in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub epochs: u32,
    pub eta0: f64,
    pub eta_min: f64,
    pub sigma0: f64,
    pub sigma_min: f64,
    pub seed: u64,
    /// Training subsample stride; `0` picks one that yields about
    /// [`TARGET_SAMPLES`] samples.
    pub stride: usize,
}

pub const TARGET_SAMPLES: usize = 50_000;

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            epochs: 20,
            eta0: 0.5,
            eta_min: 0.01,
            sigma0: std::f64::consts::FRAC_PI_4,
            sigma_min: 0.02,
            seed: 0,
            stride: 0,
        }
    }
}

impl TrainingParams {
    pub fn validate(&self) -> Result<(), SsomError> {
        let bad = |m: String| Err(SsomError::InvalidParams(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.eta_min > 0.0 && self.eta_min <= self.eta0 && self.eta0 <= 1.0) {
            return bad(format!(
                "need 0 < eta_min <= eta0 <= 1, got eta0={} eta_min={}",
                self.eta0, self.eta_min
            ));
        }
        if !(self.sigma_min > 0.0
            && self.sigma_min <= self.sigma0
            && self.sigma0 <= std::f64::consts::PI)
        {
            return bad(format!(
                "need 0 < sigma_min <= sigma0 <= pi, got sigma0={} sigma_min={}",
                self.sigma0, self.sigma_min
            ));
        }
        Ok(())
    }

    fn decay(start: f64, end: f64, epoch: u32, epochs: u32) -> f64 {
        if epochs <= 1 {
            return start;
        }
        start * (end / start).powf(f64::from(epoch) / f64::from(epochs - 1))
    }

    /// Learning rate for `epoch` (0-based).
    pub fn eta(&self, epoch: u32) -> f64 {
        Self::decay(self.eta0, self.eta_min, epoch, self.epochs)
    }

    /// Neighbourhood radius for `epoch` (0-based).
    pub fn sigma(&self, epoch: u32) -> f64 {
        Self::decay(self.sigma0, self.sigma_min, epoch, self.epochs)
    }

    /// The effective stride for a field of `voxels` voxels.
    pub fn effective_stride(&self, voxels: usize) -> usize {
        if self.stride == 0 {
            crate::features::stride_for_target(voxels, TARGET_SAMPLES)
        } else {
            self.stride
        }
    }
}
