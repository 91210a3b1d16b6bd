use serde::{Deserialize, Serialize};

use super::{SphericalLattice, SsomError, TrainingParams};
use crate::features::{ChannelWeights, FEATURE_DIM};

/// JSON document that captures a lattice exactly (floats round-trip bit for bit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSnapshot {
    pub level: u32,
    pub seed: u64,
    pub positions: Vec<[f64; 3]>,
    pub adjacency: Vec<Vec<u32>>,
    pub weights: Vec<[f64; FEATURE_DIM]>,
    pub params: Option<TrainingParams>,
    pub feature_weights: ChannelWeights,
    pub trained: bool,
}

impl LatticeSnapshot {
    pub fn capture(lattice: &SphericalLattice, feature_weights: ChannelWeights) -> Self {
        Self {
            level: lattice.level,
            seed: lattice.seed,
            positions: lattice.positions.clone(),
            adjacency: lattice.adjacency.clone(),
            weights: lattice.weights.clone(),
            params: lattice.params.clone(),
            feature_weights,
            trained: lattice.trained,
        }
    }

    pub fn restore(&self) -> Result<SphericalLattice, SsomError> {
        let mut lattice = SphericalLattice::from_parts(
            self.level,
            self.seed,
            self.positions.clone(),
            self.adjacency.clone(),
            self.weights.clone(),
        )?;
        lattice.trained = self.trained;
        lattice.params = self.params.clone();
        Ok(lattice)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SsomError> {
        serde_json::from_str(text).map_err(|e| SsomError::Malformed(e.to_string()))
    }
}
