use super::lattice::consider;
use super::SphericalLattice;
use crate::features::{ChannelWeights, FeatureField, FeatureVector, FEATURE_DIM};
use crate::par;

const BLOCK: usize = 4096;

/// Voxel → BMU map and its inverse, stored as a compressed member list.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelAssignment {
    bmu_of_voxel: Vec<u32>,
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl VoxelAssignment {
    pub fn from_bmus(bmu_of_voxel: Vec<u32>, node_count: usize) -> Self {
        let mut offsets = vec![0usize; node_count + 1];
        for &b in &bmu_of_voxel {
            offsets[b as usize + 1] += 1;
        }
        for i in 0..node_count {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut members = vec![0u32; bmu_of_voxel.len()];
        for (voxel, &b) in bmu_of_voxel.iter().enumerate() {
            members[cursor[b as usize]] = voxel as u32;
            cursor[b as usize] += 1;
        }
        Self {
            bmu_of_voxel,
            offsets,
            members,
        }
    }

    pub fn bmu_of_voxel(&self) -> &[u32] {
        &self.bmu_of_voxel
    }

    /// Voxels mapped to `node`, ascending.
    pub fn members_of_node(&self, node: usize) -> &[u32] {
        &self.members[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn voxel_count(&self) -> usize {
        self.bmu_of_voxel.len()
    }

    /// Members per node.
    pub fn hits(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Nodes sorted along one channel. A query walks outward from its own value
/// on that channel and stops once the channel term alone exceeds the best
/// full distance; that term is computed exactly as in the full sum and grows
/// monotonically with the walk, so the result equals a full scan.
struct ChannelIndex<'a> {
    weights: &'a [[f64; FEATURE_DIM]],
    channels: [f64; FEATURE_DIM],
    axis: usize,
    order: Vec<u32>,
    keys: Vec<f64>,
}

impl<'a> ChannelIndex<'a> {
    fn along(lattice: &'a SphericalLattice, channels: &ChannelWeights, axis: usize) -> Self {
        let weights = lattice.weights();
        let mut order: Vec<u32> = (0..weights.len() as u32).collect();
        order.sort_by(|&a, &b| weights[a as usize][axis].total_cmp(&weights[b as usize][axis]).then(a.cmp(&b)));
        let keys = order.iter().map(|&j| weights[j as usize][axis]).collect();
        Self {
            weights,
            channels: channels.0,
            axis,
            order,
            keys,
        }
    }

    /// The axis that visits the fewest nodes over an evenly spaced sample of
    /// the queries.
    fn best(lattice: &'a SphericalLattice, channels: &ChannelWeights, queries: &[FeatureVector]) -> Self {
        let step = (queries.len() / 2048).max(1);
        (0..FEATURE_DIM)
            .map(|axis| {
                let index = Self::along(lattice, channels, axis);
                let mut hint = 0;
                let mut visits = 0;
                for v in queries.iter().step_by(step) {
                    let (b, n) = index.search(v, hint);
                    hint = b;
                    visits += n;
                }
                (visits, index)
            })
            .min_by_key(|(visits, _)| *visits)
            .map(|(_, index)| index)
            .expect("at least one channel")
    }

    /// BMU and the number of nodes examined.
    fn search(&self, v: &FeatureVector, hint: usize) -> (usize, usize) {
        let x: [f64; FEATURE_DIM] = v.0.map(f64::from);
        let (w, a) = (&self.channels, self.axis);
        let mut best = hint;
        let mut best_d = f64::INFINITY;
        consider(&x, w, hint, &self.weights[hint], &mut best, &mut best_d);
        let term = |k: f64| {
            let diff = x[a] - k;
            w[a] * diff * diff
        };
        let start = self.keys.partition_point(|&k| k < x[a]);
        let mut visits = 1;
        for i in start..self.keys.len() {
            if term(self.keys[i]) > best_d {
                break;
            }
            let j = self.order[i] as usize;
            consider(&x, w, j, &self.weights[j], &mut best, &mut best_d);
            visits += 1;
        }
        for i in (0..start).rev() {
            if term(self.keys[i]) > best_d {
                break;
            }
            let j = self.order[i] as usize;
            consider(&x, w, j, &self.weights[j], &mut best, &mut best_d);
            visits += 1;
        }
        (best, visits)
    }
}

/// BMU of every voxel in the field (not just the training subsample).
pub fn assign_voxels(lattice: &SphericalLattice, field: &FeatureField) -> VoxelAssignment {
    let vectors = field.vectors();
    let index = ChannelIndex::best(lattice, &field.weights(), vectors);
    let bmus = par::map_blocks(vectors.len(), BLOCK, |range| {
        let mut hint = 0;
        range
            .map(|i| {
                hint = index.search(&vectors[i], hint).0;
                hint as u32
            })
            .collect()
    });
    VoxelAssignment::from_bmus(bmus, lattice.len())
}
