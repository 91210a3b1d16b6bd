use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SsomError, TrainingParams};
use crate::features::{ChannelWeights, FeatureVector, FEATURE_DIM};

pub const MAX_LEVEL: u32 = 6;

/// Node count of an icosahedron subdivided `level` times.
pub const fn node_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

/// Node lattice on the unit sphere with one weight vector per node.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalLattice {
    pub(crate) level: u32,
    pub(crate) seed: u64,
    pub(crate) positions: Vec<[f64; 3]>,
    pub(crate) adjacency: Vec<Vec<u32>>,
    pub(crate) weights: Vec<[f64; FEATURE_DIM]>,
    pub(crate) trained: bool,
    pub(crate) params: Option<TrainingParams>,
}

/// Replaces `(best, best_d)` with node `j` if it wins under `(d, id)` order.
/// Partial sums are prefixes of the full sum, so stopping early once they
/// pass the best distance never changes the result.
#[inline]
pub(crate) fn consider(
    x: &[f64; FEATURE_DIM],
    w: &[f64; FEATURE_DIM],
    j: usize,
    node: &[f64; FEATURE_DIM],
    best: &mut usize,
    best_d: &mut f64,
) {
    let mut d = 0.0;
    for c in 0..FEATURE_DIM {
        let diff = x[c] - node[c];
        d += w[c] * diff * diff;
        if d > *best_d || (d == *best_d && j > *best) {
            return;
        }
    }
    *best = j;
    *best_d = d;
}

fn normalized(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

fn icosahedron() -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let verts = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .map(normalized)
    .to_vec();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (verts, faces)
}

/// Subdivided icosahedron: vertex positions on the unit sphere and triangles.
pub fn icosphere(level: u32) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let (mut verts, mut faces) = icosahedron();
    for _ in 0..level {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: u32, b: u32, verts: &mut Vec<[f64; 3]>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (pa, pb) = (verts[a as usize], verts[b as usize]);
                verts.push(normalized([
                    (pa[0] + pb[0]) / 2.0,
                    (pa[1] + pb[1]) / 2.0,
                    (pa[2] + pb[2]) / 2.0,
                ]));
                (verts.len() - 1) as u32
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

impl SphericalLattice {
    /// Icosahedron subdivided `level` times, weights drawn uniformly from
    /// `[0, 1]^6` with a ChaCha8 stream seeded by `seed`.
    pub fn build(level: u32, seed: u64) -> Result<Self, SsomError> {
        if level > MAX_LEVEL {
            return Err(SsomError::LevelOutOfRange(level));
        }
        let (positions, faces) = icosphere(level);
        let mut adjacency = vec![Vec::new(); positions.len()];
        for [a, b, c] in faces {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                adjacency[u as usize].push(v);
                adjacency[v as usize].push(u);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..positions.len())
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        Ok(Self {
            level,
            seed,
            positions,
            adjacency,
            weights,
            trained: false,
            params: None,
        })
    }

    /// Arbitrary node graph, mostly for tests and snapshot loading.
    pub fn from_parts(
        level: u32,
        seed: u64,
        positions: Vec<[f64; 3]>,
        adjacency: Vec<Vec<u32>>,
        weights: Vec<[f64; FEATURE_DIM]>,
    ) -> Result<Self, SsomError> {
        let n = positions.len();
        if n == 0 || adjacency.len() != n || weights.len() != n {
            return Err(SsomError::Malformed(format!(
                "{} positions, {} adjacency lists, {} weight vectors",
                n,
                adjacency.len(),
                weights.len()
            )));
        }
        for (i, list) in adjacency.iter().enumerate() {
            for &j in list {
                let j = j as usize;
                if j >= n || j == i || !adjacency[j].contains(&(i as u32)) {
                    return Err(SsomError::Malformed(format!(
                        "adjacency {i} -> {j} is out of range, reflexive or asymmetric"
                    )));
                }
            }
        }
        Ok(Self {
            level,
            seed,
            positions,
            adjacency,
            weights,
            trained: false,
            params: None,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn len(&self) -> usize {
        self.positions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }
    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }
    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.adjacency[node]
    }
    pub fn weights(&self) -> &[[f64; FEATURE_DIM]] {
        &self.weights
    }
    pub fn set_weights(&mut self, weights: Vec<[f64; FEATURE_DIM]>) -> Result<(), SsomError> {
        if weights.len() != self.len() {
            return Err(SsomError::Malformed(format!(
                "{} weight vectors for {} nodes",
                weights.len(),
                self.len()
            )));
        }
        self.weights = weights;
        Ok(())
    }
    pub fn is_trained(&self) -> bool {
        self.trained
    }
    pub fn params(&self) -> Option<&TrainingParams> {
        self.params.as_ref()
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&(b as u32)).is_ok()
    }

    /// Great-circle angle between two nodes, in radians.
    pub fn geodesic(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let (p, q) = (self.positions[a], self.positions[b]);
        let cross = [
            p[1] * q[2] - p[2] * q[1],
            p[2] * q[0] - p[0] * q[2],
            p[0] * q[1] - p[1] * q[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        sin.atan2(p[0] * q[0] + p[1] * q[1] + p[2] * q[2])
    }

    /// Best matching unit: smallest weighted distance, lowest id on ties.
    pub fn bmu(&self, v: &FeatureVector, channels: &ChannelWeights) -> (usize, f64) {
        let (id, d2) = self.bmu_sq(v, channels, 0);
        (id, d2.sqrt())
    }

    /// Exact BMU search seeded with a candidate (typically the previous
    /// voxel's winner). The hint only affects how much work is pruned.
    pub(crate) fn bmu_sq(&self, v: &FeatureVector, channels: &ChannelWeights, hint: usize) -> (usize, f64) {
        let w = &channels.0;
        let x: [f64; FEATURE_DIM] = v.0.map(f64::from);
        let mut best = hint;
        let mut best_d = channels.distance_sq(v, &self.weights[hint]);
        for (j, node) in self.weights.iter().enumerate() {
            if j != hint {
                consider(&x, w, j, node, &mut best, &mut best_d);
            }
        }
        (best, best_d)
    }

    /// Best and second-best matching units, both by `(distance, id)` order.
    pub fn two_best(&self, v: &FeatureVector, channels: &ChannelWeights) -> ((usize, f64), Option<(usize, f64)>) {
        let mut first = (usize::MAX, f64::INFINITY);
        let mut second: Option<(usize, f64)> = None;
        for (j, node) in self.weights.iter().enumerate() {
            let d = channels.distance_sq(v, node);
            if d < first.1 {
                second = (first.0 != usize::MAX).then_some(first);
                first = (j, d);
            } else if second.is_none_or(|s| d < s.1) {
                second = Some((j, d));
            }
        }
        ((first.0, first.1.sqrt()), second.map(|(j, d)| (j, d.sqrt())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn degree_histogram(l: &SphericalLattice) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for a in l.adjacency() {
            *h.entry(a.len()).or_default() += 1;
        }
        h
    }

    #[test]
    fn icosahedron_base() {
        let l = SphericalLattice::build(0, 1).unwrap();
        assert_eq!(l.len(), 12);
        assert!(l.adjacency().iter().all(|a| a.len() == 5));
    }

    #[test]
    fn structure_for_all_levels() {
        for level in 0..=5 {
            let l = SphericalLattice::build(level, 1).unwrap();
            assert_eq!(l.len(), node_count(level));
            let h = degree_histogram(&l);
            assert_eq!(h.get(&5), Some(&12));
            assert_eq!(h.values().sum::<usize>(), l.len());
            assert_eq!(h.keys().copied().collect::<Vec<_>>(), if level == 0 { vec![5] } else { vec![5, 6] });
            for (i, list) in l.adjacency().iter().enumerate() {
                assert!(list.windows(2).all(|w| w[0] < w[1]));
                for &j in list {
                    assert_ne!(j as usize, i);
                    assert!(l.are_adjacent(j as usize, i));
                }
            }
            for p in l.positions() {
                let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn level_out_of_range() {
        assert!(matches!(
            SphericalLattice::build(7, 0),
            Err(SsomError::LevelOutOfRange(7))
        ));
    }

    #[test]
    fn weights_in_unit_cube_and_seeded() {
        let a = SphericalLattice::build(2, 9).unwrap();
        let b = SphericalLattice::build(2, 9).unwrap();
        let c = SphericalLattice::build(2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.weights(), c.weights());
        assert!(a.weights().iter().flatten().all(|w| (0.0..1.0).contains(w)));
    }

    #[test]
    fn exact_match_and_tie_break() {
        let mut l = SphericalLattice::build(0, 3).unwrap();
        let target = l.weights()[7];
        let v = FeatureVector(target.map(|w| w as f32));
        let mut ws = l.weights().to_vec();
        ws[7] = v.0.map(f64::from);
        l.set_weights(ws).unwrap();
        assert_eq!(l.bmu(&v, &ChannelWeights::default()), (7, 0.0));

        let mut ws = vec![[0.9; 6]; 12];
        ws[4] = [0.0; 6];
        ws[9] = [0.0; 6];
        l.set_weights(ws).unwrap();
        let probe = FeatureVector([0.1; 6]);
        assert_eq!(l.bmu(&probe, &ChannelWeights::uniform()).0, 4);
        for hint in 0..12 {
            assert_eq!(l.bmu_sq(&probe, &ChannelWeights::uniform(), hint).0, 4);
        }
    }
}
