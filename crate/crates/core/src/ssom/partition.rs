//! Headless stand-ins for the user's lattice selection: exact 1-D k-way
//! partitions of a per-node statistic and connectivity helpers.

use super::SphericalLattice;

/// Labels every value with one of `k` contiguous classes (in sorted order)
/// minimizing the total within-class squared deviation. Exact: dynamic
/// programming over all split points of the sorted values. Labels are
/// ordered by class mean, so label 0 holds the smallest values.
pub fn optimal_partition_1d(values: &[f64], k: usize) -> Vec<usize> {
    optimal_partition_1d_weighted(values, &vec![1.0; values.len()], k)
}

/// As [`optimal_partition_1d`] with a non-negative multiplicity per value,
/// e.g. the number of voxels a node represents.
pub fn optimal_partition_1d_weighted(values: &[f64], weights: &[f64], k: usize) -> Vec<usize> {
    assert_eq!(values.len(), weights.len());
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut prefix_w = vec![0.0; n + 1];
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, &j) in order.iter().enumerate() {
        let (v, w) = (values[j], weights[j]);
        prefix_w[i + 1] = prefix_w[i] + w;
        prefix[i + 1] = prefix[i] + w * v;
        prefix_sq[i + 1] = prefix_sq[i] + w * v * v;
    }
    // Weighted sum of squared deviations of the sorted run a..b.
    let cost = |a: usize, b: usize| {
        let m = prefix_w[b] - prefix_w[a];
        if m <= 0.0 {
            return 0.0;
        }
        let s = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a] - s * s / m).max(0.0)
    };

    // best[j][i]: min cost of splitting sorted[..i] into j+1 classes.
    let mut best = vec![vec![f64::INFINITY; n + 1]; k];
    let mut split = vec![vec![0usize; n + 1]; k];
    for i in 1..=n {
        best[0][i] = cost(0, i);
    }
    for j in 1..k {
        for i in (j + 1)..=n {
            for s in j..i {
                let c = best[j - 1][s] + cost(s, i);
                if c < best[j][i] {
                    best[j][i] = c;
                    split[j][i] = s;
                }
            }
        }
    }
    let mut labels = vec![0; n];
    let mut end = n;
    for j in (0..k).rev() {
        let start = if j == 0 { 0 } else { split[j][end] };
        for &i in &order[start..end] {
            labels[i] = j;
        }
        end = start;
    }
    labels
}

/// One weight channel across all nodes.
pub fn node_channel(lattice: &SphericalLattice, channel: usize) -> Vec<f64> {
    lattice.weights().iter().map(|w| w[channel]).collect()
}

/// Nodes carrying `label`, ascending.
pub fn nodes_with_label(labels: &[usize], label: usize) -> Vec<u32> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Splits nodes of a labelling into those touching a differently labelled
/// neighbour (boundary) and the rest (interior).
pub fn boundary_and_interior(lattice: &SphericalLattice, labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    (0..lattice.len()).partition(|&n| {
        lattice
            .neighbors(n)
            .iter()
            .any(|&m| labels[m as usize] != labels[n])
    })
}
