//! Turns groups of lattice nodes into optical properties: opacity from the
//! group's intensity variance, hues from an analogous harmonic template and
//! per-voxel saturation/value from gradient magnitude and intensity.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureField;
use crate::par;
use crate::ssom::VoxelAssignment;
use crate::volume::Volume;

/// Largest possible variance of samples confined to `[0, 1]`.
pub const MAX_VARIANCE: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum TfError {
    #[error("node {0} already belongs to another group")]
    OverlappingSelection(u32),
    #[error("node {0} does not exist in the lattice")]
    UnknownNode(u32),
    #[error("a group needs at least one node")]
    EmptySelection,
    #[error("variance {0} outside [0, 0.25]")]
    VarianceOutOfRange(f64),
    #[error("feature field and volume dims disagree")]
    DimsMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Centre of the analogous arc, degrees.
    pub hue_center: f64,
    /// Width of the analogous arc, degrees.
    pub hue_width: f64,
    pub s_min: f64,
    pub v_min: f64,
}

impl Default for TfConfig {
    fn default() -> Self {
        Self {
            alpha_min: 0.1,
            alpha_max: 0.9,
            hue_center: 210.0,
            hue_width: 60.0,
            s_min: 0.3,
            v_min: 0.2,
        }
    }
}

/// A user-defined set of lattice nodes and everything derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: u32,
    pub node_ids: Vec<u32>,
    #[serde(skip)]
    pub voxel_ids: Arc<[u32]>,
    pub voxel_count: usize,
    pub variance: f64,
    pub opacity: f64,
    pub hue: f64,
}

/// Creates a group over `nodes`. The hue is left at the template centre;
/// callers re-assign hues across all groups with [`assign_hues`].
pub fn define_group(
    id: u32,
    nodes: &[u32],
    assignment: &VoxelAssignment,
    volume: &Volume,
    existing: &[Group],
    config: &TfConfig,
) -> Result<Group, TfError> {
    if nodes.is_empty() {
        return Err(TfError::EmptySelection);
    }
    let mut node_ids = nodes.to_vec();
    node_ids.sort_unstable();
    node_ids.dedup();
    if let Some(&bad) = node_ids.iter().find(|&&n| n as usize >= assignment.node_count()) {
        return Err(TfError::UnknownNode(bad));
    }
    let taken: HashSet<u32> = existing.iter().flat_map(|g| g.node_ids.iter().copied()).collect();
    if let Some(&clash) = node_ids.iter().find(|n| taken.contains(n)) {
        return Err(TfError::OverlappingSelection(clash));
    }
    let mut voxel_ids: Vec<u32> = node_ids
        .iter()
        .flat_map(|&n| assignment.members_of_node(n as usize).iter().copied())
        .collect();
    voxel_ids.sort_unstable();
    let variance = intensity_variance(volume, &voxel_ids).min(MAX_VARIANCE);
    let opacity = opacity_from_variance(variance, config)?;
    Ok(Group {
        id,
        node_ids,
        voxel_count: voxel_ids.len(),
        voxel_ids: voxel_ids.into(),
        variance,
        opacity,
        hue: config.hue_center.rem_euclid(360.0),
    })
}

/// Population variance of the member intensities; 0 for an empty group.
pub fn intensity_variance(volume: &Volume, voxels: &[u32]) -> f64 {
    if voxels.is_empty() {
        return 0.0;
    }
    let values = volume.intensities();
    let n = voxels.len() as f64;
    let mean = voxels.iter().map(|&v| f64::from(values[v as usize])).sum::<f64>() / n;
    voxels
        .iter()
        .map(|&v| {
            let d = f64::from(values[v as usize]) - mean;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Linear, decreasing in variance: `alpha_max` at 0, `alpha_min` at 0.25.
pub fn opacity_from_variance(variance: f64, config: &TfConfig) -> Result<f64, TfError> {
    if !(0.0..=MAX_VARIANCE).contains(&variance) {
        return Err(TfError::VarianceOutOfRange(variance));
    }
    Ok(config.alpha_min + (config.alpha_max - config.alpha_min) * (1.0 - variance / MAX_VARIANCE))
}

/// `n` evenly spaced hues across the analogous arc, degrees in `[0, 360)`.
pub fn harmonic_hues(n: usize, config: &TfConfig) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![config.hue_center.rem_euclid(360.0)],
        _ => {
            let start = config.hue_center - config.hue_width / 2.0;
            let step = config.hue_width / (n - 1) as f64;
            (0..n).map(|i| (start + i as f64 * step).rem_euclid(360.0)).collect()
        }
    }
}

/// Re-spreads hues over all groups in definition order.
pub fn assign_hues(groups: &mut [Group], config: &TfConfig) {
    let hues = harmonic_hues(groups.len(), config);
    for (g, h) in groups.iter_mut().zip(hues) {
        g.hue = h;
    }
}

/// Standard sector-based HSV to RGB; `h` in degrees, `s`, `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Per-voxel straight (non-premultiplied) RGBA.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorVolume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub rgba: Vec<[f32; 4]>,
}

impl ColorVolume {
    pub fn transparent(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            dims,
            spacing,
            rgba: vec![[0.0; 4]; dims.iter().product()],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> [f32; 4] {
        self.rgba[x + self.dims[0] * (y + self.dims[1] * z)]
    }
}

pub fn build_color_volume(
    groups: &[Group],
    volume: &Volume,
    field: &FeatureField,
    config: &TfConfig,
) -> Result<ColorVolume, TfError> {
    if field.dims() != volume.dims() {
        return Err(TfError::DimsMismatch);
    }
    let mut seen = HashSet::new();
    for g in groups {
        for &n in &g.node_ids {
            if !seen.insert(n) {
                return Err(TfError::OverlappingSelection(n));
            }
        }
    }
    // owner[v] = index of the group holding voxel v, or u32::MAX.
    let mut owner = vec![u32::MAX; volume.len()];
    for (gi, g) in groups.iter().enumerate() {
        for &v in g.voxel_ids.iter() {
            owner[v as usize] = gi as u32;
        }
    }
    let vectors = field.vectors();
    let rgba = par::map_indices(volume.len(), |i| {
        let Some(g) = groups.get(owner[i] as usize) else {
            return [0.0; 4];
        };
        let f = &vectors[i];
        let s = config.s_min + (1.0 - config.s_min) * f64::from(f.grad_mag());
        let v = config.v_min + (1.0 - config.v_min) * f64::from(f.intensity());
        let [r, gr, b] = hsv_to_rgb(g.hue, s, v);
        [r as f32, gr as f32, b as f32, g.opacity as f32]
    });
    Ok(ColorVolume {
        dims: volume.dims(),
        spacing: volume.meta().spacing,
        rgba,
    })
}

/// One interactive group definition, as recorded for replay.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub node_ids: Vec<u32>,
}

/// Group selections in definition order: `[{"node_ids":[...]}, ...]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplayScript(pub Vec<GroupSelection>);

impl ReplayScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("replay script serializes")
    }
}
