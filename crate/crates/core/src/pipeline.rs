//! End-to-end steps shared by the CLI, the HTTP service and the demo, so every
//! front end produces identical artifacts from identical inputs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::features::{build_feature_field, sample_features, ChannelWeights, FeatureField, FeatureVector};
use crate::render::{raycast, Camera, RenderSettings, RenderedImage};
use crate::ssom::{
    assign_voxels, compute_umatrix, quantization_error, topographic_error, train, SphericalLattice,
    TrainingParams, UMatrix, VoxelAssignment,
};
use crate::tfgen::{assign_hues, build_color_volume, define_group, ColorVolume, Group, ReplayScript, TfConfig};
use crate::volume::Volume;
use crate::Error;

/// Training request: lattice shape plus the online schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub level: u32,
    /// Seed for the initial weights.
    pub lattice_seed: u64,
    #[serde(flatten)]
    pub params: TrainingParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            level: 3,
            lattice_seed: 0,
            params: TrainingParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub training_samples: usize,
    pub stride: usize,
    pub initial_quantization_error: f64,
    pub quantization_error: f64,
    pub topographic_error: f64,
}

pub struct Trained {
    pub lattice: SphericalLattice,
    pub umatrix: UMatrix,
    pub assignment: VoxelAssignment,
    pub metrics: TrainMetrics,
}

pub fn training_samples(field: &FeatureField, params: &TrainingParams) -> Result<Vec<FeatureVector>, Error> {
    let stride = params.effective_stride(field.len());
    Ok(sample_features(field, stride, params.seed)?
        .into_iter()
        .map(|(_, v)| v)
        .collect())
}

/// Builds, trains and evaluates a lattice, then assigns every voxel.
pub fn train_lattice(field: &FeatureField, config: &TrainConfig) -> Result<Trained, Error> {
    config.params.validate()?;
    let mut lattice = SphericalLattice::build(config.level, config.lattice_seed)?;
    let channels = field.weights();
    let samples = training_samples(field, &config.params)?;
    let initial = quantization_error(&lattice, &samples, &channels)?;
    train(&mut lattice, &samples, &config.params, &channels)?;
    let metrics = TrainMetrics {
        training_samples: samples.len(),
        stride: config.params.effective_stride(field.len()),
        initial_quantization_error: initial,
        quantization_error: quantization_error(&lattice, &samples, &channels)?,
        topographic_error: topographic_error(&lattice, &samples, &channels)?,
    };
    let umatrix = compute_umatrix(&lattice, &channels);
    let assignment = assign_voxels(&lattice, field);
    Ok(Trained {
        lattice,
        umatrix,
        assignment,
        metrics,
    })
}

/// Applies a replay script in order, returning the groups with hues assigned.
pub fn apply_script(
    script: &ReplayScript,
    assignment: &VoxelAssignment,
    volume: &Volume,
    tf: &TfConfig,
) -> Result<Vec<Group>, Error> {
    let mut groups: Vec<Group> = Vec::with_capacity(script.0.len());
    for (id, selection) in script.0.iter().enumerate() {
        let g = define_group(id as u32, &selection.node_ids, assignment, volume, &groups, tf)?;
        groups.push(g);
    }
    assign_hues(&mut groups, tf);
    Ok(groups)
}

pub fn render_groups(
    groups: &[Group],
    volume: &Volume,
    field: &FeatureField,
    tf: &TfConfig,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<(ColorVolume, RenderedImage), Error> {
    let cv = build_color_volume(groups, volume, field, tf)?;
    let img = raycast(&cv, camera, settings)?;
    Ok((cv, img))
}

/// Wall-clock seconds per stage of one full pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dims: [usize; 3],
    pub voxels: usize,
    pub nodes: usize,
    pub training_samples: usize,
    pub stride: usize,
    pub image: [u32; 2],
    pub feature_build_s: f64,
    pub training_s: f64,
    pub assignment_s: f64,
    pub render_s: f64,
    pub total_s: f64,
}

/// Times feature building, training, voxel assignment and one render of the
/// whole assigned volume (every node as a single group).
pub fn bench(
    volume: &Volume,
    weights: ChannelWeights,
    config: &TrainConfig,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<BenchReport, Error> {
    let tf = TfConfig::default();
    let t = Instant::now();
    let field = build_feature_field(volume, weights)?;
    let feature_build_s = t.elapsed().as_secs_f64();

    config.params.validate()?;
    let t = Instant::now();
    let mut lattice = SphericalLattice::build(config.level, config.lattice_seed)?;
    let samples = training_samples(&field, &config.params)?;
    train(&mut lattice, &samples, &config.params, &field.weights())?;
    let training_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let assignment = assign_voxels(&lattice, &field);
    let assignment_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let all: Vec<u32> = (0..lattice.len() as u32).collect();
    let groups = vec![define_group(0, &all, &assignment, volume, &[], &tf)?];
    render_groups(&groups, volume, &field, &tf, camera, settings)?;
    let render_s = t.elapsed().as_secs_f64();

    Ok(BenchReport {
        dims: volume.dims(),
        voxels: volume.len(),
        nodes: lattice.len(),
        training_samples: samples.len(),
        stride: config.params.effective_stride(field.len()),
        image: [settings.width, settings.height],
        feature_build_s,
        training_s,
        assignment_s,
        render_s,
        total_s: feature_build_s + training_s + assignment_s + render_s,
    })
}
