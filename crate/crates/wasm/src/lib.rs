//! Bindings for the single-page browser demo in `www/`.
//!
//! The page drives three operations: train a lattice on a two-blob phantom,
//! turn picked lattice nodes into a coloured group, and re-render from any
//! orbit angle. Errors cross the boundary as plain strings.

use ssomvr::features::build_feature_field;
use ssomvr::pipeline::{render_groups, train_lattice, TrainConfig, Trained};
use ssomvr::render::Camera;
use ssomvr::tfgen::{assign_hues, define_group, hsv_to_rgb, Group};
use ssomvr::volume::{make_phantom, PhantomKind};
use ssomvr::{ChannelWeights, FeatureField, RenderSettings, TfConfig, TrainingParams, Volume};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    volume: Volume,
    field: FeatureField,
    trained: Trained,
    groups: Vec<Group>,
    next_id: u32,
    tf: TfConfig,
}

fn text(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
impl Demo {
    /// Builds a `size`³ two-blob phantom and trains a level-`level` lattice on it.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, level: u32, epochs: u32, seed: u32) -> Result<Demo, String> {
        let volume = make_phantom(
            &PhantomKind::TwoBlobs {
                first: 0.2,
                second: 0.9,
            },
            [size; 3],
        )
        .map_err(text)?
        .volume;
        let field = build_feature_field(&volume, ChannelWeights::default()).map_err(text)?;
        let config = TrainConfig {
            level,
            lattice_seed: u64::from(seed),
            params: TrainingParams {
                epochs,
                seed: u64::from(seed),
                ..Default::default()
            },
        };
        let trained = train_lattice(&field, &config).map_err(text)?;
        Ok(Demo {
            volume,
            field,
            trained,
            groups: Vec::new(),
            next_id: 0,
            tf: TfConfig::default(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.trained.lattice.len()
    }

    /// Node positions on the unit sphere as `[x0, y0, z0, x1, ...]`.
    pub fn positions(&self) -> Vec<f64> {
        self.trained.lattice.positions().iter().flatten().copied().collect()
    }

    /// Adjacent pairs `[a0, b0, a1, b1, ...]` with `a < b`.
    pub fn edges(&self) -> Vec<u32> {
        let lattice = &self.trained.lattice;
        (0..lattice.len())
            .flat_map(|a| {
                lattice
                    .neighbors(a)
                    .iter()
                    .filter(move |&&b| (b as usize) > a)
                    .flat_map(move |&b| [a as u32, b])
            })
            .collect()
    }

    /// Normalized U-matrix, one value per node.
    pub fn umatrix(&self) -> Vec<f64> {
        self.trained.umatrix.normalized.clone()
    }

    /// U-matrix as RGB bytes per node, blue (low) through red (high).
    pub fn umatrix_colors(&self) -> Vec<u8> {
        self.trained
            .umatrix
            .normalized
            .iter()
            .flat_map(|&u| hsv_to_rgb(240.0 * (1.0 - u.clamp(0.0, 1.0)), 1.0, 1.0).map(|c| (c * 255.0).round() as u8))
            .collect()
    }

    /// Node owning each group, or -1, so the page can tint picked nodes.
    pub fn node_groups(&self) -> Vec<i32> {
        let mut owner = vec![-1; self.node_count()];
        for g in &self.groups {
            for &n in &g.node_ids {
                owner[n as usize] = g.id as i32;
            }
        }
        owner
    }

    /// Turns `node_ids` into a new group and returns its id.
    pub fn add_group(&mut self, node_ids: Vec<u32>) -> Result<u32, String> {
        let g = define_group(
            self.next_id,
            &node_ids,
            &self.trained.assignment,
            &self.volume,
            &self.groups,
            &self.tf,
        )
        .map_err(text)?;
        self.groups.push(g);
        assign_hues(&mut self.groups, &self.tf);
        self.next_id += 1;
        Ok(self.next_id - 1)
    }

    pub fn clear_groups(&mut self) {
        self.groups.clear();
        self.next_id = 0;
    }

    /// `[{id, node_ids, voxel_count, variance, opacity, hue}, ...]` as JSON.
    pub fn groups_json(&self) -> String {
        serde_json::to_string(&self.groups).expect("groups serialize")
    }

    /// RGBA bytes of a `width`×`height` render orbiting the volume centre.
    pub fn render(&self, width: u32, height: u32, azimuth: f64, elevation: f64) -> Result<Vec<u8>, String> {
        let preset = Camera::preset(self.volume.dims(), self.volume.meta().spacing);
        let distance = (0..3)
            .map(|a| (preset.eye[a] - preset.look_at[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        let camera = Camera::orbit(preset.look_at, distance, azimuth, elevation, preset.vertical_fov);
        let settings = RenderSettings {
            width,
            height,
            ..Default::default()
        };
        let (_, img) = render_groups(&self.groups, &self.volume, &self.field, &self.tf, &camera, &settings)
            .map_err(text)?;
        Ok(img.pixels)
    }
}
