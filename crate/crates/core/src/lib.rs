//! Interactive transfer-function design for direct volume rendering.
//!
//! Voxel features (position, intensity, gradient magnitude, Laplacian) are
//! clustered by a spherical self-organizing map. Groups of lattice nodes
//! picked by the user become colours and opacities automatically, and the
//! result is raycast on the CPU.

mod par;

pub mod features;
pub mod pipeline;
pub mod render;
pub mod session;
pub mod ssom;
pub mod tfgen;
pub mod volume;

pub use features::{ChannelWeights, FeatureField, FeatureVector};
pub use render::{Camera, RenderSettings, RenderedImage};
pub use ssom::{SphericalLattice, TrainingParams};
pub use tfgen::{Group, ReplayScript, TfConfig};
pub use volume::{Volume, VolumeMeta};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Volume(#[from] volume::VolumeError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Ssom(#[from] ssom::SsomError),
    #[error(transparent)]
    Tf(#[from] tfgen::TfError),
    #[error(transparent)]
    Render(#[from] render::RenderError),
}
