//! The interactive pipeline as a state machine:
//! `Empty -> VolumeLoaded -> Trained -> Interactive`, with explicit reset.
//!
//! Every mutating call either applies its whole post-condition or returns an
//! error with the session untouched. Cloning a session is cheap (shared
//! buffers), which lets a host publish immutable snapshots to readers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::features::{build_feature_field, ChannelWeights, FeatureField, FEATURE_DIM};
use crate::pipeline::{render_groups, train_lattice, TrainConfig, TrainMetrics, Trained};
use crate::render::{encode_png, raycast, Camera, RenderError, RenderSettings};
use crate::ssom::SsomError;
use crate::tfgen::{assign_hues, define_group, ColorVolume, Group, TfConfig, TfError};
use crate::volume::{Volume, VolumeError};
use crate::{Error, ReplayScript};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Empty,
    VolumeLoaded,
    Trained,
    Interactive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    BadRequest,
    NotFound,
    Conflict,
    Unprocessable,
    Internal,
}

impl ErrorKind {
    pub fn status(self) -> u16 {
        match self {
            Self::BadRequest => 400,
            Self::NotFound => 404,
            Self::Conflict => 409,
            Self::Unprocessable => 422,
            Self::Internal => 500,
        }
    }
}

/// Error with an HTTP-style classification and a stable machine code.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct SessionError {
    pub kind: ErrorKind,
    pub code: &'static str,
    pub message: String,
}

impl SessionError {
    pub fn new(kind: ErrorKind, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            code,
            message: message.into(),
        }
    }

    fn phase(expected: &str, actual: Phase) -> Self {
        Self::new(
            ErrorKind::Conflict,
            "Conflict",
            format!("operation requires {expected}, session is {actual:?}"),
        )
    }
}

impl From<Error> for SessionError {
    fn from(e: Error) -> Self {
        use ErrorKind::*;
        let message = e.to_string();
        let (kind, code) = match &e {
            Error::Volume(VolumeError::SizeMismatch { .. }) => (Unprocessable, "SizeMismatch"),
            Error::Volume(VolumeError::UnsupportedDepth(_)) => (BadRequest, "UnsupportedDepth"),
            Error::Volume(VolumeError::Io { .. }) => (Unprocessable, "Unreadable"),
            Error::Volume(_) => (BadRequest, "InvalidMeta"),
            Error::Feature(_) => (BadRequest, "InvalidFeatureConfig"),
            Error::Ssom(SsomError::EmptySampleSet) => (Unprocessable, "EmptySampleSet"),
            Error::Ssom(SsomError::LevelOutOfRange(_)) => (BadRequest, "LevelOutOfRange"),
            Error::Ssom(_) => (BadRequest, "InvalidParams"),
            Error::Tf(TfError::OverlappingSelection(_)) => (Conflict, "OverlappingSelection"),
            Error::Tf(TfError::UnknownNode(_)) => (BadRequest, "UnknownNode"),
            Error::Tf(_) => (BadRequest, "InvalidSelection"),
            Error::Render(RenderError::DegenerateCamera(_)) => (BadRequest, "DegenerateCamera"),
            Error::Render(RenderError::InvalidSettings(_)) => (BadRequest, "InvalidSettings"),
            Error::Render(_) => (Internal, "RenderFailure"),
        };
        Self::new(kind, code, message)
    }
}

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for SessionError {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        }
    )*};
}
from_module_error!(VolumeError, crate::features::FeatureError, SsomError, TfError, RenderError);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    VolumeLoaded,
    Trained,
    Frame,
    Reset,
}

/// One entry of the ordered event log. Frame events carry PNG bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionEvent {
    pub revision: u64,
    pub event_type: EventType,
    pub payload: serde_json::Value,
    pub png: Option<Arc<Vec<u8>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSummary {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub voxels: usize,
    pub raw_min: f64,
    pub raw_max: f64,
    /// Per-channel `(min, max)` before normalization.
    pub feature_bounds: [(f64, f64); FEATURE_DIM],
    pub feature_weights: ChannelWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePayload {
    pub level: u32,
    pub node_count: usize,
    pub positions: Vec<[f64; 3]>,
    pub adjacency: Vec<Vec<u32>>,
    /// Min-max normalized U-matrix.
    pub umatrix: Vec<f64>,
    /// Voxels assigned per node.
    pub hits: Vec<usize>,
    #[serde(flatten)]
    pub metrics: TrainMetrics,
    pub groups: Vec<Group>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupsPayload {
    pub revision: u64,
    pub groups: Vec<Group>,
}

/// Camera and settings used for pushed frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct View {
    pub camera: Option<Camera>,
    pub settings: RenderSettings,
}

#[derive(Clone)]
pub struct Session {
    phase: Phase,
    volume: Option<Arc<Volume>>,
    field: Option<Arc<FeatureField>>,
    trained: Option<Arc<Trained>>,
    groups: Vec<Group>,
    next_group_id: u32,
    color: Option<Arc<ColorVolume>>,
    view: View,
    tf: TfConfig,
    revision: u64,
    events: Vec<Arc<SessionEvent>>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new(TfConfig::default())
    }
}

impl Session {
    pub fn new(tf: TfConfig) -> Self {
        Self {
            phase: Phase::Empty,
            volume: None,
            field: None,
            trained: None,
            groups: Vec::new(),
            next_group_id: 0,
            color: None,
            view: View::default(),
            tf,
            revision: 0,
            events: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn volume(&self) -> Option<&Volume> {
        self.volume.as_deref()
    }

    pub fn field(&self) -> Option<&FeatureField> {
        self.field.as_deref()
    }

    pub fn trained(&self) -> Option<&Trained> {
        self.trained.as_deref()
    }

    pub fn view(&self) -> &View {
        &self.view
    }

    /// Events with a revision strictly greater than `after`, in order.
    pub fn events_since(&self, after: u64) -> Vec<Arc<SessionEvent>> {
        let start = self.events.partition_point(|e| e.revision <= after);
        self.events[start..].to_vec()
    }

    fn push(&mut self, event_type: EventType, payload: serde_json::Value, png: Option<Vec<u8>>) {
        self.revision += 1;
        self.events.push(Arc::new(SessionEvent {
            revision: self.revision,
            event_type,
            payload,
            png: png.map(Arc::new),
        }));
    }

    pub fn load_volume(&mut self, volume: Volume, weights: ChannelWeights) -> Result<VolumeSummary, SessionError> {
        if self.phase != Phase::Empty {
            return Err(SessionError::phase("an empty session (reset first)", self.phase));
        }
        let field = build_feature_field(&volume, weights)?;
        let summary = VolumeSummary {
            dims: volume.dims(),
            spacing: volume.meta().spacing,
            voxels: volume.len(),
            raw_min: volume.raw_min(),
            raw_max: volume.raw_max(),
            feature_bounds: *field.norm_bounds(),
            feature_weights: weights,
        };
        self.volume = Some(Arc::new(volume));
        self.field = Some(Arc::new(field));
        self.phase = Phase::VolumeLoaded;
        self.push(EventType::VolumeLoaded, json!(summary), None);
        Ok(summary)
    }

    /// Sets the camera/settings used for pushed frames.
    pub fn set_view(&mut self, view: View) -> Result<(), SessionError> {
        view.settings.validate()?;
        if let Some(c) = &view.camera {
            c.basis()?;
        }
        self.view = view;
        Ok(())
    }

    /// Trains (or retrains, dropping all groups) the lattice.
    pub fn train(&mut self, config: &TrainConfig) -> Result<LatticePayload, SessionError> {
        if self.phase == Phase::Empty {
            return Err(SessionError::phase("a loaded volume", self.phase));
        }
        let (volume, field) = (self.volume.clone().unwrap(), self.field.clone().unwrap());
        let trained = train_lattice(&field, config)?;
        self.trained = Some(Arc::new(trained));
        self.groups.clear();
        self.next_group_id = 0;
        self.color = Some(Arc::new(ColorVolume::transparent(volume.dims(), volume.meta().spacing)));
        self.phase = Phase::Trained;
        let payload = self.lattice()?;
        self.push(
            EventType::Trained,
            json!({
                "node_count": payload.node_count,
                "quantization_error": payload.metrics.quantization_error,
                "topographic_error": payload.metrics.topographic_error,
            }),
            None,
        );
        Ok(payload)
    }

    pub fn lattice(&self) -> Result<LatticePayload, SessionError> {
        let t = self
            .trained
            .as_ref()
            .ok_or_else(|| SessionError::phase("a trained lattice", self.phase))?;
        Ok(LatticePayload {
            level: t.lattice.level(),
            node_count: t.lattice.len(),
            positions: t.lattice.positions().to_vec(),
            adjacency: t.lattice.adjacency().to_vec(),
            umatrix: t.umatrix.normalized.clone(),
            hits: t.assignment.hits(),
            metrics: t.metrics.clone(),
            groups: self.groups.clone(),
        })
    }

    fn camera_or_preset(&self, camera: Option<&Camera>) -> Camera {
        camera
            .or(self.view.camera.as_ref())
            .cloned()
            .unwrap_or_else(|| {
                let v = self.volume.as_ref().expect("trained session has a volume");
                Camera::preset(v.dims(), v.meta().spacing)
            })
    }

    /// Rebuilds colours for `groups`, renders with the session view and
    /// commits everything plus one frame event.
    fn commit_groups(&mut self, mut groups: Vec<Group>) -> Result<GroupsPayload, SessionError> {
        assign_hues(&mut groups, &self.tf);
        let camera = self.camera_or_preset(None);
        let (cv, img) = render_groups(
            &groups,
            self.volume.as_ref().unwrap(),
            self.field.as_ref().unwrap(),
            &self.tf,
            &camera,
            &self.view.settings,
        )?;
        let png = encode_png(&img)?;
        self.groups = groups;
        self.color = Some(Arc::new(cv));
        self.phase = Phase::Interactive;
        self.push(
            EventType::Frame,
            json!({ "groups": self.groups, "width": img.width, "height": img.height }),
            Some(png),
        );
        Ok(GroupsPayload {
            revision: self.revision,
            groups: self.groups.clone(),
        })
    }

    pub fn define_group(&mut self, node_ids: &[u32]) -> Result<GroupsPayload, SessionError> {
        let t = self
            .trained
            .clone()
            .ok_or_else(|| SessionError::phase("a trained lattice", self.phase))?;
        let g = define_group(
            self.next_group_id,
            node_ids,
            &t.assignment,
            self.volume.as_ref().unwrap(),
            &self.groups,
            &self.tf,
        )?;
        let mut groups = self.groups.clone();
        groups.push(g);
        let out = self.commit_groups(groups)?;
        self.next_group_id += 1;
        Ok(out)
    }

    pub fn delete_group(&mut self, id: u32) -> Result<GroupsPayload, SessionError> {
        if self.trained.is_none() {
            return Err(SessionError::phase("a trained lattice", self.phase));
        }
        let Some(pos) = self.groups.iter().position(|g| g.id == id) else {
            return Err(SessionError::new(
                ErrorKind::NotFound,
                "UnknownGroup",
                format!("no group with id {id}"),
            ));
        };
        let mut groups = self.groups.clone();
        groups.remove(pos);
        self.commit_groups(groups)
    }

    /// Applies every selection of a script, stopping at the first failure
    /// with the session unchanged.
    pub fn apply_script(&mut self, script: &ReplayScript) -> Result<GroupsPayload, SessionError> {
        let mut scratch = self.clone();
        let mut last = None;
        for selection in &script.0 {
            last = Some(scratch.define_group(&selection.node_ids)?);
        }
        let out = last.unwrap_or(GroupsPayload {
            revision: scratch.revision,
            groups: scratch.groups.clone(),
        });
        *self = scratch;
        Ok(out)
    }

    /// Renders the current groups without touching session state.
    pub fn render(&self, camera: Option<&Camera>, settings: Option<&RenderSettings>) -> Result<Vec<u8>, SessionError> {
        let cv = self
            .color
            .as_ref()
            .ok_or_else(|| SessionError::phase("a trained lattice", self.phase))?;
        let settings = settings.unwrap_or(&self.view.settings);
        let img = raycast(cv, &self.camera_or_preset(camera), settings)?;
        Ok(encode_png(&img)?)
    }

    /// The PNG of the most recent frame event, if any.
    pub fn current_frame(&self) -> Option<Arc<Vec<u8>>> {
        self.events
            .iter()
            .rev()
            .find(|e| e.event_type == EventType::Frame)
            .and_then(|e| e.png.clone())
    }

    /// Back to `Empty`. Revisions keep increasing so clients see the reset.
    pub fn reset(&mut self) {
        let tf = self.tf.clone();
        let revision = self.revision;
        let events = std::mem::take(&mut self.events);
        *self = Self::new(tf);
        self.revision = revision;
        self.events = events;
        self.push(EventType::Reset, json!({}), None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_phantom, PhantomKind};

    fn small() -> Volume {
        make_phantom(
            &PhantomKind::TwoBlobs {
                first: 0.2,
                second: 0.9,
            },
            [12, 12, 12],
        )
        .unwrap()
        .volume
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            level: 1,
            params: crate::TrainingParams {
                epochs: 3,
                seed: 7,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn small_view() -> View {
        View {
            camera: None,
            settings: RenderSettings {
                width: 24,
                height: 16,
                ..Default::default()
            },
        }
    }

    #[test]
    fn phase_ordering() {
        let mut s = Session::default();
        assert_eq!(s.train(&quick()).unwrap_err().kind, ErrorKind::Conflict);
        assert_eq!(s.define_group(&[0]).unwrap_err().kind, ErrorKind::Conflict);
        assert_eq!(s.render(None, None).unwrap_err().kind, ErrorKind::Conflict);
        s.load_volume(small(), ChannelWeights::default()).unwrap();
        assert_eq!(s.phase(), Phase::VolumeLoaded);
        let again = s.load_volume(small(), ChannelWeights::default()).unwrap_err();
        assert_eq!(again.kind.status(), 409);
        s.set_view(small_view()).unwrap();
        let lattice = s.train(&quick()).unwrap();
        assert_eq!(lattice.node_count, 42);
        assert_eq!(s.phase(), Phase::Trained);
        s.define_group(&[0, 1]).unwrap();
        assert_eq!(s.phase(), Phase::Interactive);
        s.reset();
        assert_eq!(s.phase(), Phase::Empty);
        assert!(s.groups().is_empty());
    }

    #[test]
    fn failures_leave_state_untouched() {
        let mut s = Session::default();
        s.load_volume(small(), ChannelWeights::default()).unwrap();
        s.set_view(small_view()).unwrap();
        s.train(&quick()).unwrap();
        s.define_group(&[3, 4]).unwrap();
        let rev = s.revision();
        let groups = s.groups().to_vec();
        let err = s.define_group(&[4, 5]).unwrap_err();
        assert_eq!((err.kind.status(), err.code), (409, "OverlappingSelection"));
        assert_eq!(s.revision(), rev);
        assert_eq!(s.groups(), groups.as_slice());
        assert_eq!(s.delete_group(99).unwrap_err().kind.status(), 404);
        let bad = TrainConfig {
            params: crate::TrainingParams {
                eta0: 0.001,
                ..Default::default()
            },
            ..quick()
        };
        assert_eq!(s.train(&bad).unwrap_err().kind.status(), 400);
        assert_eq!(s.groups(), groups.as_slice());
        let script = ReplayScript(vec![
            crate::tfgen::GroupSelection { node_ids: vec![10] },
            crate::tfgen::GroupSelection { node_ids: vec![3] },
        ]);
        assert!(s.apply_script(&script).is_err());
        assert_eq!(s.revision(), rev);
    }

    #[test]
    fn define_then_delete_restores_frame() {
        let mut s = Session::default();
        s.load_volume(small(), ChannelWeights::default()).unwrap();
        s.set_view(small_view()).unwrap();
        s.train(&quick()).unwrap();
        let before = s.render(None, None).unwrap();
        let rev = s.revision();
        let out = s.define_group(&(0..20).collect::<Vec<_>>()).unwrap();
        let frames: Vec<_> = s.events_since(rev);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].event_type, EventType::Frame);
        assert_eq!(frames[0].revision, out.revision);
        assert!(frames[0].png.is_some());
        let id = out.groups[0].id;
        s.delete_group(id).unwrap();
        assert_eq!(s.current_frame().unwrap().as_slice(), before.as_slice());
        assert_eq!(s.render(None, None).unwrap(), before);
    }

    #[test]
    fn revisions_strictly_increase() {
        let mut s = Session::default();
        s.load_volume(small(), ChannelWeights::default()).unwrap();
        s.set_view(small_view()).unwrap();
        s.train(&quick()).unwrap();
        s.define_group(&[1]).unwrap();
        s.define_group(&[2]).unwrap();
        s.reset();
        let all = s.events_since(0);
        assert_eq!(all.len(), 5);
        assert!(all.windows(2).all(|w| w[0].revision + 1 == w[1].revision));
        assert_eq!(all.last().unwrap().revision, s.revision());
    }
}
