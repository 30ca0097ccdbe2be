//! Deformable face model: a mean shape plus linear blendshapes.
//!
//! Models are stored as JSON:
//!
//! ```text
//! {
//!   "format": "holoface-face-model",
//!   "format_version": 1,
//!   "name": "...",
//!   "units": "unitless" | "meters",
//!   "vertices": [[x, y, z], ...],
//!   "blendshapes": [{ "name": "smile", "kind": "action", "offsets": [[dx, dy, dz], ...] }, ...],
//!   "triangles": [[a, b, c], ...],
//!   "landmark_map": [[landmark_index, vertex_index], ...],
//!   "pupils": { "left": { "midpoint": [a, b] }, "right": { "vertex": i } }
//! }
//! ```
//!
//! Model axes follow the camera convention: x right, y down, z away from the
//! viewer, so the identity pose at positive depth shows an upright frontal face.
//! A pupil is either an explicit vertex or the midpoint of two eye-corner vertices.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;

pub const FORMAT_NAME: &str = "holoface-face-model";
pub const FORMAT_VERSION: u32 = 1;

/// Average adult inter-pupillary distance, in meters.
pub const DEFAULT_IPD: f64 = 0.063;

const BUNDLED_JSON: &str = include_str!("../data/candide3_reference.json");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("model validation failed: {0}")]
    Validation(String),
    #[error("expected {expected} blendshape weights, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Unitless,
    Meters,
}

/// Shape units describe identity, action units describe expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendshapeKind {
    Shape,
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blendshape {
    pub name: String,
    pub kind: BlendshapeKind,
    #[serde(with = "point_list")]
    pub offsets: Vec<Point3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PupilRef {
    Vertex(usize),
    Midpoint([usize; 2]),
}

impl PupilRef {
    fn vertices(&self) -> Vec<usize> {
        match *self {
            PupilRef::Vertex(v) => vec![v],
            PupilRef::Midpoint([a, b]) => vec![a, b],
        }
    }

    pub fn position(&self, shape: &[Point3]) -> Point3 {
        match *self {
            PupilRef::Vertex(v) => shape[v],
            PupilRef::Midpoint([a, b]) => (shape[a] + shape[b]) * 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pupils {
    pub left: PupilRef,
    pub right: PupilRef,
}

/// One entry of the landmark↔vertex correspondence, stored as `[landmark, vertex]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct LandmarkPair {
    pub landmark: usize,
    pub vertex: usize,
}

impl From<[usize; 2]> for LandmarkPair {
    fn from(p: [usize; 2]) -> Self {
        LandmarkPair { landmark: p[0], vertex: p[1] }
    }
}

impl From<LandmarkPair> for [usize; 2] {
    fn from(p: LandmarkPair) -> Self {
        [p.landmark, p.vertex]
    }
}

/// Blendshape weights `w₁..wₙ`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlendWeights(pub Vec<f64>);

impl BlendWeights {
    pub fn zeros(n: usize) -> Self {
        BlendWeights(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    format_version: u32,
    #[serde(default)]
    name: String,
    units: Units,
    #[serde(with = "point_list")]
    vertices: Vec<Point3>,
    blendshapes: Vec<Blendshape>,
    triangles: Vec<[usize; 3]>,
    landmark_map: Vec<LandmarkPair>,
    pupils: Pupils,
}

/// Mean shape `S₀`, blendshapes `S₁..Sₙ`, mesh topology and landmark correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableFaceModel {
    name: String,
    units: Units,
    mean_shape: Vec<Point3>,
    blendshapes: Vec<Blendshape>,
    triangles: Vec<[usize; 3]>,
    landmark_map: Vec<LandmarkPair>,
    pupils: Pupils,
}

impl DeformableFaceModel {
    pub fn new(
        name: impl Into<String>,
        units: Units,
        mean_shape: Vec<Point3>,
        blendshapes: Vec<Blendshape>,
        triangles: Vec<[usize; 3]>,
        landmark_map: Vec<LandmarkPair>,
        pupils: Pupils,
    ) -> Result<Self, ModelError> {
        let model = Self { name: name.into(), units, mean_shape, blendshapes, triangles, landmark_map, pupils };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let v = self.mean_shape.len();
        let fail = |m: String| Err(ModelError::Validation(m));
        if v == 0 {
            return fail("model has no vertices".into());
        }
        if self.blendshapes.is_empty() {
            return fail("model needs at least one blendshape (n >= 1)".into());
        }
        if self.mean_shape.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return fail("mean shape contains non-finite coordinates".into());
        }
        let mut names = HashSet::new();
        for (i, b) in self.blendshapes.iter().enumerate() {
            if b.offsets.len() != v {
                return fail(format!(
                    "blendshape {i} ('{}') has {} offsets, expected one per vertex ({v})",
                    b.name,
                    b.offsets.len()
                ));
            }
            if b.offsets.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
                return fail(format!("blendshape '{}' contains non-finite offsets", b.name));
            }
            if !names.insert(b.name.as_str()) {
                return fail(format!("duplicate blendshape name '{}'", b.name));
            }
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&idx| idx >= v) {
                return fail(format!("triangle {i} references vertex {bad}, but the model has {v} vertices"));
            }
        }
        let mut seen_landmarks = HashSet::new();
        let mut seen_vertices = HashSet::new();
        for pair in &self.landmark_map {
            if pair.vertex >= v {
                return fail(format!("landmark_map references vertex {} >= {v}", pair.vertex));
            }
            if !seen_landmarks.insert(pair.landmark) {
                return fail(format!("landmark_map is not injective: landmark {} repeated", pair.landmark));
            }
            if !seen_vertices.insert(pair.vertex) {
                return fail(format!("landmark_map is not injective: vertex {} repeated", pair.vertex));
            }
        }
        for p in [self.pupils.left, self.pupils.right] {
            if let Some(bad) = p.vertices().into_iter().find(|&i| i >= v) {
                return fail(format!("pupil reference vertex {bad} >= {v}"));
            }
        }
        Ok(())
    }

    /// The bundled reference model in its raw, unit-free coordinates.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_JSON, "<bundled>").expect("bundled model is valid")
    }

    /// The bundled model scaled to the average inter-pupillary distance.
    pub fn bundled_metric() -> Self {
        Self::bundled().scale_to_ipd(DEFAULT_IPD).expect("bundled model has distinct pupils")
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format != FORMAT_NAME {
            return Err(ModelError::Validation(format!("format must be '{FORMAT_NAME}', got '{}'", file.format)));
        }
        if file.format_version != FORMAT_VERSION {
            return Err(ModelError::Validation(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        Self::new(file.name, file.units, file.vertices, file.blendshapes, file.triangles, file.landmark_map, file.pupils)
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            format: FORMAT_NAME.into(),
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            units: self.units,
            vertices: self.mean_shape.clone(),
            blendshapes: self.blendshapes.clone(),
            triangles: self.triangles.clone(),
            landmark_map: self.landmark_map.clone(),
            pupils: self.pupils,
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string())
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn units(&self) -> Units {
        self.units
    }
    pub fn vertex_count(&self) -> usize {
        self.mean_shape.len()
    }
    pub fn blendshape_count(&self) -> usize {
        self.blendshapes.len()
    }
    pub fn mean_shape(&self) -> &[Point3] {
        &self.mean_shape
    }
    pub fn blendshapes(&self) -> &[Blendshape] {
        &self.blendshapes
    }
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    pub fn landmark_map(&self) -> &[LandmarkPair] {
        &self.landmark_map
    }
    pub fn pupils(&self) -> Pupils {
        self.pupils
    }

    pub fn blendshape_index(&self, name: &str) -> Option<usize> {
        self.blendshapes.iter().position(|b| b.name == name)
    }

    /// Replaces the landmark correspondences.
    pub fn with_landmark_map(mut self, map: Vec<LandmarkPair>) -> Result<Self, ModelError> {
        self.landmark_map = map;
        self.validate()?;
        Ok(self)
    }

    /// Picks the mapped landmarks, in `landmark_map` order, out of a full detector output.
    pub fn select_landmarks<T: Copy>(&self, all: &[T]) -> Option<Vec<T>> {
        self.landmark_map.iter().map(|p| all.get(p.landmark).copied()).collect()
    }

    /// Position of vertex `v` for the given weights.
    pub fn deformed_vertex(&self, v: usize, weights: &[f64]) -> Point3 {
        let mut p = self.mean_shape[v];
        for (b, &w) in self.blendshapes.iter().zip(weights) {
            if w != 0.0 {
                p += b.offsets[v] * w;
            }
        }
        p
    }

    /// `S₀ + Σ wᵢ·Sᵢ`.
    pub fn synthesize(&self, weights: &BlendWeights) -> Result<Vec<Point3>, ModelError> {
        self.check_weights(weights)?;
        let mut shape = self.mean_shape.clone();
        for (b, &w) in self.blendshapes.iter().zip(weights.as_slice()) {
            if w == 0.0 {
                continue;
            }
            for (p, o) in shape.iter_mut().zip(&b.offsets) {
                *p += o * w;
            }
        }
        Ok(shape)
    }

    pub fn check_weights(&self, weights: &BlendWeights) -> Result<(), ModelError> {
        if weights.len() != self.blendshapes.len() {
            return Err(ModelError::DimensionMismatch { expected: self.blendshapes.len(), got: weights.len() });
        }
        Ok(())
    }

    /// Mapped landmark vertices of the deformed shape, in `landmark_map` order.
    pub fn landmark_points(&self, weights: &BlendWeights) -> Result<Vec<Point3>, ModelError> {
        self.check_weights(weights)?;
        Ok(self.landmark_map.iter().map(|p| self.deformed_vertex(p.vertex, weights.as_slice())).collect())
    }

    /// Distance between the two pupil references of the mean shape.
    pub fn pupil_distance(&self) -> f64 {
        (self.pupils.left.position(&self.mean_shape) - self.pupils.right.position(&self.mean_shape)).norm()
    }

    /// Uniformly scales the mean shape and every blendshape so the mean-shape
    /// pupil distance equals `target_ipd` (meters).
    pub fn scale_to_ipd(&self, target_ipd: f64) -> Result<Self, ModelError> {
        let d = self.pupil_distance();
        if !(d > 0.0) || !d.is_finite() {
            return Err(ModelError::DegenerateModel(format!("pupil distance is {d}")));
        }
        if !(target_ipd > 0.0) {
            return Err(ModelError::DegenerateModel(format!("target IPD must be positive, got {target_ipd}")));
        }
        let mut out = self.clone();
        out.units = Units::Meters;
        if d == target_ipd {
            return Ok(out);
        }
        let s = target_ipd / d;
        out.mean_shape.iter_mut().for_each(|p| *p *= s);
        for b in &mut out.blendshapes {
            b.offsets.iter_mut().for_each(|p| *p *= s);
        }
        Ok(out)
    }
}

mod point_list {
    use super::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(pts: &[Point3], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point3>, D::Error> {
        let raw = Vec::<[f64; 3]>::deserialize(d)?;
        Ok(raw.into_iter().map(Point3::from).collect())
    }
}
