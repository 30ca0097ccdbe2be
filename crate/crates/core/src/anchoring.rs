//! Camera-to-world head pose conversion and landmark re-initialization that
//! compensates for headset motion between frames.
//!
//! `head_pose_to_world` composes the world rotation as `R·lookAt(t_w, t_cw)`.
//! That rotation depends on where the camera was when the frame was taken, so
//! mapping the world pose back through `world_to_cam` recovers the camera-frame
//! translation exactly but not the camera-frame rotation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    look_at, project, unproject, CameraIntrinsics, GeometryError, Pixel2, Point3, RigidTransform, MIN_DEPTH,
};

/// World up direction used for every lookAt.
pub const WORLD_UP: Point3 = Point3::new(0.0, 1.0, 0.0);

/// Head-camera distances at or below this are rejected.
pub const MIN_HEAD_DISTANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("head-camera distance {0:e} m is too small to re-initialize from")]
    DegenerateDepth(f64),
    #[error("cam_to_world and world_to_cam are not inverses (error {0:e})")]
    InconsistentContext(f64),
    #[error("expected {expected} per-landmark depths, got {got}")]
    DepthCountMismatch { expected: usize, got: usize },
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Headset camera pose at the time a frame was acquired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawContext", into = "RawContext")]
pub struct FramePoseContext {
    cam_to_world: RigidTransform,
    world_to_cam: RigidTransform,
    timestamp: f64,
}

#[derive(Serialize, Deserialize)]
struct RawContext {
    cam_to_world: RigidTransform,
    #[serde(default)]
    world_to_cam: Option<RigidTransform>,
    timestamp: f64,
}

impl TryFrom<RawContext> for FramePoseContext {
    type Error = AnchorError;
    fn try_from(r: RawContext) -> Result<Self, AnchorError> {
        match r.world_to_cam {
            Some(w2c) => Self::new(r.cam_to_world, w2c, r.timestamp),
            None => Self::from_cam_to_world(r.cam_to_world, r.timestamp),
        }
    }
}

impl From<FramePoseContext> for RawContext {
    fn from(c: FramePoseContext) -> Self {
        RawContext { cam_to_world: c.cam_to_world, world_to_cam: Some(c.world_to_cam), timestamp: c.timestamp }
    }
}

impl FramePoseContext {
    /// Checks that the two transforms are inverses within 1e-9.
    pub fn new(cam_to_world: RigidTransform, world_to_cam: RigidTransform, timestamp: f64) -> Result<Self, AnchorError> {
        if !cam_to_world.is_finite() || !world_to_cam.is_finite() || !timestamp.is_finite() {
            return Err(AnchorError::NonFiniteInput("frame pose context"));
        }
        let round = cam_to_world.compose(&world_to_cam);
        let err = (round.rotation - nalgebra::Matrix3::identity()).abs().max().max(round.translation.abs().max());
        if !(err <= 1e-9) {
            return Err(AnchorError::InconsistentContext(err));
        }
        Ok(Self { cam_to_world, world_to_cam, timestamp })
    }

    pub fn from_cam_to_world(cam_to_world: RigidTransform, timestamp: f64) -> Result<Self, AnchorError> {
        if !cam_to_world.is_finite() || !timestamp.is_finite() {
            return Err(AnchorError::NonFiniteInput("frame pose context"));
        }
        Ok(Self { cam_to_world, world_to_cam: cam_to_world.inverse(), timestamp })
    }

    /// A camera sitting at the world origin.
    pub fn identity(timestamp: f64) -> Self {
        Self { cam_to_world: RigidTransform::identity(), world_to_cam: RigidTransform::identity(), timestamp }
    }

    pub fn cam_to_world(&self) -> &RigidTransform {
        &self.cam_to_world
    }

    pub fn world_to_cam(&self) -> &RigidTransform {
        &self.world_to_cam
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    /// Camera center in world coordinates (`t_cw`).
    pub fn camera_position(&self) -> Point3 {
        self.cam_to_world.translation
    }
}

/// World-frame head pose: `t_w = R_cw·t + t_cw`, `R_w = R·lookAt(t_w, t_cw)`.
pub fn head_pose_to_world(pose_cam: &RigidTransform, ctx: &FramePoseContext) -> Result<RigidTransform, AnchorError> {
    if !pose_cam.is_finite() {
        return Err(AnchorError::NonFiniteInput("camera-frame pose"));
    }
    let c2w = ctx.cam_to_world();
    let t_w = c2w.rotation * pose_cam.translation + c2w.translation;
    let r_la = look_at(&t_w, &c2w.translation, &WORLD_UP)?;
    Ok(RigidTransform { rotation: pose_cam.rotation * r_la, translation: t_w })
}

/// Depth assumption used when lifting previous-frame landmarks to 3D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthModel<'a> {
    /// Every landmark sits at the head-center distance from the previous camera.
    HeadCenter,
    /// Per-landmark distances from the previous camera center, e.g. from the fitted mesh.
    PerLandmark(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkStatus {
    Valid,
    BehindCamera,
    OutsideImage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageBounds {
    pub width: f64,
    pub height: f64,
    /// Landmarks closer than this many pixels to the border count as outside.
    pub margin: f64,
}

impl ImageBounds {
    pub fn contains(&self, s: &Pixel2) -> bool {
        s.u >= self.margin && s.v >= self.margin && s.u <= self.width - self.margin && s.v <= self.height - self.margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinitOptions<'a> {
    pub depth: DepthModel<'a>,
    pub bounds: Option<ImageBounds>,
}

impl Default for ReinitOptions<'_> {
    fn default() -> Self {
        Self { depth: DepthModel::HeadCenter, bounds: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reinit {
    /// Re-initialized landmarks. Entries behind the camera keep their previous position.
    pub landmarks: Vec<Pixel2>,
    pub status: Vec<LandmarkStatus>,
}

impl Reinit {
    pub fn all_valid(&self) -> bool {
        self.status.iter().all(|s| *s == LandmarkStatus::Valid)
    }

    pub fn invalid_count(&self) -> usize {
        self.status.iter().filter(|s| **s != LandmarkStatus::Valid).count()
    }
}

/// Moves last frame's landmarks into the current camera, assuming a static head.
pub fn reinit_landmarks(
    s_prev: &[Pixel2],
    t_w_prev: &Point3,
    prev_ctx: &FramePoseContext,
    cur_ctx: &FramePoseContext,
    k: &CameraIntrinsics,
) -> Result<Vec<Pixel2>, AnchorError> {
    let r = reinit_landmarks_with(s_prev, t_w_prev, prev_ctx, cur_ctx, k, &ReinitOptions::default())?;
    Ok(r.landmarks)
}

pub fn reinit_landmarks_with(
    s_prev: &[Pixel2],
    t_w_prev: &Point3,
    prev_ctx: &FramePoseContext,
    cur_ctx: &FramePoseContext,
    k: &CameraIntrinsics,
    opts: &ReinitOptions,
) -> Result<Reinit, AnchorError> {
    if s_prev.iter().any(|s| !s.is_finite()) {
        return Err(AnchorError::NonFiniteInput("landmarks"));
    }
    if !t_w_prev.iter().all(|x| x.is_finite()) {
        return Err(AnchorError::NonFiniteInput("head position"));
    }
    let t_cw_prev = prev_ctx.camera_position();
    let head_dist = (t_cw_prev - t_w_prev).norm();
    let depths: Vec<f64> = match opts.depth {
        DepthModel::HeadCenter => {
            if !(head_dist > MIN_HEAD_DISTANCE) {
                return Err(AnchorError::DegenerateDepth(head_dist));
            }
            vec![head_dist; s_prev.len()]
        }
        DepthModel::PerLandmark(d) => {
            if d.len() != s_prev.len() {
                return Err(AnchorError::DepthCountMismatch { expected: s_prev.len(), got: d.len() });
            }
            if let Some(&bad) = d.iter().find(|&&x| !(x > MIN_HEAD_DISTANCE)) {
                return Err(AnchorError::DegenerateDepth(bad));
            }
            d.to_vec()
        }
    };

    let r_cw_prev = prev_ctx.cam_to_world().rotation;
    let w2c = cur_ctx.world_to_cam();
    let mut landmarks = Vec::with_capacity(s_prev.len());
    let mut status = Vec::with_capacity(s_prev.len());
    for (s, dist) in s_prev.iter().zip(depths) {
        let ray = unproject(k, s);
        let world = t_cw_prev + r_cw_prev * ray / ray.norm() * dist;
        let cam = w2c.apply(&world);
        if !(cam.z > MIN_DEPTH) {
            landmarks.push(*s);
            status.push(LandmarkStatus::BehindCamera);
            continue;
        }
        let p = project(k, &cam)?;
        let inside = opts.bounds.map_or(true, |b| b.contains(&p));
        landmarks.push(p);
        status.push(if inside { LandmarkStatus::Valid } else { LandmarkStatus::OutsideImage });
    }
    Ok(Reinit { landmarks, status })
}
