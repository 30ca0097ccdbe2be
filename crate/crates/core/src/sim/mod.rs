//! Synthetic scenes with exact ground truth: scripted head and camera
//! trajectories, blendshape schedules, landmark noise, occlusion windows and
//! optional rendered frames. Also provides the oracle alignment backend and
//! face detector that read from a generated scenario.

mod perturb;
mod raster;
mod spline;

pub use perturb::{perturbed_samples, LabelledSample, PerturbationConfig};
pub use raster::{rasterize, BACKGROUND};
pub use spline::{linear_schedule, PoseSpline};

use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchoring::FramePoseContext;
use crate::face_model::{BlendWeights, DeformableFaceModel, ModelError};
use crate::geometry::{project, CameraIntrinsics, Pixel2, RigidTransform};
use crate::pipeline::{AlignInput, Alignment, AlignmentBackend, BackendError, FaceBox, FaceDetector, Frame};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("face is behind the camera (depth {0})")]
    DegeneratePose(f64),
    #[error("frame {0} is outside the scenario")]
    FrameOutOfRange(u64),
    #[error("scenario {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A pose key: axis-angle rotation (radians) and translation (meters) at a frame index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub frame: f64,
    #[serde(default)]
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Keyframe {
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::from(self.rotation), Vector3::from(self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSchedule {
    pub blendshape: String,
    /// `[frame, weight]` pairs, linearly interpolated.
    pub keys: Vec<[f64; 2]>,
}

/// Half-open frame range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }
}

fn default_frame_rate() -> f64 {
    30.0
}
fn default_latency() -> f64 {
    0.137
}
fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).expect("valid")
}
fn default_image_size() -> [u32; 2] {
    [640, 480]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Number of frames.
    pub frames: usize,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_intrinsics")]
    pub intrinsics: CameraIntrinsics,
    #[serde(default = "default_image_size")]
    pub image_size: [u32; 2],
    /// Head (model → world) keyframes.
    pub head: Vec<Keyframe>,
    /// Camera (camera → world) keyframes; a static camera at the origin when empty.
    #[serde(default)]
    pub camera: Vec<Keyframe>,
    #[serde(default)]
    pub weights: Vec<WeightSchedule>,
    /// Landmark noise σ, pixels.
    #[serde(default)]
    pub landmark_noise: f64,
    #[serde(default)]
    pub occlusions: Vec<FrameRange>,
    /// Capture-to-delivery latency of the camera, seconds.
    #[serde(default = "default_latency")]
    pub camera_latency: f64,
    #[serde(default)]
    pub render_images: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    /// A static face 1 m in front of a static camera.
    pub fn still(frames: usize) -> Self {
        ScenarioConfig {
            name: "still".into(),
            frames,
            frame_rate: default_frame_rate(),
            intrinsics: default_intrinsics(),
            image_size: default_image_size(),
            head: vec![Keyframe { frame: 0.0, rotation: [0.0; 3], translation: [0.0, 0.0, 1.0] }],
            camera: Vec::new(),
            weights: Vec::new(),
            landmark_noise: 0.0,
            occlusions: Vec::new(),
            camera_latency: default_latency(),
            render_images: false,
            seed: 0,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io { path: path.display().to_string(), source: e })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SimError::Parse { path: origin.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.frames == 0 {
            return bad("frames must be >= 1".into());
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        if !(self.landmark_noise >= 0.0 && self.landmark_noise.is_finite()) {
            return bad("landmark_noise must be >= 0".into());
        }
        if !(self.camera_latency >= 0.0 && self.camera_latency.is_finite()) {
            return bad("camera_latency must be >= 0".into());
        }
        if self.image_size.contains(&0) {
            return bad("image_size must be non-zero".into());
        }
        if self.head.is_empty() {
            return Err(SimError::InvalidTrajectory("head needs at least one keyframe".into()));
        }
        for (name, keys) in [("head", &self.head), ("camera", &self.camera)] {
            if keys.windows(2).any(|w| !(w[1].frame > w[0].frame)) {
                return Err(SimError::InvalidTrajectory(format!("{name} keyframes must have increasing frames")));
            }
            if keys.iter().any(|k| !k.frame.is_finite() || k.rotation.iter().chain(&k.translation).any(|x| !x.is_finite())) {
                return Err(SimError::InvalidTrajectory(format!("{name} keyframe has a non-finite value")));
            }
        }
        for s in &self.weights {
            if s.keys.windows(2).any(|w| !(w[1][0] > w[0][0])) || s.keys.iter().flatten().any(|x| !x.is_finite()) {
                return bad(format!("weight schedule '{}' needs increasing, finite keys", s.blendshape));
            }
        }
        for o in &self.occlusions {
            if o.start > o.end {
                return bad(format!("occlusion start {} > end {}", o.start, o.end));
            }
        }
        Ok(())
    }

    pub fn is_occluded(&self, i: usize) -> bool {
        self.occlusions.iter().any(|o| o.contains(i))
    }

    pub fn time_of(&self, i: usize) -> f64 {
        i as f64 / self.frame_rate
    }
}

fn spline_of(keys: &[Keyframe]) -> Result<PoseSpline, SimError> {
    if keys.is_empty() {
        return Ok(PoseSpline::constant(RigidTransform::identity()));
    }
    let k: Vec<(f64, RigidTransform)> = keys.iter().map(|k| (k.frame, k.pose())).collect();
    PoseSpline::new(&k).ok_or_else(|| SimError::InvalidTrajectory("keyframes must have increasing frames".into()))
}

#[derive(Debug, Clone)]
pub struct GroundTruthFrame {
    pub frame: Frame,
    /// Model → world.
    pub head_world: RigidTransform,
    /// Model → camera.
    pub head_cam: RigidTransform,
    pub weights: BlendWeights,
    pub true_landmarks: Vec<Pixel2>,
    /// Ground truth plus the configured noise.
    pub noisy_landmarks: Vec<Pixel2>,
    pub occluded: bool,
    pub face_box: FaceBox,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub frames: Arc<[GroundTruthFrame]>,
}

/// Margin added around the landmark bounding box for detector boxes.
const FACE_BOX_MARGIN: f64 = 0.15;

/// Generates every frame of `cfg`. Deterministic for a given config.
pub fn generate(cfg: &ScenarioConfig, model: &DeformableFaceModel) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let k = cfg.intrinsics;
    let head = spline_of(&cfg.head)?;
    let camera = spline_of(&cfg.camera)?;
    let schedules = cfg
        .weights
        .iter()
        .map(|s| {
            model
                .blendshape_index(&s.blendshape)
                .map(|i| (i, s))
                .ok_or_else(|| SimError::InvalidConfig(format!("unknown blendshape '{}'", s.blendshape)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let noise = Normal::new(0.0, cfg.landmark_noise).map_err(|e| SimError::InvalidConfig(e.to_string()))?;

    let mut frames = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let f = i as f64;
        let head_world = head.eval(f);
        let cam_to_world = camera.eval(f);
        let time = cfg.time_of(i);
        let ctx = FramePoseContext::from_cam_to_world(cam_to_world, time)
            .map_err(|e| SimError::InvalidTrajectory(e.to_string()))?;
        let mut w = BlendWeights::zeros(model.blendshape_count());
        for (idx, s) in &schedules {
            w.0[*idx] = linear_schedule(&s.keys, f);
        }
        let head_cam = ctx.world_to_cam().compose(&head_world);

        let mut true_landmarks = Vec::with_capacity(model.landmark_map().len());
        for x in model.landmark_points(&w)? {
            let world = head_world.apply(&x);
            let cam = ctx.world_to_cam().apply(&world);
            let s = project(&k, &cam).map_err(|_| {
                SimError::InvalidTrajectory(format!("frame {i}: landmark behind the camera (depth {})", cam.z))
            })?;
            true_landmarks.push(s);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let noisy_landmarks = true_landmarks
            .iter()
            .map(|s| Pixel2::new(s.u + noise.sample(&mut rng), s.v + noise.sample(&mut rng)))
            .collect();

        let image = if cfg.render_images {
            Some(rasterize(model, &w, &head_cam, &k, cfg.image_size[0], cfg.image_size[1])?)
        } else {
            None
        };
        let face_box = FaceBox::around(&true_landmarks, FACE_BOX_MARGIN).expect("model has landmarks");
        frames.push(GroundTruthFrame {
            frame: Frame { frame_id: i as u64, image, ctx, acquisition_time: time },
            head_world,
            head_cam,
            weights: w,
            true_landmarks,
            noisy_landmarks,
            occluded: cfg.is_occluded(i),
            face_box,
        });
    }
    Ok(Scenario { config: cfg.clone(), frames: frames.into() })
}

impl Scenario {
    pub fn oracle_backend(&self) -> OracleBackend {
        OracleBackend { frames: self.frames.clone(), sigma: self.config.landmark_noise }
    }

    pub fn oracle_detector(&self) -> OracleDetector {
        OracleDetector { frames: self.frames.clone() }
    }

    /// Writes every rendered frame as `frame_NNNNN.pgm` into `dir`.
    pub fn dump_pgm(&self, dir: impl AsRef<Path>) -> Result<usize, SimError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| SimError::Io { path: dir.display().to_string(), source: e })?;
        let mut n = 0;
        for f in self.frames.iter() {
            if let Some(img) = &f.frame.image {
                let path = dir.join(format!("frame_{:05}.pgm", f.frame.frame_id));
                img.save_with_format(&path, image::ImageFormat::Pnm).map_err(|e| SimError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::other(e.to_string()),
                })?;
                n += 1;
            }
        }
        Ok(n)
    }
}

/// Returns the scenario's noisy landmarks; invalid while occluded.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    frames: Arc<[GroundTruthFrame]>,
    sigma: f64,
}

impl OracleBackend {
    pub fn confidence(&self) -> f64 {
        (-self.sigma).exp()
    }
}

impl AlignmentBackend for OracleBackend {
    fn align(&mut self, input: &AlignInput) -> Result<Alignment, BackendError> {
        let f = usize::try_from(input.frame_id)
            .ok()
            .and_then(|i| self.frames.get(i))
            .ok_or(BackendError::FrameOutOfRange(input.frame_id))?;
        Ok(Alignment { landmarks: f.noisy_landmarks.clone(), valid: !f.occluded, confidence: self.confidence() })
    }
}

/// Returns the true face box except during occlusions.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    frames: Arc<[GroundTruthFrame]>,
}

impl FaceDetector for OracleDetector {
    fn detect(&mut self, frame: &Frame) -> Option<FaceBox> {
        let f = self.frames.get(usize::try_from(frame.frame_id).ok()?)?;
        (!f.occluded).then_some(f.face_box)
    }
}
