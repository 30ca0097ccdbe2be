//! The tracking state machine.
//!
//! While detecting, every frame goes to the face detector. A detection seeds
//! landmarks from the mean shape, which are aligned and verified on the same
//! frame. While tracking, last frame's landmarks are moved into the current
//! camera (compensating headset motion), aligned, verified, fitted, anchored
//! in the world and filtered. Any failure drops back to detection on the same
//! frame; a frame never aborts the sequence.
//!
//! Output poses come in three stages: `world_pose_raw` (fit + anchoring),
//! `world_pose_filtered` (two-frame averaging, then Kalman position) and
//! `world_pose_predicted` (the filtered pose propagated to the render time).
//! With a zero render horizon the predicted pose equals the filtered one.

mod backend;
mod trace;

pub use backend::{
    select_backend, AlignInput, Alignment, AlignmentBackend, BackendError, BackendKind, CropTransform, FaceBox,
    FaceDetector, Frame,
};
pub use trace::{read_trace, TraceRecord, TraceWriter, TRACE_SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::anchoring::{
    head_pose_to_world, reinit_landmarks_with, DepthModel, FramePoseContext, ImageBounds, ReinitOptions,
};
use crate::face_model::{BlendWeights, DeformableFaceModel};
use crate::failure::FailurePredictor;
use crate::geometry::{CameraIntrinsics, Pixel2, RigidTransform};
use crate::pose_fit::{
    estimate_attributes, fit, initial_guess, AttributeSet, AttributeThresholds, FitParams, HeadPoseFit,
};
use crate::temporal::{average_pose, FilterConfig, PositionFilter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinitDepth {
    /// All landmarks at the head-center distance.
    HeadCenter,
    /// Per-landmark distances from the previous fit.
    PerLandmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub fit: FitParams,
    pub filter: FilterConfig,
    pub attributes: AttributeThresholds,
    /// Image size used for out-of-view checks when frames carry no image.
    pub image_size: Option<[u32; 2]>,
    /// Re-initialized landmarks closer than this to the border count as lost, pixels.
    pub image_margin: f64,
    pub reinit_depth: ReinitDepth,
    /// Seconds between reconnection probes of an unhealthy remote backend.
    pub health_check_interval: f64,
    /// Fits with a larger RMS reprojection error count as lost, pixels.
    pub max_rms_residual: f64,
    /// Backends reporting less confidence count as lost.
    pub min_confidence: f64,
    /// Relative margin between the detector box and the landmark extent.
    pub detector_box_margin: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            fit: FitParams::default(),
            filter: FilterConfig::default(),
            attributes: AttributeThresholds::default(),
            image_size: None,
            image_margin: 2.0,
            reinit_depth: ReinitDepth::HeadCenter,
            health_check_interval: 1.0,
            max_rms_residual: 20.0,
            min_confidence: 0.0,
            detector_box_margin: 0.15,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.fit.validate().map_err(|e| format!("fit: {e}"))?;
        self.filter.validate().map_err(|e| format!("filter: {e}"))?;
        let checks = [
            ("image_margin", self.image_margin >= 0.0 && self.image_margin.is_finite()),
            ("health_check_interval", self.health_check_interval > 0.0 && self.health_check_interval.is_finite()),
            ("max_rms_residual", self.max_rms_residual > 0.0),
            ("min_confidence", (0.0..=1.0).contains(&self.min_confidence)),
            ("detector_box_margin", self.detector_box_margin >= 0.0 && self.detector_box_margin.is_finite()),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(format!("{name}: out of range"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerMode {
    Detecting,
    Tracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingState {
    pub last_landmarks: Vec<Pixel2>,
    pub last_fit: HeadPoseFit,
    /// Raw world pose of the last frame.
    pub last_world_pose: RigidTransform,
    pub last_ctx: FramePoseContext,
    pub kalman: PositionFilter,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum TrackerState {
    #[default]
    Detecting,
    Tracking(Box<TrackingState>),
}

impl TrackerState {
    pub fn mode(&self) -> TrackerMode {
        match self {
            TrackerState::Detecting => TrackerMode::Detecting,
            TrackerState::Tracking(_) => TrackerMode::Tracking,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub frame_id: u64,
    pub acquisition_time: f64,
    pub render_time: f64,
    /// Mode after this frame.
    pub mode: TrackerMode,
    pub tracking_valid: bool,
    pub backend_used: Option<BackendKind>,
    /// The remote backend failed on this frame and the local one took over.
    pub fallback: bool,
    pub landmarks: Vec<Pixel2>,
    pub camera_pose: Option<RigidTransform>,
    pub world_pose_raw: Option<RigidTransform>,
    pub world_pose_filtered: Option<RigidTransform>,
    pub world_pose_predicted: Option<RigidTransform>,
    pub weights: Option<BlendWeights>,
    pub attributes: AttributeSet,
    pub rms_residual: Option<f64>,
    pub predicted_sse: Option<f64>,
    pub events: Vec<String>,
}

impl TrackOutput {
    fn empty(frame: &Frame, render_time: f64) -> Self {
        TrackOutput {
            frame_id: frame.frame_id,
            acquisition_time: frame.acquisition_time,
            render_time,
            mode: TrackerMode::Detecting,
            tracking_valid: false,
            backend_used: None,
            fallback: false,
            landmarks: Vec::new(),
            camera_pose: None,
            world_pose_raw: None,
            world_pose_filtered: None,
            world_pose_predicted: None,
            weights: None,
            attributes: AttributeSet::default(),
            rms_residual: None,
            predicted_sse: None,
            events: Vec::new(),
        }
    }
}

pub struct Tracker {
    model: DeformableFaceModel,
    k: CameraIntrinsics,
    cfg: TrackerConfig,
    detector: Box<dyn FaceDetector>,
    local: Box<dyn AlignmentBackend>,
    remote: Option<Box<dyn AlignmentBackend>>,
    predictor: Option<FailurePredictor>,
    state: TrackerState,
    remote_healthy: bool,
    next_probe: f64,
}

impl Tracker {
    pub fn new(
        model: DeformableFaceModel,
        k: CameraIntrinsics,
        cfg: TrackerConfig,
        detector: Box<dyn FaceDetector>,
        local: Box<dyn AlignmentBackend>,
    ) -> Result<Self, String> {
        cfg.validate()?;
        Ok(Self {
            model,
            k,
            cfg,
            detector,
            local,
            remote: None,
            predictor: None,
            state: TrackerState::Detecting,
            remote_healthy: true,
            next_probe: f64::NEG_INFINITY,
        })
    }

    pub fn with_remote(mut self, remote: Box<dyn AlignmentBackend>) -> Self {
        self.remote = Some(remote);
        self.remote_healthy = true;
        self
    }

    pub fn with_failure_predictor(mut self, p: FailurePredictor) -> Self {
        self.predictor = Some(p);
        self
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn remote_healthy(&self) -> bool {
        self.remote.is_some() && self.remote_healthy
    }

    /// Processes one frame. `render_time` sets the prediction horizon.
    pub fn step(&mut self, frame: &Frame, render_time: f64) -> TrackOutput {
        let mut out = TrackOutput::empty(frame, render_time);
        let t = frame.acquisition_time;
        if let Some(remote) = self.remote.as_mut() {
            if !self.remote_healthy && t >= self.next_probe {
                if remote.probe() {
                    self.remote_healthy = true;
                    out.events.push("remote_recovered".into());
                } else {
                    self.next_probe = t + self.cfg.health_check_interval;
                }
            }
        }

        if let TrackerState::Tracking(ts) = std::mem::take(&mut self.state) {
            match self.track(frame, &ts, &mut out) {
                Ok(next) => {
                    self.state = TrackerState::Tracking(Box::new(next));
                    out.mode = TrackerMode::Tracking;
                    return out;
                }
                Err(reason) => {
                    out.events.push(format!("tracking_lost: {reason}"));
                    clear_pose(&mut out);
                }
            }
        }

        // Detecting, possibly right after a loss on this same frame.
        if let Some(b) = self.detector.detect(frame) {
            let init = self.seed_landmarks(&b);
            match init.and_then(|init| self.acquire(frame, &init, None, &mut out)) {
                Ok(next) => {
                    self.state = TrackerState::Tracking(Box::new(next));
                    out.events.push("detected".into());
                }
                Err(reason) => {
                    out.events.push(format!("detection_rejected: {reason}"));
                    clear_pose(&mut out);
                }
            }
        }
        out.mode = self.state.mode();
        out
    }

    fn bounds(&self, frame: &Frame) -> Option<ImageBounds> {
        let (w, h) = match (&frame.image, self.cfg.image_size) {
            (Some(img), _) => (img.width(), img.height()),
            (None, Some([w, h])) => (w, h),
            (None, None) => return None,
        };
        Some(ImageBounds { width: w as f64 - 1.0, height: h as f64 - 1.0, margin: self.cfg.image_margin })
    }

    fn track(&mut self, frame: &Frame, ts: &TrackingState, out: &mut TrackOutput) -> Result<TrackingState, String> {
        let depths: Vec<f64>;
        let depth = match self.cfg.reinit_depth {
            ReinitDepth::HeadCenter => DepthModel::HeadCenter,
            ReinitDepth::PerLandmark => {
                let pts = self.model.landmark_points(&ts.last_fit.weights).map_err(|e| e.to_string())?;
                depths = pts.iter().map(|p| ts.last_fit.pose.apply(p).norm()).collect();
                DepthModel::PerLandmark(&depths)
            }
        };
        let opts = ReinitOptions { depth, bounds: self.bounds(frame) };
        let reinit = reinit_landmarks_with(
            &ts.last_landmarks,
            &ts.last_world_pose.translation,
            &ts.last_ctx,
            &frame.ctx,
            &self.k,
            &opts,
        )
        .map_err(|e| e.to_string())?;
        if !reinit.all_valid() {
            return Err(format!("{} landmarks left the view", reinit.invalid_count()));
        }
        self.acquire(frame, &reinit.landmarks, Some(ts), out)
    }

    /// Mean-shape landmarks placed inside the detector box.
    fn seed_landmarks(&self, b: &FaceBox) -> Result<Vec<Pixel2>, String> {
        let pts = self.model.landmark_points(&BlendWeights::zeros(self.model.blendshape_count())).map_err(|e| e.to_string())?;
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        let inner = b.width / (1.0 + 2.0 * self.cfg.detector_box_margin);
        let scale = inner / (x1 - x0);
        if !(scale > 0.0 && scale.is_finite()) {
            return Err("empty detector box".into());
        }
        let c = b.center();
        let (mx, my) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        Ok(pts.iter().map(|p| Pixel2::new(c.u + scale * (p.x - mx), c.v + scale * (p.y - my))).collect())
    }

    fn align(&mut self, frame: &Frame, init: &[Pixel2], out: &mut TrackOutput) -> Result<(Alignment, BackendKind), String> {
        let input = AlignInput::from_frame(frame, init);
        if select_backend(self.remote.is_some(), self.remote_healthy) == BackendKind::Remote {
            let remote = self.remote.as_mut().expect("selected");
            match remote.align(&input) {
                Ok(a) => return Ok((a, BackendKind::Remote)),
                Err(BackendError::Unavailable(m)) => {
                    self.remote_healthy = false;
                    self.next_probe = frame.acquisition_time + self.cfg.health_check_interval;
                    out.fallback = true;
                    out.events.push(format!("remote_unavailable: {m}"));
                }
                Err(e) => return Err(e.to_string()),
            }
        }
        self.local.align(&input).map(|a| (a, BackendKind::Local)).map_err(|e| e.to_string())
    }

    fn acquire(
        &mut self,
        frame: &Frame,
        init: &[Pixel2],
        prev: Option<&TrackingState>,
        out: &mut TrackOutput,
    ) -> Result<TrackingState, String> {
        let (alignment, kind) = self.align(frame, init, out)?;
        out.backend_used = Some(kind);
        if !alignment.valid {
            return Err("backend reported invalid alignment".into());
        }
        if alignment.confidence < self.cfg.min_confidence {
            return Err(format!("confidence {} below threshold", alignment.confidence));
        }
        let landmarks = alignment.landmarks;
        if landmarks.len() != self.model.landmark_map().len() || landmarks.iter().any(|s| !s.is_finite()) {
            return Err(format!("backend returned {} landmarks", landmarks.len()));
        }
        out.landmarks = landmarks.clone();
        if let (Some(p), Some(img)) = (&self.predictor, &frame.image) {
            let sse = p.predict_error(img, &landmarks).map_err(|e| e.to_string())?;
            out.predicted_sse = Some(sse);
            if p.is_failure_score(sse) {
                return Err(format!("predicted error {sse:.1} above threshold"));
            }
        }

        let start = match prev {
            Some(ts) => ts.last_fit.clone(),
            None => initial_guess(&self.model, &landmarks, &self.k).map_err(|e| e.to_string())?,
        };
        let fitted = fit(&self.model, &landmarks, &self.k, &start, &self.cfg.fit).map_err(|e| e.to_string())?;
        if !(fitted.rms_residual <= self.cfg.max_rms_residual) {
            return Err(format!("fit residual {:.2} px too large", fitted.rms_residual));
        }
        let world_raw = head_pose_to_world(&fitted.pose, &frame.ctx).map_err(|e| e.to_string())?;
        let fc = &self.cfg.filter;
        let averaged = match prev {
            Some(ts) => average_pose(&ts.last_world_pose, &world_raw, fc),
            None => world_raw,
        };
        let t = frame.acquisition_time;
        let kalman = match prev {
            Some(ts) if t > ts.kalman.last_update() => {
                let mut k = ts.kalman;
                k.update(&averaged.translation, t, fc).map_err(|e| e.to_string())?;
                k
            }
            // Repeated timestamp: keep the filter as is.
            Some(ts) => ts.kalman,
            None => PositionFilter::new(&averaged.translation, t, fc).map_err(|e| e.to_string())?,
        };
        let attributes = estimate_attributes(&self.model, &fitted.weights, &self.cfg.attributes).map_err(|e| e.to_string())?;

        let horizon = out.render_time - t;
        let filtered = RigidTransform { rotation: averaged.rotation, translation: kalman.position() };
        let predicted = RigidTransform { rotation: averaged.rotation, translation: kalman.predict(horizon, fc) };
        out.tracking_valid = true;
        out.camera_pose = Some(fitted.pose);
        out.world_pose_raw = Some(world_raw);
        out.world_pose_filtered = Some(filtered);
        out.world_pose_predicted = Some(predicted);
        out.weights = Some(fitted.weights.clone());
        out.attributes = attributes;
        out.rms_residual = Some(fitted.rms_residual);

        Ok(TrackingState { last_landmarks: landmarks, last_fit: fitted, last_world_pose: world_raw, last_ctx: frame.ctx, kalman })
    }
}

fn clear_pose(out: &mut TrackOutput) {
    out.tracking_valid = false;
    out.camera_pose = None;
    out.world_pose_raw = None;
    out.world_pose_filtered = None;
    out.world_pose_predicted = None;
    out.weights = None;
    out.attributes = AttributeSet::default();
    out.rms_residual = None;
}
