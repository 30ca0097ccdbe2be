//! C interface to the holoface toolkit.
//!
//! Every fallible function returns an [`HfStatus`]. On failure a message is
//! kept per thread and can be read with [`hf_last_error`] until the next
//! failing call on that thread. Handles are opaque; each `*_new`/`*_load`
//! has a matching `*_free` that accepts NULL. Poses use a row-major 3x3
//! rotation and a translation in meters. Landmarks are interleaved `u, v`
//! pixel pairs.
//!
//! Panics never cross the boundary; they surface as `HF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use holoface::anchoring::FramePoseContext;
use holoface::evaluation;
use holoface::face_model::{BlendWeights, DeformableFaceModel};
use holoface::geometry::{orthonormalize, rotation_error, CameraIntrinsics, Pixel2, RigidTransform};
use holoface::netproto;
use holoface::pipeline::{
    AlignInput, Alignment, AlignmentBackend, BackendError, BackendKind, FaceBox, FaceDetector, Frame, TrackOutput,
    Tracker, TrackerConfig, TrackerMode,
};
use holoface::pose_fit::{fit, initial_guess, FitParams, HeadPoseFit};
use holoface::temporal::{FilterConfig, PositionFilter};
use image::GrayImage;
use nalgebra::{Matrix3, Vector3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    FitFailed = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfMode {
    Detecting = 0,
    Tracking = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfBackend {
    None = 0,
    Local = 1,
    Remote = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(HfStatus, String);

type Res = Result<(), Fail>;

fn fail(status: HfStatus, msg: impl ToString) -> Fail {
    Fail(status, msg.to_string())
}

fn bad(msg: impl ToString) -> Fail {
    fail(HfStatus::InvalidArgument, msg)
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Res) -> HfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HfStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {m}"));
            HfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(HfStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(HfStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(HfStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(HfStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn landmarks(p: *const f64, count: usize, what: &str) -> Result<Vec<Pixel2>, Fail> {
    let raw = slice(p, count.checked_mul(2).ok_or_else(|| bad("landmark count overflows"))?, what)?;
    Ok(raw.chunks_exact(2).map(|c| Pixel2::new(c[0], c[1])).collect())
}

fn write_landmarks(pts: &[Pixel2], out: &mut [f64]) {
    for (c, p) in out.chunks_exact_mut(2).zip(pts) {
        c[0] = p.u;
        c[1] = p.v;
    }
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfPose {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl HfPose {
    pub const IDENTITY: HfPose =
        HfPose { rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], translation: [0.0; 3] };

    fn from_rigid(t: &RigidTransform) -> Self {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[3 * r + c] = t.rotation[(r, c)];
            }
        }
        HfPose { rotation, translation: [t.translation.x, t.translation.y, t.translation.z] }
    }

    /// Accepts rotations orthonormal within 1e-6 and snaps them onto SO(3).
    fn to_rigid(&self) -> Result<RigidTransform, Fail> {
        let m = Matrix3::from_row_slice(&self.rotation);
        let err = rotation_error(&m);
        if !(err <= 1e-6) {
            return Err(bad(format!("pose rotation is not a rotation matrix (error {err:.3e})")));
        }
        RigidTransform::new(orthonormalize(&m), Vector3::from(self.translation)).map_err(bad)
    }
}

fn intrinsics(k: &HfIntrinsics) -> Result<CameraIntrinsics, Fail> {
    CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy).map_err(bad)
}

pub struct HfModel(DeformableFaceModel);

/// The bundled model scaled to a 63 mm pupil distance.
///
/// # Safety
/// `out` must be NULL or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hf_model_bundled(out: *mut *mut HfModel) -> HfStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = Box::into_raw(Box::new(HfModel(DeformableFaceModel::bundled_metric())));
        Ok(())
    })
}

/// Loads a JSON face model.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`hf_model_bundled`].
#[no_mangle]
pub unsafe extern "C" fn hf_model_load(path: *const c_char, out: *mut *mut HfModel) -> HfStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        if path.is_null() {
            return Err(fail(HfStatus::NullPointer, "path is NULL"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| bad("path is not UTF-8"))?;
        let m = DeformableFaceModel::load(path).map_err(|e| match e {
            holoface::face_model::ModelError::Io { .. } => fail(HfStatus::Io, e),
            other => fail(HfStatus::Parse, other),
        })?;
        *out = Box::into_raw(Box::new(HfModel(m)));
        Ok(())
    })
}

/// A copy of `model` rescaled so its pupil distance is `ipd` meters.
///
/// # Safety
/// `model` must be a live handle; `out` as for [`hf_model_bundled`].
#[no_mangle]
pub unsafe extern "C" fn hf_model_scale_to_ipd(model: *const HfModel, ipd: f64, out: *mut *mut HfModel) -> HfStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let out = deref_mut(out, "out")?;
        let scaled = m.0.scale_to_ipd(ipd).map_err(bad)?;
        *out = Box::into_raw(Box::new(HfModel(scaled)));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_model_free(model: *mut HfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of landmarks the model expects; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_model_landmark_count(model: *const HfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.landmark_map().len())
}

/// Number of blendshapes; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_model_blendshape_count(model: *const HfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.blendshape_count())
}

/// Pupil distance in model units; NaN for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_model_pupil_distance(model: *const HfModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.pupil_distance())
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfFitResult {
    /// Head pose in the camera frame.
    pub pose: HfPose,
    /// Pixels.
    pub rms_residual: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Fits head pose and blendshape weights to `count` landmarks.
///
/// `warm_start` may be NULL for a closed-form initial guess. When `weights`
/// is not NULL, `weights_len` must equal the blendshape count and receives
/// the fitted weights.
///
/// # Safety
/// Pointers must be valid for the stated lengths (`landmarks`: 2·count doubles).
#[no_mangle]
pub unsafe extern "C" fn hf_fit(
    model: *const HfModel,
    landmarks_uv: *const f64,
    count: usize,
    k: *const HfIntrinsics,
    warm_start: *const HfPose,
    weights: *mut f64,
    weights_len: usize,
    out: *mut HfFitResult,
) -> HfStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let pts = landmarks(landmarks_uv, count, "landmarks")?;
        let k = intrinsics(deref(k, "intrinsics")?)?;
        let out = deref_mut(out, "out")?;
        if !weights.is_null() && weights_len != m.blendshape_count() {
            return Err(bad(format!("weights_len is {weights_len}, the model has {} blendshapes", m.blendshape_count())));
        }
        let init = match warm_start.as_ref() {
            Some(p) => HeadPoseFit::from_pose(p.to_rigid()?, BlendWeights::zeros(m.blendshape_count())),
            None => initial_guess(m, &pts, &k).map_err(|e| fail(HfStatus::FitFailed, e))?,
        };
        let r = fit(m, &pts, &k, &init, &FitParams::default()).map_err(|e| fail(HfStatus::FitFailed, e))?;
        if !weights.is_null() {
            slice_mut(weights, weights_len, "weights")?.copy_from_slice(r.weights.as_slice());
        }
        *out = HfFitResult {
            pose: HfPose::from_rigid(&r.pose),
            rms_residual: r.rms_residual,
            iterations: r.iterations as u32,
            converged: r.converged,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfFilterConfig {
    /// m/s².
    pub sigma_a: f64,
    /// Meters.
    pub sigma_z: f64,
    /// Seconds.
    pub tau_m: f64,
    /// Seconds.
    pub max_prediction_horizon: f64,
    /// Meters.
    pub avg_translation_threshold: f64,
    /// Radians.
    pub avg_rotation_threshold: f64,
    /// Seconds.
    pub acquisition_to_render_delay: f64,
}

impl From<&FilterConfig> for HfFilterConfig {
    fn from(c: &FilterConfig) -> Self {
        HfFilterConfig {
            sigma_a: c.sigma_a,
            sigma_z: c.sigma_z,
            tau_m: c.tau_m,
            max_prediction_horizon: c.max_prediction_horizon,
            avg_translation_threshold: c.avg_translation_threshold,
            avg_rotation_threshold: c.avg_rotation_threshold,
            acquisition_to_render_delay: c.acquisition_to_render_delay,
        }
    }
}

impl From<&HfFilterConfig> for FilterConfig {
    fn from(c: &HfFilterConfig) -> Self {
        FilterConfig {
            sigma_a: c.sigma_a,
            sigma_z: c.sigma_z,
            tau_m: c.tau_m,
            max_prediction_horizon: c.max_prediction_horizon,
            avg_translation_threshold: c.avg_translation_threshold,
            avg_rotation_threshold: c.avg_rotation_threshold,
            acquisition_to_render_delay: c.acquisition_to_render_delay,
        }
    }
}

/// Fills `out` with the default filter parameters.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn hf_filter_config_default(out: *mut HfFilterConfig) -> HfStatus {
    guard(|| {
        *deref_mut(out, "out")? = HfFilterConfig::from(&FilterConfig::default());
        Ok(())
    })
}

/// Constant-acceleration position filter, one Kalman filter per axis.
pub struct HfFilter {
    cfg: FilterConfig,
    state: Option<PositionFilter>,
}

/// `config` may be NULL for defaults. The filter starts empty; the first
/// update initializes it.
///
/// # Safety
/// `config` must be NULL or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_filter_new(config: *const HfFilterConfig, out: *mut *mut HfFilter) -> HfStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let cfg = config.as_ref().map_or_else(FilterConfig::default, FilterConfig::from);
        cfg.validate().map_err(bad)?;
        *out = Box::into_raw(Box::new(HfFilter { cfg, state: None }));
        Ok(())
    })
}

/// Adds a position measurement (meters) taken at `timestamp` seconds.
///
/// # Safety
/// `filter` must be a live handle and `position` point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_filter_update(filter: *mut HfFilter, position: *const f64, timestamp: f64) -> HfStatus {
    guard(|| {
        let f = deref_mut(filter, "filter")?;
        let p = Vector3::from_column_slice(slice(position, 3, "position")?);
        match f.state.as_mut() {
            Some(s) => s.update(&p, timestamp, &f.cfg).map_err(bad)?,
            None => f.state = Some(PositionFilter::new(&p, timestamp, &f.cfg).map_err(bad)?),
        }
        Ok(())
    })
}

/// Filtered position at the last update.
///
/// # Safety
/// `filter` must be a live handle and `out` point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_filter_position(filter: *const HfFilter, out: *mut f64) -> HfStatus {
    hf_filter_predict(filter, 0.0, out)
}

/// Position extrapolated `horizon` seconds past the last update (clamped to
/// the configured maximum).
///
/// # Safety
/// As for [`hf_filter_position`].
#[no_mangle]
pub unsafe extern "C" fn hf_filter_predict(filter: *const HfFilter, horizon: f64, out: *mut f64) -> HfStatus {
    guard(|| {
        let f = deref(filter, "filter")?;
        let out = slice_mut(out, 3, "out")?;
        let s = f.state.as_ref().ok_or_else(|| bad("filter has no measurement yet"))?;
        if !horizon.is_finite() {
            return Err(bad("horizon must be finite"));
        }
        let p = if horizon == 0.0 { s.position() } else { s.predict(horizon, &f.cfg) };
        out.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// # Safety
/// `filter` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_filter_free(filter: *mut HfFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfFaceBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// Writes a face box and returns true when a face is found.
pub type HfDetectFn = Option<unsafe extern "C" fn(user: *mut c_void, frame_id: u64, out: *mut HfFaceBox) -> bool>;

/// Refines `count` landmarks (`init`, frame pixels) into `out` and sets
/// `confidence` in [0, 1]. Returns false when alignment failed.
pub type HfAlignFn = Option<
    unsafe extern "C" fn(
        user: *mut c_void,
        frame_id: u64,
        init: *const f64,
        count: usize,
        out: *mut f64,
        confidence: *mut f64,
    ) -> bool,
>;

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HfCallbacks {
    /// Passed back to both callbacks unchanged.
    pub user: *mut c_void,
    pub detect: HfDetectFn,
    pub align: HfAlignFn,
}

struct CDetector {
    user: *mut c_void,
    f: unsafe extern "C" fn(*mut c_void, u64, *mut HfFaceBox) -> bool,
}

// The host owns `user`; callbacks run on whichever thread calls hf_tracker_step.
unsafe impl Send for CDetector {}

impl FaceDetector for CDetector {
    fn detect(&mut self, frame: &Frame) -> Option<FaceBox> {
        let mut b = HfFaceBox { x: 0.0, y: 0.0, width: 0.0, height: 0.0 };
        let found = unsafe { (self.f)(self.user, frame.frame_id, &mut b) };
        let ok = found && [b.x, b.y, b.width, b.height].iter().all(|v| v.is_finite()) && b.width > 0.0 && b.height > 0.0;
        ok.then_some(FaceBox { x: b.x, y: b.y, width: b.width, height: b.height })
    }
}

struct CAligner {
    user: *mut c_void,
    f: unsafe extern "C" fn(*mut c_void, u64, *const f64, usize, *mut f64, *mut f64) -> bool,
}

unsafe impl Send for CAligner {}

impl AlignmentBackend for CAligner {
    fn align(&mut self, input: &AlignInput) -> Result<Alignment, BackendError> {
        let n = input.init_landmarks.len();
        let init: Vec<f64> = input.init_landmarks.iter().flat_map(|p| [p.u, p.v]).collect();
        let mut out = init.clone();
        let mut confidence = 1.0;
        let ok = unsafe { (self.f)(self.user, input.frame_id, init.as_ptr(), n, out.as_mut_ptr(), &mut confidence) };
        if !ok {
            return Err(BackendError::Failed("host alignment callback failed".into()));
        }
        let landmarks: Vec<Pixel2> = out.chunks_exact(2).map(|c| Pixel2::new(c[0], c[1])).collect();
        let valid = landmarks.iter().all(Pixel2::is_finite);
        Ok(Alignment { landmarks, valid, confidence: if confidence.is_finite() { confidence.clamp(0.0, 1.0) } else { 0.0 } })
    }
}

/// The full tracking state machine driven by host callbacks.
pub struct HfTracker {
    inner: Tracker,
    landmarks: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HfFrame {
    pub frame_id: u64,
    /// Seconds.
    pub acquisition_time: f64,
    /// Camera pose in the world at acquisition.
    pub cam_to_world: HfPose,
    /// Optional 8-bit grayscale image, row stride `stride` bytes; NULL for none.
    pub image: *const u8,
    pub width: u32,
    pub height: u32,
    pub stride: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HfTrackOutput {
    pub mode: HfMode,
    pub tracking_valid: bool,
    pub backend: HfBackend,
    pub fallback: bool,
    /// When false the pose fields hold the identity.
    pub has_pose: bool,
    pub camera_pose: HfPose,
    pub world_pose_raw: HfPose,
    pub world_pose_filtered: HfPose,
    pub world_pose_predicted: HfPose,
    /// NaN when no fit was made.
    pub rms_residual: f64,
    /// NaN without a failure predictor or fit.
    pub predicted_sse: f64,
    /// Landmarks written to the caller's buffer.
    pub landmark_count: usize,
}

impl HfTrackOutput {
    fn from_output(o: &TrackOutput) -> Self {
        let poses = (&o.camera_pose, &o.world_pose_raw, &o.world_pose_filtered, &o.world_pose_predicted);
        let (has_pose, c, r, f, p) = match poses {
            (Some(c), Some(r), Some(f), Some(p)) => {
                (true, HfPose::from_rigid(c), HfPose::from_rigid(r), HfPose::from_rigid(f), HfPose::from_rigid(p))
            }
            _ => (false, HfPose::IDENTITY, HfPose::IDENTITY, HfPose::IDENTITY, HfPose::IDENTITY),
        };
        HfTrackOutput {
            mode: match o.mode {
                TrackerMode::Detecting => HfMode::Detecting,
                TrackerMode::Tracking => HfMode::Tracking,
            },
            tracking_valid: o.tracking_valid,
            backend: match o.backend_used {
                None => HfBackend::None,
                Some(BackendKind::Local) => HfBackend::Local,
                Some(BackendKind::Remote) => HfBackend::Remote,
            },
            fallback: o.fallback,
            has_pose,
            camera_pose: c,
            world_pose_raw: r,
            world_pose_filtered: f,
            world_pose_predicted: p,
            rms_residual: o.rms_residual.unwrap_or(f64::NAN),
            predicted_sse: o.predicted_sse.unwrap_or(f64::NAN),
            landmark_count: o.landmarks.len(),
        }
    }
}

/// Creates a tracker over a copy of `model`.
///
/// `config_json` may be NULL for defaults, otherwise a JSON tracker
/// configuration object (unknown fields are rejected). Both callbacks are
/// required.
///
/// # Safety
/// `model`, `k` and `callbacks` must be readable; `config_json` NULL or a
/// NUL-terminated string; `out` writable. `callbacks->user` must stay valid
/// for the tracker's lifetime.
#[no_mangle]
pub unsafe extern "C" fn hf_tracker_new(
    model: *const HfModel,
    k: *const HfIntrinsics,
    config_json: *const c_char,
    callbacks: *const HfCallbacks,
    out: *mut *mut HfTracker,
) -> HfStatus {
    guard(|| {
        let m = deref(model, "model")?.0.clone();
        let k = intrinsics(deref(k, "intrinsics")?)?;
        let cb = deref(callbacks, "callbacks")?;
        let out = deref_mut(out, "out")?;
        let cfg: TrackerConfig = if config_json.is_null() {
            TrackerConfig::default()
        } else {
            let text = CStr::from_ptr(config_json).to_str().map_err(|_| bad("config is not UTF-8"))?;
            serde_json::from_str(text).map_err(|e| fail(HfStatus::Parse, format!("tracker config: {e}")))?
        };
        let detect = cb.detect.ok_or_else(|| fail(HfStatus::NullPointer, "callbacks.detect is NULL"))?;
        let align = cb.align.ok_or_else(|| fail(HfStatus::NullPointer, "callbacks.align is NULL"))?;
        let landmarks = m.landmark_map().len();
        let inner = Tracker::new(
            m,
            k,
            cfg,
            Box::new(CDetector { user: cb.user, f: detect }),
            Box::new(CAligner { user: cb.user, f: align }),
        )
        .map_err(bad)?;
        *out = Box::into_raw(Box::new(HfTracker { inner, landmarks }));
        Ok(())
    })
}

fn copy_image(f: &HfFrame) -> Result<Option<GrayImage>, Fail> {
    if f.image.is_null() {
        return Ok(None);
    }
    let (w, h, stride) = (f.width as usize, f.height as usize, f.stride as usize);
    if w == 0 || h == 0 || stride < w {
        return Err(bad("image needs width, height > 0 and stride >= width"));
    }
    let src = unsafe { std::slice::from_raw_parts(f.image, stride * (h - 1) + w) };
    let mut buf = Vec::with_capacity(w * h);
    for row in 0..h {
        buf.extend_from_slice(&src[row * stride..row * stride + w]);
    }
    Ok(GrayImage::from_raw(f.width, f.height, buf))
}

/// Processes one frame; `render_time` (seconds) sets the prediction horizon.
///
/// When `landmarks_out` is not NULL it must hold `2 * landmarks_capacity`
/// doubles with `landmarks_capacity` at least the model's landmark count.
///
/// # Safety
/// `tracker` must be a live handle, `frame` readable (its image valid for
/// `stride * height` bytes when set), `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_tracker_step(
    tracker: *mut HfTracker,
    frame: *const HfFrame,
    render_time: f64,
    out: *mut HfTrackOutput,
    landmarks_out: *mut f64,
    landmarks_capacity: usize,
) -> HfStatus {
    guard(|| {
        let t = deref_mut(tracker, "tracker")?;
        let f = deref(frame, "frame")?;
        let out = deref_mut(out, "out")?;
        if !landmarks_out.is_null() && landmarks_capacity < t.landmarks {
            return Err(bad(format!("landmarks_capacity is {landmarks_capacity}, need {}", t.landmarks)));
        }
        if !f.acquisition_time.is_finite() || !render_time.is_finite() {
            return Err(bad("times must be finite"));
        }
        let ctx = FramePoseContext::from_cam_to_world(f.cam_to_world.to_rigid()?, f.acquisition_time).map_err(bad)?;
        let frame = Frame { frame_id: f.frame_id, image: copy_image(f)?, ctx, acquisition_time: f.acquisition_time };
        let o = t.inner.step(&frame, render_time);
        *out = HfTrackOutput::from_output(&o);
        if !landmarks_out.is_null() {
            write_landmarks(&o.landmarks, slice_mut(landmarks_out, 2 * landmarks_capacity, "landmarks_out")?);
        }
        Ok(())
    })
}

/// Current mode; detecting for NULL.
///
/// # Safety
/// `tracker` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_tracker_mode(tracker: *const HfTracker) -> HfMode {
    match tracker.as_ref().map(|t| t.inner.state().mode()) {
        Some(TrackerMode::Tracking) => HfMode::Tracking,
        _ => HfMode::Detecting,
    }
}

/// # Safety
/// `tracker` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_tracker_free(tracker: *mut HfTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Landmark error normalized by the distance between two ground-truth eye corners.
///
/// # Safety
/// `pred` and `gt` must hold 2·count doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_normalized_error(
    pred: *const f64,
    gt: *const f64,
    count: usize,
    left_eye: usize,
    right_eye: usize,
    out: *mut f64,
) -> HfStatus {
    guard(|| {
        let p = landmarks(pred, count, "pred")?;
        let g = landmarks(gt, count, "gt")?;
        let out = deref_mut(out, "out")?;
        *out = evaluation::normalized_error(&p, &g, left_eye, right_eye).map_err(bad)?;
        Ok(())
    })
}

/// Area under the error CED curve on [0, limit], in percent. Infinite errors
/// count as failures.
///
/// # Safety
/// `errors` must hold `count` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_auc(errors: *const f64, count: usize, limit: f64, out: *mut f64) -> HfStatus {
    guard(|| {
        let e = slice(errors, count, "errors")?;
        *deref_mut(out, "out")? = evaluation::auc(e, limit).map_err(bad)?;
        Ok(())
    })
}

/// Percentage of errors above `threshold`.
///
/// # Safety
/// As for [`hf_auc`].
#[no_mangle]
pub unsafe extern "C" fn hf_failure_rate(errors: *const f64, count: usize, threshold: f64, out: *mut f64) -> HfStatus {
    guard(|| {
        let e = slice(errors, count, "errors")?;
        *deref_mut(out, "out")? = evaluation::failure_rate_at(e, threshold).map_err(bad)?;
        Ok(())
    })
}

/// Encoded size in bytes of an alignment request carrying `landmarks` points.
#[no_mangle]
pub extern "C" fn hf_request_len(landmarks: usize) -> usize {
    netproto::request_len(landmarks)
}

/// Encoded size in bytes of the matching response.
#[no_mangle]
pub extern "C" fn hf_response_len(landmarks: usize) -> usize {
    netproto::response_len(landmarks)
}

/// Upstream bit rate in bits per second at `fps` requests per second.
#[no_mangle]
pub extern "C" fn hf_request_bitrate(landmarks: usize, fps: f64) -> f64 {
    netproto::request_bitrate(landmarks, fps)
}
