//! Head pose and blendshape-weight fitting to 2D landmarks.
//!
//! Minimizes `Σⱼ ‖proj(K·(R·Xⱼ(w) + t)) − sⱼ‖² + λ_w·‖w‖²` over the rotation,
//! translation and blendshape weights with Gauss-Newton. Rotation increments
//! are axis-angle vectors applied by left multiplication. When the normal
//! equations are ill-conditioned or a step fails to decrease the objective,
//! Levenberg-style diagonal damping is added until it does.

mod attributes;

pub use attributes::{estimate_attributes, Attribute, AttributeRule, AttributeSet, AttributeThresholds};

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::face_model::{BlendWeights, BlendshapeKind, DeformableFaceModel, ModelError};
use crate::geometry::{
    exp_so3, orthonormalize, skew, unproject, CameraIntrinsics, GeometryError, Pixel2, RigidTransform, MIN_DEPTH,
};

/// Minimum number of mapped landmarks for the pose to be observable.
pub const MIN_LANDMARKS: usize = 6;

const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {needed} mapped landmarks, got {got}")]
    InsufficientLandmarks { got: usize, needed: usize },
    #[error("expected {expected} landmarks (one per landmark_map entry), got {got}")]
    LandmarkCountMismatch { expected: usize, got: usize },
    #[error("normal equations remain singular after damping")]
    SingularNormalEquations,
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("degenerate landmark configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("invalid fit parameters: {0}")]
    InvalidParams(String),
    #[error("unknown blendshape '{0}' in attribute thresholds")]
    UnknownAttributeName(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitParams {
    pub max_iterations: usize,
    /// Largest absolute parameter update below which the fit counts as converged.
    pub step_tolerance: f64,
    /// RMS reprojection error (pixels) below which the fit counts as converged.
    pub residual_tolerance: f64,
    /// Ridge weight λ_w on the blendshape weights.
    pub weight_regularization: f64,
    pub shape_unit_bounds: Bounds,
    pub action_unit_bounds: Bounds,
    /// Per-blendshape bounds; overrides the per-kind defaults when set.
    pub weight_bounds: Option<Vec<Bounds>>,
    /// Smallest damping factor used once damping kicks in.
    pub damping_floor: f64,
    /// Hold shape-unit weights at their initial values.
    pub freeze_shape_units: bool,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            step_tolerance: 1e-10,
            residual_tolerance: 1e-9,
            weight_regularization: 1e-3,
            shape_unit_bounds: Bounds::new(-2.0, 2.0),
            action_unit_bounds: Bounds::new(0.0, 2.0),
            weight_bounds: None,
            damping_floor: 1e-6,
            freeze_shape_units: false,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: String| Err(FitError::InvalidParams(m));
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1".into());
        }
        if !(self.step_tolerance > 0.0) || !(self.residual_tolerance > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if !(self.weight_regularization >= 0.0) || !self.weight_regularization.is_finite() {
            return bad("weight_regularization must be finite and >= 0".into());
        }
        if !(self.damping_floor > 0.0) {
            return bad("damping_floor must be positive".into());
        }
        let all = [self.shape_unit_bounds, self.action_unit_bounds];
        for b in all.iter().chain(self.weight_bounds.iter().flatten()) {
            if !(b.lo <= b.hi) {
                return bad(format!("bounds lo {} > hi {}", b.lo, b.hi));
            }
        }
        Ok(())
    }

    pub fn bounds_for(&self, model: &DeformableFaceModel) -> Result<Vec<Bounds>, FitError> {
        match &self.weight_bounds {
            Some(b) if b.len() != model.blendshape_count() => Err(FitError::InvalidParams(format!(
                "weight_bounds has {} entries, model has {} blendshapes",
                b.len(),
                model.blendshape_count()
            ))),
            Some(b) => Ok(b.clone()),
            None => Ok(model
                .blendshapes()
                .iter()
                .map(|b| match b.kind {
                    BlendshapeKind::Shape => self.shape_unit_bounds,
                    BlendshapeKind::Action => self.action_unit_bounds,
                })
                .collect()),
        }
    }
}

/// Camera-frame head pose with blendshape weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPoseFit {
    pub pose: RigidTransform,
    pub weights: BlendWeights,
    /// RMS reprojection error over all landmark coordinates, in pixels.
    pub rms_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl HeadPoseFit {
    /// A starting point with unknown residual.
    pub fn from_pose(pose: RigidTransform, weights: BlendWeights) -> Self {
        Self { pose, weights, rms_residual: f64::INFINITY, iterations: 0, converged: false }
    }
}

fn check_inputs(model: &DeformableFaceModel, landmarks: &[Pixel2]) -> Result<(), FitError> {
    let expected = model.landmark_map().len();
    if expected < MIN_LANDMARKS {
        return Err(FitError::InsufficientLandmarks { got: expected, needed: MIN_LANDMARKS });
    }
    if landmarks.len() != expected {
        if landmarks.len() < MIN_LANDMARKS {
            return Err(FitError::InsufficientLandmarks { got: landmarks.len(), needed: MIN_LANDMARKS });
        }
        return Err(FitError::LandmarkCountMismatch { expected, got: landmarks.len() });
    }
    if landmarks.iter().any(|s| !s.is_finite()) {
        return Err(FitError::NonFiniteInput("landmarks"));
    }
    Ok(())
}

/// Reprojection residuals (`projected − observed`, pixels, interleaved u/v)
/// and their Jacobian with columns `[δrotation(3), translation(3), weights(n)]`.
pub fn residual_jacobian(
    model: &DeformableFaceModel,
    landmarks: &[Pixel2],
    k: &CameraIntrinsics,
    pose: &RigidTransform,
    weights: &BlendWeights,
) -> Result<(DVector<f64>, DMatrix<f64>), FitError> {
    check_inputs(model, landmarks)?;
    model.check_weights(weights)?;
    if !pose.is_finite() || weights.as_slice().iter().any(|w| !w.is_finite()) {
        return Err(FitError::NonFiniteInput("state"));
    }
    let n = model.blendshape_count();
    let mut r = DVector::zeros(2 * landmarks.len());
    let mut jac = DMatrix::zeros(2 * landmarks.len(), 6 + n);
    fill_residual_jacobian(model, landmarks, k, pose, weights.as_slice(), &mut r, Some(&mut jac))?;
    Ok((r, jac))
}

fn fill_residual_jacobian(
    model: &DeformableFaceModel,
    landmarks: &[Pixel2],
    k: &CameraIntrinsics,
    pose: &RigidTransform,
    weights: &[f64],
    r: &mut DVector<f64>,
    mut jac: Option<&mut DMatrix<f64>>,
) -> Result<(), GeometryError> {
    let (fx, fy, cx, cy) = (k.fx(), k.fy(), k.cx(), k.cy());
    for (j, (pair, s)) in model.landmark_map().iter().zip(landmarks).enumerate() {
        let x = model.deformed_vertex(pair.vertex, weights);
        let rx = pose.rotation * x;
        let p = rx + pose.translation;
        if !(p.z > MIN_DEPTH) {
            return Err(GeometryError::DegenerateProjection { z: p.z });
        }
        let iz = 1.0 / p.z;
        r[2 * j] = fx * p.x * iz + cx - s.u;
        r[2 * j + 1] = fy * p.y * iz + cy - s.v;

        if let Some(jac) = jac.as_deref_mut() {
            let dproj = Matrix2x3::new(fx * iz, 0.0, -fx * p.x * iz * iz, 0.0, fy * iz, -fy * p.y * iz * iz);
            let d_rot = dproj * (-skew(&rx));
            for c in 0..3 {
                jac[(2 * j, c)] = d_rot[(0, c)];
                jac[(2 * j + 1, c)] = d_rot[(1, c)];
                jac[(2 * j, 3 + c)] = dproj[(0, c)];
                jac[(2 * j + 1, 3 + c)] = dproj[(1, c)];
            }
            for (i, b) in model.blendshapes().iter().enumerate() {
                let d = dproj * (pose.rotation * b.offsets[pair.vertex]);
                jac[(2 * j, 6 + i)] = d[0];
                jac[(2 * j + 1, 6 + i)] = d[1];
            }
        }
    }
    Ok(())
}

struct Problem<'a> {
    model: &'a DeformableFaceModel,
    landmarks: &'a [Pixel2],
    k: &'a CameraIntrinsics,
    ridge: f64,
    /// Indices of the weights being optimized.
    active: Vec<usize>,
    bounds: Vec<Bounds>,
}

impl Problem<'_> {
    /// Regularized objective and RMS residual; `None` if a point falls behind the camera.
    fn evaluate(&self, pose: &RigidTransform, w: &[f64]) -> Option<(f64, f64)> {
        let mut r = DVector::zeros(2 * self.landmarks.len());
        fill_residual_jacobian(self.model, self.landmarks, self.k, pose, w, &mut r, None).ok()?;
        let sse = r.norm_squared();
        let reg: f64 = self.active.iter().map(|&i| w[i] * w[i]).sum::<f64>() * self.ridge;
        Some((sse + reg, (sse / r.len() as f64).sqrt()))
    }

    fn clamp(&self, w: &mut [f64]) {
        for (x, b) in w.iter_mut().zip(&self.bounds) {
            *x = x.clamp(b.lo, b.hi);
        }
    }
}

/// Fits pose and weights to `landmarks`, ordered like the model's `landmark_map`.
pub fn fit(
    model: &DeformableFaceModel,
    landmarks: &[Pixel2],
    k: &CameraIntrinsics,
    init: &HeadPoseFit,
    params: &FitParams,
) -> Result<HeadPoseFit, FitError> {
    fit_traced(model, landmarks, k, init, params).map(|(f, _)| f)
}

/// Like [`fit`], also returning the objective value after every accepted iteration
/// (the first entry is the objective at the clamped initial state).
pub fn fit_traced(
    model: &DeformableFaceModel,
    landmarks: &[Pixel2],
    k: &CameraIntrinsics,
    init: &HeadPoseFit,
    params: &FitParams,
) -> Result<(HeadPoseFit, Vec<f64>), FitError> {
    params.validate()?;
    check_inputs(model, landmarks)?;
    model.check_weights(&init.weights)?;
    if !init.pose.is_finite() || init.weights.as_slice().iter().any(|w| !w.is_finite()) {
        return Err(FitError::NonFiniteInput("initial state"));
    }
    if !(init.pose.translation.z > 0.0) {
        return Err(FitError::InvalidParams("initial pose must be in front of the camera".into()));
    }

    let n = model.blendshape_count();
    let active: Vec<usize> = (0..n)
        .filter(|&i| !(params.freeze_shape_units && model.blendshapes()[i].kind == BlendshapeKind::Shape))
        .collect();
    let problem = Problem {
        model,
        landmarks,
        k,
        ridge: params.weight_regularization,
        active,
        bounds: params.bounds_for(model)?,
    };

    let mut pose = RigidTransform { rotation: orthonormalize(&init.pose.rotation), translation: init.pose.translation };
    let mut w = init.weights.as_slice().to_vec();
    problem.clamp(&mut w);
    let (mut cost, mut rms) = problem
        .evaluate(&pose, &w)
        .ok_or(FitError::Geometry(GeometryError::DegenerateProjection { z: 0.0 }))?;
    let (init_pose, init_w, init_rms) = (pose, w.clone(), rms);
    let mut trace = vec![cost];

    let m = 6 + problem.active.len();
    let mut converged = rms < params.residual_tolerance;
    let mut iterations = 0;
    let mut damping = 0.0_f64;
    let mut r = DVector::zeros(2 * landmarks.len());
    let mut full_jac = DMatrix::zeros(2 * landmarks.len(), 6 + n);

    while !converged && iterations < params.max_iterations {
        iterations += 1;
        fill_residual_jacobian(model, landmarks, k, &pose, &w, &mut r, Some(&mut full_jac))?;
        let jac = if problem.active.len() == n {
            full_jac.clone()
        } else {
            let cols: Vec<usize> = (0..6).chain(problem.active.iter().map(|i| i + 6)).collect();
            full_jac.select_columns(cols.iter())
        };
        let mut h = jac.tr_mul(&jac);
        let mut g = jac.tr_mul(&r);
        for (c, &i) in problem.active.iter().enumerate() {
            h[(6 + c, 6 + c)] += problem.ridge;
            g[6 + c] += problem.ridge * w[i];
        }
        // Weights resting on a bound with the gradient pushing outward stay put this iteration.
        for (c, &i) in problem.active.iter().enumerate() {
            let b = problem.bounds[i];
            let d = 6 + c;
            if (w[i] <= b.lo && g[d] > 0.0) || (w[i] >= b.hi && g[d] < 0.0) {
                h.row_mut(d).fill(0.0);
                h.column_mut(d).fill(0.0);
                h[(d, d)] = 1.0;
                g[d] = 0.0;
            }
        }

        let mut accepted = false;
        let mut step_size;
        loop {
            let mut a = h.clone();
            if damping > 0.0 {
                for d in 0..m {
                    a[(d, d)] += damping * h[(d, d)].max(1e-9);
                }
            }
            let Some(chol) = a.cholesky() else {
                damping = (damping * 10.0).max(params.damping_floor);
                if damping > MAX_DAMPING {
                    return Err(FitError::SingularNormalEquations);
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            step_size = delta.amax();

            let rot = exp_so3(&Vector3::new(delta[0], delta[1], delta[2]));
            let cand_pose = RigidTransform {
                rotation: orthonormalize(&(rot * pose.rotation)),
                translation: pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
            };
            let mut cand_w = w.clone();
            for (c, &i) in problem.active.iter().enumerate() {
                cand_w[i] += delta[6 + c];
            }
            problem.clamp(&mut cand_w);

            match problem.evaluate(&cand_pose, &cand_w) {
                Some((c, cr)) if c <= cost => {
                    pose = cand_pose;
                    w = cand_w;
                    cost = c;
                    rms = cr;
                    accepted = true;
                    damping = if damping / 10.0 < params.damping_floor { 0.0 } else { damping / 10.0 };
                    break;
                }
                _ => {
                    damping = (damping * 10.0).max(params.damping_floor);
                    if damping > MAX_DAMPING || step_size < params.step_tolerance {
                        break;
                    }
                }
            }
        }

        if accepted {
            trace.push(cost);
        }
        if step_size < params.step_tolerance || rms < params.residual_tolerance {
            converged = true;
        } else if !accepted {
            // No descent direction left; call it converged at a first-order stationary point.
            converged = g.amax() <= 1e-8 * cost.max(1.0);
            break;
        }
    }

    if rms > init_rms {
        return Ok((
            HeadPoseFit {
                pose: init_pose,
                weights: BlendWeights(init_w),
                rms_residual: init_rms,
                iterations,
                converged: false,
            },
            trace,
        ));
    }
    Ok((HeadPoseFit { pose, weights: BlendWeights(w), rms_residual: rms, iterations, converged }, trace))
}

/// Cold-start estimate from a single set of landmarks.
///
/// Depth comes from the ratio of the model pupil distance to the observed
/// pupil distance (each pupil taken from the mapped eye landmarks); rotation
/// from an orthographic alignment of the mapped mean-shape vertices to the
/// centered landmarks. Weights start at zero.
pub fn initial_guess(
    model: &DeformableFaceModel,
    landmarks: &[Pixel2],
    k: &CameraIntrinsics,
) -> Result<HeadPoseFit, FitError> {
    check_inputs(model, landmarks)?;
    let count = landmarks.len();
    let q: Vec<Vector3<f64>> = landmarks.iter().map(|s| unproject(k, s)).collect();
    let xs: Vec<Vector3<f64>> = model.landmark_map().iter().map(|p| model.mean_shape()[p.vertex]).collect();

    let q_mean = q.iter().sum::<Vector3<f64>>() / count as f64;
    let x_mean = xs.iter().sum::<Vector3<f64>>() / count as f64;

    // Collinearity check on the image points.
    let mut cov = nalgebra::Matrix2::<f64>::zeros();
    for p in &q {
        let d = nalgebra::Vector2::new(p.x - q_mean.x, p.y - q_mean.y);
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= 1e-9 * hi {
        return Err(FitError::DegenerateConfiguration("landmarks are collinear"));
    }

    // Scaled-orthographic fit: q_c ≈ M·x_c with M = [r1; r2]·s.
    let qc = DMatrix::from_fn(2, count, |r, c| q[c][r] - q_mean[r]);
    let xc = DMatrix::from_fn(3, count, |r, c| xs[c][r] - x_mean[r]);
    let xxt = &xc * xc.transpose();
    let xxt_inv = xxt.pseudo_inverse(1e-12).map_err(|_| FitError::DegenerateConfiguration("model points"))?;
    let m = &qc * xc.transpose() * xxt_inv;
    let r1 = Vector3::new(m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let r2 = Vector3::new(m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let scale = 0.5 * (r1.norm() + r2.norm());
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(FitError::DegenerateConfiguration("zero landmark spread"));
    }
    let r3 = r1.cross(&r2);
    let rotation = orthonormalize(&Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.normalize().transpose() * scale]));

    let depth = match observed_pupil_distance(model, &q) {
        Some(d) if d > 0.0 => model.pupil_distance() / d,
        _ => 1.0 / scale,
    };
    let translation = Vector3::new(q_mean.x, q_mean.y, 1.0) * depth - rotation * x_mean;
    if !(translation.z > 0.0) {
        return Err(FitError::DegenerateConfiguration("estimated face lies behind the camera"));
    }
    Ok(HeadPoseFit::from_pose(
        RigidTransform { rotation, translation },
        BlendWeights::zeros(model.blendshape_count()),
    ))
}

/// Pupil distance in normalized image coordinates, if every pupil reference vertex is mapped.
fn observed_pupil_distance(model: &DeformableFaceModel, q: &[Vector3<f64>]) -> Option<f64> {
    use crate::face_model::PupilRef;
    let find = |v: usize| model.landmark_map().iter().position(|p| p.vertex == v).map(|j| q[j]);
    let pupil = |p: PupilRef| -> Option<Vector3<f64>> {
        match p {
            PupilRef::Vertex(v) => find(v),
            PupilRef::Midpoint([a, b]) => Some((find(a)? + find(b)?) * 0.5),
        }
    };
    let pupils = model.pupils();
    let (l, r) = (pupil(pupils.left)?, pupil(pupils.right)?);
    Some((l - r).xy().norm())
}
