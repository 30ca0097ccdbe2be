//! Per-axis constant-acceleration Kalman filtering with render-time prediction,
//! plus the two-frame pose averaging used to suppress jitter on a still head.
//!
//! Only position is Kalman-filtered (one filter per world axis). Rotation is
//! smoothed by `average_pose` alone.

use nalgebra::{Matrix3, RowVector3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{geodesic_angle, orthonormalize, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("measurement is not finite")]
    NonFiniteMeasurement,
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Acceleration noise scale σ_a, m/s².
    pub sigma_a: f64,
    /// Measurement noise σ_z, meters.
    pub sigma_z: f64,
    /// Acceleration decay time constant τ_m, seconds.
    pub tau_m: f64,
    /// Prediction horizons are clamped to this, seconds.
    pub max_prediction_horizon: f64,
    pub avg_translation_threshold: f64,
    /// Radians.
    pub avg_rotation_threshold: f64,
    /// Default acquisition-to-render delay, seconds.
    pub acquisition_to_render_delay: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sigma_a: 10.0,
            sigma_z: 0.01,
            tau_m: 0.1,
            max_prediction_horizon: 0.120,
            avg_translation_threshold: 0.005,
            avg_rotation_threshold: 4f64.to_radians(),
            acquisition_to_render_delay: 0.170,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), TemporalError> {
        let fields = [
            ("sigma_a", self.sigma_a),
            ("sigma_z", self.sigma_z),
            ("tau_m", self.tau_m),
            ("max_prediction_horizon", self.max_prediction_horizon),
            ("avg_translation_threshold", self.avg_translation_threshold),
            ("avg_rotation_threshold", self.avg_rotation_threshold),
            ("acquisition_to_render_delay", self.acquisition_to_render_delay),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TemporalError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Acceleration decay `α = exp(−dt/τ_m)`.
    pub fn alpha(&self, dt: f64) -> f64 {
        (-dt / self.tau_m).exp()
    }

    /// Process transition for a step of `dt` seconds.
    pub fn transition(&self, dt: f64) -> Matrix3<f64> {
        Matrix3::new(1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, self.alpha(dt))
    }

    /// Process noise `diag(0, 0, q_m²)` with `q_m = σ_a·(1 − α)²`.
    pub fn process_noise(&self, dt: f64) -> Matrix3<f64> {
        let q_m = self.sigma_a * (1.0 - self.alpha(dt)).powi(2);
        Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, q_m * q_m))
    }
}

/// Filter state for one axis: position, velocity and acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisKalman {
    pub state: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    /// Time of the last measurement, seconds.
    pub last_update: f64,
}

impl AxisKalman {
    /// Starts at the first measurement, at rest, with covariance `diag(σ_z², 1, 10)`.
    pub fn new(measurement: f64, timestamp: f64, cfg: &FilterConfig) -> Result<Self, TemporalError> {
        if !measurement.is_finite() || !timestamp.is_finite() {
            return Err(TemporalError::NonFiniteMeasurement);
        }
        Ok(Self {
            state: Vector3::new(measurement, 0.0, 0.0),
            covariance: Matrix3::from_diagonal(&Vector3::new(cfg.sigma_z * cfg.sigma_z, 1.0, 10.0)),
            last_update: timestamp,
        })
    }

    pub fn position(&self) -> f64 {
        self.state.x
    }

    pub fn velocity(&self) -> f64 {
        self.state.y
    }

    pub fn acceleration(&self) -> f64 {
        self.state.z
    }
}

/// One predict/update cycle.
pub fn kalman_step(f: &AxisKalman, dt: f64, measurement: f64, cfg: &FilterConfig) -> Result<AxisKalman, TemporalError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TemporalError::InvalidTimeStep(dt));
    }
    if !measurement.is_finite() {
        return Err(TemporalError::NonFiniteMeasurement);
    }
    let a = cfg.transition(dt);
    let x = a * f.state;
    let p = a * f.covariance * a.transpose() + cfg.process_noise(dt);

    let r = cfg.sigma_z * cfg.sigma_z;
    let h = RowVector3::new(1.0, 0.0, 0.0);
    let s = p[(0, 0)] + r;
    let gain = p.column(0) / s;
    let x = x + gain * (measurement - x.x);
    // Joseph form keeps the covariance PSD under rounding.
    let i_kh = Matrix3::identity() - gain * h;
    let p = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
    let p = (p + p.transpose()) * 0.5;
    Ok(AxisKalman { state: x, covariance: p, last_update: f.last_update + dt })
}

/// Position after propagating for `horizon` seconds without a measurement.
///
/// The horizon is clamped to `[0, max_prediction_horizon]`.
pub fn predict_at(f: &AxisKalman, horizon: f64, cfg: &FilterConfig) -> f64 {
    let h = if horizon.is_nan() { 0.0 } else { horizon.clamp(0.0, cfg.max_prediction_horizon) };
    if h == 0.0 {
        return f.state.x;
    }
    (cfg.transition(h) * f.state).x
}

/// Averages the two most recent poses when the head barely moved.
///
/// Applies when the translation changed by less than the translation threshold
/// and the rotation by less than the rotation threshold; otherwise `cur` is
/// returned unchanged. Rotations are averaged along the geodesic.
pub fn average_pose(prev: &RigidTransform, cur: &RigidTransform, cfg: &FilterConfig) -> RigidTransform {
    let moved = (cur.translation - prev.translation).norm();
    let turned = geodesic_angle(&prev.rotation, &cur.rotation);
    if !(moved < cfg.avg_translation_threshold && turned < cfg.avg_rotation_threshold) {
        return *cur;
    }
    let qa = UnitQuaternion::from_matrix(&prev.rotation);
    let qb = UnitQuaternion::from_matrix(&cur.rotation);
    let mid = qa.try_slerp(&qb, 0.5, 1e-12).unwrap_or(qb);
    RigidTransform {
        rotation: orthonormalize(&mid.to_rotation_matrix().into_inner()),
        translation: (prev.translation + cur.translation) * 0.5,
    }
}

/// Three independent axis filters over a world-frame position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFilter {
    pub axes: [AxisKalman; 3],
}

impl PositionFilter {
    pub fn new(p: &Vector3<f64>, timestamp: f64, cfg: &FilterConfig) -> Result<Self, TemporalError> {
        Ok(Self {
            axes: [
                AxisKalman::new(p.x, timestamp, cfg)?,
                AxisKalman::new(p.y, timestamp, cfg)?,
                AxisKalman::new(p.z, timestamp, cfg)?,
            ],
        })
    }

    pub fn last_update(&self) -> f64 {
        self.axes[0].last_update
    }

    /// Feeds a measurement taken at `timestamp`.
    pub fn update(&mut self, p: &Vector3<f64>, timestamp: f64, cfg: &FilterConfig) -> Result<(), TemporalError> {
        let dt = timestamp - self.last_update();
        let next = [
            kalman_step(&self.axes[0], dt, p.x, cfg)?,
            kalman_step(&self.axes[1], dt, p.y, cfg)?,
            kalman_step(&self.axes[2], dt, p.z, cfg)?,
        ];
        self.axes = next;
        Ok(())
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.axes[0].position(), self.axes[1].position(), self.axes[2].position())
    }

    pub fn predict(&self, horizon: f64, cfg: &FilterConfig) -> Vector3<f64> {
        Vector3::from_fn(|i, _| predict_at(&self.axes[i], horizon, cfg))
    }
}
