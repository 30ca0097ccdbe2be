//! Cubic Hermite interpolation through keyframes with Catmull-Rom tangents.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};

use crate::geometry::RigidTransform;

fn hermite<const N: usize>(
    t: f64,
    times: &[f64],
    vals: &[nalgebra::SVector<f64, N>],
) -> nalgebra::SVector<f64, N> {
    let n = times.len();
    if n == 1 || t <= times[0] {
        return vals[0];
    }
    if t >= times[n - 1] {
        return vals[n - 1];
    }
    let k = times.partition_point(|&x| x <= t) - 1;
    let tangent = |i: usize| {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
        (vals[b] - vals[a]) / (times[b] - times[a])
    };
    let h = times[k + 1] - times[k];
    let s = (t - times[k]) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    vals[k] * h00 + tangent(k) * (h10 * h) + vals[k + 1] * h01 + tangent(k + 1) * (h11 * h)
}

/// Smooth pose trajectory: translation and (sign-aligned) quaternion components
/// are interpolated independently, and the quaternion is renormalized.
#[derive(Debug, Clone)]
pub struct PoseSpline {
    times: Vec<f64>,
    translations: Vec<Vector3<f64>>,
    quats: Vec<Vector4<f64>>,
}

impl PoseSpline {
    /// `keys` must be non-empty with strictly increasing times.
    pub fn new(keys: &[(f64, RigidTransform)]) -> Option<Self> {
        if keys.is_empty() || keys.windows(2).any(|w| !(w[1].0 > w[0].0)) || keys.iter().any(|k| !k.0.is_finite()) {
            return None;
        }
        let mut quats: Vec<Vector4<f64>> = Vec::with_capacity(keys.len());
        for (_, p) in keys {
            let q = UnitQuaternion::from_matrix(&p.rotation).into_inner().coords;
            let q = match quats.last() {
                Some(prev) if prev.dot(&q) < 0.0 => -q,
                _ => q,
            };
            quats.push(q);
        }
        Some(Self {
            times: keys.iter().map(|k| k.0).collect(),
            translations: keys.iter().map(|k| k.1.translation).collect(),
            quats,
        })
    }

    pub fn constant(pose: RigidTransform) -> Self {
        Self::new(&[(0.0, pose)]).expect("single key")
    }

    pub fn eval(&self, t: f64) -> RigidTransform {
        let translation = hermite(t, &self.times, &self.translations);
        let q = hermite(t, &self.times, &self.quats);
        let q = UnitQuaternion::from_quaternion(Quaternion::from(q));
        RigidTransform { rotation: q.to_rotation_matrix().into_inner(), translation }
    }
}

/// Piecewise-linear scalar schedule, held constant outside its keys.
pub fn linear_schedule(keys: &[[f64; 2]], t: f64) -> f64 {
    match keys {
        [] => 0.0,
        [only] => only[1],
        _ => {
            if t <= keys[0][0] {
                return keys[0][1];
            }
            let last = keys[keys.len() - 1];
            if t >= last[0] {
                return last[1];
            }
            let k = keys.partition_point(|k| k[0] <= t) - 1;
            let (a, b) = (keys[k], keys[k + 1]);
            a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
        }
    }
}
