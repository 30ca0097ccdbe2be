//! Pinhole camera, rigid transforms and rotation helpers.
//!
//! Conventions: right-handed frames, the camera looks along +z, image `u`
//! grows to the right and `v` grows downwards.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 3D point or direction in meters.
pub type Point3 = Vector3<f64>;

/// Depth below which a point counts as lying on the camera plane.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point at depth {z} cannot be projected (must be > {MIN_DEPTH})")]
    DegenerateProjection { z: f64 },
    #[error("lookAt is undefined: {0}")]
    DegenerateLookAt(&'static str),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("matrix is not a proper rotation (orthonormality error {0:e})")]
    InvalidRotation(f64),
}

/// An image location in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel2 {
    pub u: f64,
    pub v: f64,
}

impl Pixel2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &Pixel2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Pinhole intrinsics without skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics", into = "RawIntrinsics")]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Serialize, Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = GeometryError;

    fn try_from(r: RawIntrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy)
    }
}

impl From<CameraIntrinsics> for RawIntrinsics {
    fn from(k: CameraIntrinsics) -> Self {
        RawIntrinsics { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite value".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }

    /// The 3×3 intrinsic matrix K.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Same focal lengths with the principal point moved by `(du, dv)`.
    pub fn shifted(&self, du: f64, dv: f64) -> Self {
        Self { cx: self.cx + du, cy: self.cy + dv, ..*self }
    }
}

/// Projects a camera-frame point: `(fx·x/z + cx, fy·y/z + cy)`.
pub fn project(k: &CameraIntrinsics, p: &Point3) -> Result<Pixel2, GeometryError> {
    if !(p.z > MIN_DEPTH) {
        return Err(GeometryError::DegenerateProjection { z: p.z });
    }
    Ok(Pixel2 { u: k.fx * p.x / p.z + k.cx, v: k.fy * p.y / p.z + k.cy })
}

/// Back-projects a pixel to the ray point at unit depth, `K⁻¹·(u, v, 1)`.
pub fn unproject(k: &CameraIntrinsics, s: &Pixel2) -> Point3 {
    Point3::new((s.u - k.cx) / k.fx, (s.v - k.cy) / k.fy, 1.0)
}

/// Rotation whose +z column points from `from` towards `to`, with its +y
/// column as close to `up` as possible.
pub fn look_at(from: &Point3, to: &Point3, up: &Point3) -> Result<Matrix3<f64>, GeometryError> {
    let d = to - from;
    let len = d.norm();
    if !(len > 1e-9) {
        return Err(GeometryError::DegenerateLookAt("source and target coincide"));
    }
    let up_len = up.norm();
    if !(up_len > 0.0) {
        return Err(GeometryError::DegenerateLookAt("zero up vector"));
    }
    let forward = d / len;
    let side = (up / up_len).cross(&forward);
    let side_len = side.norm();
    if side_len < 1e-6 {
        return Err(GeometryError::DegenerateLookAt("up vector parallel to view direction"));
    }
    let x = side / side_len;
    let y = forward.cross(&x);
    Ok(Matrix3::from_columns(&[x, y, forward]))
}

/// Skew-symmetric cross-product matrix of `v`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix for an axis-angle vector (angle = norm, radians).
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(*omega).into_inner()
}

/// Axis-angle vector of a rotation matrix.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    UnitQuaternion::from_matrix(r).scaled_axis()
}

/// Angle of the relative rotation `aᵀ·b`, in radians.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    // atan2 on the skew part stays accurate near 0 and π, unlike acos of the trace.
    let sin_part = Vector3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]).norm();
    let cos_part = rel.trace() - 1.0;
    sin_part.atan2(cos_part)
}

/// Projects a near-rotation onto SO(3) (closest proper rotation in Frobenius norm).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Maximum elementwise deviation from `RᵀR = I`, plus `|det R − 1|`.
pub fn rotation_error(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a transform, rejecting matrices that are not rotations within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let err = rotation_error(&rotation);
        if !(err <= 1e-9) || !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidRotation(err));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_axis_angle(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: exp_so3(&omega), translation }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    /// Row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let r = &self.rotation;
        let raw = RawTransform {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        };
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawTransform::deserialize(d)?;
        let r = raw.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        // Accept text round-off; snap back onto SO(3) only when it is visible.
        let err = rotation_error(&rotation);
        if !(err <= 1e-6) {
            return Err(serde::de::Error::custom("rotation is not orthonormal"));
        }
        Ok(RigidTransform {
            rotation: if err > 1e-12 { orthonormalize(&rotation) } else { rotation },
            translation: Vector3::from(raw.translation),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let omega = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let t = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        RigidTransform::from_axis_angle(omega, t)
    }

    #[test]
    fn project_examples() {
        let unit = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(project(&unit, &Point3::new(2.0, 4.0, 2.0)).unwrap(), Pixel2::new(1.0, 2.0));

        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        assert_eq!(project(&k, &Point3::new(0.0, 0.0, 1.0)).unwrap(), Pixel2::new(320.0, 240.0));

        // 500·0.1/0.8 + 320 = 382.5 ; 450·(−0.05)/0.8 + 240 = 211.875
        let k2 = CameraIntrinsics::new(500.0, 450.0, 320.0, 240.0).unwrap();
        let px = project(&k2, &Point3::new(0.1, -0.05, 0.8)).unwrap();
        assert!((px.u - 382.5).abs() < 1e-12);
        assert!((px.v - 211.875).abs() < 1e-12);
    }

    #[test]
    fn project_rejects_points_on_or_behind_camera_plane() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        for z in [0.0, -1.0, 1e-10] {
            assert!(matches!(
                project(&k, &Point3::new(0.1, 0.1, z)),
                Err(GeometryError::DegenerateProjection { .. })
            ));
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(f64::NAN, 1.0, 0.0, 0.0).is_err());
        let bad: Result<CameraIntrinsics, _> = serde_json::from_str(r#"{"fx":-1,"fy":1,"cx":0,"cy":0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn unproject_examples() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        assert_eq!(unproject(&k, &Pixel2::new(320.0, 240.0)), Point3::new(0.0, 0.0, 1.0));
        assert_eq!(unproject(&k, &Pixel2::new(420.0, 240.0)), Point3::new(0.2, 0.0, 1.0));
    }

    #[test]
    fn unproject_project_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = CameraIntrinsics::new(612.0, 598.0, 301.0, 255.0).unwrap();
        for _ in 0..100 {
            let p = Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.1..5.0));
            let back = unproject(&k, &project(&k, &p).unwrap()) * p.z;
            assert!((back - p).abs().max() < 1e-9);
        }
    }

    #[test]
    fn look_at_examples() {
        let up = Point3::new(0.0, 1.0, 0.0);
        let r = look_at(&Point3::zeros(), &Point3::new(0.0, 0.0, 1.0), &up).unwrap();
        assert!((r - Matrix3::identity()).abs().max() < 1e-15);

        let r = look_at(&Point3::zeros(), &Point3::new(1.0, 0.0, 0.0), &up).unwrap();
        assert!((r * Point3::new(0.0, 0.0, 1.0) - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let ry = exp_so3(&Vector3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0));
        assert!((r - ry).abs().max() < 1e-12);
        assert!(rotation_error(&r) < 1e-12);

        assert!(matches!(
            look_at(&Point3::zeros(), &Point3::new(0.0, 3.0, 0.0), &up),
            Err(GeometryError::DegenerateLookAt(_))
        ));
        assert!(look_at(&Point3::zeros(), &Point3::zeros(), &up).is_err());
    }

    #[test]
    fn compose_and_invert() {
        let id = RigidTransform::identity();
        assert_eq!(id.inverse(), id);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let c = t.compose(&t.inverse());
            assert!((c.rotation - Matrix3::identity()).abs().max() < 1e-9);
            assert!(c.translation.abs().max() < 1e-9);
            let c = t.inverse().compose(&t);
            assert!(c.translation.abs().max() < 1e-9);
        }
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let a = RigidTransform::from_axis_angle(Vector3::new(0.0, 0.0, 0.5), Vector3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_axis_angle(Vector3::new(0.3, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0));
        let p = Point3::new(0.2, -0.4, 0.9);
        assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-12);
    }

    #[test]
    fn geodesic_angle_matches_axis_angle() {
        let a = exp_so3(&Vector3::new(0.1, -0.2, 0.3));
        let delta = Vector3::new(0.2, 0.1, -0.05);
        let b = a * exp_so3(&delta);
        assert!((geodesic_angle(&a, &b) - delta.norm()).abs() < 1e-12);
        assert!((log_so3(&exp_so3(&delta)) - delta).norm() < 1e-12);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let r = exp_so3(&Vector3::new(0.4, 0.1, -0.7));
        let noisy = r + Matrix3::repeat(1e-4);
        let fixed = orthonormalize(&noisy);
        assert!(rotation_error(&fixed) < 1e-12);
        assert!((fixed - r).abs().max() < 1e-3);
    }

    #[test]
    fn transform_serde_round_trip() {
        let t = RigidTransform::from_axis_angle(Vector3::new(0.3, -0.2, 0.1), Vector3::new(0.1, 0.2, 1.5));
        let s = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert!((back.rotation - t.rotation).abs().max() < 1e-15);
        assert_eq!(back.translation, t.translation);
    }

    proptest::proptest! {
        #[test]
        fn projection_is_scale_invariant(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.2f64..4.0, lambda in 0.1f64..10.0) {
            let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap();
            let p = Point3::new(x, y, z);
            let a = project(&k, &p).unwrap();
            let b = project(&k, &(p * lambda)).unwrap();
            proptest::prop_assert!(a.distance(&b) < 1e-9);
        }

        #[test]
        fn unproject_then_project_is_identity(u in -100.0f64..800.0, v in -100.0f64..600.0, fx in 100.0f64..2000.0, fy in 100.0f64..2000.0) {
            let k = CameraIntrinsics::new(fx, fy, 320.0, 240.0).unwrap();
            let s = Pixel2::new(u, v);
            let back = project(&k, &unproject(&k, &s)).unwrap();
            proptest::prop_assert!(back.distance(&s) < 1e-9);
        }

        #[test]
        fn look_at_is_proper_rotation(fx in -5.0f64..5.0, fy in -5.0f64..5.0, fz in -5.0f64..5.0, tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0) {
            let from = Point3::new(fx, fy, fz);
            let to = Point3::new(tx, ty, tz);
            if let Ok(r) = look_at(&from, &to, &Point3::new(0.0, 1.0, 0.0)) {
                proptest::prop_assert!(rotation_error(&r) < 1e-9);
                let dir = (to - from).normalize();
                proptest::prop_assert!((r * Point3::new(0.0, 0.0, 1.0) - dir).norm() < 1e-9);
            }
        }
    }
}
