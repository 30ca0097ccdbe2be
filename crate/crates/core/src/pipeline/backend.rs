use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchoring::FramePoseContext;
use crate::geometry::Pixel2;

/// One camera frame. `image` is absent in landmark-only simulation runs.
#[derive(Debug, Clone)]
pub struct Frame {
    pub frame_id: u64,
    pub image: Option<GrayImage>,
    pub ctx: FramePoseContext,
    /// Seconds.
    pub acquisition_time: f64,
}

/// Axis-aligned face box in full-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl FaceBox {
    pub fn center(&self) -> Pixel2 {
        Pixel2::new(self.x + 0.5 * self.width, self.y + 0.5 * self.height)
    }

    /// Tight box around `pts`, grown by `margin` times its size on every side.
    pub fn around(pts: &[Pixel2], margin: f64) -> Option<FaceBox> {
        let first = pts.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.u, first.v, first.u, first.v);
        for p in pts {
            x0 = x0.min(p.u);
            y0 = y0.min(p.v);
            x1 = x1.max(p.u);
            y1 = y1.max(p.v);
        }
        let (w, h) = (x1 - x0, y1 - y0);
        Some(FaceBox { x: x0 - margin * w, y: y0 - margin * h, width: w * (1.0 + 2.0 * margin), height: h * (1.0 + 2.0 * margin) })
    }
}

/// 2D similarity mapping patch coordinates to full-frame pixels:
/// `p_frame = scale·Rot(rotation)·p_patch + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub scale: f32,
    pub rotation: f32,
    pub tx: f32,
    pub ty: f32,
}

impl CropTransform {
    pub const IDENTITY: CropTransform = CropTransform { scale: 1.0, rotation: 0.0, tx: 0.0, ty: 0.0 };

    /// Axis-aligned square crop centered on `center`, `side` frame pixels wide, sampled into `patch` pixels.
    pub fn square(center: Pixel2, side: f64, patch: usize) -> CropTransform {
        let scale = side / patch as f64;
        CropTransform {
            scale: scale as f32,
            rotation: 0.0,
            tx: (center.u - 0.5 * side) as f32,
            ty: (center.v - 0.5 * side) as f32,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.scale.is_finite() && self.scale > 0.0 && self.rotation.is_finite() && self.tx.is_finite() && self.ty.is_finite()
    }

    pub fn to_frame(&self, p: Pixel2) -> Pixel2 {
        let (s, c) = (self.rotation as f64).sin_cos();
        let k = self.scale as f64;
        Pixel2::new(k * (c * p.u - s * p.v) + self.tx as f64, k * (s * p.u + c * p.v) + self.ty as f64)
    }

    pub fn to_patch(&self, p: Pixel2) -> Pixel2 {
        let (s, c) = (self.rotation as f64).sin_cos();
        let k = self.scale as f64;
        let (du, dv) = (p.u - self.tx as f64, p.v - self.ty as f64);
        Pixel2::new((c * du + s * dv) / k, (-s * du + c * dv) / k)
    }
}

/// What an alignment backend gets to work with.
///
/// Landmarks are always in full-frame pixels. When `crop` is set, `image` is
/// a patch and `crop` maps its coordinates into the frame.
#[derive(Debug, Clone, Copy)]
pub struct AlignInput<'a> {
    pub frame_id: u64,
    pub acquisition_time: f64,
    pub image: Option<&'a GrayImage>,
    pub crop: Option<CropTransform>,
    pub init_landmarks: &'a [Pixel2],
}

impl<'a> AlignInput<'a> {
    pub fn from_frame(frame: &'a Frame, init_landmarks: &'a [Pixel2]) -> Self {
        AlignInput {
            frame_id: frame.frame_id,
            acquisition_time: frame.acquisition_time,
            image: frame.image.as_ref(),
            crop: None,
            init_landmarks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub landmarks: Vec<Pixel2>,
    pub valid: bool,
    /// In [0, 1].
    pub confidence: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// The backend cannot be reached; callers fall back to another backend.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("frame {0} is outside the scenario")]
    FrameOutOfRange(u64),
    #[error("alignment failed: {0}")]
    Failed(String),
}

pub trait AlignmentBackend: Send {
    fn align(&mut self, input: &AlignInput) -> Result<Alignment, BackendError>;

    /// Cheap reachability check, used to re-enable a backend after it failed.
    fn probe(&mut self) -> bool {
        true
    }
}

impl<B: AlignmentBackend + ?Sized> AlignmentBackend for Box<B> {
    fn align(&mut self, input: &AlignInput) -> Result<Alignment, BackendError> {
        (**self).align(input)
    }
    fn probe(&mut self) -> bool {
        (**self).probe()
    }
}

pub trait FaceDetector: Send {
    fn detect(&mut self, frame: &Frame) -> Option<FaceBox>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Local,
    Remote,
}

/// Remote when configured and healthy, local otherwise.
pub fn select_backend(remote_configured: bool, remote_healthy: bool) -> BackendKind {
    if remote_configured && remote_healthy {
        BackendKind::Remote
    } else {
        BackendKind::Local
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn selection_rule() {
        assert_eq!(select_backend(true, true), BackendKind::Remote);
        assert_eq!(select_backend(true, false), BackendKind::Local);
        assert_eq!(select_backend(false, true), BackendKind::Local);
    }

    #[test]
    fn face_box_around_points() {
        let b = FaceBox::around(&[Pixel2::new(10.0, 20.0), Pixel2::new(30.0, 60.0)], 0.5).unwrap();
        assert_eq!(b, FaceBox { x: 0.0, y: 0.0, width: 40.0, height: 80.0 });
        assert_eq!(b.center(), Pixel2::new(20.0, 40.0));
        assert!(FaceBox::around(&[], 0.1).is_none());
    }

    proptest! {
        #[test]
        fn crop_round_trip(
            scale in 0.2..5.0f32, rot in -3.0..3.0f32, tx in -500.0..500.0f32, ty in -500.0..500.0f32,
            u in 0.0..112.0f64, v in 0.0..112.0f64,
        ) {
            let c = CropTransform { scale, rotation: rot, tx, ty };
            let back = c.to_patch(c.to_frame(Pixel2::new(u, v)));
            prop_assert!((back.u - u).abs() < 1e-9 && (back.v - v).abs() < 1e-9);
            // Through f32 storage of the patch coordinates as well.
            let f = c.to_frame(Pixel2::new(u, v));
            let p = c.to_patch(f);
            let p32 = Pixel2::new(p.u as f32 as f64, p.v as f32 as f64);
            prop_assert!(p32.distance(&Pixel2::new(u, v)) < 112.0 * f32::EPSILON as f64 * 2.0);
        }
    }
}
