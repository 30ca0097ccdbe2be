//! Minimal flat-shaded triangle rasterizer (painter's algorithm, no anti-aliasing).

use image::{GrayImage, Luma};

use super::SimError;
use crate::face_model::{BlendWeights, DeformableFaceModel};
use crate::geometry::{CameraIntrinsics, RigidTransform, MIN_DEPTH};

pub const BACKGROUND: u8 = 24;

// Per-triangle albedo in [0.45, 1.0], fixed by triangle index.
fn albedo(t: usize) -> f64 {
    let h = (t as u64 ^ 0x5bd1_e995).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 56;
    0.45 + 0.55 * h as f64 / 255.0
}

/// Renders the deformed model under `pose` (model → camera).
pub fn rasterize(
    model: &DeformableFaceModel,
    weights: &BlendWeights,
    pose: &RigidTransform,
    k: &CameraIntrinsics,
    width: u32,
    height: u32,
) -> Result<GrayImage, SimError> {
    if width == 0 || height == 0 {
        return Err(SimError::InvalidConfig("image size must be non-zero".into()));
    }
    let verts: Vec<_> = model.synthesize(weights)?.iter().map(|p| pose.apply(p)).collect();
    if let Some(v) = verts.iter().find(|v| !(v.z > MIN_DEPTH)) {
        return Err(SimError::DegeneratePose(v.z));
    }
    let px: Vec<(f64, f64)> = verts.iter().map(|v| (k.fx() * v.x / v.z + k.cx(), k.fy() * v.y / v.z + k.cy())).collect();

    let mut order: Vec<(f64, usize)> = model
        .triangles()
        .iter()
        .enumerate()
        .map(|(i, t)| ((verts[t[0]].z + verts[t[1]].z + verts[t[2]].z) / 3.0, i))
        .collect();
    // Farthest first; index breaks ties so the order is total.
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut img = GrayImage::from_pixel(width, height, Luma([BACKGROUND]));
    for (_, ti) in order {
        let t = model.triangles()[ti];
        let (a, b, c) = (verts[t[0]], verts[t[1]], verts[t[2]]);
        let n = (b - a).cross(&(c - a));
        let view = -(a + b + c) / 3.0;
        let lambert = if n.norm() > 0.0 { (n.dot(&view) / (n.norm() * view.norm())).abs() } else { 0.0 };
        let shade = (albedo(ti) * (0.3 + 0.7 * lambert) * 255.0).round().clamp(0.0, 255.0) as u8;
        fill_triangle(&mut img, px[t[0]], px[t[1]], px[t[2]], shade);
    }
    Ok(img)
}

fn fill_triangle(img: &mut GrayImage, a: (f64, f64), b: (f64, f64), c: (f64, f64), value: u8) {
    let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = a.0.min(b.0).min(c.0).floor().max(0.0);
    let x1 = a.0.max(b.0).max(c.0).ceil().min(w - 1.0);
    let y0 = a.1.min(b.1).min(c.1).floor().max(0.0);
    let y1 = a.1.max(b.1).max(c.1).ceil().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let edge = |p: (f64, f64), q: (f64, f64), x: f64, y: f64| (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0);
    let sign = area.signum();
    for y in y0 as u32..=y1 as u32 {
        for x in x0 as u32..=x1 as u32 {
            let (fx, fy) = (x as f64, y as f64);
            let e0 = edge(a, b, fx, fy) * sign;
            let e1 = edge(b, c, fx, fy) * sign;
            let e2 = edge(c, a, fx, fy) * sign;
            if e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0 {
                img.put_pixel(x, y, Luma([value]));
            }
        }
    }
}
