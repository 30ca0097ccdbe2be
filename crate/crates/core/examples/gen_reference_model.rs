//! Regenerates `data/candide3_reference.json`, the bundled reference face mesh.
//!
//! The mesh reproduces the CANDIDE-3 topology counts (113 vertices, 168
//! triangles): 51 landmark vertices in the 68-point convention minus the jaw
//! line, 6 extra interior vertices and a convex rim of 56 vertices. Any
//! triangulation of that point set has 2·113 − 56 − 2 = 168 triangles.
//! Coordinates are unit-free, x right, y down, z away from the viewer.
//!
//! Run with: cargo run -p holoface --example gen_reference_model [output.json]

use holoface::face_model::{
    Blendshape, BlendshapeKind, DeformableFaceModel, LandmarkPair, PupilRef, Pupils, Units,
};
use holoface::geometry::Point3;

const RIM_VERTICES: usize = 56;
const RIM_A: f64 = 1.05;
const RIM_B: f64 = 1.4;

#[rustfmt::skip]
const LANDMARKS_51: [(f64, f64); 51] = [
    // eyebrows
    (-0.85, -0.55), (-0.70, -0.63), (-0.55, -0.66), (-0.40, -0.64), (-0.22, -0.58),
    ( 0.22, -0.58), ( 0.40, -0.64), ( 0.55, -0.66), ( 0.70, -0.63), ( 0.85, -0.55),
    // nose bridge and base
    (0.0, -0.38), (0.0, -0.22), (0.0, -0.06), (0.0, 0.10),
    (-0.18, 0.25), (-0.09, 0.28), (0.0, 0.30), (0.09, 0.28), (0.18, 0.25),
    // eyes
    (-0.65, -0.30), (-0.55, -0.37), (-0.35, -0.37), (-0.25, -0.30), (-0.35, -0.24), (-0.55, -0.24),
    ( 0.25, -0.30), ( 0.35, -0.37), ( 0.55, -0.37), ( 0.65, -0.30), ( 0.55, -0.24), ( 0.35, -0.24),
    // outer lips
    (-0.40, 0.60), (-0.26, 0.52), (-0.10, 0.48), (0.0, 0.50), (0.10, 0.48), (0.26, 0.52),
    ( 0.40, 0.60), ( 0.26, 0.72), ( 0.10, 0.77), (0.0, 0.78), (-0.10, 0.77), (-0.26, 0.72),
    // inner lips
    (-0.30, 0.60), (-0.10, 0.57), (0.0, 0.575), (0.10, 0.57), (0.30, 0.60), (0.10, 0.64), (0.0, 0.645), (-0.10, 0.64),
];

const EXTRA_INTERIOR: [(f64, f64); 6] = [(0.0, -0.95), (-0.5, -0.92), (0.5, -0.92), (-0.72, 0.25), (0.72, 0.25), (0.0, 1.02)];

const INNER_LIPS: std::ops::Range<usize> = 43..51;

fn gauss(d2: f64, s: f64) -> f64 {
    (-d2 / s).exp()
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn depth(x: f64, y: f64, inner_lip: bool) -> f64 {
    let bulge = -0.55 * (1.0 - (x / RIM_A).powi(2) - (y / RIM_B).powi(2)).max(0.0).sqrt();
    let nose = -0.30 * gauss(x * x / 0.02 + (y - 0.05).powi(2) / 0.12, 1.0);
    let sockets = 0.06 * gauss((x.abs() - 0.45).powi(2) / 0.03 + (y + 0.3).powi(2) / 0.015, 1.0);
    bulge + nose + sockets + if inner_lip { 0.04 } else { 0.0 }
}

// Tiny deterministic jitter so mirrored points are never exactly cocircular.
fn jitter(i: usize) -> (f64, f64) {
    let h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let a = ((h & 0xFFFF) as f64 / 65535.0 - 0.5) * 2e-4;
    let b = (((h >> 16) & 0xFFFF) as f64 / 65535.0 - 0.5) * 2e-4;
    (a, b)
}

/// Bowyer-Watson Delaunay triangulation of 2D points.
fn delaunay(pts: &[(f64, f64)]) -> Vec<[usize; 3]> {
    let n = pts.len();
    let mut all = pts.to_vec();
    all.extend_from_slice(&[(-100.0, -100.0), (100.0, -100.0), (0.0, 100.0)]);
    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];

    let circum = |t: &[usize; 3], all: &[(f64, f64)]| {
        let (ax, ay) = all[t[0]];
        let (bx, by) = all[t[1]];
        let (cx, cy) = all[t[2]];
        let d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
        let a2 = ax * ax + ay * ay;
        let b2 = bx * bx + by * by;
        let c2 = cx * cx + cy * cy;
        let ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
        let uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
        (ux, uy, (ax - ux).powi(2) + (ay - uy).powi(2))
    };

    for i in 0..n {
        let (px, py) = all[i];
        let (bad, good): (Vec<[usize; 3]>, Vec<[usize; 3]>) = tris.into_iter().partition(|t| {
            let (ux, uy, r2) = circum(t, &all);
            (px - ux).powi(2) + (py - uy).powi(2) < r2
        });
        let mut edges: Vec<[usize; 2]> = Vec::new();
        for t in &bad {
            for k in 0..3 {
                let e = [t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3])];
                if let Some(pos) = edges.iter().position(|x| *x == e) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(e);
                }
            }
        }
        tris = good;
        tris.extend(edges.into_iter().map(|e| [e[0], e[1], i]));
    }
    tris.retain(|t| t.iter().all(|&v| v < n));
    tris
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/candide3_reference.json").to_string());

    let mut xy: Vec<(f64, f64)> = LANDMARKS_51.to_vec();
    xy.extend_from_slice(&EXTRA_INTERIOR);
    for k in 0..RIM_VERTICES {
        let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / RIM_VERTICES as f64;
        xy.push((RIM_A * th.cos(), RIM_B * th.sin()));
    }
    for (i, p) in xy.iter_mut().enumerate() {
        let (a, b) = jitter(i);
        p.0 += a;
        p.1 += b;
    }
    assert_eq!(xy.len(), 113);

    let mut triangles = delaunay(&xy);
    // Orient every face towards the viewer (negative z normal in a y-down frame).
    for t in &mut triangles {
        let (a, b, c) = (xy[t[0]], xy[t[1]], xy[t[2]]);
        let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        assert!(cross.abs() > 1e-9, "degenerate triangle {t:?}");
        if cross > 0.0 {
            t.swap(1, 2);
        }
    }
    triangles.sort();
    assert_eq!(triangles.len(), 168, "unexpected triangle count");

    let vertices: Vec<Point3> = xy
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Point3::new(x, y, depth(x, y, INNER_LIPS.contains(&i))))
        .collect();

    let field = |f: &dyn Fn(f64, f64) -> (f64, f64, f64)| -> Vec<Point3> {
        xy.iter()
            .map(|&(x, y)| {
                let (dx, dy, dz) = f(x, y);
                Point3::new(dx, dy, dz)
            })
            .collect()
    };
    let shape = |name: &str, kind, f: &dyn Fn(f64, f64) -> (f64, f64, f64)| Blendshape {
        name: name.into(),
        kind,
        offsets: field(f),
    };
    use BlendshapeKind::{Action, Shape};
    let blendshapes = vec![
        shape("eye_separation", Shape, &|x, y| {
            (0.08 * x.signum() * gauss((y + 0.3).powi(2), 0.02) * (x.abs() / 0.25).min(1.0), 0.0, 0.0)
        }),
        shape("nose_vertical_position", Shape, &|x, y| {
            (0.0, 0.08 * gauss((y - 0.27).powi(2), 0.008) * gauss(x * x, 0.08), 0.0)
        }),
        shape("eyes_height", Shape, &|x, y| {
            (0.0, 0.6 * (y + 0.3) * gauss((x.abs() - 0.45).powi(2), 0.04) * gauss((y + 0.3).powi(2), 0.01), 0.0)
        }),
        shape("mouth_width", Shape, &|x, y| {
            (0.1 * (x / 0.4) * gauss((y - 0.62).powi(2), 0.01) * gauss(x * x, 0.5), 0.0, 0.0)
        }),
        shape("smile", Action, &|x, y| {
            let h = gauss((x.abs() - 0.4).powi(2) / 0.01 + (y - 0.6).powi(2) / 0.008, 1.0);
            (0.07 * x.signum() * h, -0.09 * h, 0.0)
        }),
        shape("eyebrow_raise", Action, &|_, y| (0.0, -0.12 * gauss((y + 0.6).powi(2), 0.006), 0.0)),
        shape("mouth_open", Action, &|x, y| {
            (0.0, 0.22 * smoothstep(0.58, 0.63, y) * gauss(x * x, 0.5), 0.02 * smoothstep(0.58, 0.63, y))
        }),
    ];

    let landmark_map = (0..51).map(|i| LandmarkPair { landmark: i, vertex: i }).collect();
    // Pupils: midpoints of each eye's outer and inner corner.
    let pupils = Pupils { left: PupilRef::Midpoint([19, 22]), right: PupilRef::Midpoint([25, 28]) };

    let model = DeformableFaceModel::new(
        "candide3-reference (procedural, CANDIDE-3 topology counts)",
        Units::Unitless,
        vertices,
        blendshapes,
        triangles,
        landmark_map,
        pupils,
    )
    .expect("generated model is valid");
    model.save(&out).expect("write model");
    println!("wrote {out}: {} vertices, {} triangles", model.vertex_count(), model.triangles().len());
}
