//! Micro-benchmarks of the per-frame hot paths, shared by the `bench`
//! command and the performance checks.

use std::hint::black_box;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::anchoring::{reinit_landmarks, FramePoseContext};
use crate::face_model::{BlendWeights, DeformableFaceModel};
use crate::failure::{extract_hog, features, FailurePredictor, HogParams};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::netproto::{decode_request, encode_request, AlignRequest, PATCH_BYTES};
use crate::pipeline::CropTransform;
use crate::pose_fit::{fit, initial_guess, FitParams, HeadPoseFit};
use crate::sim::{generate, Keyframe, Scenario, ScenarioConfig};
use crate::temporal::{kalman_step, AxisKalman, FilterConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub iterations: usize,
    pub median_us: f64,
    pub p95_us: f64,
}

/// Times `iterations` calls of `f` after a short warm-up.
pub fn time_op(name: &str, iterations: usize, mut f: impl FnMut()) -> BenchRow {
    let iterations = iterations.max(1);
    for _ in 0..iterations.min(10) {
        f();
    }
    let mut t: Vec<f64> = (0..iterations)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64() * 1e6
        })
        .collect();
    t.sort_by(f64::total_cmp);
    let q = |p: f64| t[((t.len() - 1) as f64 * p).round() as usize];
    BenchRow { name: name.into(), iterations, median_us: q(0.5), p95_us: q(0.95) }
}

/// One rendered frame of a slightly turned head with 0.5 px landmark noise.
pub fn bench_scene(model: &DeformableFaceModel) -> Scenario {
    let mut cfg = ScenarioConfig::still(1);
    cfg.head = vec![Keyframe { frame: 0.0, rotation: [0.1, 0.2, 0.05], translation: [0.02, -0.01, 0.9] }];
    cfg.weights = Vec::new();
    cfg.landmark_noise = 0.5;
    cfg.render_images = true;
    cfg.seed = 3;
    generate(&cfg, model).expect("bench scene is valid")
}

/// A tracking-style warm start: the true pose nudged by ~1° and 5 mm with zero weights.
pub fn warm_start(truth: &RigidTransform, model: &DeformableFaceModel) -> HeadPoseFit {
    let nudge = RigidTransform::from_axis_angle(Vector3::new(0.01, -0.012, 0.008), Vector3::zeros());
    HeadPoseFit {
        pose: RigidTransform {
            rotation: nudge.rotation * truth.rotation,
            translation: truth.translation + Vector3::new(0.003, -0.002, 0.004),
        },
        weights: BlendWeights::zeros(model.blendshape_count()),
        rms_residual: f64::NAN,
        iterations: 0,
        converged: false,
    }
}

pub fn sample_request(landmarks: usize) -> AlignRequest {
    AlignRequest {
        frame_id: 42,
        acquisition_us: 1_400_000,
        crop: CropTransform { scale: 1.5, rotation: 0.0, tx: 200.0, ty: 120.0 },
        init_landmarks: (0..landmarks).map(|i| [(i % 100) as f32 + 0.5, (i % 37) as f32 * 2.0]).collect(),
        patch: (0..PATCH_BYTES).map(|i| (i * 31 % 251) as u8).collect(),
    }
}

pub fn run_all(
    model: &DeformableFaceModel,
    k: &CameraIntrinsics,
    hog: &HogParams,
    iterations: usize,
) -> Result<Vec<BenchRow>, String> {
    let scene = bench_scene(model);
    let gt = &scene.frames[0];
    let landmarks = gt.noisy_landmarks.clone();
    let image = gt.frame.image.clone().ok_or("bench scene has no image")?;
    let params = FitParams::default();
    let start = warm_start(&gt.head_cam, model);
    let mut rows = Vec::new();

    fit(model, &landmarks, k, &start, &params).map_err(|e| e.to_string())?;
    rows.push(time_op("fit (warm start)", iterations, || {
        black_box(fit(model, black_box(&landmarks), k, &start, &params).ok());
    }));
    rows.push(time_op("fit (cold start)", iterations, || {
        let init = initial_guess(model, black_box(&landmarks), k).expect("guess");
        black_box(fit(model, &landmarks, k, &init, &params).ok());
    }));

    let prev = FramePoseContext::identity(0.0);
    let cur = FramePoseContext::from_cam_to_world(
        RigidTransform::from_axis_angle(Vector3::new(0.0, 0.02, 0.0), Vector3::new(0.01, 0.0, 0.0)),
        1.0 / 30.0,
    )
    .map_err(|e| e.to_string())?;
    let t_w = gt.head_world.translation;
    rows.push(time_op("reinit_landmarks", iterations, || {
        black_box(reinit_landmarks(black_box(&landmarks), &t_w, &prev, &cur, k).ok());
    }));

    let fc = FilterConfig::default();
    let kal = AxisKalman::new(0.0, 0.0, &fc).map_err(|e| e.to_string())?;
    rows.push(time_op("kalman_step", iterations * 10, || {
        black_box(kalman_step(black_box(&kal), 1.0 / 30.0, black_box(0.01), &fc).ok());
    }));

    let center = landmarks[landmarks.len() / 2];
    rows.push(time_op("hog (one landmark)", iterations * 10, || {
        black_box(extract_hog(black_box(&image), &center, hog).ok());
    }));
    let predictor = FailurePredictor::constant(0.0, f64::INFINITY, *hog, landmarks.len()).map_err(|e| e.to_string())?;
    rows.push(time_op("failure predictor (all landmarks)", iterations, || {
        black_box(predictor.predict_error(black_box(&image), &landmarks).ok());
    }));
    rows.push(time_op("hog features (all landmarks)", iterations, || {
        black_box(features(black_box(&image), &landmarks, hog).ok());
    }));

    let req = sample_request(landmarks.len());
    let bytes = encode_request(&req).map_err(|e| e.to_string())?;
    rows.push(time_op("encode request", iterations * 10, || {
        black_box(encode_request(black_box(&req)).ok());
    }));
    rows.push(time_op("decode request", iterations * 10, || {
        black_box(decode_request(black_box(&bytes)).ok());
    }));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_are_ordered() {
        let mut n = 0u64;
        let r = time_op("spin", 50, || {
            n = black_box(n.wrapping_add(1));
        });
        assert_eq!(r.iterations, 50);
        assert!(r.median_us >= 0.0 && r.p95_us >= r.median_us);
    }

    #[test]
    fn warm_start_converges() {
        let model = DeformableFaceModel::bundled_metric();
        let s = bench_scene(&model);
        let out = fit(&model, &s.frames[0].noisy_landmarks, &s.config.intrinsics, &warm_start(&s.frames[0].head_cam, &model), &FitParams::default()).unwrap();
        assert!(out.converged);
        assert!(out.rms_residual < 1.0);
    }

    #[test]
    fn run_all_reports_every_row() {
        let model = DeformableFaceModel::bundled_metric();
        let rows = run_all(&model, &CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap(), &HogParams::default(), 3).unwrap();
        assert_eq!(rows.len(), 9);
    }
}
