//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//!
//! Runs as a plain binary (`harness = false`) so the report is always printed.
//! `cargo test --test acceptance -- 7 11` runs only the listed criteria.

use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use holoface::anchoring::{reinit_landmarks, FramePoseContext};
use holoface::bench::{run_all, sample_request, BenchRow};
use holoface::evaluation::{auc, auc_008, ced, failure_rate, FAILURE_THRESHOLD};
use holoface::face_model::{BlendWeights, BlendshapeKind, DeformableFaceModel};
use holoface::failure::{features, train_failure_predictor, HogParams, TrainingSample};
use holoface::geometry::{exp_so3, geodesic_angle, project, unproject, CameraIntrinsics, Pixel2, RigidTransform};
use holoface::netproto::{encode_request, request_bitrate, request_len, serve, AlignClient, BackendSource, RemoteBackend, DEFAULT_TIMEOUT, PATCH_SIDE};
use holoface::pipeline::{BackendKind, TrackOutput, Tracker, TrackerConfig};
use holoface::pose_fit::{fit, initial_guess, residual_jacobian, FitParams};
use holoface::sim::{generate, perturbed_samples, FrameRange, Keyframe, PerturbationConfig, Scenario, ScenarioConfig, WeightSchedule};
use holoface::temporal::{average_pose, kalman_step, predict_at, AxisKalman, FilterConfig};
use image::GrayImage;
use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEMO: &str = include_str!("../data/demo_scenario.json");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn k500() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn random_weights(model: &DeformableFaceModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    model
        .blendshapes()
        .iter()
        .map(|b| match b.kind {
            BlendshapeKind::Shape => rng.gen_range(-1.0..1.0),
            BlendshapeKind::Action => rng.gen_range(0.0..1.0),
        })
        .collect()
}

// 1. Noiseless fits from the closed-form start recover the generator's pose.
fn fit_recovery() -> Outcome {
    let model = DeformableFaceModel::bundled_metric();
    let params = FitParams { weight_regularization: 0.0, ..FitParams::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let (mut rot, mut trans, mut res): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut failures = 0;
    for _ in 0..100 {
        let axis = random_unit(&mut rng) * rng.gen_range(0.0..35f64.to_radians());
        let tz = rng.gen_range(0.5..2.0);
        let t = [rng.gen_range(-0.15..0.15) * tz, rng.gen_range(-0.1..0.1) * tz, tz];
        let mut cfg = ScenarioConfig::still(1);
        cfg.head = vec![Keyframe { frame: 0.0, rotation: [axis.x, axis.y, axis.z], translation: t }];
        cfg.weights = model
            .blendshapes()
            .iter()
            .zip(random_weights(&model, &mut rng))
            .map(|(b, w)| WeightSchedule { blendshape: b.name.clone(), keys: vec![[0.0, w]] })
            .collect();
        cfg.landmark_noise = 0.0;
        let s = generate(&cfg, &model).unwrap();
        let gt = &s.frames[0];
        let k = s.config.intrinsics;
        let out = initial_guess(&model, &gt.true_landmarks, &k).and_then(|i| fit(&model, &gt.true_landmarks, &k, &i, &params));
        match out {
            Ok(f) => {
                rot = rot.max(geodesic_angle(&f.pose.rotation, &gt.head_cam.rotation).to_degrees());
                trans = trans.max((f.pose.translation - gt.head_cam.translation).norm());
                res = res.max(f.rms_residual);
            }
            Err(_) => failures += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && rot < 0.1 && trans < 5e-4 && res < 1e-6 && secs < 30.0,
        format!("max rot {rot:.2e} deg, max trans {:.2e} mm, max rms {res:.2e} px, {failures} errors, {secs:.2} s", trans * 1e3),
    )
}

fn fd_jacobian(model: &DeformableFaceModel, obs: &[Pixel2], k: &CameraIntrinsics, pose: &RigidTransform, w: &BlendWeights) -> DMatrix<f64> {
    let n = model.blendshape_count();
    let h = 1e-6;
    let eval = |p: &RigidTransform, w: &BlendWeights| residual_jacobian(model, obs, k, p, w).unwrap().0;
    let mut jac = DMatrix::zeros(2 * obs.len(), 6 + n);
    for c in 0..6 + n {
        let (plus, minus) = if c < 3 {
            let mut d = Vector3::zeros();
            d[c] = h;
            let p = RigidTransform { rotation: exp_so3(&d) * pose.rotation, translation: pose.translation };
            let m = RigidTransform { rotation: exp_so3(&-d) * pose.rotation, translation: pose.translation };
            (eval(&p, w), eval(&m, w))
        } else if c < 6 {
            let mut d = Vector3::zeros();
            d[c - 3] = h;
            (
                eval(&RigidTransform { translation: pose.translation + d, ..*pose }, w),
                eval(&RigidTransform { translation: pose.translation - d, ..*pose }, w),
            )
        } else {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.0[c - 6] += h;
            wm.0[c - 6] -= h;
            (eval(pose, &wp), eval(pose, &wm))
        };
        jac.set_column(c, &((plus - minus) / (2.0 * h)));
    }
    jac
}

// 2. Analytic Jacobian against central differences.
fn jacobian() -> Outcome {
    let model = DeformableFaceModel::bundled_metric();
    let k = k500();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let obs: Vec<Pixel2> = (0..model.landmark_map().len()).map(|i| Pixel2::new(300.0 + i as f64, 220.0 + (i % 9) as f64)).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let tz = rng.gen_range(0.5..2.0);
        let pose = RigidTransform::from_axis_angle(
            random_unit(&mut rng) * rng.gen_range(0.0..0.6),
            Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), tz),
        );
        let w = BlendWeights(random_weights(&model, &mut rng));
        let (_, analytic) = residual_jacobian(&model, &obs, &k, &pose, &w).unwrap();
        let numeric = fd_jacobian(&model, &obs, &k, &pose, &w);
        worst = worst.max((&analytic - &numeric).amax() / numeric.amax());
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 50 states"))
}

// 3. Metric scale from the pupil distance.
fn ipd_scaling() -> Outcome {
    let raw = DeformableFaceModel::bundled();
    let m = raw.scale_to_ipd(0.063).unwrap();
    let p = m.pupils();
    let shape = m.mean_shape();
    let independent = (p.left.position(shape) - p.right.position(shape)).norm();
    let err = (m.pupil_distance() - 0.063).abs().max((independent - 0.063).abs());
    outcome(err <= 1e-12, format!("|ipd - 63 mm| = {err:.2e} m (raw model ipd {:.4})", raw.pupil_distance()))
}

fn random_camera(rng: &mut ChaCha8Rng, t: f64) -> FramePoseContext {
    let c2w = RigidTransform::from_axis_angle(
        random_unit(rng) * rng.gen_range(0.0..0.3),
        Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
    );
    FramePoseContext::from_cam_to_world(c2w, t).unwrap()
}

// 4. Landmark re-initialization under camera motion.
fn reinit_invariance() -> Outcome {
    let k = k500();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut exact: f64 = 0.0;
    for _ in 0..100 {
        let prev = random_camera(&mut rng, 0.0);
        let cur = random_camera(&mut rng, 1.0 / 30.0);
        let head = prev.cam_to_world().apply(&Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(0.6..1.5)));
        let dist = (head - prev.camera_position()).norm();
        // Points on the sphere through the head center, seen by the previous camera.
        let s_prev: Vec<Pixel2> = (0..51).map(|i| Pixel2::new(280.0 + 1.6 * i as f64, 200.0 + 7.0 * (i % 11) as f64)).collect();
        let world: Vec<Vector3<f64>> = s_prev
            .iter()
            .map(|s| {
                let ray = unproject(&k, s);
                prev.camera_position() + prev.cam_to_world().rotation * ray.normalize() * dist
            })
            .collect();
        let got = reinit_landmarks(&s_prev, &head, &prev, &cur, &k).unwrap();
        for (g, w) in got.iter().zip(&world) {
            let want = project(&k, &cur.world_to_cam().apply(w)).unwrap();
            exact = exact.max(g.distance(&want));
        }
    }
    // Depth-spread face: ±4 cm around a head 1 m away, camera moved 5 cm sideways.
    let prev = FramePoseContext::identity(0.0);
    let cur = FramePoseContext::from_cam_to_world(RigidTransform::from_axis_angle(Vector3::zeros(), Vector3::new(0.05, 0.0, 0.0)), 0.033).unwrap();
    let head = Vector3::new(0.0, 0.0, 1.0);
    let mut spread: f64 = 0.0;
    for i in 0..51 {
        let a = i as f64 / 50.0;
        let p = Vector3::new(-0.07 + 0.14 * a, 0.05 * (7.0 * a).sin(), 1.0 + 0.04 * (2.0 * a - 1.0));
        let s_prev = project(&k, &p).unwrap();
        let got = reinit_landmarks(&[s_prev], &head, &prev, &cur, &k).unwrap()[0];
        let want = project(&k, &cur.world_to_cam().apply(&p)).unwrap();
        spread = spread.max(got.distance(&want));
    }
    outcome(exact < 1e-6 && spread < 5.0, format!("head-center depth {exact:.2e} px, depth-spread face {spread:.3} px (bound 5 px)"))
}

// 5. Filter constants, constant-velocity prediction and the horizon clamp.
fn kalman() -> Outcome {
    let cfg = FilterConfig { tau_m: 0.1, ..FilterConfig::default() };
    let alpha_err = (cfg.alpha(0.1) - (-1f64).exp()).abs();
    let v = [0.3, -0.2, 0.1];
    let x0 = [0.0, 0.05, 0.9];
    let dt = 1.0 / 30.0;
    let mut axes: Vec<AxisKalman> = (0..3).map(|i| AxisKalman::new(x0[i], 0.0, &cfg).unwrap()).collect();
    for n in 1..=100 {
        for i in 0..3 {
            axes[i] = kalman_step(&axes[i], dt, x0[i] + v[i] * n as f64 * dt, &cfg).unwrap();
        }
    }
    let t_end = 100.0 * dt;
    let pred_err = (0..3)
        .map(|i| (predict_at(&axes[i], 0.120, &cfg) - (x0[i] + v[i] * (t_end + 0.120))).powi(2))
        .sum::<f64>()
        .sqrt();
    let clamp_ok = cfg.max_prediction_horizon == 0.120
        && axes.iter().all(|a| {
            let at = predict_at(a, 0.120, &cfg);
            predict_at(a, 0.5, &cfg) == at && predict_at(a, 10.0, &cfg) == at && at == (cfg.transition(0.120) * a.state).x
        });
    outcome(
        alpha_err <= 1e-12 && pred_err < 1e-3 && clamp_ok,
        format!("|alpha - 1/e| = {alpha_err:.1e}, 120 ms prediction error {:.3e} mm, clamp exact: {clamp_ok}", pred_err * 1e3),
    )
}

// 6. Two-frame averaging applies iff |dt| < 5 mm and dtheta < 4 degrees.
fn averaging() -> Outcome {
    let cfg = FilterConfig::default();
    let prev = RigidTransform::identity();
    let averaged = |cur: &RigidTransform| average_pose(&prev, cur, &cfg) != *cur;
    let shift = |d: f64| RigidTransform::from_axis_angle(Vector3::zeros(), Vector3::new(d, 0.0, 0.0));
    let turn = |a: f64| RigidTransform::from_axis_angle(Vector3::new(0.0, 0.0, a), Vector3::zeros());
    let four = 4f64.to_radians();
    let mut cases = vec![
        ("dt just below 5 mm", averaged(&shift(0.005f64.next_down())), true),
        ("dt exactly 5 mm", averaged(&shift(0.005)), false),
        ("dt above 5 mm", averaged(&shift(0.0051)), false),
        ("dtheta 3.9 deg", averaged(&turn(3.9f64.to_radians())), true),
        ("dtheta 4.1 deg", averaged(&turn(4.1f64.to_radians())), false),
    ];
    // At the rotation threshold the rule is decided on the computed geodesic angle.
    for a in [four - 1e-12, four, four + 1e-12] {
        let c = turn(a);
        cases.push(("dtheta at 4 deg", averaged(&c), geodesic_angle(&prev.rotation, &c.rotation) < cfg.avg_rotation_threshold));
    }
    let both = RigidTransform::from_axis_angle(Vector3::new(0.0, 0.05, 0.0), Vector3::new(0.002, 0.0, 0.0));
    cases.push(("small dt, dtheta 2.9 deg", averaged(&both), true));
    let big_turn = RigidTransform::from_axis_angle(Vector3::new(0.0, 0.08, 0.0), Vector3::new(0.002, 0.0, 0.0));
    cases.push(("small dt, dtheta 4.6 deg", averaged(&big_turn), false));
    let mid = average_pose(&prev, &shift(0.004), &cfg);
    let midpoint_ok = mid.translation == Vector3::new(0.002, 0.0, 0.0);
    let bad: Vec<&str> = cases.iter().filter(|(_, got, want)| got != want).map(|(n, ..)| *n).collect();
    outcome(
        bad.is_empty() && midpoint_ok,
        if bad.is_empty() { format!("{} boundary cases, midpoint exact: {midpoint_ok}", cases.len()) } else { format!("wrong: {bad:?}") },
    )
}

// 7. Wire size and bit rate of an alignment request.
fn protocol_budget() -> Outcome {
    let bytes = encode_request(&sample_request(51)).unwrap().len();
    let mbps = request_bitrate(51, 30.0) / 1e6;
    let pass = bytes == 12_989 && request_len(51) == 12_989 && (mbps - 3.117).abs() < 5e-4 && (3.0..=3.2).contains(&mbps);
    outcome(pass, format!("{bytes} bytes per request, {mbps:.4} Mbit/s at 30 fps"))
}

fn tracker(s: &Scenario) -> Tracker {
    Tracker::new(
        DeformableFaceModel::bundled_metric(),
        s.config.intrinsics,
        TrackerConfig { image_size: Some(s.config.image_size), ..TrackerConfig::default() },
        Box::new(s.oracle_detector()),
        Box::new(s.oracle_backend()),
    )
    .unwrap()
}

fn demo(frames: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::from_json_str(DEMO, "demo").unwrap();
    cfg.frames = frames;
    cfg
}

// 8. Remote over loopback equals local; killing the server falls back without a gap.
fn loopback() -> Outcome {
    let mut cfg = demo(90);
    cfg.render_images = true;
    let s = generate(&cfg, &DeformableFaceModel::bundled_metric()).unwrap();
    let local: Vec<TrackOutput> = {
        let mut t = tracker(&s);
        s.frames.iter().map(|f| t.step(&f.frame, f.frame.acquisition_time + 0.1)).collect()
    };
    let server = serve(TcpListener::bind("127.0.0.1:0").unwrap(), BackendSource::shared(s.oracle_backend())).unwrap();
    let client = AlignClient::connect(server.addr(), DEFAULT_TIMEOUT).unwrap();
    let mut t = tracker(&s).with_remote(Box::new(RemoteBackend::new(client)));
    let mut server = Some(server);
    let kill = 60;
    let (mut worst_ratio, mut worst_px, mut worst_m): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut problems = Vec::new();
    let mut last_valid = None;
    let mut gap = 0;
    for (i, f) in s.frames.iter().enumerate() {
        if i == kill {
            server.take().unwrap().shutdown();
        }
        let o = t.step(&f.frame, f.frame.acquisition_time + 0.1);
        let l = &local[i];
        let want_backend = if i < kill { BackendKind::Remote } else { BackendKind::Local };
        if o.backend_used != Some(want_backend) || o.tracking_valid != l.tracking_valid || o.fallback != (i == kill) {
            problems.push(i);
        }
        if o.tracking_valid {
            if let Some(p) = last_valid {
                gap = gap.max(i - p - 1);
            }
            last_valid = Some(i);
        }
        // One f32 rounding of a patch coordinate (< 112), scaled by the crop.
        let b = holoface::pipeline::FaceBox::around(&l.landmarks, 0.0).unwrap();
        let scale = 1.5 * b.width.max(b.height) / PATCH_SIDE as f64;
        let bound = PATCH_SIDE as f64 * scale * f64::from(f32::EPSILON) * 0.5 * 1.25;
        for (a, c) in o.landmarks.iter().zip(&l.landmarks) {
            let d = (a.u - c.u).abs().max((a.v - c.v).abs());
            worst_px = worst_px.max(d);
            worst_ratio = worst_ratio.max(d / bound);
        }
        if let (Some(a), Some(c)) = (o.world_pose_filtered, l.world_pose_filtered) {
            worst_m = worst_m.max((a.translation - c.translation).norm());
        }
    }
    outcome(
        problems.is_empty() && worst_ratio <= 1.0 && gap <= 1,
        format!(
            "landmarks within {worst_px:.2e} px ({:.0}% of the f32 bound), filtered position within {worst_m:.1e} m, fallback gap {gap} frames{}",
            worst_ratio * 100.0,
            if problems.is_empty() { String::new() } else { format!(", mismatched frames {problems:?}") }
        ),
    )
}

fn brute_ced(errors: &[f64], x: f64) -> f64 {
    errors.iter().filter(|&&e| e <= x).count() as f64 / errors.len() as f64
}

/// Integrates the empirical CED step function interval by interval.
fn brute_auc(errors: &[f64], limit: f64) -> f64 {
    let mut cuts: Vec<f64> = errors.iter().copied().filter(|e| *e < limit).collect();
    cuts.push(0.0);
    cuts.push(limit);
    cuts.sort_by(f64::total_cmp);
    let mut area = 0.0;
    for w in cuts.windows(2) {
        area += brute_ced(errors, w[0]) * (w[1] - w[0]);
    }
    100.0 * area / limit
}

// 9. Metrics against counting and integration oracles.
fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid: Vec<f64> = (0..=80).map(|i| i as f64 * 0.001).collect();
    let (mut ced_bad, mut fr_bad) = (0, 0);
    let mut auc_dev: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..200);
        let errors: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0 => FAILURE_THRESHOLD,
                1 => f64::INFINITY,
                2 => grid[rng.gen_range(0..grid.len())],
                3 => 0.0,
                _ => rng.gen_range(0.0..0.15),
            })
            .collect();
        let c = ced(&errors, &grid).unwrap();
        ced_bad += c.iter().zip(&grid).filter(|(v, x)| **v != brute_ced(&errors, **x)).count();
        let fr = 100.0 * errors.iter().filter(|&&e| e > FAILURE_THRESHOLD).count() as f64 / n as f64;
        fr_bad += usize::from(failure_rate(&errors).unwrap() != fr);
        auc_dev = auc_dev.max((auc_008(&errors).unwrap() - brute_auc(&errors, FAILURE_THRESHOLD)).abs());
    }
    let hand = auc(&[0.04], 0.08).unwrap();
    outcome(
        ced_bad == 0 && fr_bad == 0 && auc_dev < 1e-9 && (hand - 50.0).abs() < 1e-12,
        format!("CED mismatches {ced_bad}, failure-rate mismatches {fr_bad}, max AUC deviation {auc_dev:.1e}, AUC{{0.04}} = {hand}"),
    )
}

// 10. Occlusions are caught at once, recovered quickly, and runs are deterministic.
fn state_machine() -> Outcome {
    let mut cfg = demo(300);
    let windows = [FrameRange { start: 100, end: 115 }, FrameRange { start: 200, end: 210 }];
    cfg.occlusions = windows.to_vec();
    let run = || {
        let s = generate(&cfg, &DeformableFaceModel::bundled_metric()).unwrap();
        let mut t = tracker(&s);
        let out: Vec<TrackOutput> = s.frames.iter().map(|f| t.step(&f.frame, f.frame.acquisition_time + 0.17)).collect();
        out
    };
    let out = run();
    let mut notes = Vec::new();
    let mut ok = true;
    for w in &windows {
        let detect = (w.start..w.end).find(|&i| !out[i].tracking_valid).map(|i| i - w.start);
        let held = out[w.start + 1..w.end].iter().all(|o| !o.tracking_valid);
        let recover = (w.end..out.len()).find(|&i| out[i].tracking_valid).map(|i| i - w.end);
        ok &= detect.is_some_and(|d| d <= 1) && held && recover.is_some_and(|r| r < 5);
        notes.push(format!("[{}, {}) lost after {:?} recovered after {:?}", w.start, w.end, detect, recover));
    }
    let elsewhere: Vec<&TrackOutput> = out.iter().enumerate().filter(|(i, _)| !windows.iter().any(|w| w.contains(*i))).map(|(_, o)| o).collect();
    let pct = 100.0 * elsewhere.iter().filter(|o| o.tracking_valid).count() as f64 / elsewhere.len() as f64;
    let same = serde_json::to_string(&out).unwrap() == serde_json::to_string(&run()).unwrap();
    outcome(ok && pct >= 99.0 && same, format!("{}; {pct:.1}% tracked elsewhere; deterministic: {same}", notes.join(", ")))
}

fn noise_image(rng: &mut ChaCha8Rng) -> GrayImage {
    GrayImage::from_fn(24, 24, |_, _| image::Luma([rng.gen::<u8>()]))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

// 11. Failure predictor: planted model, then held-out ranking on rendered faces.
fn failure_predictor() -> Outcome {
    let hog = HogParams::default();
    let d = hog.descriptor_len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let planted: Vec<TrainingSample> = (0..2 * d)
        .map(|_| {
            let image = noise_image(&mut rng);
            let landmarks = vec![Pixel2::new(12.0, 12.0)];
            let phi = features(&image, &landmarks, &hog).unwrap();
            let sse = 7.5 + truth.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
            TrainingSample { image, landmarks, sse }
        })
        .collect();
    let (p, _) = train_failure_predictor(&planted, &hog, 0.0).unwrap();
    let num = p.weights.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let rel = num / truth.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bias_rel = (p.bias - 7.5).abs() / 7.5;

    let mut cfg = demo(120);
    cfg.render_images = true;
    let s = generate(&cfg, &DeformableFaceModel::bundled_metric()).unwrap();
    let samples = perturbed_samples(&s, &PerturbationConfig::default()).unwrap();
    let (train, test): (Vec<_>, Vec<_>) = samples.into_iter().partition(|l| l.frame % 3 != 2);
    let train: Vec<TrainingSample> = train.into_iter().map(|l| l.sample).collect();
    let (model, _) = train_failure_predictor(&train, &hog, 1.0).unwrap();
    let predicted: Vec<f64> = test.iter().map(|l| model.predict_error(&l.sample.image, &l.sample.landmarks).unwrap()).collect();
    let actual: Vec<f64> = test.iter().map(|l| l.sample.sse).collect();
    let rho = pearson(&ranks(&predicted), &ranks(&actual));
    outcome(
        rel < 1e-6 && bias_rel < 1e-6 && rho > 0.8,
        format!(
            "planted weights rel err {rel:.1e}, bias rel err {bias_rel:.1e}; held-out Spearman {rho:.3} ({} train / {} test samples)",
            train.len(),
            test.len()
        ),
    )
}

// 12. Performance floors.
fn performance() -> Outcome {
    let model = DeformableFaceModel::bundled_metric();
    let rows = run_all(&model, &k500(), &HogParams::default(), 300).unwrap();
    let get = |name: &str| -> &BenchRow { rows.iter().find(|r| r.name == name).unwrap() };
    let limits = [("fit (warm start)", 2000.0), ("fit (cold start)", 2000.0), ("kalman_step", 5.0), ("hog (one landmark)", 50.0), ("encode request", 100.0)];
    let mut pass = true;
    let parts: Vec<String> = limits
        .iter()
        .map(|(n, lim)| {
            let m = get(n).median_us;
            pass &= m < *lim;
            format!("{n} {m:.2} us (< {lim})")
        })
        .collect();
    outcome(pass, format!("medians: {}", parts.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("fit recovery", fit_recovery),
        ("jacobian", jacobian),
        ("ipd scaling", ipd_scaling),
        ("re-init invariance", reinit_invariance),
        ("kalman constants", kalman),
        ("averaging filter", averaging),
        ("protocol budget", protocol_budget),
        ("loopback equivalence", loopback),
        ("metrics oracle", metrics),
        ("state machine", state_machine),
        ("failure predictor", failure_predictor),
        ("performance floor", performance),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (i, (name, _)) in criteria.iter().enumerate() {
            println!("criterion_{:02}_{}: test", i + 1, name.replace([' ', '-'], "_"));
        }
        return;
    }
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!o.pass);
        println!(
            "criterion {n:>2} {name:<22} {}  {} [{:.2} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
