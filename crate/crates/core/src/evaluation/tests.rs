use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn p(u: f64, v: f64) -> Pixel2 {
    Pixel2::new(u, v)
}

/// CED by counting, one threshold at a time.
fn ced_oracle(errors: &[f64], t: f64) -> f64 {
    let mut c = 0usize;
    for e in errors {
        if *e <= t {
            c += 1;
        }
    }
    c as f64 / errors.len() as f64
}

/// Integrates the CED step function between its sorted breakpoints.
fn auc_oracle(errors: &[f64], limit: f64) -> f64 {
    let mut bps: Vec<f64> = errors.iter().copied().filter(|e| *e < limit).collect();
    bps.push(0.0);
    bps.push(limit);
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let mut area = 0.0;
    for w in bps.windows(2) {
        area += ced_oracle(errors, w[0]) * (w[1] - w[0]);
    }
    100.0 * area / limit
}

fn random_errors(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => 0.08,
            1 => 0.0,
            2 => rng.gen_range(0.08..0.5),
            _ => rng.gen_range(0.0..0.12),
        })
        .collect()
}

#[test]
fn normalized_error_hand_cases() {
    let gt = vec![p(0.0, 0.0), p(100.0, 0.0), p(50.0, 50.0)];
    assert_eq!(normalized_error(&gt, &gt, 0, 1).unwrap(), 0.0);
    let shifted: Vec<_> = gt.iter().map(|q| p(q.u + 3.0, q.v + 4.0)).collect();
    assert!((normalized_error(&shifted, &gt, 0, 1).unwrap() - 0.05).abs() < 1e-15);
    let by_iod: Vec<_> = gt.iter().map(|q| p(q.u, q.v + 100.0)).collect();
    assert_eq!(normalized_error(&by_iod, &gt, 0, 1).unwrap(), 1.0);
}

#[test]
fn normalized_error_rejects_bad_input() {
    let gt = vec![p(0.0, 0.0), p(0.0, 0.0), p(1.0, 1.0)];
    assert!(matches!(normalized_error(&gt, &gt, 0, 1), Err(EvalError::DegenerateNormalizer(_))));
    assert!(matches!(normalized_error(&gt[..2], &gt, 0, 1), Err(EvalError::LengthMismatch { pred: 2, gt: 3 })));
    assert!(matches!(normalized_error(&gt, &gt, 0, 5), Err(EvalError::IndexOutOfRange { .. })));
    let nan = vec![p(f64::NAN, 0.0), p(1.0, 0.0), p(1.0, 1.0)];
    assert!(matches!(normalized_error(&nan, &gt, 0, 2), Err(EvalError::NonFinite(_))));
}

#[test]
fn ced_hand_cases() {
    assert_eq!(ced(&[0.0], &[0.0, 0.04, 0.08]).unwrap(), vec![1.0; 3]);
    assert_eq!(ced(&[0.02, 0.06, 0.10], &[0.08]).unwrap(), vec![2.0 / 3.0]);
    assert!(matches!(ced(&[], &[0.1]), Err(EvalError::EmptyInput)));
}

#[test]
fn auc_and_failure_hand_cases() {
    assert_eq!(auc_008(&[0.0; 5]).unwrap(), 100.0);
    assert_eq!(failure_rate(&[0.0; 5]).unwrap(), 0.0);
    assert_eq!(auc_008(&[1.0; 5]).unwrap(), 0.0);
    assert_eq!(failure_rate(&[1.0; 5]).unwrap(), 100.0);
    assert_eq!(auc_008(&[0.04]).unwrap(), 50.0);
    // The boundary counts as success.
    assert_eq!(failure_rate(&[0.08]).unwrap(), 0.0);
    assert_eq!(failure_rate(&[f64::INFINITY, 0.0]).unwrap(), 50.0);
    assert!(matches!(auc_008(&[]), Err(EvalError::EmptyInput)));
    assert!(matches!(failure_rate(&[]), Err(EvalError::EmptyInput)));
    assert!(auc_008(&[f64::NAN]).is_err());
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let grid = uniform_grid(0.12, 100);
    for _ in 0..1000 {
        let n = rng.gen_range(1..200);
        let errs = random_errors(&mut rng, n);
        let curve = ced(&errs, &grid).unwrap();
        for (t, c) in grid.iter().zip(&curve) {
            assert_eq!(*c, ced_oracle(&errs, *t));
        }
        let failed = errs.iter().filter(|e| **e > 0.08).count();
        assert_eq!(failure_rate(&errs).unwrap(), 100.0 * failed as f64 / n as f64);
        let (a, b) = (auc_008(&errs).unwrap(), auc_oracle(&errs, 0.08));
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn auc_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let errs = random_errors(&mut rng, 500);
    let hits: f64 = (0..100_000).map(|_| ced_oracle(&errs, rng.gen_range(0.0..0.08))).sum();
    let mc = 100.0 * hits / 100_000.0;
    let exact = auc_008(&errs).unwrap();
    assert!((mc - exact).abs() < 0.5, "{mc} vs {exact}");
}

#[test]
fn spearman_cases() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert!((spearman(&a, &[10.0, 20.0, 35.0, 100.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(spearman(&a, &[1.0; 4]), None);
    // Ties get average ranks: [1, 2.5, 2.5, 4] against [1, 2, 3, 4].
    let r = spearman(&[1.0, 2.0, 2.0, 3.0], &a).unwrap();
    assert!((r - 4.5 / 22.5_f64.sqrt()).abs() < 1e-12, "{r}");
}

#[test]
fn report_summarizes() {
    let r = EvalReport::from_errors(&[0.0, 0.04, f64::INFINITY], 5).unwrap();
    assert_eq!(r.frames, 3);
    assert_eq!(r.missing, 1);
    assert_eq!(r.mean_error, Some(0.02));
    assert_eq!(r.median_error, Some(0.04));
    assert!((r.failure_rate - 100.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.ced.len(), 5);
    assert_eq!(r.ced[4], [0.08, 2.0 / 3.0]);
    let text = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<EvalReport>(&text).unwrap(), r);
}

#[test]
fn landmark_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.csv");
    std::fs::write(
        &path,
        "frame,landmark,pred_u,pred_v,gt_u,gt_v\n0,0,3,4,0,0\n0,1,103,4,100,0\n0,2,53,54,50,50\n1,0,,,0,0\n1,1,,,100,0\n1,2,,,50,50\n",
    )
    .unwrap();
    let pairs = read_landmark_csv(&path).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].pred.len(), 3);
    assert!(pairs[1].pred.is_empty());
    let e = errors_from_pairs(&pairs, (0, 1)).unwrap();
    assert!((e[0] - 0.05).abs() < 1e-15);
    assert_eq!(e[1], f64::INFINITY);

    std::fs::write(&path, "0,0,1,1,0,0\n0,1,,,1,1\n").unwrap();
    let err = read_landmark_csv(&path).unwrap_err().to_string();
    assert!(err.contains(":2:"), "{err}");
    std::fs::write(&path, "0,0,1,1,0,0\n0,2,1,1,0,0\n").unwrap();
    assert!(read_landmark_csv(&path).is_err());
    std::fs::write(&path, "0,0,1,1,0,0\n1,0,1,1,0,0\n0,1,1,1,0,0\n").unwrap();
    assert!(read_landmark_csv(&path).is_err());
    std::fs::write(&path, "0,0,x,1,0,0\n").unwrap();
    assert!(read_landmark_csv(&path).is_err());
}

#[test]
fn pts_and_point_csv() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("a.pts");
    let body: String = (0..68).map(|i| format!("{}.5 {}\n", i, 2 * i)).collect();
    std::fs::write(&pts, format!("version: 1\nn_points: 68\n{{\n{body}}}\n")).unwrap();
    let all = read_points(&pts).unwrap();
    assert_eq!(all.len(), 68);
    assert_eq!(all[3], p(3.5, 6.0));
    let inner = reduce_68_to_51(&all).unwrap();
    assert_eq!(inner.len(), 51);
    assert_eq!(inner[OUTER_EYES_51.0], all[OUTER_EYES_68.0]);
    assert_eq!(inner[OUTER_EYES_51.1], all[OUTER_EYES_68.1]);
    assert!(reduce_68_to_51(&inner).is_none());

    std::fs::write(&pts, "version: 1\nn_points: 3\n{\n1 2\n}\n").unwrap();
    assert!(read_pts(&pts).is_err());
    std::fs::write(&pts, "n_points: 1\n{\n1 2\n").unwrap();
    assert!(read_pts(&pts).is_err());

    let csv = dir.path().join("a.csv");
    std::fs::write(&csv, "u,v\n1,2\n3.5,4\n").unwrap();
    assert_eq!(read_points(&csv).unwrap(), vec![p(1.0, 2.0), p(3.5, 4.0)]);
    let missing = read_points(dir.path().join("nope.csv")).unwrap_err().to_string();
    assert!(missing.contains("nope.csv"));
}

#[test]
fn ced_csv_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ced.csv");
    let r = EvalReport::from_errors(&[0.04], 3).unwrap();
    write_ced_csv(&path, &r).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "threshold,fraction\n0,0\n0.04,1\n0.08,1\n");
}

proptest! {
    #[test]
    fn permutation_invariant(mut errs in prop::collection::vec(0.0..0.2f64, 1..60), seed in any::<u64>()) {
        let (a, f) = (auc_008(&errs).unwrap(), failure_rate(&errs).unwrap());
        let grid = uniform_grid(0.1, 11);
        let c = ced(&errs, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..errs.len()).rev() {
            errs.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(auc_008(&errs).unwrap(), a);
        prop_assert_eq!(failure_rate(&errs).unwrap(), f);
        prop_assert_eq!(ced(&errs, &grid).unwrap(), c);
    }

    #[test]
    fn failure_and_ced_are_complementary(errs in prop::collection::vec(prop_oneof![Just(0.08), 0.0..0.2f64], 1..60)) {
        let f = failure_rate(&errs).unwrap();
        let c = ced(&errs, &[FAILURE_THRESHOLD]).unwrap()[0];
        let n = errs.len() as f64;
        // Counts partition the frames exactly; the percentages agree up to one rounding each.
        prop_assert_eq!((f * n / 100.0).round() + (c * n).round(), n);
        prop_assert!((f + c * 100.0 - 100.0).abs() <= 1e-12);
    }

    #[test]
    fn ced_is_monotone(errs in prop::collection::vec(0.0..0.2f64, 1..60)) {
        let c = ced(&errs, &uniform_grid(0.2, 50)).unwrap();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn normalized_error_is_similarity_invariant(
        pts in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..10),
        noise in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 10),
        shift in (-50.0..50.0f64, -50.0..50.0f64),
        scale in 0.5..3.0f64,
    ) {
        let gt: Vec<Pixel2> = pts.iter().map(|&(u, v)| p(u, v)).collect();
        prop_assume!((gt[0].u - gt[1].u).hypot(gt[0].v - gt[1].v) > 1.0);
        let pred: Vec<Pixel2> = gt.iter().zip(&noise).map(|(q, n)| p(q.u + n.0, q.v + n.1)).collect();
        let e = normalized_error(&pred, &gt, 0, 1).unwrap();
        let tf = |q: &Pixel2| p(scale * q.u + shift.0, scale * q.v + shift.1);
        let gt2: Vec<Pixel2> = gt.iter().map(tf).collect();
        let pred2: Vec<Pixel2> = pred.iter().map(tf).collect();
        let e2 = normalized_error(&pred2, &gt2, 0, 1).unwrap();
        prop_assert!((e - e2).abs() <= 1e-9 * e.max(1.0));
    }
}
