//! Tracking-failure detection: HOG features around the aligned landmarks feed a
//! linear model that predicts the landmark sum of squared errors (pixels²).
//! A frame is a failure when the prediction exceeds the threshold.

mod hog;

pub use hog::{extract_hog, extract_hog_into, HogParams};

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::GrayImage;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pixel2;

const BLOB_MAGIC: &[u8; 4] = b"HFFP";
const BLOB_VERSION: u32 = 1;
const SIDECAR_FORMAT: &str = "holoface-failure-predictor";

/// Relative ridge added when the caller asks for none, so the system stays solvable.
const RIDGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FailureError {
    #[error("image is empty")]
    EmptyImage,
    #[error("landmark is not finite")]
    NonFiniteLandmark,
    #[error("expected {expected} landmarks, got {got}")]
    LandmarkCountMismatch { expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("design matrix is degenerate even with the ridge floor")]
    DegenerateDesignMatrix,
    #[error("need at least {needed} training samples, got {got}")]
    TooFewSamples { got: usize, needed: usize },
    #[error("predictor file {path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailurePredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Predicted SSE above which a frame counts as a failure, pixels².
    pub threshold: f64,
    pub hog: HogParams,
    pub landmark_count: usize,
}

/// One labelled training example.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub image: GrayImage,
    pub landmarks: Vec<Pixel2>,
    /// True landmark SSE in pixels².
    pub sse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSummary {
    pub samples: usize,
    pub rms_residual: f64,
}

/// Concatenated descriptors for all landmarks, in landmark order.
pub fn features(image: &GrayImage, landmarks: &[Pixel2], p: &HogParams) -> Result<Vec<f64>, FailureError> {
    let mut out = Vec::with_capacity(p.descriptor_len() * landmarks.len());
    for s in landmarks {
        extract_hog_into(image, s, p, &mut out)?;
    }
    Ok(out)
}

impl FailurePredictor {
    pub fn new(weights: Vec<f64>, bias: f64, threshold: f64, hog: HogParams, landmark_count: usize) -> Result<Self, FailureError> {
        hog.validate()?;
        let d = hog.descriptor_len() * landmark_count;
        if weights.len() != d {
            return Err(FailureError::InvalidParams(format!(
                "{} weights, expected {landmark_count} landmarks × {} = {d}",
                weights.len(),
                hog.descriptor_len()
            )));
        }
        if !bias.is_finite() || threshold.is_nan() || weights.iter().any(|w| !w.is_finite()) {
            return Err(FailureError::InvalidParams("non-finite coefficients".into()));
        }
        Ok(Self { weights, bias, threshold, hog, landmark_count })
    }

    /// Predictor that always returns `bias`.
    pub fn constant(bias: f64, threshold: f64, hog: HogParams, landmark_count: usize) -> Result<Self, FailureError> {
        Self::new(vec![0.0; hog.descriptor_len() * landmark_count], bias, threshold, hog, landmark_count)
    }

    pub fn predict_features(&self, phi: &[f64]) -> f64 {
        self.weights.iter().zip(phi).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Predicted landmark SSE in pixels².
    pub fn predict_error(&self, image: &GrayImage, landmarks: &[Pixel2]) -> Result<f64, FailureError> {
        if landmarks.len() != self.landmark_count {
            return Err(FailureError::LandmarkCountMismatch { expected: self.landmark_count, got: landmarks.len() });
        }
        Ok(self.predict_features(&features(image, landmarks, &self.hog)?))
    }

    pub fn is_failure_score(&self, predicted: f64) -> bool {
        predicted > self.threshold
    }

    pub fn is_failure(&self, image: &GrayImage, landmarks: &[Pixel2]) -> Result<bool, FailureError> {
        Ok(self.is_failure_score(self.predict_error(image, landmarks)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(40 + 8 * self.weights.len());
        b.extend_from_slice(BLOB_MAGIC);
        b.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.landmark_count as u32).to_le_bytes());
        b.extend_from_slice(&self.bias.to_le_bytes());
        b.extend_from_slice(&self.threshold.to_le_bytes());
        b.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            b.extend_from_slice(&w.to_le_bytes());
        }
        b
    }

    /// Decodes a blob; the HOG layout comes from the sidecar.
    pub fn from_bytes(bytes: &[u8], hog: HogParams) -> Result<Self, FailureError> {
        let fail = |m: &str| FailureError::Format { path: "<bytes>".into(), message: m.into() };
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8], FailureError> {
            if r.len() < n {
                return Err(fail("truncated"));
            }
            let (h, t) = r.split_at(n);
            r = t;
            Ok(h)
        };
        if take(4)? != BLOB_MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != BLOB_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let landmark_count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let bias = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let threshold = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let n = usize::try_from(n).map_err(|_| fail("weight count overflows"))?;
        let body = take(n.checked_mul(8).ok_or_else(|| fail("weight count overflows"))?)?;
        if !r.is_empty() {
            return Err(fail("trailing bytes"));
        }
        let weights = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(weights, bias, threshold, hog, landmark_count)
    }

    fn sidecar_path(blob: &Path) -> PathBuf {
        blob.with_extension("json")
    }

    /// Writes `path` (binary weights) and `path` with a `.json` extension (HOG layout).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FailureError> {
        let path = path.as_ref();
        let io = |p: &Path, source| FailureError::Io { path: p.display().to_string(), source };
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: BLOB_VERSION,
            hog: self.hog,
            landmark_count: self.landmark_count,
            threshold: self.threshold,
        };
        let mut f = std::fs::File::create(path).map_err(|e| io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| io(path, e))?;
        let side = Self::sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar).expect("sidecar serializes")).map_err(|e| io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FailureError> {
        let path = path.as_ref();
        let side = Self::sidecar_path(path);
        let io = |p: &Path, source| FailureError::Io { path: p.display().to_string(), source };
        let text = std::fs::read_to_string(&side).map_err(|e| io(&side, e))?;
        let sc: Sidecar = serde_json::from_str(&text)
            .map_err(|e| FailureError::Format { path: side.display().to_string(), message: e.to_string() })?;
        if sc.format != SIDECAR_FORMAT || sc.version != BLOB_VERSION {
            return Err(FailureError::Format {
                path: side.display().to_string(),
                message: format!("unsupported format {} v{}", sc.format, sc.version),
            });
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| io(path, e))?;
        let p = Self::from_bytes(&bytes, sc.hog).map_err(|e| match e {
            FailureError::Format { message, .. } => FailureError::Format { path: path.display().to_string(), message },
            other => other,
        })?;
        if p.landmark_count != sc.landmark_count || p.threshold.to_bits() != sc.threshold.to_bits() {
            return Err(FailureError::Format {
                path: path.display().to_string(),
                message: "blob and sidecar disagree".into(),
            });
        }
        Ok(p)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format: String,
    version: u32,
    hog: HogParams,
    landmark_count: usize,
    threshold: f64,
}

/// Ridge least squares with an unpenalized intercept:
/// minimizes `Σ(wᵀφᵢ + b − yᵢ)² + ridge·|w|²`.
///
/// Works on centered data and switches to the dual (N×N) system when there are
/// more features than samples.
pub fn fit_linear(phi: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<(Vec<f64>, f64, f64), FailureError> {
    let n = phi.len();
    if n < 2 || y.len() != n {
        return Err(FailureError::TooFewSamples { got: n.min(y.len()), needed: 2 });
    }
    let d = phi[0].len();
    if phi.iter().any(|p| p.len() != d) {
        return Err(FailureError::InvalidParams("feature vectors differ in length".into()));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(FailureError::InvalidParams("ridge and targets must be finite, ridge >= 0".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| phi.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let x = DMatrix::from_fn(n, d, |i, j| phi[i][j] - mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let solve = |g: DMatrix<f64>, rhs: DVector<f64>| -> Result<DVector<f64>, FailureError> {
        let scale = (g.trace() / g.nrows() as f64).max(f64::MIN_POSITIVE);
        let lam = ridge.max(RIDGE_FLOOR * scale);
        let mut g = g;
        for i in 0..g.nrows() {
            g[(i, i)] += lam;
        }
        g.cholesky().map(|c| c.solve(&rhs)).ok_or(FailureError::DegenerateDesignMatrix)
    };
    let w = if d <= n {
        solve(x.transpose() * &x, x.transpose() * &yc)?
    } else {
        x.transpose() * solve(&x * x.transpose(), yc.clone())?
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(FailureError::DegenerateDesignMatrix);
    }
    let bias = y_mean - w.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>();
    let resid = &x * &w - &yc;
    let rms = (resid.norm_squared() / n as f64).sqrt();
    Ok((w.iter().copied().collect(), bias, rms))
}

pub fn train_failure_predictor(
    samples: &[TrainingSample],
    p: &HogParams,
    ridge: f64,
) -> Result<(FailurePredictor, TrainingSummary), FailureError> {
    p.validate()?;
    let first = samples.first().ok_or(FailureError::TooFewSamples { got: 0, needed: 2 })?;
    let l = first.landmarks.len();
    let mut phi = Vec::with_capacity(samples.len());
    for s in samples {
        if s.landmarks.len() != l {
            return Err(FailureError::LandmarkCountMismatch { expected: l, got: s.landmarks.len() });
        }
        phi.push(features(&s.image, &s.landmarks, p)?);
    }
    let y: Vec<f64> = samples.iter().map(|s| s.sse).collect();
    let (w, bias, rms) = fit_linear(&phi, &y, ridge)?;
    let pred = FailurePredictor::new(w, bias, f64::INFINITY, *p, l)?;
    Ok((pred, TrainingSummary { samples: samples.len(), rms_residual: rms }))
}

/// Threshold such that at most `false_failure_rate` of `good_scores` lie strictly above it.
pub fn calibrate_threshold(good_scores: &[f64], false_failure_rate: f64) -> Result<f64, FailureError> {
    if good_scores.is_empty() {
        return Err(FailureError::TooFewSamples { got: 0, needed: 1 });
    }
    if !(0.0..1.0).contains(&false_failure_rate) {
        return Err(FailureError::InvalidParams("false_failure_rate must be in [0, 1)".into()));
    }
    let mut s = good_scores.to_vec();
    if s.iter().any(|v| v.is_nan()) {
        return Err(FailureError::InvalidParams("NaN score".into()));
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let allowed = (false_failure_rate * n as f64).floor() as usize;
    Ok(s[n - 1 - allowed.min(n - 1)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(rng: &mut ChaCha8Rng) -> GrayImage {
        GrayImage::from_fn(24, 24, |_, _| Luma([rng.gen()]))
    }

    #[test]
    fn constant_predictor_returns_bias() {
        let p = FailurePredictor::constant(12.5, 100.0, HogParams::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = noise_image(&mut rng);
        let lm = vec![Pixel2::new(5.0, 5.0); 3];
        assert_eq!(p.predict_error(&img, &lm).unwrap(), 12.5);
        assert!(!p.is_failure(&img, &lm).unwrap());
        assert!(matches!(p.predict_error(&img, &lm[..2]), Err(FailureError::LandmarkCountMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn planted_model_recovery() {
        let hog = HogParams::default();
        let d = hog.descriptor_len();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let samples: Vec<TrainingSample> = (0..2 * d)
            .map(|_| {
                let image = noise_image(&mut rng);
                let landmarks = vec![Pixel2::new(12.0, 12.0)];
                let phi = features(&image, &landmarks, &hog).unwrap();
                let sse = 3.0 + truth.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
                TrainingSample { image, landmarks, sse }
            })
            .collect();
        let (p, summary) = train_failure_predictor(&samples, &hog, 0.0).unwrap();
        let err = p.weights.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = truth.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err / norm < 1e-6, "relative weight error {}", err / norm);
        assert!((p.bias - 3.0).abs() < 1e-6);
        assert!(summary.rms_residual < 1e-6);
    }

    #[test]
    fn dual_form_matches_primal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi: Vec<Vec<f64>> = (0..12).map(|_| (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..10.0)).collect();
        let (w, b, _) = fit_linear(&phi, &y, 0.5).unwrap();
        // Primal normal equations on the centered data, solved independently.
        let n = phi.len();
        let mean: Vec<f64> = (0..30).map(|j| phi.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let x = DMatrix::from_fn(n, 30, |i, j| phi[i][j] - mean[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
        let g = x.transpose() * &x + DMatrix::identity(30, 30) * 0.5;
        let wp = g.lu().solve(&(x.transpose() * yc)).unwrap();
        for (a, c) in w.iter().zip(wp.iter()) {
            assert!((a - c).abs() < 1e-10);
        }
        let bp = ym - wp.iter().zip(&mean).map(|(a, c)| a * c).sum::<f64>();
        assert!((b - bp).abs() < 1e-10);
    }

    #[test]
    fn repeated_sample_fits_its_sse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = TrainingSample { image: noise_image(&mut rng), landmarks: vec![Pixel2::new(10.0, 10.0)], sse: 42.0 };
        let (p, _) = train_failure_predictor(&[s.clone(), s.clone(), s.clone()], &HogParams::default(), 1e-3).unwrap();
        assert!((p.predict_error(&s.image, &s.landmarks).unwrap() - 42.0).abs() < 1e-9);
        assert!((p.bias - 42.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            train_failure_predictor(&[], &HogParams::default(), 1.0),
            Err(FailureError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn landmark_order_matters() {
        let hog = HogParams::default();
        let d = hog.descriptor_len();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = noise_image(&mut rng);
        let w: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = FailurePredictor::new(w.clone(), 0.0, 0.0, hog, 2).unwrap();
        let a = [Pixel2::new(6.0, 6.0), Pixel2::new(17.0, 15.0)];
        let b = [a[1], a[0]];
        let base = p.predict_error(&img, &a).unwrap();
        assert!((p.predict_error(&img, &b).unwrap() - base).abs() > 1e-6);
        let mut swapped = w[d..].to_vec();
        swapped.extend_from_slice(&w[..d]);
        let q = FailurePredictor::new(swapped, 0.0, 0.0, hog, 2).unwrap();
        assert!((q.predict_error(&img, &b).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn prediction_is_linear_in_features() {
        let hog = HogParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Vec<f64> = (0..hog.descriptor_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = FailurePredictor::new(w, 1.5, 0.0, hog, 1).unwrap();
        let x: Vec<f64> = (0..hog.descriptor_len()).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..hog.descriptor_len()).map(|_| rng.gen()).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a + 3.0 * b).collect();
        let lhs = p.predict_features(&xy) - p.bias;
        let rhs = 2.0 * (p.predict_features(&x) - p.bias) + 3.0 * (p.predict_features(&y) - p.bias);
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn threshold_monotonicity_and_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..100.0)).collect();
        let t = calibrate_threshold(&scores, 0.05).unwrap();
        let above = scores.iter().filter(|&&s| s > t).count();
        assert!(above <= 50 && above >= 49, "{above}");
        let hog = HogParams::default();
        for &s in &scores[..50] {
            let lo = FailurePredictor::constant(0.0, t, hog, 1).unwrap();
            let hi = FailurePredictor::constant(0.0, t + 10.0, hog, 1).unwrap();
            if !lo.is_failure_score(s) {
                assert!(!hi.is_failure_score(s));
            }
        }
    }

    #[test]
    fn blob_round_trip_and_corruption() {
        let hog = HogParams { orientation_bins: 6, ..HogParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..2 * hog.descriptor_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = FailurePredictor::new(w, -0.25, 37.5, hog, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.bin");
        p.save(&path).unwrap();
        assert_eq!(FailurePredictor::load(&path).unwrap(), p);

        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"HFFP");
        assert_eq!(bytes.len(), 36 + 8 * p.weights.len());
        assert!(FailurePredictor::from_bytes(&bytes[..bytes.len() - 3], hog).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(FailurePredictor::from_bytes(&bad, hog).is_err());
        assert!(FailurePredictor::from_bytes(&bytes, HogParams::default()).is_err());
    }
}
