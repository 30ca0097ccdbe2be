//! Landmark accuracy metrics: normalized point-to-point error, cumulative
//! error distribution (CED), area under the CED up to 0.08 and failure rate.
//!
//! An error exactly equal to a threshold counts as a success; failure is
//! strictly greater.

mod io;

pub use io::{
    errors_from_pairs, errors_from_trace, read_landmark_csv, read_points, read_pts, reduce_68_to_51, write_ced_csv, FramePair,
    LandmarkSet,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pixel2;

/// Threshold used for AUC and failure rate.
pub const FAILURE_THRESHOLD: f64 = 0.08;

/// Outer eye corners in the 51-point convention (68-point indices 36 and 45).
pub const OUTER_EYES_51: (usize, usize) = (19, 28);
pub const OUTER_EYES_68: (usize, usize) = (36, 45);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no errors to evaluate")]
    EmptyInput,
    #[error("prediction has {pred} landmarks, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("inter-ocular distance {0} is not positive")]
    DegenerateNormalizer(f64),
    #[error("eye index {index} out of range for {len} landmarks")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Mean landmark distance divided by the ground-truth distance between the two eye corners.
pub fn normalized_error(pred: &[Pixel2], gt: &[Pixel2], left_eye: usize, right_eye: usize) -> Result<f64, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    for idx in [left_eye, right_eye] {
        if idx >= gt.len() {
            return Err(EvalError::IndexOutOfRange { index: idx, len: gt.len() });
        }
    }
    if pred.iter().chain(gt).any(|p| !p.is_finite()) {
        return Err(EvalError::NonFinite("landmarks"));
    }
    let iod = dist(&gt[left_eye], &gt[right_eye]);
    if !(iod > 0.0) {
        return Err(EvalError::DegenerateNormalizer(iod));
    }
    let mean = pred.iter().zip(gt).map(|(a, b)| dist(a, b)).sum::<f64>() / gt.len() as f64;
    Ok(mean / iod)
}

fn dist(a: &Pixel2, b: &Pixel2) -> f64 {
    (a.u - b.u).hypot(a.v - b.v)
}

fn check(errors: &[f64]) -> Result<(), EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    // +∞ stands for a frame with no prediction.
    if errors.iter().any(|e| e.is_nan() || *e < 0.0) {
        return Err(EvalError::NonFinite("errors"));
    }
    Ok(())
}

fn sorted(errors: &[f64]) -> Vec<f64> {
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Fraction of errors `<= τ` for each `τ` in `grid`.
pub fn ced(errors: &[f64], grid: &[f64]) -> Result<Vec<f64>, EvalError> {
    check(errors)?;
    let s = sorted(errors);
    let n = s.len() as f64;
    Ok(grid.iter().map(|t| s.partition_point(|e| e <= t) as f64 / n).collect())
}

/// Area under the CED on `[0, limit]`, normalized by `limit`, in percent.
///
/// The CED is a step function, so the integral is exact: each error `e`
/// contributes `1/N` over `[e, limit]`.
pub fn auc(errors: &[f64], limit: f64) -> Result<f64, EvalError> {
    check(errors)?;
    if !(limit > 0.0 && limit.is_finite()) {
        return Err(EvalError::NonFinite("AUC limit"));
    }
    let s = sorted(errors);
    let area: f64 = s.iter().take_while(|e| **e < limit).map(|e| limit - e).sum();
    Ok(100.0 * area / (s.len() as f64 * limit))
}

pub fn auc_008(errors: &[f64]) -> Result<f64, EvalError> {
    auc(errors, FAILURE_THRESHOLD)
}

/// Percentage of errors strictly above `threshold`.
pub fn failure_rate_at(errors: &[f64], threshold: f64) -> Result<f64, EvalError> {
    check(errors)?;
    let failed = errors.iter().filter(|e| **e > threshold).count();
    Ok(100.0 * failed as f64 / errors.len() as f64)
}

pub fn failure_rate(errors: &[f64]) -> Result<f64, EvalError> {
    failure_rate_at(errors, FAILURE_THRESHOLD)
}

/// Evenly spaced thresholds `0, step, …, limit`.
pub fn uniform_grid(limit: f64, points: usize) -> Vec<f64> {
    let n = points.max(2) - 1;
    (0..=n).map(|i| limit * i as f64 / n as f64).collect()
}

/// Spearman rank correlation with average ranks for ties. `None` if either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Summary written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    /// Frames without a prediction; they count with infinite error.
    pub missing: usize,
    pub mean_error: Option<f64>,
    pub median_error: Option<f64>,
    pub auc_008: f64,
    pub failure_rate: f64,
    /// `[threshold, fraction]` pairs.
    pub ced: Vec<[f64; 2]>,
}

impl EvalReport {
    pub fn from_errors(errors: &[f64], grid_points: usize) -> Result<Self, EvalError> {
        check(errors)?;
        let s = sorted(errors);
        let grid = uniform_grid(FAILURE_THRESHOLD, grid_points);
        let curve = ced(errors, &grid)?;
        let finite: Vec<f64> = s.iter().copied().filter(|e| e.is_finite()).collect();
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Ok(EvalReport {
            frames: n,
            missing: n - finite.len(),
            mean_error: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            median_error: median.is_finite().then_some(median),
            auc_008: auc_008(errors)?,
            failure_rate: failure_rate(errors)?,
            ced: grid.into_iter().zip(curve).map(|(t, f)| [t, f]).collect(),
        })
    }
}

#[cfg(test)]
mod tests;
