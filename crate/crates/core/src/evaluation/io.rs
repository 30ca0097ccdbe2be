//! Landmark file readers and report writers.
//!
//! Pair CSV (long format, optional header):
//! `frame,landmark,pred_u,pred_v,gt_u,gt_v`. A frame whose prediction is
//! missing leaves the two `pred` columns empty on every row.
//!
//! Point files: `.pts` (iBUG layout) or a CSV with one `u,v` row per landmark.

use std::io::Write;
use std::path::Path;

use super::{normalized_error, EvalError, EvalReport};
use crate::geometry::Pixel2;
use crate::pipeline::TraceRecord;

pub type LandmarkSet = Vec<Pixel2>;

#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub frame: u64,
    /// Empty when the tracker produced nothing for this frame.
    pub pred: LandmarkSet,
    pub gt: LandmarkSet,
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> EvalError {
    EvalError::Parse { path: path.display().to_string(), line, message: message.into() }
}

fn num(path: &Path, line: usize, field: &str) -> Result<f64, EvalError> {
    let v: f64 = field.trim().parse().map_err(|_| parse_err(path, line, format!("not a number: '{}'", field.trim())))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, "non-finite coordinate"));
    }
    Ok(v)
}

fn is_header(line: &str) -> bool {
    line.split(',').next().is_some_and(|f| f.trim().parse::<f64>().is_err())
}

pub fn read_landmark_csv(path: impl AsRef<Path>) -> Result<Vec<FramePair>, EvalError> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut out: Vec<FramePair> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 1 && is_header(line)) {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(parse_err(path, n, format!("expected 6 fields, got {}", f.len())));
        }
        let frame: u64 = f[0].trim().parse().map_err(|_| parse_err(path, n, "bad frame index"))?;
        let idx: usize = f[1].trim().parse().map_err(|_| parse_err(path, n, "bad landmark index"))?;
        let gt = Pixel2::new(num(path, n, f[4])?, num(path, n, f[5])?);
        let pred = match (f[2].trim(), f[3].trim()) {
            ("", "") => None,
            _ => Some(Pixel2::new(num(path, n, f[2])?, num(path, n, f[3])?)),
        };
        if out.last().is_none_or(|p| p.frame != frame) {
            if out.iter().any(|p| p.frame == frame) {
                return Err(parse_err(path, n, format!("rows of frame {frame} are not contiguous")));
            }
            out.push(FramePair { frame, pred: Vec::new(), gt: Vec::new() });
        }
        let cur = out.last_mut().expect("pushed");
        if idx != cur.gt.len() {
            return Err(parse_err(path, n, format!("landmark index {idx}, expected {}", cur.gt.len())));
        }
        match pred {
            Some(p) if cur.pred.len() == idx => cur.pred.push(p),
            None if cur.pred.is_empty() => {}
            _ => return Err(parse_err(path, n, "prediction present on some rows of a frame but not others")),
        }
        cur.gt.push(gt);
    }
    if out.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(out)
}

/// Reads an iBUG `.pts` file.
pub fn read_pts(path: impl AsRef<Path>) -> Result<LandmarkSet, EvalError> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut declared = None;
    let mut inside = false;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !inside {
            if let Some(rest) = line.strip_prefix("n_points:") {
                declared = Some(rest.trim().parse::<usize>().map_err(|_| parse_err(path, n, "bad n_points"))?);
            } else if line == "{" {
                inside = true;
            }
            continue;
        }
        if line == "}" {
            inside = false;
            break;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 {
            return Err(parse_err(path, n, "expected 'x y'"));
        }
        pts.push(Pixel2::new(num(path, n, f[0])?, num(path, n, f[1])?));
    }
    if inside {
        return Err(parse_err(path, text.lines().count(), "missing closing '}'"));
    }
    if let Some(d) = declared {
        if d != pts.len() {
            return Err(parse_err(path, 0, format!("n_points is {d} but {} points follow", pts.len())));
        }
    }
    if pts.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(pts)
}

/// `.pts` by extension, otherwise one `u,v` row per landmark.
pub fn read_points(path: impl AsRef<Path>) -> Result<LandmarkSet, EvalError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pts")) {
        return read_pts(path);
    }
    let text = read(path)?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 1 && is_header(line)) {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 2 {
            return Err(parse_err(path, n, format!("expected 'u,v', got {} fields", f.len())));
        }
        pts.push(Pixel2::new(num(path, n, f[0])?, num(path, n, f[1])?));
    }
    if pts.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(pts)
}

/// Drops the 17 jaw points of a 68-point annotation.
pub fn reduce_68_to_51(pts: &[Pixel2]) -> Option<LandmarkSet> {
    (pts.len() == 68).then(|| pts[17..].to_vec())
}

/// Per-frame normalized errors; missing predictions count as infinite.
pub fn errors_from_pairs(pairs: &[FramePair], eyes: (usize, usize)) -> Result<Vec<f64>, EvalError> {
    pairs
        .iter()
        .map(|p| if p.pred.is_empty() { Ok(f64::INFINITY) } else { normalized_error(&p.pred, &p.gt, eyes.0, eyes.1) })
        .collect()
}

/// Errors for trace records that carry ground truth. Frames without a
/// valid track count as infinite.
pub fn errors_from_trace(records: &[TraceRecord], eyes: (usize, usize)) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::new();
    for r in records {
        let Some(gt) = &r.gt_landmarks else { continue };
        if r.output.tracking_valid && !r.output.landmarks.is_empty() {
            out.push(normalized_error(&r.output.landmarks, gt, eyes.0, eyes.1)?);
        } else {
            out.push(f64::INFINITY);
        }
    }
    Ok(out)
}

/// Writes `threshold,fraction` rows.
pub fn write_ced_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<(), EvalError> {
    let path = path.as_ref();
    let io = |e| EvalError::Io { path: path.display().to_string(), source: e };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "threshold,fraction").map_err(io)?;
    for [t, f] in &report.ced {
        writeln!(w, "{t},{f}").map_err(io)?;
    }
    w.flush().map_err(io)
}
