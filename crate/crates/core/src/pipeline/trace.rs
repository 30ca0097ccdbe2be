//! Per-frame JSON-lines trace.
//!
//! Every line is one `TraceRecord`: the tracker output for a frame plus,
//! for simulated runs, the ground-truth landmarks and head position.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrackOutput;
use crate::geometry::Pixel2;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub schema_version: u32,
    #[serde(flatten)]
    pub output: TrackOutput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_landmarks: Option<Vec<Pixel2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_world_translation: Option<[f64; 3]>,
}

impl TraceRecord {
    pub fn new(output: TrackOutput) -> Self {
        TraceRecord { schema_version: TRACE_SCHEMA_VERSION, output, gt_landmarks: None, gt_world_translation: None }
    }
}

pub struct TraceWriter<W: Write> {
    out: BufWriter<W>,
}

impl TraceWriter<std::fs::File> {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::new(std::fs::File::create(path)?))
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(w: W) -> Self {
        TraceWriter { out: BufWriter::new(w) }
    }

    pub fn write(&mut self, rec: &TraceRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| e.into_error())
    }
}

/// Reads a trace, rejecting records from another schema version.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, String> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
        if rec.schema_version != TRACE_SCHEMA_VERSION {
            return Err(format!(
                "{}:{}: trace schema version {} (expected {TRACE_SCHEMA_VERSION})",
                path.display(),
                i + 1,
                rec.schema_version
            ));
        }
        out.push(rec);
    }
    Ok(out)
}
