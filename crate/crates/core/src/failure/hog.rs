//! Histogram of oriented gradients around a single image location.
//!
//! Layout: square cells of `cell_size` pixels, blocks of 2×2 cells moved with a
//! stride of one cell, `orientation_bins` bins per cell. The descriptor lists
//! blocks in row-major order; inside a block the cells go (0,0), (1,0), (0,1),
//! (1,1) as (x, y), each contributing its bins in order. Blocks are
//! L2-hys normalized (clip at 0.2). Gradients use centered differences with
//! edge replication at the image border.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::FailureError;
use crate::geometry::Pixel2;

const BLOCK_CELLS: usize = 2;
const HYS_CLIP: f64 = 0.2;
const NORM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HogParams {
    pub patch_size: usize,
    pub cell_size: usize,
    pub orientation_bins: usize,
    pub signed: bool,
}

impl Default for HogParams {
    fn default() -> Self {
        Self { patch_size: 16, cell_size: 4, orientation_bins: 9, signed: false }
    }
}

impl HogParams {
    pub fn validate(&self) -> Result<(), FailureError> {
        let bad = |m: &str| Err(FailureError::InvalidParams(m.into()));
        if self.cell_size == 0 || self.patch_size % self.cell_size != 0 {
            return bad("patch_size must be a positive multiple of cell_size");
        }
        if self.patch_size / self.cell_size < BLOCK_CELLS {
            return bad("patch must span at least two cells");
        }
        if self.orientation_bins < 2 {
            return bad("orientation_bins must be >= 2");
        }
        Ok(())
    }

    pub fn cells_per_side(&self) -> usize {
        self.patch_size / self.cell_size
    }

    pub fn blocks_per_side(&self) -> usize {
        self.cells_per_side() - BLOCK_CELLS + 1
    }

    pub fn block_count(&self) -> usize {
        self.blocks_per_side().pow(2)
    }

    pub fn block_len(&self) -> usize {
        BLOCK_CELLS * BLOCK_CELLS * self.orientation_bins
    }

    /// Descriptor length for one landmark.
    pub fn descriptor_len(&self) -> usize {
        self.block_count() * self.block_len()
    }
}

/// HOG descriptor of the patch centered on `center`, appended to `out`.
pub fn extract_hog_into(image: &GrayImage, center: &Pixel2, p: &HogParams, out: &mut Vec<f64>) -> Result<(), FailureError> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(FailureError::EmptyImage);
    }
    p.validate()?;
    if !center.is_finite() {
        return Err(FailureError::NonFiniteLandmark);
    }
    let (w, h) = (w as i64, h as i64);
    let raw = image.as_raw();
    let half = (p.patch_size / 2) as i64;
    // Saturating keeps absurd centers well-defined; they just see replicated border pixels.
    let x0 = (center.u.round() as i64).saturating_sub(half);
    let y0 = (center.v.round() as i64).saturating_sub(half);
    let px = |x: i64, y: i64| -> f64 { raw[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize] as f64 };

    let cells = p.cells_per_side();
    let bins = p.orientation_bins;
    let span = if p.signed { std::f64::consts::TAU } else { std::f64::consts::PI };
    let bin_width = span / bins as f64;
    let mut hist = vec![0.0f64; cells * cells * bins];

    for j in 0..p.patch_size {
        let y = y0.saturating_add(j as i64);
        for i in 0..p.patch_size {
            let x = x0.saturating_add(i as i64);
            let gx = px(x.saturating_add(1), y) - px(x.saturating_sub(1), y);
            let gy = px(x, y.saturating_add(1)) - px(x, y.saturating_sub(1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut ang = gy.atan2(gx);
            if ang < 0.0 {
                ang += std::f64::consts::TAU;
            }
            if !p.signed && ang >= std::f64::consts::PI {
                ang -= std::f64::consts::PI;
            }
            // Bilinear vote between the two nearest bin centers (circular).
            let pos = ang / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as i64).rem_euclid(bins as i64) as usize;
            let b1 = (b0 + 1) % bins;
            let cell = (j / p.cell_size) * cells + i / p.cell_size;
            hist[cell * bins + b0] += mag * (1.0 - frac);
            hist[cell * bins + b1] += mag * frac;
        }
    }

    let blocks = p.blocks_per_side();
    let mut block = vec![0.0f64; p.block_len()];
    for by in 0..blocks {
        for bx in 0..blocks {
            let mut k = 0;
            for cy in 0..BLOCK_CELLS {
                for cx in 0..BLOCK_CELLS {
                    let cell = (by + cy) * cells + bx + cx;
                    block[k..k + bins].copy_from_slice(&hist[cell * bins..(cell + 1) * bins]);
                    k += bins;
                }
            }
            l2_hys(&mut block);
            out.extend_from_slice(&block);
        }
    }
    Ok(())
}

pub fn extract_hog(image: &GrayImage, center: &Pixel2, p: &HogParams) -> Result<Vec<f64>, FailureError> {
    let mut out = Vec::with_capacity(p.descriptor_len());
    extract_hog_into(image, center, p, &mut out)?;
    Ok(out)
}

fn l2_hys(v: &mut [f64]) {
    let scale = |v: &mut [f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > NORM_EPS {
            v.iter_mut().for_each(|x| *x /= n);
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    };
    scale(v);
    v.iter_mut().for_each(|x| *x = x.min(HYS_CLIP));
    scale(v);
}
