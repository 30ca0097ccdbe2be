//! Labelled alignment errors for training the failure predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Scenario, SimError};
use crate::failure::TrainingSample;
use crate::geometry::Pixel2;

/// Each sample shifts all landmarks by one random offset of length
/// `U(0, max_shift)` and adds per-landmark Gaussian jitter with σ `U(0, max_jitter)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub per_frame: usize,
    /// Pixels.
    pub max_shift: f64,
    /// Pixels.
    pub max_jitter: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { per_frame: 6, max_shift: 10.0, max_jitter: 3.0, seed: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct LabelledSample {
    pub frame: usize,
    pub sample: TrainingSample,
}

/// Perturbed copies of the true landmarks of every rendered, non-occluded frame.
pub fn perturbed_samples(s: &Scenario, pc: &PerturbationConfig) -> Result<Vec<LabelledSample>, SimError> {
    if !(pc.max_shift >= 0.0 && pc.max_jitter >= 0.0 && pc.max_shift.is_finite() && pc.max_jitter.is_finite()) {
        return Err(SimError::InvalidConfig("perturbation sizes must be finite and >= 0".into()));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::new();
    for (i, f) in s.frames.iter().enumerate() {
        if f.occluded {
            continue;
        }
        let Some(img) = &f.frame.image else {
            return Err(SimError::InvalidConfig("perturbed samples need render_images = true".into()));
        };
        let mut rng = ChaCha8Rng::seed_from_u64(pc.seed);
        rng.set_stream(i as u64);
        for _ in 0..pc.per_frame {
            let shift = pc.max_shift * rng.gen::<f64>();
            let angle = std::f64::consts::TAU * rng.gen::<f64>();
            let sigma = pc.max_jitter * rng.gen::<f64>();
            let (du, dv) = (shift * angle.cos(), shift * angle.sin());
            let landmarks: Vec<Pixel2> = f
                .true_landmarks
                .iter()
                .map(|p| {
                    let ju = sigma * unit.sample(&mut rng);
                    let jv = sigma * unit.sample(&mut rng);
                    Pixel2::new(p.u + du + ju, p.v + dv + jv)
                })
                .collect();
            let sse = landmarks.iter().zip(&f.true_landmarks).map(|(a, b)| (a.u - b.u).powi(2) + (a.v - b.v).powi(2)).sum();
            out.push(LabelledSample { frame: i, sample: TrainingSample { image: img.clone(), landmarks, sse } });
        }
    }
    Ok(out)
}
