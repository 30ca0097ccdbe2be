use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::FitError;
use crate::face_model::{BlendWeights, DeformableFaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Smiling,
    EyebrowRaising,
    MouthOpening,
}

impl Attribute {
    pub fn as_str(&self) -> &'static str {
        match self {
            Attribute::Smiling => "smiling",
            Attribute::EyebrowRaising => "eyebrow_raising",
            Attribute::MouthOpening => "mouth_opening",
        }
    }
}

/// An attribute is present when the weight of `blendshape` is strictly above `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRule {
    pub attribute: Attribute,
    pub blendshape: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeThresholds(pub Vec<AttributeRule>);

impl Default for AttributeThresholds {
    fn default() -> Self {
        let rule = |attribute, blendshape: &str| AttributeRule { attribute, blendshape: blendshape.into(), threshold: 0.5 };
        AttributeThresholds(vec![
            rule(Attribute::Smiling, "smile"),
            rule(Attribute::EyebrowRaising, "eyebrow_raise"),
            rule(Attribute::MouthOpening, "mouth_open"),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeSet(pub BTreeSet<Attribute>);

impl AttributeSet {
    pub fn contains(&self, a: Attribute) -> bool {
        self.0.contains(&a)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn estimate_attributes(
    model: &DeformableFaceModel,
    weights: &BlendWeights,
    thresholds: &AttributeThresholds,
) -> Result<AttributeSet, FitError> {
    model.check_weights(weights)?;
    let mut set = BTreeSet::new();
    for rule in &thresholds.0 {
        if !rule.threshold.is_finite() {
            return Err(FitError::InvalidParams(format!("threshold for '{}' is not finite", rule.blendshape)));
        }
        let idx = model
            .blendshape_index(&rule.blendshape)
            .ok_or_else(|| FitError::UnknownAttributeName(rule.blendshape.clone()))?;
        if weights.as_slice()[idx] > rule.threshold {
            set.insert(rule.attribute);
        }
    }
    Ok(AttributeSet(set))
}
