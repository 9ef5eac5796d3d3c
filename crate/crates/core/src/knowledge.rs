//! Domain rules on the previous silicon reading and the persistence
//! statistics that support them.
//!
//! A rule only describes geometry (the region where it fires). The extra cost
//! attached to positives inside that region lives in
//! [`PenaltyScheme`](crate::wsvm::PenaltyScheme).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Sample, SiliconBands};
use crate::wsvm::RegionTag;
use crate::{Label, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtOrBelow,
    AtOrAbove,
}

/// Predicate on the previous silicon reading, `z_{t-1} <= threshold` or
/// `z_{t-1} >= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRule {
    pub threshold: f64,
    pub direction: Direction,
    pub description: String,
}

impl KnowledgeRule {
    pub fn new(threshold: f64, direction: Direction, description: impl Into<String>) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Validation(format!(
                "rule threshold must lie in (0, 1), got {threshold}"
            )));
        }
        Ok(Self {
            threshold,
            direction,
            description: description.into(),
        })
    }

    /// Previous silicon already low: `q^-1 z <= z_inf`.
    pub fn low_silicon(bands: &SiliconBands) -> Self {
        Self {
            threshold: bands.z_inf,
            direction: Direction::AtOrBelow,
            description: "previous silicon at or below z_inf".into(),
        }
    }

    /// Previous silicon already high: `q^-1 z >= z_sup`.
    pub fn high_silicon(bands: &SiliconBands) -> Self {
        Self {
            threshold: bands.z_sup,
            direction: Direction::AtOrAbove,
            description: "previous silicon at or above z_sup".into(),
        }
    }
}

/// Region membership; the boundary belongs to the region.
pub fn in_region<F: Scalar>(previous_silicon: F, rule: &KnowledgeRule) -> bool {
    let prev = previous_silicon.as_f64();
    match rule.direction {
        Direction::AtOrBelow => prev <= rule.threshold,
        Direction::AtOrAbove => prev >= rule.threshold,
    }
}

pub fn tag_region<F: Scalar>(label: Label, previous_silicon: F, rule: &KnowledgeRule) -> RegionTag {
    match label {
        Label::Negative => RegionTag::R3,
        Label::Positive if in_region(previous_silicon, rule) => RegionTag::R1,
        Label::Positive => RegionTag::R2,
    }
}

/// Overwrites the region tag of every sample from its label and previous silicon.
pub fn tag_regions<F: Scalar>(samples: &mut [Sample<F>], rule: &KnowledgeRule) {
    for s in samples {
        s.region = tag_region(s.label, s.previous_silicon, rule);
    }
}

/// Fractions of low (high) readings that are followed by another low (high)
/// reading. `None` when no reading falls in the band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persistence {
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub low_count: usize,
    pub high_count: usize,
}

/// Band membership here is strict: `z < z_inf` is low and `z > z_sup` is high.
pub fn reliability_ratios(series: &[f64], bands: &SiliconBands) -> Result<Persistence> {
    if series.len() < 2 {
        return Err(Error::Structure(format!(
            "reliability ratios need at least 2 readings, got {}",
            series.len()
        )));
    }
    let (mut low_prev, mut low_both, mut high_prev, mut high_both) = (0usize, 0usize, 0usize, 0usize);
    for w in series.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        if prev < bands.z_inf {
            low_prev += 1;
            if cur < bands.z_inf {
                low_both += 1;
            }
        }
        if prev > bands.z_sup {
            high_prev += 1;
            if cur > bands.z_sup {
                high_both += 1;
            }
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(Persistence {
        low: ratio(low_both, low_prev),
        high: ratio(high_both, high_prev),
        low_count: low_prev,
        high_count: high_prev,
    })
}
