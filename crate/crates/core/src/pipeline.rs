//! Silicon banding, lagged features, normalization, binary task assembly and
//! the two-classifier cascade.

use serde::{Deserialize, Serialize};

use crate::data_io::{ProcessTable, SILICON};
use crate::error::{Error, Result};
use crate::knowledge::{tag_region, KnowledgeRule};
use crate::wsvm::{RegionTag, TrainedModel};
use crate::{Label, Scalar};

/// Acceptable silicon range `[z_inf, z_sup]` on the normalized scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiliconBands {
    pub z_inf: f64,
    pub z_sup: f64,
}

impl SiliconBands {
    pub fn new(z_inf: f64, z_sup: f64) -> Result<Self> {
        if !(0.0 < z_inf && z_inf < z_sup && z_sup < 1.0) {
            return Err(Error::Validation(format!(
                "bands need 0 < z_inf < z_sup < 1, got ({z_inf}, {z_sup})"
            )));
        }
        Ok(Self { z_inf, z_sup })
    }

    pub fn furnace_a() -> Self {
        Self {
            z_inf: 0.4132,
            z_sup: 0.8251,
        }
    }

    pub fn furnace_b() -> Self {
        Self {
            z_inf: 0.3736,
            z_sup: 0.8059,
        }
    }
}

impl Default for SiliconBands {
    fn default() -> Self {
        Self::furnace_a()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandLabel {
    Low,
    Proper,
    High,
}

impl BandLabel {
    pub const ALL: [BandLabel; 3] = [BandLabel::Low, BandLabel::Proper, BandLabel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BandLabel::Low => "low",
            BandLabel::Proper => "proper",
            BandLabel::High => "high",
        }
    }
}

/// `[0, z_inf)` low, `[z_inf, z_sup]` proper, `(z_sup, 1]` high.
pub fn band_label(z: f64, bands: &SiliconBands) -> Result<BandLabel> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::Validation(format!(
            "silicon value {z} outside [0, 1]"
        )));
    }
    Ok(if z < bands.z_inf {
        BandLabel::Low
    } else if z <= bands.z_sup {
        BandLabel::Proper
    } else {
        BandLabel::High
    })
}

/// Delays used for one table column; delay `k` reads the value at `t - k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagEntry {
    pub column: String,
    pub delays: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSpec {
    pub entries: Vec<LagEntry>,
}

impl LagSpec {
    pub fn new(entries: Vec<LagEntry>) -> Result<Self> {
        if entries.is_empty() || entries.iter().any(|e| e.delays.is_empty()) {
            return Err(Error::Validation(
                "lag spec needs at least one column with at least one delay".into(),
            ));
        }
        Ok(Self { entries })
    }

    fn standard(max_delay: usize) -> Self {
        let all: Vec<usize> = (0..=max_delay).collect();
        let mut entries: Vec<LagEntry> = crate::data_io::DRIVER_COLUMNS
            .iter()
            .map(|c| LagEntry {
                column: (*c).to_string(),
                delays: all.clone(),
            })
            .collect();
        entries.push(LagEntry {
            column: crate::data_io::SULFUR.into(),
            delays: vec![1],
        });
        entries.push(LagEntry {
            column: SILICON.into(),
            delays: vec![1],
        });
        Self { entries }
    }

    /// Five process variables at delays 0..=5, sulfur and silicon at delay 1.
    pub fn furnace_a() -> Self {
        Self::standard(5)
    }

    /// Five process variables at delays 0..=4, sulfur and silicon at delay 1.
    pub fn furnace_b() -> Self {
        Self::standard(4)
    }

    pub fn max_delay(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|e| e.delays.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Leading rows without a full history; at least one so that the previous
    /// silicon reading always exists.
    pub fn dropped_rows(&self) -> usize {
        self.max_delay().max(1)
    }

    pub fn dimension(&self) -> usize {
        self.entries.iter().map(|e| e.delays.len()).sum()
    }

    /// Feature position of the delay-1 silicon column, if present.
    pub fn previous_silicon_feature(&self) -> Option<usize> {
        let mut offset = 0;
        for e in &self.entries {
            if e.column == SILICON {
                if let Some(k) = e.delays.iter().position(|&d| d == 1) {
                    return Some(offset + k);
                }
            }
            offset += e.delays.len();
        }
        None
    }
}

impl Default for LagSpec {
    fn default() -> Self {
        Self::furnace_a()
    }
}

/// Lagged feature row before labeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaggedSample {
    pub features: Vec<f64>,
    pub time_index: usize,
    pub current_silicon: f64,
    pub previous_silicon: f64,
}

/// Labeled training sample for one binary task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample<F> {
    pub features: Vec<F>,
    pub label: Label,
    pub region: RegionTag,
    pub time_index: usize,
    pub current_silicon: F,
    pub previous_silicon: F,
}

pub fn build_lagged_features(table: &ProcessTable, spec: &LagSpec) -> Result<Vec<LaggedSample>> {
    let silicon = table
        .column(SILICON)
        .ok_or_else(|| Error::MissingColumn(SILICON.into()))?;
    let columns: Vec<&[f64]> = spec
        .entries
        .iter()
        .map(|e| {
            table
                .column(&e.column)
                .ok_or_else(|| Error::MissingColumn(e.column.clone()))
        })
        .collect::<Result<_>>()?;
    let rows = table.len();
    let start = spec.dropped_rows();
    let mut out = Vec::with_capacity(rows.saturating_sub(start));
    for t in start..rows {
        let mut features = Vec::with_capacity(spec.dimension());
        for (entry, col) in spec.entries.iter().zip(&columns) {
            for &d in &entry.delays {
                let v = col[t - d];
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite value in column `{}` at row {}",
                        entry.column,
                        t - d + 1
                    )));
                }
                features.push(v);
            }
        }
        let (cur, prev) = (silicon[t], silicon[t - 1]);
        if !cur.is_finite() || !prev.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite silicon value near row {}",
                t + 1
            )));
        }
        out.push(LaggedSample {
            features,
            time_index: t,
            current_silicon: cur,
            previous_silicon: prev,
        });
    }
    Ok(out)
}

/// Per-feature min-max scaling fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer<F> {
    pub min: Vec<F>,
    pub max: Vec<F>,
}

impl<F: Scalar> Normalizer<F> {
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [F]>,
    {
        let mut iter = rows.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Empty("cannot fit a normalizer on no rows".into()))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            if row.len() != min.len() {
                return Err(Error::Dimension {
                    expected: min.len(),
                    found: row.len(),
                });
            }
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dimension(&self) -> usize {
        self.min.len()
    }

    /// Training rows land in `[0, 1]`, unseen rows are clamped to it and
    /// constant features map to 0.5.
    pub fn transform(&self, row: &[F]) -> Result<Vec<F>> {
        if row.len() != self.dimension() {
            return Err(Error::Dimension {
                expected: self.dimension(),
                found: row.len(),
            });
        }
        let half = F::lit(0.5);
        Ok(row
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let span = self.max[k] - self.min[k];
                if span <= F::zero() {
                    half
                } else {
                    ((v - self.min[k]) / span).max(F::zero()).min(F::one())
                }
            })
            .collect())
    }
}

impl Normalizer<f64> {
    pub fn fit_samples(samples: &[LaggedSample]) -> Result<Self> {
        Self::fit(samples.iter().map(|s| s.features.as_slice()))
    }

    pub fn apply(&self, samples: &[LaggedSample]) -> Result<Vec<LaggedSample>> {
        samples
            .iter()
            .map(|s| {
                Ok(LaggedSample {
                    features: self.transform(&s.features)?,
                    ..s.clone()
                })
            })
            .collect()
    }
}

/// Which samples the high-silicon classifier trains on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HighTaskMode {
    /// Proper and high samples only.
    #[default]
    Pairwise,
    /// Every sample, high against the rest.
    OneVsRest,
}

impl std::str::FromStr for HighTaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(HighTaskMode::Pairwise),
            "one-vs-rest" => Ok(HighTaskMode::OneVsRest),
            other => Err(Error::Config(format!(
                "unknown high task mode `{other}` (expected pairwise or one-vs-rest)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryTask {
    pub samples: Vec<Sample<f64>>,
    pub rule: KnowledgeRule,
}

impl BinaryTask {
    pub fn positives(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label == Label::Positive)
            .count()
    }

    pub fn negatives(&self) -> usize {
        self.samples.len() - self.positives()
    }

    pub fn is_degenerate(&self) -> bool {
        self.positives() == 0 || self.negatives() == 0
    }
}

fn labeled(s: &LaggedSample, label: Label, rule: &KnowledgeRule) -> Sample<f64> {
    Sample {
        features: s.features.clone(),
        label,
        region: tag_region(label, s.previous_silicon, rule),
        time_index: s.time_index,
        current_silicon: s.current_silicon,
        previous_silicon: s.previous_silicon,
    }
}

/// Low task: every sample, low silicon positive. High task: high silicon
/// positive, against proper samples only in `Pairwise` mode.
pub fn make_binary_tasks(
    samples: &[LaggedSample],
    bands: &SiliconBands,
    mode: HighTaskMode,
) -> Result<(BinaryTask, BinaryTask)> {
    let low_rule = KnowledgeRule::low_silicon(bands);
    let high_rule = KnowledgeRule::high_silicon(bands);
    let mut low = Vec::with_capacity(samples.len());
    let mut high = Vec::with_capacity(samples.len());
    for s in samples {
        let band = band_label(s.current_silicon, bands)?;
        let low_label = if band == BandLabel::Low {
            Label::Positive
        } else {
            Label::Negative
        };
        low.push(labeled(s, low_label, &low_rule));
        if band != BandLabel::Low || mode == HighTaskMode::OneVsRest {
            let high_label = if band == BandLabel::High {
                Label::Positive
            } else {
                Label::Negative
            };
            high.push(labeled(s, high_label, &high_rule));
        }
    }
    Ok((
        BinaryTask {
            samples: low,
            rule: low_rule,
        },
        BinaryTask {
            samples: high,
            rule: high_rule,
        },
    ))
}

/// Low classifier first, then high, else proper.
pub fn cascade_predict<F: Scalar>(
    model_low: &TrainedModel<F>,
    model_high: &TrainedModel<F>,
    x: &[F],
) -> Result<BandLabel> {
    if model_low.dimension() != model_high.dimension() {
        return Err(Error::Dimension {
            expected: model_low.dimension(),
            found: model_high.dimension(),
        });
    }
    if model_low.predict(x)? == Label::Positive {
        return Ok(BandLabel::Low);
    }
    Ok(if model_high.predict(x)? == Label::Positive {
        BandLabel::High
    } else {
        BandLabel::Proper
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_qp::{KernelParams, KktReport};
    use crate::wsvm::PenaltyScheme;

    #[test]
    fn band_examples() {
        let a = SiliconBands::furnace_a();
        assert_eq!(band_label(0.30, &a).unwrap(), BandLabel::Low);
        assert_eq!(band_label(0.4132, &a).unwrap(), BandLabel::Proper);
        assert_eq!(band_label(0.8251, &a).unwrap(), BandLabel::Proper);
        assert_eq!(band_label(0.81, &SiliconBands::furnace_b()).unwrap(), BandLabel::High);
        assert!(band_label(1.2, &a).is_err());
        assert!(band_label(-0.1, &a).is_err());
    }

    #[test]
    fn bands_validated() {
        assert!(SiliconBands::new(0.5, 0.4).is_err());
        assert!(SiliconBands::new(0.0, 0.4).is_err());
        assert!(SiliconBands::new(0.2, 1.0).is_err());
    }

    #[test]
    fn standard_spec_dimensions() {
        assert_eq!(LagSpec::furnace_a().dimension(), 32);
        assert_eq!(LagSpec::furnace_a().max_delay(), 5);
        assert_eq!(LagSpec::furnace_b().dimension(), 27);
        assert_eq!(LagSpec::furnace_b().max_delay(), 4);
        assert_eq!(LagSpec::furnace_a().previous_silicon_feature(), Some(31));
    }

    #[test]
    fn normalizer_rules() {
        let rows = [vec![0.0, 3.0], vec![5.0, 3.0], vec![10.0, 3.0]];
        let n = Normalizer::fit(rows.iter().map(Vec::as_slice)).unwrap();
        let scaled: Vec<f64> = rows.iter().map(|r| n.transform(r).unwrap()[0]).collect();
        assert_eq!(scaled, vec![0.0, 0.5, 1.0]);
        assert!(rows.iter().all(|r| n.transform(r).unwrap()[1] == 0.5));
        assert_eq!(n.transform(&[12.0, 3.0]).unwrap()[0], 1.0);
        assert_eq!(n.transform(&[-4.0, 3.0]).unwrap()[0], 0.0);
        assert!(Normalizer::<f64>::fit(std::iter::empty()).is_err());
    }

    fn lagged(current: f64, previous: f64) -> LaggedSample {
        LaggedSample {
            features: vec![previous],
            time_index: 0,
            current_silicon: current,
            previous_silicon: previous,
        }
    }

    #[test]
    fn binary_tasks_six_samples() {
        let bands = SiliconBands::furnace_a();
        let samples = vec![
            lagged(0.30, 0.35), // low, prev in low region
            lagged(0.35, 0.60), // low, prev not in region
            lagged(0.60, 0.30), // proper
            lagged(0.70, 0.85), // proper
            lagged(0.90, 0.88), // high, prev in high region
            lagged(0.86, 0.50), // high, prev not in region
        ];
        let (low, high) = make_binary_tasks(&samples, &bands, HighTaskMode::Pairwise).unwrap();
        use Label::*;
        use RegionTag::*;
        let low_view: Vec<_> = low.samples.iter().map(|s| (s.label, s.region)).collect();
        assert_eq!(
            low_view,
            vec![
                (Positive, R1),
                (Positive, R2),
                (Negative, R3),
                (Negative, R3),
                (Negative, R3),
                (Negative, R3)
            ]
        );
        let high_view: Vec<_> = high.samples.iter().map(|s| (s.label, s.region)).collect();
        assert_eq!(
            high_view,
            vec![(Negative, R3), (Negative, R3), (Positive, R1), (Positive, R2)]
        );
        let (_, high_all) = make_binary_tasks(&samples, &bands, HighTaskMode::OneVsRest).unwrap();
        assert_eq!(high_all.samples.len(), 6);
        assert_eq!(high_all.positives(), 2);
    }

    #[test]
    fn all_proper_tasks_degenerate() {
        let samples = vec![lagged(0.5, 0.5), lagged(0.6, 0.5), lagged(0.7, 0.6)];
        let (low, high) =
            make_binary_tasks(&samples, &SiliconBands::furnace_a(), HighTaskMode::Pairwise)
                .unwrap();
        assert!(low.is_degenerate());
        assert!(high.is_degenerate());
    }

    fn constant_model(bias: f64, dim: usize) -> TrainedModel<f64> {
        TrainedModel {
            support_vectors: vec![vec![0.0; dim]],
            coefficients: vec![0.0],
            support_indices: vec![0],
            bias,
            kernel: KernelParams::new(1.0).unwrap(),
            scheme: PenaltyScheme::new(1.0, 1.0, 1.0).unwrap(),
            rule: None,
            training_diagnostics: KktReport {
                max_violation: 0.0,
                primal_objective: 0.0,
                dual_objective: 0.0,
                relative_gap: 0.0,
            },
        }
    }

    #[test]
    fn cascade_order() {
        let pos = constant_model(1.0, 2);
        let neg = constant_model(-1.0, 2);
        let x = [0.1, 0.2];
        assert_eq!(cascade_predict(&pos, &pos, &x).unwrap(), BandLabel::Low);
        assert_eq!(cascade_predict(&pos, &neg, &x).unwrap(), BandLabel::Low);
        assert_eq!(cascade_predict(&neg, &neg, &x).unwrap(), BandLabel::Proper);
        assert_eq!(cascade_predict(&neg, &pos, &x).unwrap(), BandLabel::High);
        assert!(cascade_predict(&neg, &constant_model(1.0, 3), &x).is_err());
        assert!(cascade_predict(&neg, &pos, &[0.1]).is_err());
    }
}
