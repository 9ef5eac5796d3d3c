//! Class-wise accuracies, the weighted ensemble accuracy, per-repeat deltas
//! and the paired t-test.

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::wsvm::RegionTag;
use crate::Label;

/// Weights of (region positives, other positives, negatives), in tenths.
pub const ENSEMBLE_WEIGHTS_TENTHS: [u32; 3] = [6, 1, 3];

const _: () = assert!(
    ENSEMBLE_WEIGHTS_TENTHS[0] + ENSEMBLE_WEIGHTS_TENTHS[1] + ENSEMBLE_WEIGHTS_TENTHS[2] == 10
);

/// Hit counts for the three region classes (R1, R2, R3).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClasswiseAccuracy {
    pub correct: [usize; 3],
    pub counts: [usize; 3],
}

impl ClasswiseAccuracy {
    /// `None` for an empty class.
    pub fn accuracy(&self, tag: RegionTag) -> Option<f64> {
        let k = tag.index();
        (self.counts[k] > 0).then(|| self.correct[k] as f64 / self.counts[k] as f64)
    }

    pub fn acc_class1(&self) -> Option<f64> {
        self.accuracy(RegionTag::R1)
    }

    pub fn acc_class2(&self) -> Option<f64> {
        self.accuracy(RegionTag::R2)
    }

    pub fn acc_class3(&self) -> Option<f64> {
        self.accuracy(RegionTag::R3)
    }

    pub fn has_empty_class(&self) -> bool {
        self.counts.contains(&0)
    }

    /// Overall fraction correct across the three classes.
    pub fn plain(&self) -> Option<f64> {
        let total: usize = self.counts.iter().sum();
        (total > 0).then(|| self.correct.iter().sum::<usize>() as f64 / total as f64)
    }

    /// Weighted ensemble accuracy. Weights of empty classes are spread
    /// proportionally over the non-empty ones and the result is flagged.
    pub fn ensemble(&self) -> Option<EnsembleScore> {
        let accs = [self.acc_class1(), self.acc_class2(), self.acc_class3()];
        if accs.iter().all(Option::is_some) {
            let value = ensemble_accuracy(accs[0].unwrap(), accs[1].unwrap(), accs[2].unwrap());
            return Some(EnsembleScore {
                value,
                redistributed: false,
            });
        }
        let mut num = 0u32;
        let mut total = 0.0;
        for (acc, w) in accs.iter().zip(ENSEMBLE_WEIGHTS_TENTHS) {
            if let Some(a) = acc {
                num += w;
                total += w as f64 * a;
            }
        }
        (num > 0).then(|| EnsembleScore {
            value: total / num as f64,
            redistributed: true,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScore {
    pub value: f64,
    pub redistributed: bool,
}

pub fn classwise_accuracy(
    predictions: &[Label],
    truths: &[Label],
    tags: &[RegionTag],
) -> Result<ClasswiseAccuracy> {
    if predictions.len() != truths.len() || truths.len() != tags.len() {
        return Err(Error::Structure(format!(
            "length mismatch: {} predictions, {} truths, {} tags",
            predictions.len(),
            truths.len(),
            tags.len()
        )));
    }
    let mut out = ClasswiseAccuracy::default();
    for ((p, t), tag) in predictions.iter().zip(truths).zip(tags) {
        if !tag.is_consistent_with(*t) {
            return Err(Error::Validation(format!(
                "tag {tag:?} inconsistent with truth {t:?}"
            )));
        }
        let k = tag.index();
        out.counts[k] += 1;
        if p == t {
            out.correct[k] += 1;
        }
    }
    Ok(out)
}

/// `0.6 a1 + 0.1 a2 + 0.3 a3`, exact for rational scalar types.
pub fn ensemble_accuracy<T>(acc_class1: T, acc_class2: T, acc_class3: T) -> T
where
    T: Num + FromPrimitive + Copy,
{
    let w = |k: usize| T::from_u32(ENSEMBLE_WEIGHTS_TENTHS[k]).unwrap();
    let ten = T::from_u32(10).unwrap();
    (w(0) * acc_class1 + w(1) * acc_class2 + w(2) * acc_class3) / ten
}

/// Mean of the low and high classifiers' ensemble accuracies.
pub fn combined_ensemble(e_low: f64, e_high: f64) -> f64 {
    (e_low + e_high) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// Signed infinity when the deltas have zero spread and a nonzero mean.
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// Two-sided.
    pub p_value: f64,
    pub mean_delta: f64,
    pub degenerate_variance: bool,
}

/// Paired Student's t-test on per-repeat differences.
pub fn paired_t_test(deltas: &[f64]) -> Result<TTestResult> {
    let n = deltas.len();
    if n < 2 {
        return Err(Error::Structure(format!(
            "paired t-test needs at least 2 deltas, got {n}"
        )));
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::Validation("non-finite delta".into()));
    }
    let df = n - 1;
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / df as f64;
    let sd = var.sqrt();
    let scale = deltas.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    // spread below rounding noise of the data counts as zero
    let zero_spread = sd <= 1e-14 * scale.max(f64::MIN_POSITIVE);
    if mean == 0.0 && (zero_spread || sd == 0.0) {
        return Ok(TTestResult {
            t_statistic: 0.0,
            degrees_of_freedom: df,
            p_value: 1.0,
            mean_delta: 0.0,
            degenerate_variance: sd == 0.0,
        });
    }
    if zero_spread {
        return Ok(TTestResult {
            t_statistic: f64::INFINITY.copysign(mean),
            degrees_of_freedom: df,
            p_value: 0.0,
            mean_delta: mean,
            degenerate_variance: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Validation(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        mean_delta: mean,
        degenerate_variance: false,
    })
}

/// Headline metrics of one model on one test split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatMetrics {
    pub class1_low: f64,
    pub class1_high: f64,
    pub plain_accuracy: f64,
    pub ensemble_accuracy: f64,
}

/// Knowledge minus baseline, per repeat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub class1_low: f64,
    pub class1_high: f64,
    pub plain_accuracy: f64,
    pub ensemble_accuracy: f64,
}

pub fn accuracy_delta_report(
    knowledge: &[RepeatMetrics],
    baseline: &[RepeatMetrics],
) -> Result<Vec<DeltaRow>> {
    if knowledge.len() != baseline.len() {
        return Err(Error::Structure(format!(
            "unpaired repeats: {} knowledge vs {} baseline",
            knowledge.len(),
            baseline.len()
        )));
    }
    Ok(knowledge
        .iter()
        .zip(baseline)
        .map(|(k, b)| DeltaRow {
            class1_low: k.class1_low - b.class1_low,
            class1_high: k.class1_high - b.class1_high,
            plain_accuracy: k.plain_accuracy - b.plain_accuracy,
            ensemble_accuracy: k.ensemble_accuracy - b.ensemble_accuracy,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use Label::*;
    use RegionTag::*;

    #[test]
    fn classwise_extremes() {
        let truths = [Positive, Positive, Negative];
        let tags = [R1, R2, R3];
        let all = classwise_accuracy(&truths, &truths, &tags).unwrap();
        assert_eq!(all.acc_class1(), Some(1.0));
        assert_eq!(all.ensemble().unwrap().value, 1.0);
        let wrong = [Negative, Negative, Positive];
        let none = classwise_accuracy(&wrong, &truths, &tags).unwrap();
        assert_eq!(
            [none.acc_class1(), none.acc_class2(), none.acc_class3()],
            [Some(0.0); 3]
        );
    }

    #[test]
    fn classwise_hand_case() {
        let truths = [Positive, Positive, Positive, Positive, Negative, Negative];
        let tags = [R1, R1, R2, R2, R3, R3];
        let preds = [Positive, Negative, Negative, Positive, Negative, Positive];
        let cw = classwise_accuracy(&preds, &truths, &tags).unwrap();
        assert_eq!(cw.counts, [2, 2, 2]);
        assert_eq!(cw.correct, [1, 1, 1]);
        assert_eq!(cw.plain(), Some(0.5));
    }

    #[test]
    fn classwise_length_mismatch() {
        assert!(classwise_accuracy(&[Positive], &[Positive, Negative], &[R1, R3]).is_err());
    }

    #[test]
    fn ensemble_arithmetic() {
        assert!((ensemble_accuracy(1.0, 1.0, 1.0) - 1.0f64).abs() < 1e-12);
        assert!((ensemble_accuracy(0.5, 1.0, 0.0) - 0.4f64).abs() < 1e-12);
        assert!((ensemble_accuracy(0.0, 0.0, 1.0) - 0.3f64).abs() < 1e-12);
        let r = |n, d| Ratio::new(n, d);
        assert_eq!(ensemble_accuracy(r(1i64, 2), r(1, 1), r(0, 1)), r(2, 5));
        assert_eq!(ensemble_accuracy(r(1i64, 3), r(2, 7), r(5, 9)), r(83, 210));
    }

    #[test]
    fn empty_class_redistributes() {
        let cw = ClasswiseAccuracy {
            correct: [0, 3, 6],
            counts: [0, 4, 8],
        };
        let e = cw.ensemble().unwrap();
        assert!(e.redistributed);
        // weights 0.1 and 0.3 rescaled to 0.25 and 0.75
        assert!((e.value - (0.25 * 0.75 + 0.75 * 0.75)).abs() < 1e-15);
    }

    #[test]
    fn combined_is_mean() {
        assert_eq!(combined_ensemble(1.0, 0.0), 0.5);
        assert_eq!(combined_ensemble(0.7274, 0.7274), 0.7274);
        assert!((combined_ensemble(0.6, 0.8) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn t_test_trivial_cases() {
        let r = paired_t_test(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!((r.t_statistic, r.p_value), (0.0, 1.0));
        let r = paired_t_test(&[0.0; 5]).unwrap();
        assert_eq!((r.t_statistic, r.p_value), (0.0, 1.0));
        let r = paired_t_test(&[0.2; 4]).unwrap();
        assert!(r.degenerate_variance);
        assert_eq!(r.t_statistic, f64::INFINITY);
        assert_eq!(r.p_value, 0.0);
        assert!(paired_t_test(&[1.0]).is_err());
    }

    #[test]
    fn t_test_one_two_three() {
        let r = paired_t_test(&[1.0, 2.0, 3.0]).unwrap();
        let t = 12f64.sqrt();
        assert!((r.t_statistic - t).abs() < 1e-12);
        assert_eq!(r.degrees_of_freedom, 2);
        // two-sided tail of Student's t with 2 dof: 1 - |t| / sqrt(2 + t^2)
        let p = 1.0 - t / (2.0 + t * t).sqrt();
        assert!((r.p_value - p).abs() < 1e-10);
        assert!((r.p_value - 0.0742).abs() < 1e-4);
    }

    #[test]
    fn delta_report() {
        let m = RepeatMetrics {
            class1_low: 0.8,
            class1_high: 0.5,
            plain_accuracy: 0.7,
            ensemble_accuracy: 0.72,
        };
        let b = RepeatMetrics {
            class1_low: 0.6,
            class1_high: 0.75,
            plain_accuracy: 0.7,
            ensemble_accuracy: 0.7,
        };
        let same = accuracy_delta_report(&[m], &[m]).unwrap();
        assert_eq!(same[0].ensemble_accuracy, 0.0);
        let d = accuracy_delta_report(&[m], &[b]).unwrap();
        assert!((d[0].class1_low - 0.2).abs() < 1e-12);
        assert!((d[0].class1_high + 0.25).abs() < 1e-12);
        assert_eq!(d[0].plain_accuracy, 0.0);
        assert!(d[0].ensemble_accuracy > 0.0);
        assert!(accuracy_delta_report(&[m, m], &[b]).is_err());
    }
}
