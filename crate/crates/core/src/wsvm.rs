//! Weighted SVM: penalty schemes, per-sample bounds, training and the
//! decision function.
//!
//! Positives inside the knowledge region (R1) get bound `c_minus * c_hat`,
//! other positives (R2) get `c_minus`, and negatives (R3) get `c_plus`. With
//! `c_hat = 1` this is the plain cost-sensitive SVM, and with
//! `c_minus = c_plus` as well it is the standard soft-margin SVM.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_qp::{
    gram_matrix, kkt_report, rbf_unchecked, solve_dual, DualSolution, KernelParams, KktReport,
    QpProblem,
};
use crate::knowledge::KnowledgeRule;
use crate::pipeline::Sample;
use crate::{Label, Scalar};

/// Multipliers at or below this are not kept as support vectors.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

/// Largest relative primal-dual gap `train` accepts before tightening the
/// solver tolerance.
pub const TRAIN_GAP_LIMIT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyScheme<F> {
    pub c_minus: F,
    pub c_plus: F,
    pub c_hat: F,
}

impl<F: Scalar> PenaltyScheme<F> {
    /// Requires `c_minus >= c_plus > 0` and `c_hat >= 1`.
    pub fn new(c_minus: F, c_plus: F, c_hat: F) -> Result<Self> {
        let ok = c_plus.is_finite()
            && c_minus.is_finite()
            && c_hat.is_finite()
            && c_plus > F::zero()
            && c_minus >= c_plus
            && c_hat >= F::one();
        if !ok {
            return Err(Error::Validation(format!(
                "penalty scheme needs c_minus >= c_plus > 0 and c_hat >= 1, got ({c_minus}, {c_plus}, {c_hat})"
            )));
        }
        Ok(Self {
            c_minus,
            c_plus,
            c_hat,
        })
    }

    /// The same costs without the knowledge multiplier.
    pub fn without_knowledge(&self) -> Self {
        Self {
            c_hat: F::one(),
            ..*self
        }
    }

    pub fn bound(&self, tag: RegionTag) -> F {
        match tag {
            RegionTag::R1 => self.c_minus * self.c_hat,
            RegionTag::R2 => self.c_minus,
            RegionTag::R3 => self.c_plus,
        }
    }
}

/// R1: positives in the rule region; R2: other positives; R3: negatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionTag {
    R1,
    R2,
    R3,
}

impl RegionTag {
    pub fn index(self) -> usize {
        match self {
            RegionTag::R1 => 0,
            RegionTag::R2 => 1,
            RegionTag::R3 => 2,
        }
    }

    pub fn is_consistent_with(self, label: Label) -> bool {
        matches!(
            (self, label),
            (RegionTag::R1 | RegionTag::R2, Label::Positive) | (RegionTag::R3, Label::Negative)
        )
    }
}

pub fn assign_bounds<F: Scalar>(samples: &[Sample<F>], scheme: &PenaltyScheme<F>) -> Vec<F> {
    samples.iter().map(|s| scheme.bound(s.region)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub tolerance: f64,
    /// Iteration budget; `None` uses the problem default.
    pub max_passes: Option<usize>,
    /// Floor for the tolerance when tightening to meet [`TRAIN_GAP_LIMIT`].
    pub min_tolerance: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            tolerance: crate::kernel_qp::DEFAULT_TOLERANCE,
            max_passes: None,
            min_tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<F> {
    pub support_vectors: Vec<Vec<F>>,
    /// `alpha_i * y_i` for each support vector.
    pub coefficients: Vec<F>,
    /// Positions of the support vectors in the training set.
    pub support_indices: Vec<usize>,
    pub bias: F,
    pub kernel: KernelParams<F>,
    pub scheme: PenaltyScheme<F>,
    pub rule: Option<KnowledgeRule>,
    pub training_diagnostics: KktReport<F>,
}

/// Trains the knowledge-weighted model; samples must carry region tags.
pub fn train<F: Scalar>(
    samples: &[Sample<F>],
    scheme: &PenaltyScheme<F>,
    kernel: &KernelParams<F>,
    rule: Option<&KnowledgeRule>,
) -> Result<TrainedModel<F>> {
    let rows: Vec<Vec<F>> = samples.iter().map(|s| s.features.clone()).collect();
    let gram = gram_matrix(&rows, kernel)?;
    train_with_gram(samples, gram, scheme, kernel, rule, &TrainOptions::default())
}

/// As [`train`], reusing a precomputed Gram matrix of `samples`.
pub fn train_with_gram<F: Scalar>(
    samples: &[Sample<F>],
    gram: Array2<F>,
    scheme: &PenaltyScheme<F>,
    kernel: &KernelParams<F>,
    rule: Option<&KnowledgeRule>,
    options: &TrainOptions,
) -> Result<TrainedModel<F>> {
    if let Some((i, s)) = samples
        .iter()
        .enumerate()
        .find(|(_, s)| !s.region.is_consistent_with(s.label))
    {
        return Err(Error::Validation(format!(
            "sample {i}: region {:?} inconsistent with label {:?}",
            s.region, s.label
        )));
    }
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let bounds = assign_bounds(samples, scheme);
    let (solution, report) = solve_to_gap(gram, labels, bounds, options)?;
    Ok(assemble(samples, &solution, report, *kernel, *scheme, rule.cloned()))
}

/// Cost-sensitive SVM with bounds attached by label only: `c_minus` for
/// positives and `c_plus` for negatives.
pub fn train_cost_sensitive<F: Scalar>(
    samples: &[Sample<F>],
    c_minus: F,
    c_plus: F,
    kernel: &KernelParams<F>,
) -> Result<TrainedModel<F>> {
    let scheme = PenaltyScheme::new(c_minus, c_plus, F::one())?;
    let rows: Vec<Vec<F>> = samples.iter().map(|s| s.features.clone()).collect();
    let gram = gram_matrix(&rows, kernel)?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let bounds = labels
        .iter()
        .map(|l| match l {
            Label::Positive => c_minus,
            Label::Negative => c_plus,
        })
        .collect();
    let (solution, report) = solve_to_gap(gram, labels, bounds, &TrainOptions::default())?;
    Ok(assemble(samples, &solution, report, *kernel, scheme, None))
}

/// Standard soft-margin SVM with a single penalty `c`.
pub fn train_standard<F: Scalar>(
    samples: &[Sample<F>],
    c: F,
    kernel: &KernelParams<F>,
) -> Result<TrainedModel<F>> {
    let scheme = PenaltyScheme::new(c, c, F::one())?;
    let rows: Vec<Vec<F>> = samples.iter().map(|s| s.features.clone()).collect();
    let gram = gram_matrix(&rows, kernel)?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let bounds = vec![c; labels.len()];
    let (solution, report) = solve_to_gap(gram, labels, bounds, &TrainOptions::default())?;
    Ok(assemble(samples, &solution, report, *kernel, scheme, None))
}

/// Solves, tightening the tolerance tenfold until the relative primal-dual gap
/// is within [`TRAIN_GAP_LIMIT`].
fn solve_to_gap<F: Scalar>(
    gram: Array2<F>,
    labels: Vec<Label>,
    bounds: Vec<F>,
    options: &TrainOptions,
) -> Result<(DualSolution<F>, KktReport<F>)> {
    let mut problem = QpProblem::new(gram, labels, bounds)?;
    if let Some(max) = options.max_passes {
        problem = problem.with_max_passes(max);
    }
    let mut tol = options.tolerance;
    loop {
        problem.tolerance = F::lit(tol);
        let solution = solve_dual(&problem)?;
        let report = kkt_report(&solution, &problem);
        if report.relative_gap.as_f64() <= TRAIN_GAP_LIMIT || tol <= options.min_tolerance {
            return Ok((solution, report));
        }
        tol = (tol * 0.1).max(options.min_tolerance);
    }
}

fn assemble<F: Scalar>(
    samples: &[Sample<F>],
    solution: &DualSolution<F>,
    report: KktReport<F>,
    kernel: KernelParams<F>,
    scheme: PenaltyScheme<F>,
    rule: Option<KnowledgeRule>,
) -> TrainedModel<F> {
    let threshold = F::lit(SUPPORT_THRESHOLD);
    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    let mut support_indices = Vec::new();
    for (i, (&a, s)) in solution.alpha.iter().zip(samples).enumerate() {
        if a > threshold {
            support_vectors.push(s.features.clone());
            coefficients.push(a * s.label.sign::<F>());
            support_indices.push(i);
        }
    }
    TrainedModel {
        support_vectors,
        coefficients,
        support_indices,
        bias: solution.bias,
        kernel,
        scheme,
        rule,
        training_diagnostics: report,
    }
}

impl<F: Scalar> TrainedModel<F> {
    pub fn dimension(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// `sum_i coef_i K(sv_i, x) + b`.
    pub fn decision_value(&self, x: &[F]) -> Result<F> {
        let dim = self.dimension();
        if x.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: x.len(),
            });
        }
        let gamma = self.kernel.gamma;
        let sum: F = self
            .support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, &c)| c * rbf_unchecked(sv, x, gamma))
            .sum();
        Ok(sum + self.bias)
    }

    /// Sign of the decision value; an exact zero predicts `Positive`.
    pub fn predict(&self, x: &[F]) -> Result<Label> {
        self.decision_value(x).map(Label::from_decision)
    }
}
