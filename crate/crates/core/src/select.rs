//! Stratified k-fold cross-validation and exhaustive grid search.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::classwise_accuracy;
use crate::kernel_qp::{gram_matrix, KernelParams};
use crate::knowledge::KnowledgeRule;
use crate::pipeline::Sample;
use crate::wsvm::{train_with_gram, PenaltyScheme, TrainOptions, TrainedModel};
use crate::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub gamma_values: Vec<f64>,
    pub c_hat_values: Vec<f64>,
    pub c_minus_values: Vec<f64>,
    pub c_plus: f64,
}

fn powers_of_two() -> Vec<f64> {
    [-4, -2, 0, 2, 4].iter().map(|&e| 2f64.powi(e)).collect()
}

impl GridSpec {
    /// gamma in {2^-4, 2^-2, 1, 2^2, 2^4}, c_hat in 1..=5, c_minus = 2, c_plus = 1.
    pub fn knowledge_default() -> Self {
        Self {
            gamma_values: powers_of_two(),
            c_hat_values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            c_minus_values: vec![2.0],
            c_plus: 1.0,
        }
    }

    /// gamma in {2^-4, 2^-2, 1, 2^2, 2^4}, c_minus in 1..=5, c_plus = 1, c_hat = 1.
    pub fn baseline_default() -> Self {
        Self {
            gamma_values: powers_of_two(),
            c_hat_values: vec![1.0],
            c_minus_values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            c_plus: 1.0,
        }
    }

    /// Combinations in declaration order: c_hat, then c_minus, then gamma.
    pub fn combinations(&self) -> Result<Vec<Combination>> {
        if self.gamma_values.is_empty()
            || self.c_hat_values.is_empty()
            || self.c_minus_values.is_empty()
        {
            return Err(Error::Config("grid lists must be nonempty".into()));
        }
        let mut out = Vec::new();
        for &c_hat in &self.c_hat_values {
            for &c_minus in &self.c_minus_values {
                for &gamma in &self.gamma_values {
                    let scheme = PenaltyScheme::new(c_minus, self.c_plus, c_hat)
                        .map_err(|e| Error::Config(e.to_string()))?;
                    let kernel =
                        KernelParams::new(gamma).map_err(|e| Error::Config(e.to_string()))?;
                    out.push(Combination {
                        index: out.len(),
                        scheme,
                        kernel,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn size(&self) -> usize {
        self.gamma_values.len() * self.c_hat_values.len() * self.c_minus_values.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub index: usize,
    pub scheme: PenaltyScheme<f64>,
    pub kernel: KernelParams<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    EnsembleAccuracy,
    PlainAccuracy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    /// Evaluate grid combinations on the rayon pool.
    pub parallel: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            selection_metric: SelectionMetric::default(),
            parallel: true,
        }
    }
}

pub type Fold = (Vec<usize>, Vec<usize>);

type FoldSamples = (Vec<Sample<f64>>, Vec<Sample<f64>>);

/// Stratified on the binary label. Positives are shuffled and dealt round
/// robin, negatives continue dealing where the positives stopped so fold
/// sizes differ by at most one. A class with at least two members is then
/// present in every training split.
pub fn stratified_kfold(labels: &[Label], folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut pos: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == Label::Positive)
        .collect();
    let mut neg: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == Label::Negative)
        .collect();
    let minority = pos.len().min(neg.len());
    if minority < 2 {
        return Err(Error::Config(format!(
            "minority class has {minority} samples; every training split needs both classes"
        )));
    }
    if labels.len() < folds {
        return Err(Error::Config(format!(
            "{} samples cannot fill {folds} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignment = vec![0usize; labels.len()];
    for (k, &i) in pos.iter().chain(&neg).enumerate() {
        assignment[i] = k % folds;
    }
    Ok((0..folds)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| assignment[i] == f);
            (train, val)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComboScore {
    pub combination: Combination,
    /// Mean validation score over folds, `None` if any fold failed to train.
    pub mean_score: Option<f64>,
    pub fold_scores: Vec<f64>,
    /// Worst KKT violation and relative gap over the fold fits that trained.
    pub max_kkt_violation: f64,
    pub max_relative_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Combination,
    pub best_score: f64,
    pub scores: Vec<ComboScore>,
    pub fold_fits: usize,
    pub max_kkt_violation: f64,
    pub max_relative_gap: f64,
}

fn take(gram: &Array2<f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| gram[[rows[a], cols[b]]])
}

/// Scores a trained model on validation samples with the given metric.
pub fn validation_score(
    model: &TrainedModel<f64>,
    samples: &[Sample<f64>],
    metric: SelectionMetric,
) -> Result<f64> {
    let preds = samples
        .iter()
        .map(|s| model.predict(&s.features))
        .collect::<Result<Vec<_>>>()?;
    score_predictions(&preds, samples, metric)
}

fn score_predictions(preds: &[Label], samples: &[Sample<f64>], metric: SelectionMetric) -> Result<f64> {
    let truths: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let tags: Vec<_> = samples.iter().map(|s| s.region).collect();
    let cw = classwise_accuracy(preds, &truths, &tags)?;
    let score = match metric {
        SelectionMetric::EnsembleAccuracy => cw.ensemble().map(|e| e.value),
        SelectionMetric::PlainAccuracy => cw.plain(),
    };
    score.ok_or_else(|| Error::Empty("validation fold has no samples".into()))
}

/// Argmax of the mean score; ties go to smaller c_hat, then smaller gamma,
/// then declaration order.
pub fn select_best(scores: &[ComboScore]) -> Option<&ComboScore> {
    scores
        .iter()
        .filter(|s| s.mean_score.is_some())
        .fold(None, |best: Option<&ComboScore>, cand| match best {
            None => Some(cand),
            Some(b) => {
                let (sb, sc) = (b.mean_score.unwrap(), cand.mean_score.unwrap());
                let key = |c: &ComboScore| {
                    (
                        c.combination.scheme.c_hat,
                        c.combination.kernel.gamma,
                        c.combination.index,
                    )
                };
                let better = sc > sb || (sc == sb && key(cand) < key(b));
                Some(if better { cand } else { b })
            }
        })
}

/// Exhaustive grid search with k-fold cross-validation over `samples`
/// (the training split only). Samples must carry region tags for `rule`.
pub fn grid_search(
    samples: &[Sample<f64>],
    rule: Option<&KnowledgeRule>,
    grid: &GridSpec,
    cv: &CvConfig,
) -> Result<GridResult> {
    let combos = grid.combinations()?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let folds = stratified_kfold(&labels, cv.folds, cv.seed)?;
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();

    // one full Gram per gamma, sliced per fold
    let mut gammas: Vec<f64> = Vec::new();
    for c in &combos {
        if !gammas.contains(&c.kernel.gamma) {
            gammas.push(c.kernel.gamma);
        }
    }
    let grams: Vec<Array2<f64>> = gammas
        .iter()
        .map(|&g| gram_matrix(&rows, &KernelParams { gamma: g }))
        .collect::<Result<_>>()?;
    let fold_data: Vec<FoldSamples> = folds
        .iter()
        .map(|(tr, va)| {
            (
                tr.iter().map(|&i| samples[i].clone()).collect(),
                va.iter().map(|&i| samples[i].clone()).collect(),
            )
        })
        .collect();

    let evaluate = |combo: &Combination| -> ComboScore {
        let g = gammas.iter().position(|&g| g == combo.kernel.gamma).unwrap();
        let full = &grams[g];
        let mut fold_scores = Vec::with_capacity(folds.len());
        let (mut kkt, mut gap) = (0.0f64, 0.0f64);
        for ((tr, va), (tr_s, va_s)) in folds.iter().zip(&fold_data) {
            let sub = take(full, tr, tr);
            let fitted = train_with_gram(
                tr_s,
                sub,
                &combo.scheme,
                &combo.kernel,
                rule,
                &TrainOptions::default(),
            );
            let Ok(model) = fitted else {
                return ComboScore {
                    combination: *combo,
                    mean_score: None,
                    fold_scores,
                    max_kkt_violation: kkt,
                    max_relative_gap: gap,
                };
            };
            kkt = kkt.max(model.training_diagnostics.max_violation);
            gap = gap.max(model.training_diagnostics.relative_gap);
            // decision values from the cached cross-kernel block
            let cross = take(full, va, tr);
            let preds: Vec<Label> = (0..va.len())
                .map(|a| {
                    let v: f64 = model
                        .support_indices
                        .iter()
                        .zip(&model.coefficients)
                        .map(|(&sv, &c)| c * cross[[a, sv]])
                        .sum::<f64>()
                        + model.bias;
                    Label::from_decision(v)
                })
                .collect();
            match score_predictions(&preds, va_s, cv.selection_metric) {
                Ok(s) => fold_scores.push(s),
                Err(_) => {
                    return ComboScore {
                        combination: *combo,
                        mean_score: None,
                        fold_scores,
                        max_kkt_violation: kkt,
                        max_relative_gap: gap,
                    }
                }
            }
        }
        let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        ComboScore {
            combination: *combo,
            mean_score: Some(mean),
            fold_scores,
            max_kkt_violation: kkt,
            max_relative_gap: gap,
        }
    };

    let scores: Vec<ComboScore> = if cv.parallel {
        combos.par_iter().map(evaluate).collect()
    } else {
        combos.iter().map(evaluate).collect()
    };
    let best = select_best(&scores).ok_or_else(|| {
        Error::Config("every grid combination failed to train".into())
    })?;
    Ok(GridResult {
        best: best.combination,
        best_score: best.mean_score.unwrap(),
        fold_fits: combos.len() * folds.len(),
        max_kkt_violation: scores.iter().map(|s| s.max_kkt_violation).fold(0.0, f64::max),
        max_relative_gap: scores.iter().map(|s| s.max_relative_gap).fold(0.0, f64::max),
        scores: scores.clone(),
    })
}
