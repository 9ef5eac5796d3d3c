//! Sequential minimal optimization for the box-constrained SVM dual
//!
//! ```text
//! min_a  1/2 a'Qa - e'a,   Q_ij = y_i y_j G_ij
//! s.t.   y'a = 0,  0 <= a_i <= u_i
//! ```
//!
//! with one upper bound `u_i` per sample. The working pair is the maximal
//! violating pair; the two-variable subproblem is solved analytically and
//! clipped to the two (possibly different) boxes.

use ndarray::Array2;

use crate::error::{Error, Result, SolveError};
use crate::{Label, Scalar};

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const MIN_MAX_PASSES: usize = 100_000;

/// Curvature floor for the pair update when `Q_ii + Q_jj - 2 Q_ij` vanishes.
const TAU: f64 = 1e-12;

/// Dual QP data: Gram matrix, labels and per-sample upper bounds.
#[derive(Clone, Debug)]
pub struct QpProblem<F> {
    pub gram: Array2<F>,
    pub labels: Vec<Label>,
    pub upper_bounds: Vec<F>,
    pub tolerance: F,
    pub max_passes: usize,
}

impl<F: Scalar> QpProblem<F> {
    /// Validates the inputs; tolerance defaults to 1e-3 and the iteration
    /// budget to [`default_max_passes`].
    pub fn new(gram: Array2<F>, labels: Vec<Label>, upper_bounds: Vec<F>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Empty("QP problem has no samples".into()));
        }
        if gram.nrows() != n || gram.ncols() != n {
            return Err(Error::Structure(format!(
                "gram is {}x{}, expected {n}x{n}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if upper_bounds.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: upper_bounds.len(),
            });
        }
        if let Some((i, u)) = upper_bounds
            .iter()
            .enumerate()
            .find(|(_, u)| !(u.is_finite() && **u > F::zero()))
        {
            return Err(Error::Validation(format!(
                "upper bound {i} must be positive and finite, got {u}"
            )));
        }
        let sym_tol = F::lit(1e-12);
        for i in 0..n {
            for j in (i + 1)..n {
                if (gram[[i, j]] - gram[[j, i]]).abs() > sym_tol {
                    return Err(Error::Validation(format!(
                        "gram not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("gram has non-finite entries".into()));
        }
        Ok(Self {
            gram,
            labels,
            upper_bounds,
            tolerance: F::lit(DEFAULT_TOLERANCE),
            max_passes: default_max_passes(n),
        })
    }

    pub fn with_tolerance(mut self, tolerance: F) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_passes(mut self, max_passes: usize) -> Self {
        self.max_passes = max_passes;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    fn y(&self, i: usize) -> F {
        self.labels[i].sign()
    }

    #[inline]
    fn q(&self, i: usize, j: usize) -> F {
        self.y(i) * self.y(j) * self.gram[[i, j]]
    }

    /// Gradient `Qa - e` of the minimized objective.
    pub(crate) fn gradient(&self, alpha: &[F]) -> Vec<F> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let qa: F = (0..n)
                    .filter(|&j| alpha[j] != F::zero())
                    .map(|j| self.q(i, j) * alpha[j])
                    .sum();
                qa - F::one()
            })
            .collect()
    }

    /// Dual objective in maximization form, `e'a - 1/2 a'Qa`.
    pub fn dual_objective(&self, alpha: &[F]) -> F {
        let grad = self.gradient(alpha);
        dual_from_gradient(alpha, &grad)
    }

    fn has_both_labels(&self) -> bool {
        self.labels.contains(&Label::Positive) && self.labels.contains(&Label::Negative)
    }
}

fn dual_from_gradient<F: Scalar>(alpha: &[F], grad: &[F]) -> F {
    // e'a - 1/2 a'Qa = 1/2 e'a - 1/2 a'g  with g = Qa - e
    let half = F::lit(0.5);
    alpha
        .iter()
        .zip(grad)
        .map(|(&a, &g)| half * a - half * a * g)
        .sum()
}

/// Solution of the dual problem.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution<F> {
    pub alpha: Vec<F>,
    pub bias: F,
    /// Dual objective in maximization form.
    pub objective: F,
    pub iterations: usize,
    /// Gap `m(a) - M(a)` of the maximal violating pair at return.
    pub max_kkt_violation: F,
}

impl<F: Scalar> DualSolution<F> {
    /// Sum `sum_i alpha_i y_i`, zero for a feasible point.
    pub fn equality_residual(&self, labels: &[Label]) -> F {
        self.alpha
            .iter()
            .zip(labels)
            .map(|(&a, l)| a * l.sign::<F>())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Membership {
    Up,
    Low,
}

#[inline]
fn in_set<F: Scalar>(m: Membership, label: Label, alpha: F, bound: F) -> bool {
    let below_upper = alpha < bound;
    let above_lower = alpha > F::zero();
    match (m, label) {
        (Membership::Up, Label::Positive) | (Membership::Low, Label::Negative) => below_upper,
        (Membership::Up, Label::Negative) | (Membership::Low, Label::Positive) => above_lower,
    }
}

/// Maximal violating pair `(i, j, m - M)`. Ties resolve to the lowest index.
fn select_pair<F: Scalar>(
    problem: &QpProblem<F>,
    alpha: &[F],
    grad: &[F],
) -> Option<(usize, usize, F)> {
    let mut best_up: Option<(usize, F)> = None;
    let mut best_low: Option<(usize, F)> = None;
    for t in 0..problem.len() {
        let label = problem.labels[t];
        let score = -label.sign::<F>() * grad[t];
        let bound = problem.upper_bounds[t];
        if in_set(Membership::Up, label, alpha[t], bound)
            && best_up.is_none_or(|(_, s)| score > s)
        {
            best_up = Some((t, score));
        }
        if in_set(Membership::Low, label, alpha[t], bound)
            && best_low.is_none_or(|(_, s)| score < s)
        {
            best_low = Some((t, score));
        }
    }
    match (best_up, best_low) {
        (Some((i, m)), Some((j, lo))) => Some((i, j, m - lo)),
        _ => None,
    }
}

/// Exact minimization over the pair `(i, j)` keeping `y_i a_i + y_j a_j` fixed.
fn update_pair<F: Scalar>(problem: &QpProblem<F>, alpha: &mut [F], grad: &[F], i: usize, j: usize) {
    let ci = problem.upper_bounds[i];
    let cj = problem.upper_bounds[j];
    let zero = F::zero();
    let tau = F::lit(TAU);
    let (qii, qjj, qij) = (problem.q(i, i), problem.q(j, j), problem.q(i, j));
    let (mut ai, mut aj) = (alpha[i], alpha[j]);

    if problem.labels[i] != problem.labels[j] {
        let mut quad = qii + qjj + qij + qij;
        if quad <= zero {
            quad = tau;
        }
        let delta = (-grad[i] - grad[j]) / quad;
        let diff = ai - aj;
        ai = ai + delta;
        aj = aj + delta;
        if diff > zero {
            if aj < zero {
                aj = zero;
                ai = diff;
            }
        } else if ai < zero {
            ai = zero;
            aj = -diff;
        }
        if diff > ci - cj {
            if ai > ci {
                ai = ci;
                aj = ci - diff;
            }
        } else if aj > cj {
            aj = cj;
            ai = cj + diff;
        }
    } else {
        let mut quad = qii + qjj - qij - qij;
        if quad <= zero {
            quad = tau;
        }
        let delta = (grad[i] - grad[j]) / quad;
        let sum = ai + aj;
        ai = ai - delta;
        aj = aj + delta;
        if sum > ci {
            if ai > ci {
                ai = ci;
                aj = sum - ci;
            }
        } else if aj < zero {
            aj = zero;
            ai = sum;
        }
        if sum > cj {
            if aj > cj {
                aj = cj;
                ai = sum - cj;
            }
        } else if ai < zero {
            ai = zero;
            aj = sum;
        }
    }
    alpha[i] = ai.max(zero).min(ci);
    alpha[j] = aj.max(zero).min(cj);
}

/// Iteration budget: `10 n^2`, but never below [`MIN_MAX_PASSES`] so that
/// tight tolerances stay reachable on small problems.
pub fn default_max_passes(n: usize) -> usize {
    (10 * n * n).max(MIN_MAX_PASSES)
}

/// Solves the dual QP.
pub fn solve_dual<F: Scalar>(problem: &QpProblem<F>) -> Result<DualSolution<F>, SolveError<F>> {
    run_smo(problem, None)
}

/// As [`solve_dual`], also returning the dual objective after every update.
pub fn solve_dual_traced<F: Scalar>(
    problem: &QpProblem<F>,
) -> (Result<DualSolution<F>, SolveError<F>>, Vec<F>) {
    let mut trace = Vec::new();
    let result = run_smo(problem, Some(&mut trace));
    (result, trace)
}

fn run_smo<F: Scalar>(
    problem: &QpProblem<F>,
    mut trace: Option<&mut Vec<F>>,
) -> Result<DualSolution<F>, SolveError<F>> {
    if !problem.has_both_labels() {
        return Err(SolveError::Degenerate(
            "all labels identical; the only feasible point is alpha = 0".into(),
        ));
    }
    let n = problem.len();
    let mut alpha = vec![F::zero(); n];
    let mut grad = vec![-F::one(); n];
    let mut iterations = 0usize;

    if let Some(t) = trace.as_deref_mut() {
        t.push(F::zero());
    }

    loop {
        let (i, j, violation) =
            select_pair(problem, &alpha, &grad).expect("both labels present, sets nonempty");
        if violation <= problem.tolerance {
            let sol = finish(problem, alpha, &grad, iterations, violation);
            return Ok(sol);
        }
        if iterations >= problem.max_passes {
            let sol = finish(problem, alpha, &grad, iterations, violation);
            return Err(SolveError::NotConverged { best: Box::new(sol) });
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        update_pair(problem, &mut alpha, &grad, i, j);
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        if di != F::zero() || dj != F::zero() {
            for (t, g) in grad.iter_mut().enumerate() {
                *g = *g + problem.q(t, i) * di + problem.q(t, j) * dj;
            }
        }
        iterations += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(dual_from_gradient(&alpha, &grad));
        }
    }
}

fn finish<F: Scalar>(
    problem: &QpProblem<F>,
    alpha: Vec<F>,
    grad: &[F],
    iterations: usize,
    violation: F,
) -> DualSolution<F> {
    let bias = bias_from_gradient(problem, &alpha, grad).unwrap_or(F::zero());
    let objective = problem.dual_objective(&alpha);
    DualSolution {
        alpha,
        bias,
        objective,
        iterations,
        max_kkt_violation: violation.max(F::zero()),
    }
}

/// Recovers the offset `b` for a feasible `alpha`.
///
/// With free support vectors (`0 < alpha_i < u_i`) this is the mean of
/// `y_i - sum_j alpha_j y_j G_ij` over them. Otherwise it is the midpoint of the
/// interval of offsets compatible with the KKT conditions of the bounded
/// multipliers.
pub fn compute_bias<F: Scalar>(alpha: &[F], problem: &QpProblem<F>) -> Result<F> {
    if alpha.len() != problem.len() {
        return Err(Error::Dimension {
            expected: problem.len(),
            found: alpha.len(),
        });
    }
    let grad = problem.gradient(alpha);
    bias_from_gradient(problem, alpha, &grad)
}

fn bias_from_gradient<F: Scalar>(problem: &QpProblem<F>, alpha: &[F], grad: &[F]) -> Result<F> {
    if alpha.iter().all(|&a| a == F::zero()) {
        return Err(Error::DegenerateTask(
            "alpha vanishes everywhere; no offset is determined".into(),
        ));
    }
    let mut free_sum = F::zero();
    let mut free_count = 0usize;
    let mut lower = F::neg_infinity();
    let mut upper = F::infinity();
    for (t, (&a, &g)) in alpha.iter().zip(grad).enumerate() {
        let label = problem.labels[t];
        // -y g equals y_t - sum_j a_j y_j G_tj
        let r = -label.sign::<F>() * g;
        let at_upper = a >= problem.upper_bounds[t];
        let at_lower = a <= F::zero();
        if !at_upper && !at_lower {
            free_sum = free_sum + r;
            free_count += 1;
            continue;
        }
        match (label, at_upper) {
            (Label::Positive, false) | (Label::Negative, true) => lower = lower.max(r),
            (Label::Positive, true) | (Label::Negative, false) => upper = upper.min(r),
        }
    }
    if free_count > 0 {
        return Ok(free_sum / F::from_usize(free_count).unwrap());
    }
    Ok(match (lower.is_finite(), upper.is_finite()) {
        (true, true) => (lower + upper) * F::lit(0.5),
        (true, false) => lower,
        (false, true) => upper,
        (false, false) => F::zero(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pm() -> Vec<Label> {
        vec![Label::Positive, Label::Negative]
    }

    #[test]
    fn symmetric_pair_unconstrained() {
        let p = QpProblem::new(array![[1.0f64, 0.0], [0.0, 1.0]], pm(), vec![10.0, 10.0]).unwrap();
        let s = solve_dual(&p).unwrap();
        assert!((s.alpha[0] - 1.0).abs() < 1e-12);
        assert!((s.alpha[1] - 1.0).abs() < 1e-12);
        assert!(s.bias.abs() < 1e-12);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_capped() {
        let p = QpProblem::new(array![[1.0f64, 0.0], [0.0, 1.0]], pm(), vec![0.5, 0.5]).unwrap();
        let s = solve_dual(&p).unwrap();
        assert_eq!(s.alpha, vec![0.5, 0.5]);
        assert_eq!(s.bias, 0.0);
    }

    #[test]
    fn bias_rules_on_symmetric_pair() {
        let p = QpProblem::new(array![[1.0f64, 0.0], [0.0, 1.0]], pm(), vec![10.0, 10.0]).unwrap();
        assert!(compute_bias(&[1.0, 1.0], &p).unwrap().abs() < 1e-15);
        let p = QpProblem::new(array![[1.0f64, 0.0], [0.0, 1.0]], pm(), vec![0.5, 0.5]).unwrap();
        // bounded: b in [-0.5, 0.5]
        assert_eq!(compute_bias(&[0.5, 0.5], &p).unwrap(), 0.0);
    }

    #[test]
    fn zero_alpha_bias_is_degenerate() {
        let p = QpProblem::new(array![[1.0f64, 0.0], [0.0, 1.0]], pm(), vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            compute_bias(&[0.0, 0.0], &p),
            Err(Error::DegenerateTask(_))
        ));
    }

    #[test]
    fn single_label_is_degenerate() {
        let p = QpProblem::new(
            array![[1.0, 0.5], [0.5, 1.0]],
            vec![Label::Positive; 2],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(matches!(solve_dual(&p), Err(SolveError::Degenerate(_))));
    }

    #[test]
    fn iteration_budget_returns_best_so_far() {
        let g = array![
            [1.0, 0.2, 0.1, 0.3],
            [0.2, 1.0, 0.4, 0.1],
            [0.1, 0.4, 1.0, 0.2],
            [0.3, 0.1, 0.2, 1.0]
        ];
        let labels = vec![
            Label::Positive,
            Label::Negative,
            Label::Positive,
            Label::Negative,
        ];
        let p = QpProblem::new(g, labels, vec![5.0; 4])
            .unwrap()
            .with_tolerance(1e-14)
            .with_max_passes(1);
        match solve_dual(&p) {
            Err(SolveError::NotConverged { best }) => {
                assert_eq!(best.iterations, 1);
                assert!(best.max_kkt_violation > 1e-14);
                assert!(best.alpha.iter().any(|&a| a > 0.0));
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(QpProblem::new(array![[1.0, 0.1], [0.2, 1.0]], pm(), vec![1.0, 1.0]).is_err());
        assert!(QpProblem::new(array![[1.0f64, 0.0], [0.0, 1.0]], pm(), vec![1.0, 0.0]).is_err());
        assert!(QpProblem::new(array![[1.0f64, 0.0], [0.0, 1.0]], pm(), vec![1.0]).is_err());
        assert!(QpProblem::new(array![[1.0]], pm(), vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn single_precision_pair() {
        let p = QpProblem::new(
            array![[1.0f32, 0.0], [0.0, 1.0]],
            pm(),
            vec![10.0f32, 10.0],
        )
        .unwrap();
        let s = solve_dual(&p).unwrap();
        assert!((s.alpha[0] - 1.0).abs() < 1e-6);
        assert!(s.bias.abs() < 1e-6);
    }
}
