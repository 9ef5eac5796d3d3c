use serde::{Deserialize, Serialize};

use super::smo::{DualSolution, QpProblem};
use crate::Scalar;

/// Optimality diagnostics for a dual solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport<F> {
    /// Largest per-sample KKT residual of `y_i f(x_i)` given `alpha` and `b`,
    /// also covering box and equality residuals.
    pub max_violation: F,
    /// `1/2 a'(yy' o G)a + sum_i u_i max(0, 1 - y_i f(x_i))`.
    pub primal_objective: F,
    pub dual_objective: F,
    /// `|primal - dual| / (1 + |dual|)`.
    pub relative_gap: F,
}

pub fn kkt_report<F: Scalar>(solution: &DualSolution<F>, problem: &QpProblem<F>) -> KktReport<F> {
    let alpha = &solution.alpha;
    let b = solution.bias;
    let n = problem.len();
    let zero = F::zero();
    let one = F::one();

    let grad = problem.gradient(alpha);

    let mut max_violation = solution.equality_residual(&problem.labels).abs();
    let mut hinge = zero;
    let mut quad = zero;
    for i in 0..n {
        let y = problem.labels[i].sign::<F>();
        // y_i f(x_i) = (Qa)_i + y_i b
        let margin = grad[i] + one + y * b;
        let u = problem.upper_bounds[i];
        let a = alpha[i];
        let viol = if a <= zero {
            (one - margin).max(zero)
        } else if a >= u {
            (margin - one).max(zero)
        } else {
            (margin - one).abs()
        };
        let box_viol = (-a).max(a - u).max(zero);
        max_violation = max_violation.max(viol).max(box_viol);
        hinge = hinge + u * (one - margin).max(zero);
        quad = quad + a * (grad[i] + one);
    }
    let half = F::lit(0.5);
    let primal = half * quad + hinge;
    let dual = alpha.iter().copied().sum::<F>() - half * quad;
    KktReport {
        max_violation,
        primal_objective: primal,
        dual_objective: dual,
        relative_gap: (primal - dual).abs() / (one + dual.abs()),
    }
}
