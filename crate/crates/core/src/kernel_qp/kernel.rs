use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Width parameter of the Gaussian RBF kernel `exp(-gamma * |x - y|^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<F> {
    pub gamma: F,
}

impl<F: Scalar> KernelParams<F> {
    pub fn new(gamma: F) -> Result<Self> {
        if !(gamma.is_finite() && gamma > F::zero()) {
            return Err(Error::Validation(format!(
                "kernel gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }
}

/// Gaussian RBF kernel value. Errors when the vectors differ in length.
pub fn rbf<F: Scalar>(x: &[F], y: &[F], params: &KernelParams<F>) -> Result<F> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(rbf_unchecked(x, y, params.gamma))
}

#[inline]
pub(crate) fn rbf_unchecked<F: Scalar>(x: &[F], y: &[F], gamma: F) -> F {
    let sq = x
        .iter()
        .zip(y)
        .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    (-gamma * sq).exp()
}

fn check_rows<F>(rows: &[Vec<F>]) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Empty("kernel input has no rows".into()))?;
    let dim = first.len();
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(Error::Structure(format!(
            "ragged input: row {i} has {} features, row 0 has {dim}",
            row.len()
        )));
    }
    Ok(dim)
}

/// Dense RBF Gram matrix over `rows`.
///
/// Rows of the upper triangle are filled in parallel and mirrored; every entry
/// is computed by the same scalar routine, so the result does not depend on
/// the thread schedule.
pub fn gram_matrix<F: Scalar>(rows: &[Vec<F>], params: &KernelParams<F>) -> Result<Array2<F>> {
    check_rows(rows)?;
    let n = rows.len();
    let gamma = params.gamma;
    let upper: Vec<Vec<F>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    if i == j {
                        F::one()
                    } else {
                        rbf_unchecked(&rows[i], &rows[j], gamma)
                    }
                })
                .collect()
        })
        .collect();
    let mut gram = Array2::zeros((n, n));
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            gram[[i, j]] = v;
            gram[[j, i]] = v;
        }
    }
    Ok(gram)
}

/// Serial reference construction of [`gram_matrix`].
pub fn gram_matrix_serial<F: Scalar>(
    rows: &[Vec<F>],
    params: &KernelParams<F>,
) -> Result<Array2<F>> {
    check_rows(rows)?;
    let n = rows.len();
    let mut gram = Array2::zeros((n, n));
    for i in 0..n {
        gram[[i, i]] = F::one();
        for j in (i + 1)..n {
            let v = rbf_unchecked(&rows[i], &rows[j], params.gamma);
            gram[[i, j]] = v;
            gram[[j, i]] = v;
        }
    }
    Ok(gram)
}
