#![allow(dead_code)]

use kisvm::kernel_qp::{gram_matrix, KernelParams, QpProblem};
use kisvm::pipeline::Sample;
use kisvm::wsvm::{assign_bounds, PenaltyScheme, RegionTag};
use kisvm::Label;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_PG_TOL: f64 = 1e-10;

/// Reference solution from accelerated projected gradient.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub alpha: Vec<f64>,
    /// Dual objective in maximization form, `sum(alpha) - 1/2 alpha'Q alpha`.
    pub objective: f64,
    pub pg_norm: f64,
    pub iterations: usize,
    pub bias: f64,
}

fn q_matrix(gram: &Array2<f64>, labels: &[Label]) -> Vec<Vec<f64>> {
    let n = labels.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| labels[i].sign::<f64>() * labels[j].sign::<f64>() * gram[[i, j]])
                .collect()
        })
        .collect()
}

fn mat_vec(q: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    q.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Euclidean projection onto `{a : y'a = 0, 0 <= a <= u}`.
pub fn project(v: &[f64], y: &[f64], u: &[f64]) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .zip(u)
            .map(|((&vi, &yi), &ui)| (vi - lam * yi).clamp(0.0, ui))
            .collect()
    };
    let residual = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + u.iter().fold(0.0, |m: f64, &x| m.max(x)) + 1.0;
    let (mut lo, mut hi) = (-span, span);
    // residual is non-increasing in lambda
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if residual(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    let a = at(lam);
    // Solve the linear piece exactly on the free set.
    let free: Vec<usize> = (0..v.len())
        .filter(|&i| {
            let x = v[i] - lam * y[i];
            x > 0.0 && x < u[i]
        })
        .collect();
    if free.is_empty() {
        return a;
    }
    let clamped: f64 = (0..v.len())
        .filter(|i| !free.contains(i))
        .map(|i| y[i] * a[i])
        .sum();
    let lam_exact =
        (free.iter().map(|&i| y[i] * v[i]).sum::<f64>() + clamped) / free.len() as f64;
    let refined = at(lam_exact);
    if residual(&refined).abs() <= residual(&a).abs() {
        refined
    } else {
        a
    }
}

fn largest_eigenvalue(q: &[Vec<f64>]) -> f64 {
    let n = q.len();
    let m = DMatrix::from_fn(n, n, |i, j| q[i][j]);
    m.symmetric_eigenvalues().iter().cloned().fold(f64::MIN, f64::max)
}

pub fn smallest_eigenvalue(gram: &Array2<f64>) -> f64 {
    let n = gram.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| gram[[i, j]]);
    m.symmetric_eigenvalues().iter().cloned().fold(f64::MAX, f64::min)
}

/// FISTA with gradient-based restart, stopped when the projected gradient
/// `||a - P(a - grad)||` falls below [`ORACLE_PG_TOL`].
pub fn oracle_solve(gram: &Array2<f64>, labels: &[Label], bounds: &[f64]) -> OracleSolution {
    let n = labels.len();
    let q = q_matrix(gram, labels);
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let step = 1.0 / largest_eigenvalue(&q).max(1e-12);
    let grad = |a: &[f64]| -> Vec<f64> { mat_vec(&q, a).iter().map(|g| g - 1.0).collect() };
    let pg_norm = |a: &[f64]| -> f64 {
        let g = grad(a);
        let shifted: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x - gi).collect();
        let p = project(&shifted, &y, bounds);
        a.iter().zip(&p).map(|(x, pi)| (x - pi).powi(2)).sum::<f64>().sqrt()
    };

    let mut x = project(&vec![0.0; n], &y, bounds);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut pg = pg_norm(&x);
    while pg > ORACLE_PG_TOL && iterations < 5_000_000 {
        let g = grad(&z);
        let trial: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&trial, &y, bounds);
        let restart: f64 = z
            .iter()
            .zip(&next)
            .zip(&x)
            .map(|((zi, ni), xi)| (zi - ni) * (ni - xi))
            .sum();
        if restart > 0.0 {
            t = 1.0;
            z = x.clone();
            iterations += 1;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        z = next
            .iter()
            .zip(&x)
            .map(|(ni, xi)| ni + beta * (ni - xi))
            .collect();
        x = next;
        t = t_next;
        iterations += 1;
        if iterations % 20 == 0 {
            pg = pg_norm(&x);
        }
    }
    pg = pg_norm(&x);
    let qa = mat_vec(&q, &x);
    let objective = x.iter().sum::<f64>() - 0.5 * x.iter().zip(&qa).map(|(a, b)| a * b).sum::<f64>();
    let bias = oracle_bias(&x, &qa, &y, bounds);
    OracleSolution {
        alpha: x,
        objective,
        pg_norm: pg,
        iterations,
        bias,
    }
}

/// Offset from the oracle multipliers: mean over clearly free multipliers,
/// else the midpoint of the interval the bounded ones allow.
fn oracle_bias(alpha: &[f64], qa: &[f64], y: &[f64], u: &[f64]) -> f64 {
    // y_i f_i = (Q a)_i + y_i b, so on the margin b = y_i (1 - (Q a)_i).
    let r: Vec<f64> = (0..alpha.len()).map(|i| y[i] * (1.0 - qa[i])).collect();
    let eps = 1e-7;
    let free: Vec<usize> = (0..alpha.len())
        .filter(|&i| alpha[i] > eps * u[i] && alpha[i] < u[i] * (1.0 - eps))
        .collect();
    if !free.is_empty() {
        return free.iter().map(|&i| r[i]).sum::<f64>() / free.len() as f64;
    }
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..alpha.len() {
        let at_upper = alpha[i] >= u[i] * (1.0 - eps);
        // need y_i f_i >= 1 at zero, <= 1 at the upper bound
        let want_ge = !at_upper;
        if (y[i] > 0.0) == want_ge {
            lo = lo.max(r[i]);
        } else {
            hi = hi.min(r[i]);
        }
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        _ => 0.0,
    }
}

/// Random dual problem with RBF gram on uniform points and bounds drawn from
/// `{c_minus * c_hat, c_minus, c_plus}` consistently with random region tags.
pub struct RandomInstance {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub tags: Vec<RegionTag>,
    pub bounds: Vec<f64>,
    pub gamma: f64,
    pub gram: Array2<f64>,
}

impl RandomInstance {
    pub fn generate(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(2..=5);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.5) { Label::Positive } else { Label::Negative })
            .collect();
        labels[0] = Label::Positive;
        labels[1] = Label::Negative;
        let c_plus = rng.random_range(0.2..2.0);
        let c_minus = c_plus * rng.random_range(1.0..3.0);
        let c_hat = rng.random_range(1.0..5.0);
        let tags: Vec<RegionTag> = labels
            .iter()
            .map(|l| match l {
                Label::Negative => RegionTag::R3,
                Label::Positive if rng.random_bool(0.4) => RegionTag::R1,
                Label::Positive => RegionTag::R2,
            })
            .collect();
        let bounds = tags
            .iter()
            .map(|t| match t {
                RegionTag::R1 => c_minus * c_hat,
                RegionTag::R2 => c_minus,
                RegionTag::R3 => c_plus,
            })
            .collect();
        let gamma = [0.25, 1.0, 4.0][rng.random_range(0..3)];
        let gram = gram_matrix(&points, &KernelParams::new(gamma).unwrap()).unwrap();
        Self {
            points,
            labels,
            tags,
            bounds,
            gamma,
            gram,
        }
    }

    pub fn problem(&self) -> QpProblem<f64> {
        QpProblem::new(self.gram.clone(), self.labels.clone(), self.bounds.clone()).unwrap()
    }

    pub fn samples(&self) -> Vec<Sample<f64>> {
        self.points
            .iter()
            .zip(&self.labels)
            .zip(&self.tags)
            .enumerate()
            .map(|(i, ((x, &label), &region))| sample_at(i, x.clone(), label, region))
            .collect()
    }
}

pub fn sample_at(i: usize, features: Vec<f64>, label: Label, region: RegionTag) -> Sample<f64> {
    Sample {
        features,
        label,
        region,
        time_index: i,
        current_silicon: 0.5,
        previous_silicon: 0.5,
    }
}

pub fn sample(features: Vec<f64>, label: Label, region: RegionTag) -> Sample<f64> {
    sample_at(0, features, label, region)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// Negatives on a circle of radius 0.5 around the origin, four positives
/// near (3, 3), and one R1 positive planted at the origin.
pub fn flip_instance() -> Vec<Sample<f64>> {
    let mut s = Vec::new();
    for k in 0..7 {
        let th = k as f64 * std::f64::consts::TAU / 7.0;
        s.push(sample_at(
            s.len(),
            vec![0.5 * th.cos(), 0.5 * th.sin()],
            Label::Negative,
            RegionTag::R3,
        ));
    }
    for p in [[3.0, 3.0], [3.4, 3.0], [3.0, 3.4], [3.4, 3.4]] {
        s.push(sample_at(s.len(), p.to_vec(), Label::Positive, RegionTag::R2));
    }
    s.push(sample_at(s.len(), vec![0.0, 0.0], Label::Positive, RegionTag::R1));
    s
}

/// Decision value at training sample `at` from the oracle solution.
pub fn oracle_decision(samples: &[Sample<f64>], scheme: &PenaltyScheme<f64>, gamma: f64, at: usize) -> f64 {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    let gram = gram_matrix(&rows, &KernelParams::new(gamma).unwrap()).unwrap();
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let bounds = assign_bounds(samples, scheme);
    let o = oracle_solve(&gram, &labels, &bounds);
    assert!(o.pg_norm <= ORACLE_PG_TOL);
    (0..samples.len())
        .map(|j| o.alpha[j] * labels[j].sign::<f64>() * gram[[at, j]])
        .sum::<f64>()
        + o.bias
}
