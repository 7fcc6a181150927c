//! 2-D PCA projection by power iteration with deflation.
//!
//! The covariance matrix is the (N-1)-normalized scatter of mean-centered
//! rows, both accumulated in value-sorted order so the projection is
//! bit-identical under row permutation. The start vector convention is
//! (1, 2, ..., D) normalized, re-orthogonalized against earlier components
//! each iteration; the sign convention makes each component's
//! largest-magnitude entry positive.

use ndarray::Array2;

use super::{sorted_mean, sorted_sum};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct Pca2 {
    /// N x 2 projected coordinates.
    pub coords: Array2<f64>,
    /// Two orthonormal D-vectors.
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    /// Eigenvalue over total variance, per component.
    pub explained: [f64; 2],
}

fn matvec(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    m.rows()
        .into_iter()
        .map(|row| {
            row.as_slice()
                .expect("standard layout")
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Remove the projection of `v` onto each of `basis` (all unit-norm).
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi -= p * bi;
        }
    }
}

/// Flip sign so the largest-magnitude entry is positive (first index wins
/// ties); keeps the output deterministic.
fn fix_sign(v: &mut [f64]) {
    let mut lead = 0usize;
    for (i, x) in v.iter().enumerate().skip(1) {
        if x.abs() > v[lead].abs() {
            lead = i;
        }
    }
    if v[lead] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn dominant_eigenpair(m: &Array2<f64>, previous: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let dim = m.nrows();
    let mut v: Vec<f64> = (0..dim).map(|i| (i + 1) as f64).collect();
    orthogonalize(&mut v, previous);
    let n0 = norm(&v);
    if n0 < 1e-300 {
        return Err(Error::Numeric(
            "power iteration start vector vanished after orthogonalization".into(),
        ));
    }
    for x in v.iter_mut() {
        *x /= n0;
    }

    for iteration in 0..MAX_ITERATIONS {
        let mut w = matvec(m, &v);
        orthogonalize(&mut w, previous);
        let wn = norm(&w);
        if wn < 1e-300 {
            // The deflated matrix annihilates the subspace: eigenvalue 0.
            return Ok((v, 0.0));
        }
        for x in w.iter_mut() {
            *x /= wn;
        }
        if dot(&w, &v) < 0.0 {
            for x in w.iter_mut() {
                *x = -*x;
            }
        }
        let delta = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = w;
        if delta <= TOLERANCE {
            let mv = matvec(m, &v);
            let lambda = dot(&v, &mv);
            return Ok((v, lambda));
        }
        let _ = iteration;
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge within {MAX_ITERATIONS} iterations"
    )))
}

/// Project onto the top-2 principal components of the mean-centered
/// covariance.
pub fn pca2(embeddings: &EmbeddingSet) -> Result<Pca2> {
    let n = embeddings.len();
    let dim = embeddings.dim();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "pca needs at least 3 rows, got {n}"
        )));
    }

    let mean: Vec<f64> = (0..dim)
        .map(|d| sorted_mean((0..n).map(|i| embeddings.reps[[i, d]]).collect()))
        .collect();
    let mut centered = embeddings.reps.clone();
    for mut row in centered.rows_mut() {
        for (x, m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }

    let mut cov = Array2::zeros((dim, dim));
    for a in 0..dim {
        for b in a..dim {
            let products: Vec<f64> = (0..n).map(|i| centered[[i, a]] * centered[[i, b]]).collect();
            let value = sorted_sum(products) / (n - 1) as f64;
            cov[[a, b]] = value;
            cov[[b, a]] = value;
        }
    }
    let trace: f64 = (0..dim).map(|d| cov[[d, d]]).sum();

    if trace <= 0.0 {
        // All rows identical: no variance to explain.
        let mut c0 = vec![0.0; dim];
        let mut c1 = vec![0.0; dim];
        c0[0] = 1.0;
        c1[usize::min(1, dim - 1)] = 1.0;
        return Ok(Pca2 {
            coords: Array2::zeros((n, 2)),
            components: [c0, c1],
            eigenvalues: [0.0, 0.0],
            explained: [0.0, 0.0],
        });
    }

    let (v1, lambda1) = dominant_eigenpair(&cov, &[])?;
    let mut deflated = cov.clone();
    for a in 0..dim {
        for b in 0..dim {
            deflated[[a, b]] -= lambda1 * v1[a] * v1[b];
        }
    }
    let (v2, lambda2) = dominant_eigenpair(&deflated, &[v1.clone()])?;

    let mut v1 = v1;
    let mut v2 = v2;
    fix_sign(&mut v1);
    fix_sign(&mut v2);

    let mut coords = Array2::zeros((n, 2));
    for i in 0..n {
        let row = centered.row(i);
        let rs = row.as_slice().expect("standard layout");
        coords[[i, 0]] = dot(rs, &v1);
        coords[[i, 1]] = dot(rs, &v2);
    }
    Ok(Pca2 {
        coords,
        components: [v1, v2],
        eigenvalues: [lambda1, lambda2],
        explained: [lambda1 / trace, lambda2 / trace],
    })
}
