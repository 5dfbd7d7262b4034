//! Small dense helpers over nalgebra. Every matrix here is at most
//! (q + p) × (q + p), so clarity wins over speed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted for a normal matrix or a leverage
/// adjustment.
pub const MAX_CONDITION: f64 = 1e12;

/// Spectral condition number of a symmetric matrix after Jacobi scaling,
/// together with the eigenvector of the smallest scaled eigenvalue mapped back
/// to the original coordinates.
///
/// Returns `f64::INFINITY` when a diagonal entry is not positive.
pub fn scaled_condition(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let k = a.nrows();
    let d: Vec<f64> = (0..k).map(|j| a[(j, j)]).collect();
    if let Some(j) = d.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        let mut e = DVector::zeros(k);
        e[j] = 1.0;
        return (f64::INFINITY, e);
    }
    let s: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| a[(i, j)] * s[i] * s[j]);
    let eig = symmetrize(&scaled).symmetric_eigen();
    let (mut lo, mut hi) = (0, 0);
    for j in 0..k {
        if eig.eigenvalues[j] < eig.eigenvalues[lo] {
            lo = j;
        }
        if eig.eigenvalues[j] > eig.eigenvalues[hi] {
            hi = j;
        }
    }
    let (min, max) = (eig.eigenvalues[lo], eig.eigenvalues[hi]);
    let cond = if min <= 0.0 { f64::INFINITY } else { max / min };
    let mut dir = DVector::from_fn(k, |i, _| eig.eigenvectors[(i, lo)] * s[i]);
    let norm = dir.amax();
    if norm > 0.0 {
        dir /= norm;
    }
    (cond, dir)
}

/// Human-readable linear combination, e.g. `+1.000*a1 -0.500*x1`.
pub fn describe_direction(dir: &DVector<f64>, names: &[String]) -> String {
    let terms: Vec<String> = dir
        .iter()
        .zip(names)
        .filter(|(v, _)| v.abs() > 1e-3)
        .map(|(v, n)| format!("{v:+.3}*{n}"))
        .collect();
    if terms.is_empty() {
        "(none)".into()
    } else {
        terms.join(" ")
    }
}

/// Cholesky inverse of a symmetric positive definite matrix. Fails with a
/// rank-deficiency error naming the weakest direction in `names`.
pub fn spd_inverse(a: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let (cond, dir) = scaled_condition(a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient {
            condition: cond,
            direction: describe_direction(&dir, names),
        });
    }
    let chol = symmetrize(a).cholesky().ok_or_else(|| Error::RankDeficient {
        condition: cond,
        direction: describe_direction(&dir, names),
    })?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, names: &[String]) -> Result<DVector<f64>> {
    let (cond, dir) = scaled_condition(a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient {
            condition: cond,
            direction: describe_direction(&dir, names),
        });
    }
    let chol = symmetrize(a).cholesky().ok_or_else(|| Error::RankDeficient {
        condition: cond,
        direction: describe_direction(&dir, names),
    })?;
    Ok(chol.solve(b))
}

/// LU inverse of a general square matrix with its 1-norm condition number.
pub fn lu_inverse(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let inv = a.clone().lu().try_inverse()?;
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((inv.clone(), norm1(a) * norm1(&inv)))
}

/// Maximum absolute column sum.
pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
