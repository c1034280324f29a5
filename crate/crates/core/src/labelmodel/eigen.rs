use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Real eigenpairs of a small nonsymmetric matrix.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
    /// Largest imaginary part seen among the eigenvalues.
    pub max_imag: f64,
    /// Smallest distance between two eigenvalues.
    pub min_gap: f64,
}

pub const IMAG_TOL: f64 = 1e-6;
pub const GAP_TOL: f64 = 1e-6;

fn min_gap(values: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            gap = gap.min((values[i] - values[j]).abs());
        }
    }
    gap
}

fn check(values: Vec<f64>, vectors: DMatrix<f64>, max_imag: f64) -> Result<EigenPairs> {
    if max_imag > IMAG_TOL {
        return Err(Error::LabelModel(format!(
            "non-real decomposition (imaginary part {max_imag:.3e})"
        )));
    }
    let gap = min_gap(&values);
    if gap < GAP_TOL {
        return Err(Error::LabelModel(format!(
            "degenerate eigenvalues (gap {gap:.3e})"
        )));
    }
    Ok(EigenPairs {
        values,
        vectors,
        max_imag,
        min_gap: gap,
    })
}

/// Closed form for 2x2 matrices.
pub fn eigen_2x2(m: &DMatrix<f64>) -> Result<EigenPairs> {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let half_tr = 0.5 * (a + d);
    let disc = half_tr * half_tr - (a * d - b * c);
    let (root, imag) = if disc >= 0.0 {
        (disc.sqrt(), 0.0)
    } else {
        (0.0, (-disc).sqrt())
    };
    let values = vec![half_tr + root, half_tr - root];
    let mut vectors = DMatrix::zeros(2, 2);
    for (k, &l) in values.iter().enumerate() {
        // two candidate null vectors of (m - l I); keep the better conditioned
        let u = [b, l - a];
        let v = [l - d, c];
        let pick = if u[0].hypot(u[1]) >= v[0].hypot(v[1]) { u } else { v };
        let norm = pick[0].hypot(pick[1]);
        let pick = if norm > 0.0 { [pick[0] / norm, pick[1] / norm] } else { [(1 - k) as f64, k as f64] };
        vectors[(0, k)] = pick[0];
        vectors[(1, k)] = pick[1];
    }
    check(values, vectors, imag)
}

/// Eigenpairs through the real Schur form, with each eigenvector taken as the
/// right singular vector of `m - lambda I` for the smallest singular value.
pub fn eigen_general(m: &DMatrix<f64>) -> Result<EigenPairs> {
    let n = m.nrows();
    let complex = m
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?
        .complex_eigenvalues();
    let max_imag = complex.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let mut values: Vec<f64> = complex.iter().map(|z| z.re).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &l) in values.iter().enumerate() {
        let shifted = m - DMatrix::identity(n, n) * l;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let v: DVector<f64> = v_t.row(idx).transpose();
        vectors.set_column(k, &v);
    }
    check(values, vectors, max_imag)
}

pub fn eigen(m: &DMatrix<f64>) -> Result<EigenPairs> {
    if m.nrows() == 2 {
        eigen_2x2(m)
    } else {
        eigen_general(m)
    }
}
