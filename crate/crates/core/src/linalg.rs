//! Small dense linear-algebra helpers shared by the geometry and model code.

use nalgebra::{Cholesky, Dyn, QR};

use crate::{Error, Matrix, Result, Vector};

/// Relative pivot size below which a triangular factor is treated as singular.
const RANK_TOL: f64 = 1e-12;

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// `log(sum(exp(terms)))`; `-inf` summands are dropped and an all-`-inf`
/// input yields `-inf`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms
        .iter()
        .filter(|t| **t > f64::NEG_INFINITY)
        .map(|t| (t - max).exp())
        .sum();
    max + sum.ln()
}

/// Full QR factorization of a tall `n × m` matrix (`m < n`) with the column
/// signs of `Q` fixed so that `diag(R) >= 0`.
///
/// Returns `Q^T` (`n × n`); its first `m` rows span the column space of the
/// input and the remaining rows its orthogonal complement.
pub fn full_q_transpose(tall: &Matrix) -> Option<Matrix> {
    let (n, m) = tall.shape();
    debug_assert!(m <= n);
    let qr = QR::new(tall.clone());
    let mut qt = Matrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let r = &qt.rows(0, m) * tall;
    let scale = tall.iter().fold(0.0_f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    for i in 0..m {
        let d = r[(i, i)];
        if !d.is_finite() || d.abs() <= RANK_TOL * scale {
            return None;
        }
        if d < 0.0 {
            qt.row_mut(i).neg_mut();
        }
    }
    Some(qt)
}

/// Orthonormal basis (as columns) of the null space of a full-row-rank
/// `m × n` matrix.
pub fn null_space_basis(wide: &Matrix) -> Option<Matrix> {
    let (m, n) = wide.shape();
    let qt = full_q_transpose(&wide.transpose())?;
    Some(qt.rows(m, n - m).transpose())
}

pub fn cholesky(m: &Matrix, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// `log det` of an SPD matrix from its Cholesky factor.
pub fn log_det_spd(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Orthogonal `Ω` minimizing `‖source Ω - target‖_F` (orthogonal Procrustes).
pub fn procrustes_rotation(source: &Matrix, target: &Matrix) -> Matrix {
    let m = source.transpose() * target;
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    u * vt
}

/// Symmetric part `(m + m^T)/2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}
