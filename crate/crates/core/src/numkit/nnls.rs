//! Lawson–Hanson active-set non-negative least squares.
//!
//! Two entry points share the same active-set logic: [`nnls`] works on the
//! dense system and solves each passive-set subproblem by Householder QR,
//! [`nnls_normal`] works on precomputed normal equations and is meant for the
//! many tiny, well-conditioned subproblems of the ALS steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative KKT tolerance on the dual vector.
const KKT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    /// Inner (subproblem) iterations used.
    pub iterations: usize,
}

/// Minimizes `||A x - b||` subject to `x >= 0`.
///
/// The active set is driven until the dual vector `w = A^T (b - A x)`
/// satisfies `w_j <= 1e-10 * ||A||_F * ||b||` on every active coordinate.
/// Returns a convergence error after `3n` subproblem solves.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("nnls needs a non-empty matrix"));
    }
    if b.len() != m {
        return Err(Error::invalid(format!("nnls: A has {m} rows, b has {}", b.len())));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numeric("nnls: non-finite input"));
    }
    let a_norm = a.norm();
    let b_norm = b.norm();
    let tol = KKT_TOL * a_norm * b_norm;
    let dep_tol = 1e-12 * a_norm;

    let subproblem = |passive: &[usize]| -> Option<DVector<f64>> {
        let ap = a.select_columns(passive);
        solve_ls_qr(ap, b, dep_tol)
    };
    let dual = |x: &DVector<f64>| a.tr_mul(&(b - a * x));

    let (x, iterations) = active_set(n, tol, dual, subproblem)?;
    let residual_norm = (a * &x - b).norm();
    Ok(NnlsSolution { x, residual_norm, iterations })
}

/// Same problem as [`nnls`], given `A^T A`, `A^T b` and `||b||`.
///
/// The reported `residual_norm` is recovered from the normal equations as
/// `sqrt(max(0, b^T b - 2 x^T A^T b + x^T A^T A x))`.
pub fn nnls_normal(ata: &DMatrix<f64>, atb: &DVector<f64>, b_norm: f64) -> Result<NnlsSolution> {
    let n = ata.nrows();
    if n == 0 || ata.ncols() != n || atb.len() != n {
        return Err(Error::invalid("nnls_normal: shape mismatch"));
    }
    if ata.iter().chain(atb.iter()).any(|v| !v.is_finite()) || !b_norm.is_finite() {
        return Err(Error::numeric("nnls: non-finite input"));
    }
    let a_norm = ata.trace().max(0.0).sqrt();
    let tol = KKT_TOL * a_norm * b_norm;
    let dep_tol = 1e-12 * a_norm;

    let subproblem = |passive: &[usize]| -> Option<DVector<f64>> {
        let k = passive.len();
        let g = DMatrix::from_fn(k, k, |i, j| ata[(passive[i], passive[j])]);
        let r = DVector::from_fn(k, |i, _| atb[passive[i]]);
        // A diagonal entry of the Cholesky factor is the distance of a column
        // from the span of the previous ones.
        let chol = g.cholesky()?;
        if chol.l_dirty().diagonal().iter().any(|&d| d <= dep_tol) {
            return None;
        }
        Some(chol.solve(&r))
    };
    let dual = |x: &DVector<f64>| atb - ata * x;

    let (x, iterations) = active_set(n, tol, dual, subproblem)?;
    let fit = b_norm * b_norm - 2.0 * x.dot(atb) + x.dot(&(ata * &x));
    Ok(NnlsSolution { x, residual_norm: fit.max(0.0).sqrt(), iterations })
}

/// Least squares on a column subset by Householder QR. `None` when the
/// columns are numerically dependent.
fn solve_ls_qr(ap: DMatrix<f64>, b: &DVector<f64>, dep_tol: f64) -> Option<DVector<f64>> {
    let (m, k) = ap.shape();
    if k > m {
        return None;
    }
    let qr = ap.qr();
    let r = qr.r();
    if r.diagonal().iter().any(|d| d.abs() <= dep_tol) {
        return None;
    }
    let qtb = qr.q().tr_mul(b);
    r.solve_upper_triangular(&qtb)
}

/// The Lawson–Hanson loop, independent of how subproblems are solved.
fn active_set<D, S>(n: usize, tol: f64, dual: D, subproblem: S) -> Result<(DVector<f64>, usize)>
where
    D: Fn(&DVector<f64>) -> DVector<f64>,
    S: Fn(&[usize]) -> Option<DVector<f64>>,
{
    let max_iter = 3 * n;
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    // Coordinates that failed to enter the passive set since x last changed.
    let mut blocked = vec![false; n];
    let mut iterations = 0;

    if tol == 0.0 {
        // b == 0 (or A == 0): x = 0 is optimal.
        return Ok((x, 0));
    }

    loop {
        let w = dual(&x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .fold(None::<usize>, |best, j| match best {
                Some(b) if w[b] >= w[j] => Some(b),
                _ => Some(j),
            });
        let Some(enter) = candidate else { break };
        passive[enter] = true;

        let mut first = true;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Convergence(format!(
                    "nnls exceeded {max_iter} iterations"
                )));
            }
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let z = match subproblem(&idx) {
                Some(z) => z,
                None if first => {
                    // The entering column is dependent on the passive set.
                    passive[enter] = false;
                    blocked[enter] = true;
                    break;
                }
                None => return Err(Error::numeric("nnls: singular passive-set subproblem")),
            };
            if first {
                let pos = idx.iter().position(|&j| j == enter).unwrap();
                if z[pos] <= 0.0 {
                    // Rounding put the entering variable at the bound.
                    passive[enter] = false;
                    blocked[enter] = true;
                    break;
                }
            }
            first = false;

            if z.iter().all(|&v| v > 0.0) {
                for (&j, &v) in idx.iter().zip(z.iter()) {
                    x[j] = v;
                }
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }
            // Step toward z until the first passive variable hits zero.
            let mut alpha = f64::INFINITY;
            let mut hit = usize::MAX;
            for (&j, &v) in idx.iter().zip(z.iter()) {
                if v <= 0.0 {
                    let step = x[j] / (x[j] - v);
                    if step < alpha {
                        alpha = step;
                        hit = j;
                    }
                }
            }
            for (&j, &v) in idx.iter().zip(z.iter()) {
                x[j] += alpha * (v - x[j]);
                if j == hit || x[j] <= 0.0 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            blocked.iter_mut().for_each(|b| *b = false);
        }
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok((x, iterations))
}
