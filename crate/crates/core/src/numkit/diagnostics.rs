//! Explained variance and lack of fit of a bilinear model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows per block in the fixed-order reductions below.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `100 (1 - SSE / SSD)`; negative for fits worse than the zero model.
    pub explained_variance_pct: f64,
    /// `100 sqrt(SSE / SSD)`.
    pub lack_of_fit_pct: f64,
    pub sum_sq_data: f64,
    pub sum_sq_residual: f64,
}

impl FitDiagnostics {
    pub fn from_sums(sum_sq_data: f64, sum_sq_residual: f64) -> Result<Self> {
        if !(sum_sq_data > 0.0) || !sum_sq_data.is_finite() {
            return Err(Error::numeric("data has zero energy; fit diagnostics undefined"));
        }
        if !(sum_sq_residual >= 0.0) || !sum_sq_residual.is_finite() {
            return Err(Error::numeric("residual sum of squares is not finite"));
        }
        let ratio = sum_sq_residual / sum_sq_data;
        Ok(FitDiagnostics {
            explained_variance_pct: 100.0 * (1.0 - ratio),
            lack_of_fit_pct: 100.0 * ratio.sqrt(),
            sum_sq_data,
            sum_sq_residual,
        })
    }
}

/// Diagnostics of `D ~ C S^T` with `D: m x t`, `C: m x k`, `S: t x k`,
/// computed globally over every entry of `D`.
pub fn fit_diagnostics(d: &DMatrix<f64>, c: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<FitDiagnostics> {
    let (m, t) = d.shape();
    if c.nrows() != m || s.nrows() != t || c.ncols() != s.ncols() {
        return Err(Error::invalid(format!(
            "shape mismatch: D {m}x{t}, C {}x{}, S {}x{}",
            c.nrows(),
            c.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    let data: Vec<f64> = d.row_iter().map(|r| r.norm_squared()).collect();
    let resid = residual_row_sums(d, c, s, false);
    FitDiagnostics::from_sums(blocked_sum(&data), blocked_sum(&resid))
}

/// Per-row squared residual `||d_i - c_i S^T||^2`. The row terms are
/// independent, so the parallel path yields bitwise-identical values.
pub fn residual_row_sums(d: &DMatrix<f64>, c: &DMatrix<f64>, s: &DMatrix<f64>, parallel: bool) -> Vec<f64> {
    let (m, t) = d.shape();
    let k = c.ncols();
    let row = |i: usize| -> f64 {
        let mut acc = 0.0;
        for j in 0..t {
            let mut fit = 0.0;
            for q in 0..k {
                fit += c[(i, q)] * s[(j, q)];
            }
            let e = d[(i, j)] - fit;
            acc += e * e;
        }
        acc
    };
    if parallel {
        use rayon::prelude::*;
        (0..m).into_par_iter().map(row).collect()
    } else {
        (0..m).map(row).collect()
    }
}

/// Sums fixed-size blocks sequentially, then combines the block totals
/// pairwise. The order depends only on the length of `values`.
pub fn blocked_sum(values: &[f64]) -> f64 {
    let partial: Vec<f64> = values.chunks(BLOCK).map(|b| b.iter().sum()).collect();
    pairwise(&partial)
}

fn pairwise(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise(&v[..n / 2]) + pairwise(&v[n / 2..]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit() {
        let c = DMatrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        let s = DMatrix::from_vec(2, 1, vec![0.6, 0.8]);
        let d = &c * s.transpose();
        let f = fit_diagnostics(&d, &c, &s).unwrap();
        assert_eq!(f.explained_variance_pct, 100.0);
        assert_eq!(f.lack_of_fit_pct, 0.0);
    }

    #[test]
    fn small_residual_ratio_gives_ninety_nine_point_eight() {
        let f = FitDiagnostics::from_sums(1.0, 0.002).unwrap();
        assert!((f.explained_variance_pct - 99.8).abs() < 1e-12);
    }

    #[test]
    fn lof_and_ev_arithmetic() {
        let f = FitDiagnostics::from_sums(1.0, 0.0529).unwrap();
        assert!((f.lack_of_fit_pct - 23.0).abs() < 1e-12);
        assert!((f.explained_variance_pct - 94.71).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let d = DMatrix::zeros(3, 2);
        assert!(fit_diagnostics(&d, &DMatrix::zeros(2, 1), &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn zero_data_is_an_error() {
        assert!(FitDiagnostics::from_sums(0.0, 0.0).is_err());
    }

    #[test]
    fn blocked_sum_is_order_fixed() {
        let v: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        assert_eq!(blocked_sum(&v), blocked_sum(&v.clone()));
        let naive: f64 = v.iter().sum();
        assert!((blocked_sum(&v) - naive).abs() < 1e-12);
    }
}
