//! Constrained alternating least squares on the augmented matrix
//! `D_aug = C_aug S^T + E_aug`.
//!
//! Each iteration solves for `C` row by row with `S` fixed, then for `S` echo
//! by echo with `C` fixed, and then applies the spectral constraints in order:
//! decay-shape projection of flagged columns, then unit-norm scaling of `S`
//! with the inverse factor moved into `C`. The iterate with the lowest lack of
//! fit is returned.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{MultisetStack, SeriesLayout};
use crate::error::{Error, Result};
use crate::ilt::{IltParams, IltSolver, T2Grid};
use crate::numkit::{blocked_sum, nnls_normal, residual_row_sums, FitDiagnostics};

/// Lack of fit (percent) below which the factorization is treated as exact.
const EXACT_LOF_PCT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Euclidean,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub nonneg_c: bool,
    pub nonneg_s: bool,
    pub normalize_s: Normalization,
    /// One flag per component; flagged spectra are projected onto
    /// non-negative sums of decaying exponentials.
    pub shape_decay: Vec<bool>,
    pub ilt_projection: IltParams,
}

impl ConstraintSpec {
    /// Non-negative `C` and `S`, unit-norm spectra, no shape constraint.
    pub fn nonneg_normalized(k: usize) -> Self {
        ConstraintSpec {
            nonneg_c: true,
            nonneg_s: true,
            normalize_s: Normalization::Euclidean,
            shape_decay: vec![false; k],
            ilt_projection: default_projection_params(),
        }
    }

    /// Plain least squares in both directions.
    pub fn unconstrained(k: usize) -> Self {
        ConstraintSpec {
            nonneg_c: false,
            nonneg_s: false,
            normalize_s: Normalization::None,
            shape_decay: vec![false; k],
            ilt_projection: default_projection_params(),
        }
    }

    pub fn with_shape(mut self, flags: Vec<bool>) -> Self {
        self.shape_decay = flags;
        self
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.shape_decay.len() != k {
            return Err(Error::invalid(format!(
                "shape_decay has {} flags for {k} components",
                self.shape_decay.len()
            )));
        }
        Ok(())
    }
}

/// Decay-shape projection runs at a fixed, small regularization weight on the
/// default grid.
pub fn default_projection_params() -> IltParams {
    IltParams::fixed(T2Grid::default(), 1e-3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsOptions {
    pub max_iterations: usize,
    /// Stop when the lack of fit changes by less than this many percent
    /// (relative) between iterations.
    pub lof_rel_tol_pct: f64,
    /// Consecutive lack-of-fit increases that abort the run.
    pub divergence_patience: usize,
    /// Seeds the re-initialization of spectra that collapse to zero.
    pub seed: u64,
    /// Solve the row and column subproblems on the rayon pool.
    pub parallel: bool,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions {
            max_iterations: 100,
            lof_rel_tol_pct: 0.1,
            divergence_patience: 20,
            seed: 0,
            parallel: false,
        }
    }
}

impl AlsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.divergence_patience == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        if !(self.lof_rel_tol_pct > 0.0) {
            return Err(Error::invalid("lof_rel_tol_pct must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlsStatus {
    Converged,
    MaxIter,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    /// `sum(pixels) x k`.
    pub c_aug: DMatrix<f64>,
    /// `n_echoes x k`.
    pub s: DMatrix<f64>,
    pub diagnostics: FitDiagnostics,
    pub lof_trace: Vec<f64>,
    pub status: AlsStatus,
    /// 1-based iteration the returned iterate came from.
    pub best_iteration: usize,
    pub constraints: ConstraintSpec,
    pub block_offsets: Vec<usize>,
}

impl DecompositionResult {
    pub fn n_components(&self) -> usize {
        self.s.ncols()
    }
}

pub fn als_decompose(
    stack: &MultisetStack,
    s0: &DMatrix<f64>,
    constraints: &ConstraintSpec,
    opts: &AlsOptions,
) -> Result<DecompositionResult> {
    let d = stack.augmented();
    als_decompose_data(&d, &stack.echo_times_ms(), stack.row_offsets(), s0, constraints, opts)
}

/// ALS on an explicit data matrix. `block_offsets` is copied into the result.
pub fn als_decompose_data(
    d: &DMatrix<f64>,
    echo_times_ms: &[f64],
    block_offsets: &[usize],
    s0: &DMatrix<f64>,
    constraints: &ConstraintSpec,
    opts: &AlsOptions,
) -> Result<DecompositionResult> {
    let (m, t) = d.shape();
    let k = s0.ncols();
    if s0.nrows() != t {
        return Err(Error::invalid(format!("S0 has {} rows, data has {t} echoes", s0.nrows())));
    }
    if k == 0 || k > t {
        return Err(Error::invalid(format!("component count {k} must lie in 1..={t}")));
    }
    if s0.iter().any(|v| !v.is_finite()) || d.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("ALS input holds non-finite values"));
    }
    if let Some(q) = (0..k).find(|&q| s0.column(q).iter().all(|&v| v == 0.0)) {
        return Err(Error::invalid(format!("S0 is rank deficient: column {q} is all zeros")));
    }
    if echo_times_ms.len() != t {
        return Err(Error::invalid("echo time count does not match data columns"));
    }
    constraints.validate(k)?;
    opts.validate()?;

    let projector = if constraints.shape_decay.iter().any(|&f| f) {
        Some(IltSolver::new(echo_times_ms, &constraints.ilt_projection)?)
    } else {
        None
    };
    let row_ss: Vec<f64> = d.row_iter().map(|r| r.norm_squared()).collect();
    let data_ss = blocked_sum(&row_ss);
    if !(data_ss > 0.0) {
        return Err(Error::numeric("data matrix is all zeros"));
    }
    let dt = d.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut s = s0.clone();
    let mut trace = Vec::new();
    let mut best: Option<(DMatrix<f64>, DMatrix<f64>, f64, usize)> = None;
    let mut prev: Option<f64> = None;
    let mut increases = 0usize;
    let mut status = AlsStatus::MaxIter;

    for iter in 1..=opts.max_iterations {
        let mut c = solve_rows(d, &s, constraints.nonneg_c, opts.parallel)?;
        s = solve_rows(&dt, &c, constraints.nonneg_s, opts.parallel)?;

        for q in 0..k {
            if s.column(q).iter().all(|&v| v == 0.0) {
                // The component vanished; restart its spectrum from a data row.
                let row = d.row(rng.gen_range(0..m)).transpose();
                let norm = row.norm();
                if norm > 0.0 {
                    s.set_column(q, &(row / norm));
                }
                log::debug!("iteration {iter}: component {q} collapsed, re-seeded");
            }
        }
        if let Some(proj) = &projector {
            for q in (0..k).filter(|&q| constraints.shape_decay[q]) {
                let col: Vec<f64> = s.column(q).iter().copied().collect();
                let p = proj.project(&col)?;
                s.set_column(q, &DVector::from_vec(p));
            }
        }
        if constraints.normalize_s == Normalization::Euclidean {
            normalize_columns(&mut c, &mut s);
        }

        let resid = residual_row_sums(d, &c, &s, opts.parallel);
        let lof = 100.0 * (blocked_sum(&resid) / data_ss).sqrt();
        trace.push(lof);
        log::debug!("iteration {iter}: lack of fit {lof:.6} %");

        if best.as_ref().map_or(true, |b| lof < b.2) {
            best = Some((c, s.clone(), lof, iter));
        }
        if lof < EXACT_LOF_PCT {
            status = AlsStatus::Converged;
            break;
        }
        if let Some(p) = prev {
            increases = if lof > p { increases + 1 } else { 0 };
            if increases >= opts.divergence_patience {
                status = AlsStatus::Diverged;
                break;
            }
            if 100.0 * (p - lof).abs() / p < opts.lof_rel_tol_pct {
                status = AlsStatus::Converged;
                break;
            }
        }
        prev = Some(lof);
    }

    let (c, s, _, best_iteration) = best.expect("at least one iteration ran");
    let resid = residual_row_sums(d, &c, &s, opts.parallel);
    let diagnostics = FitDiagnostics::from_sums(data_ss, blocked_sum(&resid))?;
    Ok(DecompositionResult {
        c_aug: c,
        s,
        diagnostics,
        lof_trace: trace,
        status,
        best_iteration,
        constraints: constraints.clone(),
        block_offsets: block_offsets.to_vec(),
    })
}

/// Solves `min ||basis x - y_i||` for every row `y_i` of `y`, returning the
/// solutions as rows. With `nonneg` each row is an NNLS problem on the shared
/// normal matrix; otherwise one pseudo-inverse serves all rows.
fn solve_rows(y: &DMatrix<f64>, basis: &DMatrix<f64>, nonneg: bool, parallel: bool) -> Result<DMatrix<f64>> {
    let (n, k) = (y.nrows(), basis.ncols());
    if !nonneg {
        let pinv = basis
            .clone()
            .pseudo_inverse(1e-13 * basis.norm())
            .map_err(|e| Error::numeric(format!("pseudo-inverse failed: {e}")))?;
        return Ok(y * pinv.transpose());
    }
    let gram = basis.tr_mul(basis);
    let rhs = y * basis; // row i holds basis^T y_i
    let solve = |i: usize| -> Result<DVector<f64>> {
        let atb = rhs.row(i).transpose();
        let b_norm = y.row(i).norm();
        Ok(nnls_normal(&gram, &atb, b_norm)?.x)
    };
    let rows: Vec<DVector<f64>> = if parallel {
        (0..n).into_par_iter().map(solve).collect::<Result<_>>()?
    } else {
        (0..n).map(solve).collect::<Result<_>>()?
    };
    let mut out = DMatrix::zeros(n, k);
    for (i, r) in rows.iter().enumerate() {
        out.set_row(i, &r.transpose());
    }
    Ok(out)
}

/// Scales each `S` column to unit norm and its `C` column by the inverse
/// factor, leaving `C S^T` unchanged.
pub fn normalize_columns(c: &mut DMatrix<f64>, s: &mut DMatrix<f64>) {
    for q in 0..s.ncols() {
        let norm = s.column(q).norm();
        if norm > 0.0 {
            s.column_mut(q).unscale_mut(norm);
            c.column_mut(q).scale_mut(norm);
        }
    }
}

/// Slices `C_aug` into one `pixels x k` block per frame.
pub fn split_concentrations(result: &DecompositionResult, layout: &SeriesLayout) -> Result<Vec<DMatrix<f64>>> {
    let offsets = &layout.row_offsets;
    if result.block_offsets != *offsets || result.c_aug.nrows() != layout.n_rows() {
        return Err(Error::invalid("block offsets of the result do not match the series"));
    }
    Ok(offsets
        .windows(2)
        .map(|w| result.c_aug.rows(w[0], w[1] - w[0]).into_owned())
        .collect())
}
