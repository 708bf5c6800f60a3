//! Pure-pixel selection (SIMPLISMA) for initial spectral estimates.
//!
//! Rows of `D` (pixels) are the candidate variables: an echo channel mixes
//! every T2 population, whereas a pixel can hold a single one. Purity of a row
//! is its standard deviation over echoes divided by its mean plus an offset
//! `alpha = offset_fraction * max row mean`; after the first pick each purity
//! is weighted by the determinant of the correlation-around-origin matrix of
//! the rows already chosen plus the candidate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_OFFSET_FRACTION: f64 = 0.05;

/// Below this determinant weight a candidate adds no new direction.
const MIN_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuritySelection {
    /// Row indices of `D`, in selection order.
    pub selected_rows: Vec<usize>,
    /// Weighted purity of each pick at the time it was chosen.
    pub purity_values: Vec<f64>,
    pub offset_fraction: f64,
}

/// Returns `S0` (`t x k`, unit-norm columns) and the selection that produced it.
pub fn simplisma_init(d: &DMatrix<f64>, k: usize, offset_fraction: f64) -> Result<(DMatrix<f64>, PuritySelection)> {
    let (m, t) = d.shape();
    if k == 0 || k > m.min(t) {
        return Err(Error::invalid(format!(
            "component count {k} must lie in 1..={}",
            m.min(t)
        )));
    }
    if !(offset_fraction > 0.0 && offset_fraction.is_finite()) {
        return Err(Error::invalid("SIMPLISMA offset must be positive"));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("SIMPLISMA input holds non-finite values"));
    }

    let tf = t as f64;
    let mean: Vec<f64> = d.row_iter().map(|r| r.sum() / tf).collect();
    let std: Vec<f64> = d
        .row_iter()
        .zip(&mean)
        .map(|(r, &mu)| (r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / tf).sqrt())
        .collect();
    let max_mean = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max_mean > 0.0) {
        return Err(Error::numeric("SIMPLISMA needs rows with positive mean intensity"));
    }
    let alpha = offset_fraction * max_mean;

    let purity: Vec<f64> = mean
        .iter()
        .zip(&std)
        .map(|(&mu, &sd)| if mu + alpha > 0.0 { sd / (mu + alpha) } else { 0.0 })
        .collect();
    // Rows scaled by sqrt(mu^2 + (sd + alpha)^2) for the correlation matrix.
    let scale: Vec<f64> = mean
        .iter()
        .zip(&std)
        .map(|(&mu, &sd)| (mu * mu + (sd + alpha) * (sd + alpha)).sqrt())
        .collect();
    let corr = |i: usize, j: usize| -> f64 {
        d.row(i).dot(&d.row(j)) / (scale[i] * scale[j] * tf)
    };

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for pick in 0..k {
        let p = selected.len();
        // Correlation block of the rows chosen so far.
        let base = DMatrix::from_fn(p, p, |a, b| corr(selected[a], selected[b]));
        let mut best: Option<(usize, f64)> = None;
        let mut max_weight = 0.0f64;
        for i in 0..m {
            if selected.contains(&i) {
                continue;
            }
            let weight = if pick == 0 {
                1.0
            } else {
                let mut g = DMatrix::zeros(p + 1, p + 1);
                g.view_mut((0, 0), (p, p)).copy_from(&base);
                for a in 0..p {
                    let r = corr(selected[a], i);
                    g[(a, p)] = r;
                    g[(p, a)] = r;
                }
                g[(p, p)] = corr(i, i);
                g.determinant()
            };
            max_weight = max_weight.max(weight);
            let score = weight * purity[i];
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        if max_weight < MIN_WEIGHT {
            return Err(Error::numeric(format!(
                "insufficient distinct pure variables: found {p}, requested {k}"
            )));
        }
        let (row, score) = best.expect("at least one candidate row");
        if !(score > 0.0) {
            return Err(Error::numeric(format!(
                "insufficient distinct pure variables: found {p}, requested {k}"
            )));
        }
        selected.push(row);
        values.push(score);
    }

    let mut s0 = DMatrix::zeros(t, k);
    for (c, &row) in selected.iter().enumerate() {
        let r = d.row(row);
        let norm = r.norm();
        for j in 0..t {
            s0[(j, c)] = r[j] / norm;
        }
    }
    Ok((s0, PuritySelection { selected_rows: selected, purity_values: values, offset_fraction }))
}
