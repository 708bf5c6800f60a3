//! Non-negative Tikhonov inversion of multi-echo decays onto a log-spaced T2
//! grid, L-curve selection of the regularization weight, and the decay-shape
//! projection used by the ALS engine.
//!
//! Regularization weights are expressed relative to the spectral norm of the
//! kernel, so a policy means the same thing for any echo train or grid.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::nnls;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridBounds", into = "GridBounds")]
pub struct T2Grid {
    t2_min_ms: f64,
    t2_max_ms: f64,
    n_points: usize,
    values: Vec<f64>,
}

/// Serialized form of a grid; the points are rebuilt on load.
#[derive(Serialize, Deserialize)]
struct GridBounds {
    t2_min_ms: f64,
    t2_max_ms: f64,
    n_points: usize,
}

impl TryFrom<GridBounds> for T2Grid {
    type Error = Error;

    fn try_from(b: GridBounds) -> Result<Self> {
        T2Grid::log_spaced(b.t2_min_ms, b.t2_max_ms, b.n_points)
    }
}

impl From<T2Grid> for GridBounds {
    fn from(g: T2Grid) -> Self {
        GridBounds { t2_min_ms: g.t2_min_ms, t2_max_ms: g.t2_max_ms, n_points: g.n_points }
    }
}

impl T2Grid {
    pub fn log_spaced(t2_min_ms: f64, t2_max_ms: f64, n_points: usize) -> Result<Self> {
        if !(t2_min_ms > 0.0 && t2_max_ms > t2_min_ms && t2_max_ms.is_finite()) {
            return Err(Error::invalid(format!(
                "T2 grid bounds must satisfy 0 < min < max, got [{t2_min_ms}, {t2_max_ms}]"
            )));
        }
        if n_points < 2 {
            return Err(Error::invalid("T2 grid needs at least two points"));
        }
        let (lo, hi) = (t2_min_ms.ln(), t2_max_ms.ln());
        let step = (hi - lo) / (n_points - 1) as f64;
        let mut values: Vec<f64> = (0..n_points).map(|i| (lo + step * i as f64).exp()).collect();
        values[0] = t2_min_ms;
        values[n_points - 1] = t2_max_ms;
        Ok(T2Grid { t2_min_ms, t2_max_ms, n_points, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.t2_min_ms, self.t2_max_ms)
    }
}

impl Default for T2Grid {
    fn default() -> Self {
        T2Grid::log_spaced(1.0, 1000.0, 64).expect("default grid is valid")
    }
}

/// How the Tikhonov weight is chosen. Values multiply `||K||_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    Fixed(f64),
    Lcurve { min: f64, max: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IltParams {
    pub grid: T2Grid,
    pub lambda: LambdaPolicy,
}

impl Default for IltParams {
    fn default() -> Self {
        IltParams {
            grid: T2Grid::default(),
            lambda: LambdaPolicy::Lcurve { min: 1e-4, max: 1e1, count: 25 },
        }
    }
}

impl IltParams {
    pub fn fixed(grid: T2Grid, relative_lambda: f64) -> Self {
        IltParams { grid, lambda: LambdaPolicy::Fixed(relative_lambda) }
    }

    /// Checks the regularization policy.
    pub fn validated(self) -> Result<Self> {
        match self.lambda {
            LambdaPolicy::Fixed(l) if !(l > 0.0 && l.is_finite()) => {
                return Err(Error::invalid(format!("lambda must be positive, got {l}")))
            }
            LambdaPolicy::Lcurve { min, max, .. } if !(min > 0.0 && max > min && max.is_finite()) => {
                return Err(Error::invalid(format!("L-curve range [{min}, {max}] is invalid")))
            }
            _ => {}
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSpectrum {
    pub t2_ms: Vec<f64>,
    /// Exactly non-negative, in the units of the input signal.
    pub amplitudes: Vec<f64>,
    /// Absolute Tikhonov weight.
    pub lambda_used: f64,
    /// `||K x - s||` in signal units.
    pub residual_norm: f64,
    /// Largest absolute input value; the solve runs on `s / signal_scale`.
    pub signal_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcurvePoint {
    pub residual_norm: f64,
    pub solution_norm: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub t2_ms: f64,
    pub amplitude: f64,
    pub fraction_of_total: f64,
}

/// `K[m, j] = exp(-t_m / T2_j)`.
pub fn build_kernel(echo_times_ms: &[f64], grid: &T2Grid) -> Result<DMatrix<f64>> {
    if echo_times_ms.is_empty() {
        return Err(Error::invalid("no echo times"));
    }
    if echo_times_ms.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("echo times must be positive"));
    }
    if echo_times_ms.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("echo times must be ascending"));
    }
    let t2 = grid.values();
    Ok(DMatrix::from_fn(echo_times_ms.len(), t2.len(), |m, j| {
        (-echo_times_ms[m] / t2[j]).exp()
    }))
}

/// A kernel with its spectral norm, reused across many solves on one echo train.
#[derive(Debug, Clone)]
pub struct IltSolver {
    kernel: DMatrix<f64>,
    kernel_norm: f64,
    params: IltParams,
}

impl IltSolver {
    pub fn new(echo_times_ms: &[f64], params: &IltParams) -> Result<Self> {
        let params = params.clone().validated()?;
        let kernel = build_kernel(echo_times_ms, &params.grid)?;
        let kernel_norm = kernel.singular_values().max();
        Ok(IltSolver { kernel, kernel_norm, params })
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn kernel_norm(&self) -> f64 {
        self.kernel_norm
    }

    pub fn params(&self) -> &IltParams {
        &self.params
    }

    fn check_signal(&self, signal: &[f64]) -> Result<f64> {
        if signal.len() != self.kernel.nrows() {
            return Err(Error::invalid(format!(
                "signal has {} samples, echo train has {}",
                signal.len(),
                self.kernel.nrows()
            )));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("signal holds non-finite values"));
        }
        let scale = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Err(Error::invalid("empty signal"));
        }
        Ok(scale)
    }

    /// Solves the augmented system `[K; lambda I] x = [s; 0]` with `x >= 0`
    /// for an already normalized signal. Returns `(x, ||Kx - s||)`.
    fn solve_normalized(&self, s: &DVector<f64>, lambda: f64) -> Result<(DVector<f64>, f64)> {
        let (m, n) = self.kernel.shape();
        let mut a = DMatrix::zeros(m + n, n);
        a.rows_mut(0, m).copy_from(&self.kernel);
        for j in 0..n {
            a[(m + j, j)] = lambda;
        }
        let mut b = DVector::zeros(m + n);
        b.rows_mut(0, m).copy_from(s);
        let sol = nnls(&a, &b)?;
        let resid = (&self.kernel * &sol.x - s).norm();
        Ok((sol.x, resid))
    }

    fn lambda_ladder(&self, min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
        if count < 3 {
            return Err(Error::invalid("L-curve needs at least 3 lambda candidates"));
        }
        let (lo, hi) = (min.ln(), max.ln());
        Ok((0..count)
            .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp() * self.kernel_norm)
            .collect())
    }

    /// L-curve over the configured range; returns the weight at maximum
    /// curvature of the log-log curve together with every sampled point.
    pub fn select_lambda(&self, signal: &[f64]) -> Result<(f64, Vec<LcurvePoint>)> {
        let LambdaPolicy::Lcurve { min, max, count } = self.params.lambda else {
            return Err(Error::invalid("select_lambda requires an L-curve policy"));
        };
        let scale = self.check_signal(signal)?;
        let s = DVector::from_iterator(signal.len(), signal.iter().map(|v| v / scale));
        let mut points = Vec::with_capacity(count);
        for lambda in self.lambda_ladder(min, max, count)? {
            let (x, resid) = self.solve_normalized(&s, lambda)?;
            points.push(LcurvePoint {
                residual_norm: resid * scale,
                solution_norm: x.norm() * scale,
                lambda,
            });
        }
        let best = max_curvature_index(&points);
        Ok((points[best].lambda, points))
    }

    pub fn solve(&self, signal: &[f64]) -> Result<RelaxationSpectrum> {
        let scale = self.check_signal(signal)?;
        let lambda = match self.params.lambda {
            LambdaPolicy::Fixed(rel) => rel * self.kernel_norm,
            LambdaPolicy::Lcurve { .. } => self.select_lambda(signal)?.0,
        };
        let s = DVector::from_iterator(signal.len(), signal.iter().map(|v| v / scale));
        let (x, resid) = self.solve_normalized(&s, lambda)?;
        Ok(RelaxationSpectrum {
            t2_ms: self.params.grid.values().to_vec(),
            amplitudes: x.iter().map(|v| v * scale).collect(),
            lambda_used: lambda,
            residual_norm: resid * scale,
            signal_scale: scale,
        })
    }

    /// Replaces a decay by its regularized non-negative multi-exponential
    /// fit `K x`. A zero column is returned unchanged.
    pub fn project(&self, column: &[f64]) -> Result<Vec<f64>> {
        if column.len() == self.kernel.nrows() && column.iter().all(|&v| v == 0.0) {
            return Ok(column.to_vec());
        }
        let spec = self.solve(column)?;
        let x = DVector::from_vec(spec.amplitudes);
        Ok((&self.kernel * x).iter().copied().collect())
    }
}

/// Index of the interior point with the largest signed Menger curvature of
/// `(log residual, log solution norm)`, traversed in increasing lambda.
fn max_curvature_index(points: &[LcurvePoint]) -> usize {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            (p.residual_norm.max(f64::MIN_POSITIVE).ln(), p.solution_norm.max(f64::MIN_POSITIVE).ln())
        })
        .collect();
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..xy.len() - 1 {
        let (a, b, c) = (xy[i - 1], xy[i], xy[i + 1]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        let dist = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        let denom = dist(a, b) * dist(b, c) * dist(a, c);
        let kappa = if denom > 0.0 { 2.0 * cross / denom } else { 0.0 };
        if kappa > best.1 {
            best = (i, kappa);
        }
    }
    best.0
}

pub fn ilt_solve(signal: &[f64], echo_times_ms: &[f64], params: &IltParams) -> Result<RelaxationSpectrum> {
    IltSolver::new(echo_times_ms, params)?.solve(signal)
}

pub fn select_lambda(
    signal: &[f64],
    echo_times_ms: &[f64],
    params: &IltParams,
) -> Result<(f64, Vec<LcurvePoint>)> {
    IltSolver::new(echo_times_ms, params)?.select_lambda(signal)
}

pub fn shape_project(column: &[f64], echo_times_ms: &[f64], params: &IltParams) -> Result<Vec<f64>> {
    IltSolver::new(echo_times_ms, params)?.project(column)
}

/// Local maxima of the distribution, largest first. A plateau counts once at
/// its leftmost cell; each peak's mass is the run of non-zero cells that
/// descend away from it, with a shared valley cell going to the left peak.
pub fn peaks(spectrum: &RelaxationSpectrum) -> Vec<Peak> {
    let a = &spectrum.amplitudes;
    let n = a.len();
    let total: f64 = a.iter().sum();
    if n == 0 || total <= 0.0 {
        return Vec::new();
    }
    let at = |i: isize| if i < 0 || i as usize >= n { 0.0 } else { a[i as usize] };

    // (peak index, plateau end)
    let mut maxima = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && a[j + 1] == a[i] {
            j += 1;
        }
        if a[i] > 0.0 && a[i] > at(i as isize - 1) && a[i] > at(j as isize + 1) {
            maxima.push((i, j));
        }
        i = j + 1;
    }

    let mut claimed_until: isize = -1;
    let mut out = Vec::with_capacity(maxima.len());
    for &(p, end) in &maxima {
        let mut lo = p;
        while lo > 0 && (lo as isize - 1) > claimed_until && a[lo - 1] > 0.0 && a[lo - 1] <= a[lo] {
            lo -= 1;
        }
        let mut hi = end;
        while hi + 1 < n && a[hi + 1] > 0.0 && a[hi + 1] <= a[hi] {
            hi += 1;
        }
        claimed_until = hi as isize;
        let mass: f64 = a[lo..=hi].iter().sum();
        out.push(Peak { t2_ms: spectrum.t2_ms[p], amplitude: a[p], fraction_of_total: mass / total });
    }
    out.sort_by(|x, y| y.amplitude.total_cmp(&x.amplitude));
    out
}

/// Writes `t2_ms,amplitude` rows plus a JSON sidecar with the solve metadata.
pub fn write_spectrum(spectrum: &RelaxationSpectrum, csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut csv = String::from("t2_ms,amplitude\n");
    for (t, a) in spectrum.t2_ms.iter().zip(&spectrum.amplitudes) {
        csv.push_str(&format!("{t:e},{a:e}\n"));
    }
    std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;
    let sidecar = serde_json::json!({
        "lambda_used": spectrum.lambda_used,
        "residual_norm": spectrum.residual_norm,
        "signal_scale": spectrum.signal_scale,
    });
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::format("sidecar", e.to_string()))?;
    std::fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))
}
