//! Singular value scan for choosing the number of components.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Number of leading singular values kept for large matrices.
pub const PARTIAL_SVD_COUNT: usize = 50;
/// Matrices whose smaller side exceeds this use the partial decomposition.
const FULL_SVD_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RankScan {
    /// Descending.
    pub singular_values: Vec<f64>,
    pub suggested_rank: usize,
    pub noise_floor: f64,
    /// False when only the leading [`PARTIAL_SVD_COUNT`] values were computed.
    pub complete: bool,
}

pub fn svd_scan(d: &DMatrix<f64>) -> Result<RankScan> {
    let (m, n) = d.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("svd_scan needs a non-empty matrix"));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("svd_scan: non-finite input"));
    }
    let complete = m.min(n) <= FULL_SVD_LIMIT;
    let mut sv: Vec<f64> = if complete {
        d.clone().singular_values().iter().copied().collect()
    } else {
        partial_singular_values(d, PARTIAL_SVD_COUNT)
    };
    sv.iter_mut().for_each(|s| *s = s.max(0.0));
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 {
        return Err(Error::numeric("zero matrix has no rank suggestion"));
    }

    let mut tail = sv[sv.len() / 2..].to_vec();
    let median = median(&mut tail);
    // Never let the floor drop below the numerical-rank tolerance.
    let noise_floor = median.max(sv[0] * m.max(n) as f64 * f64::EPSILON);
    let count = sv.iter().filter(|&&s| s > 2.0 * noise_floor).count();
    let suggested_rank = count.clamp(1, sv.len());
    Ok(RankScan { singular_values: sv, suggested_rank, noise_floor, complete })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Leading singular values by block subspace iteration with a fixed-seed
/// start, so repeated scans agree exactly.
fn partial_singular_values(d: &DMatrix<f64>, count: usize) -> Vec<f64> {
    let n = d.ncols();
    let block = (count + 10).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = DMatrix::from_fn(n, block, |_, _| StandardNormal.sample(&mut rng));
    q = q.qr().q();
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..100 {
        let y = d.tr_mul(&(d * &q));
        q = y.qr().q();
        let sv: Vec<f64> = (d * &q).singular_values().iter().copied().collect();
        if let Some(p) = &prev {
            let change = p
                .iter()
                .zip(&sv)
                .take(count)
                .map(|(a, b)| (a - b).abs() / a.max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            if change < 1e-12 {
                prev = Some(sv);
                break;
            }
        }
        prev = Some(sv);
    }
    let mut sv = prev.unwrap_or_default();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(count);
    sv
}

/// Writes `index,singular_value` rows (1-based index).
pub fn write_scree_csv(scan: &RankScan, path: &Path) -> Result<()> {
    let mut out = String::from("index,singular_value\n");
    for (i, s) in scan.singular_values.iter().enumerate() {
        out.push_str(&format!("{},{:e}\n", i + 1, s));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn rank_one_outer_product() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let v = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.25]);
        let scan = svd_scan(&(&u * v.transpose())).unwrap();
        assert!((scan.singular_values[0] - u.norm() * v.norm()).abs() < 1e-12);
        assert!(scan.singular_values[1] < 1e-12);
        assert_eq!(scan.suggested_rank, 1);
    }

    #[test]
    fn zero_matrix_is_an_error() {
        let err = svd_scan(&DMatrix::zeros(3, 3)).unwrap_err();
        assert!(err.to_string().contains("zero matrix has no rank suggestion"));
    }

    #[test]
    fn energy_matches_frobenius() {
        let d = DMatrix::from_fn(7, 5, |i, j| ((i * 3 + j * 7) % 11) as f64 - 4.5);
        let scan = svd_scan(&d).unwrap();
        let energy: f64 = scan.singular_values.iter().map(|s| s * s).sum();
        assert!((energy - d.norm_squared()).abs() <= 1e-8 * d.norm_squared());
        assert!(scan.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn partial_scan_agrees_with_full() {
        let d = DMatrix::from_fn(260, 230, |i, j| ((i * 31 + j * 17) % 23) as f64 / 23.0 + if i == j { 3.0 } else { 0.0 });
        let scan = svd_scan(&d).unwrap();
        assert!(!scan.complete);
        assert_eq!(scan.singular_values.len(), PARTIAL_SVD_COUNT);
        let full: Vec<f64> = d.singular_values().iter().copied().collect();
        let mut full = full;
        full.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in scan.singular_values.iter().zip(&full).take(10) {
            assert!((a - b).abs() <= 1e-8 * b, "{a} vs {b}");
        }
    }
}
