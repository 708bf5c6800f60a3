//! Numeric kernels shared by the resolution pipeline.

mod diagnostics;
mod nnls;
mod rank;

pub use diagnostics::{blocked_sum, fit_diagnostics, residual_row_sums, FitDiagnostics};
pub use nnls::{nnls, nnls_normal, NnlsSolution};
pub use rank::{svd_scan, write_scree_csv, RankScan, PARTIAL_SVD_COUNT};
