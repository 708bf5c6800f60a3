use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use relaxmcr::cube::{decode_cube, encode_cube, refold, unfold, AcquisitionMeta, ForegroundMask, HyperCube};
use relaxmcr::mcr::normalize_columns;
use relaxmcr::numkit::{nnls, FitDiagnostics};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0..10.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn meta(width: usize, height: usize, n_echoes: usize) -> AcquisitionMeta {
    AcquisitionMeta {
        te1_ms: 5.0,
        delta_te_ms: 5.0,
        n_echoes,
        tr_s: 3.0,
        fov_mm: [width as f64 * 0.1, height as f64 * 0.1],
        matrix_size: (width, height),
        slice_thickness_um: 1000.0,
        frame_time_h: 1.5,
    }
}

fn cube_and_mask() -> impl Strategy<Value = (HyperCube, ForegroundMask)> {
    (1usize..9, 1usize..9, 2usize..6).prop_flat_map(|(w, h, e)| {
        (
            prop::collection::vec(-1e3..1e3f64, w * h * e),
            prop::collection::vec(any::<bool>(), w * h),
            Just((w, h, e)),
        )
            .prop_map(|(data, mut bits, (w, h, e))| {
                bits[0] = true;
                // Stored as f32 on disk; start from representable values.
                let data = data.into_iter().map(|v| v as f32 as f64).collect();
                (HyperCube::new(meta(w, h, e), data).unwrap(), ForegroundMask::new(w, h, bits).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nnls_random_matrices(a in matrix(6, 4), b in prop::collection::vec(-10.0..10.0f64, 6)) {
        let b = DVector::from_vec(b);
        let sol = nnls(&a, &b).unwrap();
        prop_assert!(sol.x.iter().all(|&v| v >= 0.0));
        prop_assert!(sol.residual_norm <= b.norm() + 1e-12);
        // Optimality: the gradient is non-positive on the zero set and
        // vanishes on the free set.
        let w = a.transpose() * (&b - &a * &sol.x);
        let scale = a.norm() * b.norm() + 1.0;
        for j in 0..4 {
            if sol.x[j] > 0.0 {
                prop_assert!(w[j].abs() <= 1e-8 * scale);
            } else {
                prop_assert!(w[j] <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn normalization_preserves_product(c in matrix(7, 3), s in matrix(5, 3)) {
        let (mut c2, mut s2) = (c.clone(), s.clone());
        normalize_columns(&mut c2, &mut s2);
        let before = &c * s.transpose();
        let after = &c2 * s2.transpose();
        prop_assert!((&before - &after).norm() <= 1e-9 * (1.0 + before.norm()));
        for q in 0..3 {
            let norm = s2.column(q).norm();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unfold_then_refold_restores_masked_pixels((cube, mask) in cube_and_mask()) {
        let table = unfold(&cube, &mask).unwrap();
        prop_assert_eq!(table.n_pixels(), mask.count());
        for e in 0..cube.n_echoes() {
            let col: Vec<f64> = table.values.column(e).iter().copied().collect();
            let r = refold(&col, &table.index_map, cube.width(), cube.height(), f64::NAN).unwrap();
            for row in 0..cube.height() {
                for c in 0..cube.width() {
                    if mask.get(row, c) {
                        prop_assert_eq!(r.get(row, c), cube.value(row, c, e));
                    } else {
                        prop_assert!(r.get(row, c).is_nan());
                    }
                }
            }
        }
    }

    #[test]
    fn cube_bytes_round_trip((cube, _) in cube_and_mask()) {
        let bytes = encode_cube(&cube).unwrap();
        let back = decode_cube(&bytes).unwrap();
        prop_assert_eq!(&back, &cube);
        prop_assert_eq!(encode_cube(&back).unwrap(), bytes);
    }

    #[test]
    fn lack_of_fit_matches_explained_variance(data in 1e-6..1e6f64, ratio in 0.0..1.0f64) {
        let d = FitDiagnostics::from_sums(data, data * ratio).unwrap();
        prop_assert!((d.lack_of_fit_pct - 100.0 * (1.0 - d.explained_variance_pct / 100.0).sqrt()).abs() < 1e-9);
        prop_assert!(d.explained_variance_pct <= 100.0);
    }
}
