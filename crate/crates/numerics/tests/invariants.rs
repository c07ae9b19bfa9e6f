use anchormt_numerics::kernels::{layer_norm, matmul, matmul_nt, softmax_in_place};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(row in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let mut r = row.clone();
        softmax_in_place(&mut r);
        prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance(
        (rows, cols, x) in (1usize..5, 2usize..9).prop_flat_map(|(r, c)| (Just(r), Just(c), matrix(r, c)))
    ) {
        // Rows far from constant so the epsilon term is negligible.
        prop_assume!(x.chunks(cols).all(|row| {
            let m = row.iter().sum::<f64>() / cols as f64;
            row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / cols as f64 > 1e-2
        }));
        let gamma = vec![1.0; cols];
        let beta = vec![0.0; cols];
        let y = layer_norm(&x, &gamma, &beta);
        for row in y.chunks(cols).take(rows) {
            let m = row.iter().sum::<f64>() / cols as f64;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / cols as f64;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn matmul_nt_equals_matmul_with_transpose(
        (n, k, m, a, b) in (1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(n, k, m)| (Just(n), Just(k), Just(m), matrix(n, k), matrix(m, k)))
    ) {
        let bt: Vec<f64> = (0..k).flat_map(|p| (0..m).map(move |j| (p, j))).map(|(p, j)| b[j * k + p]).collect();
        let x = matmul(&a, &bt, n, k, m);
        let y = matmul_nt(&a, &b, n, k, m);
        for (u, v) in x.iter().zip(&y) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }
}
