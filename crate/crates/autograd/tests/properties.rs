use ndarray::Array2;
use proptest::prelude::*;
use sarcgen_autograd::{grad, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-20.0f64..20.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c))) {
        let p = Tensor::constant(x.clone()).softmax();
        let lp = Tensor::constant(x).log_softmax();
        for (row, lrow) in p.value().rows().into_iter().zip(lp.value().rows()) {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            for (a, b) in row.iter().zip(lrow.iter()) {
                prop_assert!((a.ln() - b).abs() < 1e-9 || *a == 0.0);
            }
        }
    }

    // d/dA sum(A B) has every row equal to the row sums of B.
    #[test]
    fn matmul_gradient_is_row_sums(
        (a, b) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(n, k, m)| (matrix(n, k), matrix(k, m)))
    ) {
        let av = Tensor::variable(a.clone());
        let out = av.matmul(&Tensor::constant(b.clone())).sum();
        let g = grad(&out, &[&av], false).remove(0);
        let sums = b.sum_axis(ndarray::Axis(1));
        for row in g.value().rows() {
            for (x, y) in row.iter().zip(sums.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
