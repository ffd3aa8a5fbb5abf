use latentode::gradcore::{grad_check, Graph};
use latentode::Matrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn shaped_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))
}

// Composite expressions get the looser tolerance used for whole models:
// entries whose gradient is near zero carry finite-difference noise.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_chain_matches_finite_differences((a, b) in shaped_pair()) {
        let err = grad_check(
            |g, p| {
                let m = g.matmul(p[0], p[1])?;
                let t = g.tanh(m);
                let s = g.mul(t, t)?;
                Ok(g.sum(s))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gate_style_expression_matches_finite_differences(x in matrix(3, 4), bias in matrix(1, 4)) {
        let err = grad_check(
            |g, p| {
                let pre = g.add(p[0], p[1])?;
                let s = g.sigmoid(pre);
                let e = g.exp(pre);
                let l = g.slice_cols(e, 0, 2)?;
                let r = g.slice_cols(s, 2, 4)?;
                let joined = g.concat_cols(&[r, l])?;
                let tt = g.transpose(joined);
                Ok(g.mean(tt))
            },
            &[x, bias],
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn broadcast_bias_gradient_sums_over_rows(x in matrix(4, 3), bias in matrix(1, 3)) {
        let mut g = Graph::new();
        let xn = g.leaf(x);
        let bn = g.leaf(bias);
        let y = g.add(xn, bn).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        prop_assert_eq!(grads.get(bn).as_slice(), &[4.0, 4.0, 4.0][..]);
        prop_assert!(grads.get(xn).as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mse_gradient_is_scaled_difference(p in matrix(2, 3), t in matrix(2, 3)) {
        let mut g = Graph::new();
        let pn = g.leaf(p.clone());
        let tn = g.leaf(t.clone());
        let loss = g.mse_loss(pn, tn).unwrap();
        let grads = g.backward(loss).unwrap();
        for ((gv, a), b) in grads.get(pn).as_slice().iter().zip(p.as_slice()).zip(t.as_slice()) {
            prop_assert!((gv - 2.0 * (a - b) / 6.0).abs() < 1e-14);
        }
    }
}

#[test]
fn reused_node_accumulates_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    let y = g.add(sq, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).item(), Some(7.0));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut g = Graph::new();
    let a = g.leaf(Matrix::zeros(2, 3));
    let b = g.leaf(Matrix::zeros(2, 3));
    assert!(g.matmul(a, b).is_err());
    assert!(g.slice_cols(a, 2, 5).is_err());
    let c = g.leaf(Matrix::zeros(3, 2));
    assert!(g.concat_cols(&[a, c]).is_err());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::new();
    let a = g.leaf(Matrix::zeros(2, 2));
    assert!(g.backward(a).is_err());
}
