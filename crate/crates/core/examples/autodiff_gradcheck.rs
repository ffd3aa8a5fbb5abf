//! Reverse-mode gradients of one LSTM step checked against central finite
//! differences.

use latentode::gradcore::{grad_check, Graph};
use latentode::lstmvae::{self, VaeArch, VaeParams};
use latentode::Matrix;

fn main() -> latentode::Result<()> {
    let params = VaeParams::init(&VaeArch::new(4, 1, 5), 3)?;
    let layer = &params.weights.encoder[0];
    let x = Matrix::row_vector(&[0.2, -0.4, 0.9, 0.1]);
    let h = Matrix::row_vector(&[0.1, 0.0, -0.3, 0.2, 0.05]);
    let c = Matrix::row_vector(&[0.5, -0.2, 0.0, 0.3, -0.1]);

    let inputs = vec![
        layer.w_i.clone(),
        layer.w_f.clone(),
        layer.w_o.clone(),
        layer.w_c.clone(),
        layer.b_i.clone(),
        layer.b_f.clone(),
        layer.b_o.clone(),
        layer.b_c.clone(),
        x,
        h,
        c,
    ];
    let err = grad_check(
        |g: &mut Graph, p| {
            let cell = lstmvae::LstmLayer {
                input_size: 4,
                hidden_size: 5,
                w_i: p[0],
                w_f: p[1],
                w_o: p[2],
                w_c: p[3],
                b_i: p[4],
                b_f: p[5],
                b_o: p[6],
                b_c: p[7],
            };
            let (h_t, c_t) = lstmvae::lstm_cell_step(g, &cell, p[8], p[9], p[10])?;
            let both = g.concat_cols(&[h_t, c_t])?;
            let sq = g.mul(both, both)?;
            Ok(g.sum(sq))
        },
        &inputs,
        1e-6,
    )?;
    println!("LSTM step, {} parameter tensors: max relative error {err:.2e}", inputs.len());

    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]])?;
    let err = grad_check(
        |g, p| {
            let m = g.matmul(p[0], p[0])?;
            let e = g.exp(m);
            Ok(g.mean(e))
        },
        &[a],
        1e-6,
    )?;
    println!("mean(exp(A A)): max relative error {err:.2e}");
    Ok(())
}
