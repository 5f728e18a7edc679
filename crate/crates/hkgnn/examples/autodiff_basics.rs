//! The reverse-mode tape underneath every training stage: build a tiny
//! computation, pull gradients back through it, and confirm one of them
//! against a central finite difference.

use hkgnn::tape::Tape;
use hkgnn::tensor::Tensor;
use hkgnn::Result;

fn loss_at(w_data: Vec<f64>) -> Result<f64> {
    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?;
    let w = Tensor::new(vec![3, 2], w_data)?;
    let mut tape = Tape::new();
    let xn = tape.leaf_tensor(&x, false)?;
    let wn = tape.leaf_tensor(&w, true)?;
    let h = tape.matmul(xn, wn)?;
    let a = tape.leaky_relu(h, 0.2)?;
    let l = tape.sum_squares(a)?;
    Ok(tape.scalar_value(l))
}

fn main() -> Result<()> {
    let w_data = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];

    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?;
    let w = Tensor::new(vec![3, 2], w_data.clone())?;
    let mut tape = Tape::new();
    let xn = tape.leaf_tensor(&x, false)?;
    let wn = tape.leaf_tensor(&w, true)?;
    let h = tape.matmul(xn, wn)?;
    let a = tape.leaky_relu(h, 0.2)?;
    let l = tape.sum_squares(a)?;
    println!("loss = {:.6} over {} tape nodes", tape.scalar_value(l), tape.len());

    let grads = tape.backward(l)?;
    let gw = grads.get(wn).expect("w requires grad");
    println!("dL/dW = {gw:?}");

    // Check dL/dW[0,0] numerically.
    let eps = 1e-6;
    let mut plus = w_data.clone();
    plus[0] += eps;
    let mut minus = w_data;
    minus[0] -= eps;
    let fd = (loss_at(plus)? - loss_at(minus)?) / (2.0 * eps);
    println!("analytic {:.8} vs finite-difference {:.8}", gw[0], fd);
    assert!((gw[0] - fd).abs() < 1e-5);
    println!("gradients agree");
    Ok(())
}
