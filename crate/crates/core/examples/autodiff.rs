//! The reverse-mode tape on its own: a two-layer SIREN-style network, its
//! gradients, and a finite-difference check.
//!
//! cargo run --release --example autodiff

use ckconv::tensor::{Tape, Tensor};

fn main() -> ckconv::Result<()> {
    let x = Tensor::new(&[4, 1], vec![-1.0, -0.3, 0.4, 1.0])?;
    let w1 = Tensor::new(&[3, 1], vec![0.5, -1.0, 0.8])?;
    let w2 = Tensor::new(&[1, 3], vec![0.2, 0.4, -0.6])?;
    let y = Tensor::new(&[4, 1], vec![0.1, 0.0, -0.2, 0.3])?;

    let loss_at = |w1: &Tensor| -> ckconv::Result<(f64, Option<Tensor>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let a = tape.leaf(w1.clone(), true);
        let b = tape.leaf(w2.clone(), true);
        let h = tape.linear(xv, a, None)?;
        let h = tape.scale(h, 30.0);
        let h = tape.sin(h);
        let out = tape.linear(h, b, None)?;
        let loss = tape.mse(out, &y)?;
        tape.backward(loss)?;
        Ok((tape.value(loss).item(), tape.grad(a).cloned()))
    };

    let (loss, grad) = loss_at(&w1)?;
    let grad = grad.expect("leaf gradient");
    println!("loss {loss:.6}");
    let eps = 1e-6;
    for i in 0..3 {
        let mut plus = w1.clone();
        plus.data_mut()[i] += eps;
        let mut minus = w1.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (loss_at(&plus)?.0 - loss_at(&minus)?.0) / (2.0 * eps);
        println!("dL/dw1[{i}]: tape {:+.8}, central difference {numeric:+.8}", grad.data()[i]);
    }
    Ok(())
}
