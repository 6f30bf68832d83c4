//! Record a small computation, run backward, and cross-check the gradients
//! against central differences.
//!
//! ```bash
//! cargo run --release -p ndgrad --example autograd_basics
//! ```

use ndgrad::gradcheck::{grad_check_multi, DEFAULT_STEP};
use ndgrad::{AdamState, Graph, Tensor};

fn main() -> ndgrad::Result<()> {
    // loss = mean(silu(x * w)) for a 2x3 input
    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.3, 1.4, -0.7])?;
    let w = Tensor::new(vec![2, 3], vec![1.0, 0.5, -0.5, 2.0, -1.0, 0.25])?;

    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let wv = g.leaf(w.clone(), true);
    let prod = g.mul(xv, wv)?;
    let act = g.silu(prod)?;
    let loss = g.mean(act)?;
    println!("loss = {:.6}", g.value(loss).item());

    g.backward(loss)?;
    println!("dL/dx = {:?}", g.grad(xv).unwrap().data());
    println!("dL/dw = {:?}", g.grad(wv).unwrap().data());

    // independent oracle: central differences over both inputs
    let err = grad_check_multi(
        |g, v| {
            let p = g.mul(v[0], v[1])?;
            let a = g.silu(p)?;
            g.mean(a)
        },
        &[x, w.clone()],
        DEFAULT_STEP,
    )?;
    println!("max relative error vs central differences: {err:.3e}");

    // a few Adam steps shrink the loss
    let mut adam = AdamState::new(0.05)?;
    let mut w_opt = w;
    for step in 0..10 {
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.3, 1.4, -0.7])?, false);
        let wv = g.leaf(w_opt.clone(), true);
        let prod = g.mul(xv, wv)?;
        let act = g.silu(prod)?;
        let loss = g.mean(act)?;
        let loss_val = g.value(loss).item();
        g.backward(loss)?;
        let grad = g.grad(wv).unwrap().clone();
        adam.step(&mut [&mut w_opt], &[grad])?;
        if step % 3 == 0 {
            println!("adam step {step}: loss {loss_val:.6}");
        }
    }
    Ok(())
}
