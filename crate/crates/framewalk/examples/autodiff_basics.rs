//! Record a small tensor program, differentiate it in reverse mode, and
//! verify the gradients against central finite differences.
//!
//! ```bash
//! cargo run --release --example autodiff_basics
//! ```

use framewalk::{finite_diff_check, Graph, NodeId, Tensor};

fn main() -> framewalk::Result<()> {
    // forward: loss = mean(softmax(x W + b)^2)
    let program = |g: &mut Graph<f64>, inputs: &[NodeId]| {
        let h = g.matmul(inputs[0], inputs[1])?;
        let h = g.broadcast_add(h, inputs[2])?;
        let s = g.softmax(h)?;
        let sq = g.mul(s, s)?;
        g.mean(sq, &[0, 1])
    };

    let x = Tensor::from_f64(vec![3, 4], &[0.2, -0.5, 0.1, 0.9, 0.0, 0.3, -0.2, 0.4, 0.6, -0.1, 0.8, -0.7])?;
    let w = Tensor::from_f64(vec![4, 2], &[0.1, -0.3, 0.2, 0.5, -0.4, 0.1, 0.3, 0.2])?;
    let b = Tensor::from_f64(vec![2], &[0.05, -0.05])?;

    let mut g = Graph::new();
    let ids = [g.leaf(x.clone(), true), g.leaf(w.clone(), true), g.leaf(b.clone(), true)];
    let loss = program(&mut g, &ids)?;
    println!("loss = {:.6}", g.value(loss).item()?);

    g.backward(loss)?;
    println!("dL/db = {:?}", g.grad(ids[2]).unwrap());

    let err = finite_diff_check(&program, &[x, w, b], 1e-5)?;
    println!("max relative error vs central differences: {err:.3e}");
    assert!(err < 1e-6);
    Ok(())
}
