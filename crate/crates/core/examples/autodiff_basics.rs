//! Builds a small graph on a tape, runs reverse mode and checks one
//! gradient entry against a central difference.

use civae::autodiff::{Tape, Tensor};

fn loss(w: &Tensor, x: &Tensor) -> civae::Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let wv = tape.leaf(w.clone());
    let xv = tape.constant(x.clone());
    let h = tape.matmul(xv, wv)?;
    let h = tape.tanh(h)?;
    let sq = tape.square(h)?;
    let out = tape.mean(sq)?;
    let grads = tape.backward(out)?;
    Ok((tape.value(out).data()[0], grads.wrt(wv).cloned().expect("leaf")))
}

fn main() -> civae::Result<()> {
    let x = Tensor::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]])?;
    let w = Tensor::from_rows(&[[0.1, -0.2], [0.4, 0.3], [-0.5, 0.2]])?;
    let (value, grad) = loss(&w, &x)?;
    println!("loss {value:.6}");
    println!("dL/dW {:?}", grad.data());

    let h = 1e-6;
    let (mut up, mut down) = (w.clone(), w.clone());
    up.data_mut()[3] += h;
    down.data_mut()[3] -= h;
    let fd = (loss(&up, &x)?.0 - loss(&down, &x)?.0) / (2.0 * h);
    println!("entry 3: reverse mode {:.9}, central difference {fd:.9}", grad.data()[3]);
    Ok(())
}
