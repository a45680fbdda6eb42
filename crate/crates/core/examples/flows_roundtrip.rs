//! The ground-truth mixing function: pad a latent, push it through the
//! coupling stack and invert it again.

use civae::flows::{flow_forward, flow_inverse, pad_latent, CouplingStack};

fn main() -> civae::Result<()> {
    let d_x = 100;
    let flow = CouplingStack::ground_truth(d_x, 7)?;
    let v = pad_latent(&[1.2, -0.4], d_x, 7)?;
    let x = flow_forward(&flow, &v)?;
    let back = flow_inverse(&flow, &x)?;
    let err = v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("padded head  {:?}", &v[..4]);
    println!("mixed head   {:?}", &x[..4]);
    println!("roundtrip max abs error {err:.3e}");
    Ok(())
}
