//! The lower-bound function behind the closed-form mixture weight: its
//! values, derivatives and maximizer for a few (epsilon, delta) pairs.

use civae::objective::{alpha_star_formula, interior_delta_bound, lb_derivative, lb_value};

fn main() -> civae::Result<()> {
    for (eps, delta) in [(0.05, 0.0), (0.05, 1.5), (0.5, -0.8), (2.0, 3.0)] {
        let a = alpha_star_formula(eps, delta);
        let (d1, d2) = lb_derivative(a.clamp(1e-12, 1.0 - 1e-12), eps, delta)?;
        println!(
            "eps {eps:<4} delta {delta:>4}: alpha* {a:.4}  LB {:.5}  LB' {d1:.2e}  LB'' {d2:.4}  interior if |delta| <= {:.4}",
            lb_value(a, eps, delta)?,
            interior_delta_bound(eps)
        );
    }
    println!("alpha   LB(alpha; eps=0.1, delta=0.4)");
    for i in 0..=10 {
        let a = i as f64 / 10.0;
        println!("{a:.1}     {:.6}", lb_value(a, 0.1, 0.4)?);
    }
    Ok(())
}
