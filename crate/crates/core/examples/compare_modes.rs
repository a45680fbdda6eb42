//! Trains iVAE and CI-iVAE on one synthetic scheme and prints both metric
//! reports side by side.
//!
//! cargo run --release --example compare_modes -- sine 0

use std::time::Instant;

use civae::metrics::{evaluate, EvalOptions};
use civae::models::{train_restarts, Mode, ModelConfig, TrainConfig};
use civae::synthdata::{generate, Scheme, SplitTag, DEFAULT_D_X};

fn main() -> civae::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scheme = match args.get(1).map(String::as_str) {
        Some("quadratic") => Scheme::Quadratic,
        Some("two_circles") => Scheme::TwoCircles,
        _ => Scheme::Sine,
    };
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ds = generate(scheme, 5000, seed, seed)?;
    for mode in [Mode::Ivae, Mode::Ci] {
        let t = Instant::now();
        let config = ModelConfig::for_scheme(scheme, DEFAULT_D_X, scheme.d_u(), mode);
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let out = train_restarts(&config, &ds, &cfg, 2, &mut |_, _| {})?;
        let r = evaluate(&out.model, &ds, SplitTag::Test, &EvalOptions { loglik_draws: 256, seed })?;
        println!(
            "{:<6} {:>6.1}s  val {:>9.3}  mcc {:.4}  cod {:.4}  loglik {:>9.3}  kl {:.3}",
            mode.name(),
            t.elapsed().as_secs_f64(),
            out.best_val,
            r.mcc_post.map_or(f64::NAN, |m| m.value),
            r.cod_post.map_or(f64::NAN, |m| m.value),
            r.loglik.value,
            r.collapse_score.value,
        );
    }
    Ok(())
}
