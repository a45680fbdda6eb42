//! A linear-Gaussian model with a closed-form marginal: the Monte-Carlo
//! log-likelihood and a trained iVAE against the analytic value.

use civae::metrics::mc_loglik;
use civae::models::{build_model, train, Mode, TrainConfig};
use civae::synthdata::SplitTag;
use civae::toy::ConjugateToy;

fn main() -> civae::Result<()> {
    let toy = ConjugateToy::default();
    let exact = toy.exact_model()?;
    for (x, u) in [(0.4, 0.2), (-1.0, 0.7)] {
        let est = mc_loglik(&exact, &[x], &[u], 4096, 1)?;
        println!("log p({x} | {u}): closed form {:.5}, MC {:.5} +- {:.5}", toy.log_marginal(x, u), est.value, est.se);
    }

    let ds = toy.sample(2500, 3)?;
    let cfg = TrainConfig {
        epochs: 100,
        learning_rate: 5e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = build_model(&toy.model_config(Mode::Ivae), 3)?;
    let out = train(model, &ds, &cfg, &mut |_| {})?;
    let target = -toy.mean_log_marginal(&ds, &ds.indices(SplitTag::Val));
    println!("trained negative ELBO {:.4} vs -E[log p(x|u)] {target:.4}", out.best_val);
    Ok(())
}
