//! Trains a CI-iVAE on a small sine dataset, prints the loss history and
//! saves a checkpoint.
//!
//! cargo run --release --example train_model -- /tmp/ci.json

use std::path::PathBuf;

use civae::models::{build_model, train, Checkpoint, Mode, ModelConfig, TrainConfig};
use civae::synthdata::{generate, Scheme};

fn main() -> civae::Result<()> {
    let ds = generate(Scheme::Sine, 1000, 11, 11)?;
    let config = ModelConfig::for_scheme(Scheme::Sine, ds.d_x(), ds.d_u(), Mode::Ci);
    let cfg = TrainConfig {
        epochs: 10,
        seed: 11,
        ..TrainConfig::default()
    };
    let model = build_model(&config, cfg.seed)?;
    println!("{} parameters", model.param_count());
    let out = train(model, &ds, &cfg, &mut |r| {
        println!(
            "epoch {:>2}  train {:.3}  val {:.3}  mean alpha {:.3}",
            r.epoch, r.train_loss, r.val_loss, r.mean_alpha
        );
    })?;
    println!("kept epoch {} (val {:.3}) after {} steps", out.best_epoch, out.best_val, out.steps);
    if let Some(path) = std::env::args().nth(1).map(PathBuf::from) {
        Checkpoint::from_model(&out.model, &config, cfg.seed, serde_json::json!({"example": "train_model"})).save(&path)?;
        println!("checkpoint written to {}", path.display());
    }
    Ok(())
}
