//! Fixes the model's observation noise at several values and records how far
//! the fused posterior moves away from the label prior.

use civae::cli::{collapse_cell, TrainFlags};
use civae::metrics::EvalOptions;
use civae::models::{Fusion, Mode};
use civae::synthdata::{generate, Scheme};

fn main() -> civae::Result<()> {
    let ds = generate(Scheme::Sine, 2000, 5, 5)?;
    let flags = TrainFlags {
        epochs: 15,
        batch_size: 100,
        lr: 3e-3,
        restarts: 1,
        k_train: 1,
        alpha_grid_train: 21,
        decoder_hidden: None,
        fusion: Fusion::Product,
    };
    let opts = EvalOptions { loglik_draws: 64, seed: 5 };
    println!("mode   gamma  collapse_score");
    for gamma in [0.1, 1.0, 10.0] {
        for mode in [Mode::Ivae, Mode::Ci] {
            let row = collapse_cell(&ds, mode, gamma, &flags, 5, &opts)?;
            println!("{:<6} {gamma:>5}  {:.4}", mode.name(), row.collapse_score);
        }
    }
    Ok(())
}
