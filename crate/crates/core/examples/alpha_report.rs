//! Trains a CI-iVAE on sine data and compares the grid-search mixture
//! weight with the closed form on every test sample.

use civae::cli::{alpha_correlation, alpha_records};
use civae::models::{train_restarts, Mode, ModelConfig, TrainConfig};
use civae::objective::contingency;
use civae::synthdata::{generate, Scheme};

fn main() -> civae::Result<()> {
    let ds = generate(Scheme::Sine, 5000, 0, 0)?;
    let config = ModelConfig::for_scheme(Scheme::Sine, ds.d_x(), ds.d_u(), Mode::Ci);
    let out = train_restarts(&config, &ds, &TrainConfig::default(), 1, &mut |_, _| {})?;
    let records = alpha_records(&out.model, &ds, 1001, 64, 0)?;
    println!("{} test samples, correlation {:?}", records.len(), alpha_correlation(&records));
    println!("rows grid, columns formula; buckets 0 / interior / 1");
    for row in contingency(&records) {
        println!("{row:?}");
    }
    Ok(())
}
