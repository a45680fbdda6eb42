//! Generates the three synthetic schemes, saves one to disk and prints the
//! split counts and a few conditional moments.
//!
//! cargo run --release --example gen_dataset -- /tmp/sine

use std::path::PathBuf;

use civae::synthdata::{generate, LabeledDataset, Scheme, SplitTag};

fn main() -> civae::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    for scheme in [Scheme::Sine, Scheme::Quadratic, Scheme::TwoCircles] {
        let ds = generate(scheme, 2000, 3, 3)?;
        let c = ds.counts();
        let z = ds.z.as_ref().expect("synthetic data keeps latents");
        let mean0 = (0..ds.len()).map(|i| z.row(i)[0]).sum::<f64>() / ds.len() as f64;
        println!(
            "{:<12} n {} d_x {} d_u {}  split {}/{}/{}  mean z0 {mean0:.3}",
            scheme.name(),
            ds.len(),
            ds.d_x(),
            ds.d_u(),
            c.train,
            c.val,
            c.test
        );
        if let (Some(dir), Scheme::Sine) = (&out, scheme) {
            let m = ds.save(dir)?;
            let back = LabeledDataset::load(dir)?;
            assert_eq!(back.indices(SplitTag::Test), ds.indices(SplitTag::Test));
            println!("saved {} rows to {}", m.n, dir.display());
        }
    }
    Ok(())
}
