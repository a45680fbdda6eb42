//! Identifiability metrics on hand-made representations.

use civae::autodiff::Tensor;
use civae::metrics::{cod, mcc, ssw_sst};
use civae::rng::{self, normals};

fn main() -> civae::Result<()> {
    let n = 2000;
    let z = Tensor::matrix(n, 2, normals(&mut rng::stream(1, 0, 0), 2 * n))?;
    let noise = normals(&mut rng::stream(2, 0, 0), 2 * n);
    let row = |f: &dyn Fn(&[f64], usize) -> Vec<f64>| -> civae::Result<Tensor> {
        Tensor::from_rows(&(0..n).map(|i| f(z.row(i), i)).collect::<Vec<_>>())
    };
    let permuted = row(&|r, _| vec![-3.0 * r[1], 0.5 * r[0] + 2.0])?;
    let mixed = row(&|r, _| vec![r[0] + r[1], r[0] - 0.5 * r[1]])?;
    let noisy = row(&|r, i| vec![r[0] + noise[2 * i], r[1] + noise[2 * i + 1]])?;
    for (name, est) in [("permuted+scaled", &permuted), ("affine mix", &mixed), ("noisy", &noisy)] {
        println!("{name:<16} MCC {:.4}  COD {:.4}", mcc(&z, est)?, cod(&z, est)?);
    }
    let labels: Vec<usize> = (0..n).map(|i| usize::from(z.row(i)[0] > 0.0)).collect();
    println!("SSW/SST of z split by sign of z0: {:.4}", ssw_sst(&z, &labels)?);
    Ok(())
}
