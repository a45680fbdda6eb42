//! Diagonal Gaussian utilities: KL divergence, precision-weighted fusion and
//! a Monte-Carlo skew divergence.

use civae::autodiff::Tensor;
use civae::gauss::DiagGaussian;
use civae::objective::skew_divergence;
use civae::rng::{self, normals};

fn main() -> civae::Result<()> {
    let enc = DiagGaussian::from_std(vec![1.0, -0.5], &[0.5, 2.0])?;
    let prior = DiagGaussian::from_std(vec![0.0, 0.0], &[1.0, 1.0])?;
    let post = enc.fuse(&prior)?;
    println!("KL(enc || prior)  = {:.6}", enc.kl(&prior)?);
    println!("fused mean        = {:?}", post.mean());
    println!("fused std         = [{:.6}, {:.6}]", post.std(0), post.std(1));
    println!("KL(post || prior) = {:.6}", post.kl(&prior)?);

    let k = 20_000;
    let noise = Tensor::matrix(k, 2, normals(&mut rng::stream(1, 0, 0), 2 * k))?;
    for a in [0.0, 0.25, 0.5, 1.0] {
        let s = skew_divergence(&enc, &post, a, &noise)?;
        println!("skew divergence at {a:.2}: {:.5} +- {:.5}", s.value, s.se);
    }
    Ok(())
}
