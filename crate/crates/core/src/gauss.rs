//! Diagonal-covariance Gaussians: densities, closed-form KL, precision-weighted
//! fusion, reparameterized sampling and the per-coordinate moments used by the
//! SNR estimate.
//!
//! Scalar-valued routines work on [`DiagGaussian`]; [`GaussVars`] holds a batch
//! of Gaussians as tape variables for the differentiable training path.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Network log-std heads are clamped to `[-LOG_STD_BOUND, LOG_STD_BOUND]`.
pub const LOG_STD_BOUND: f64 = 7.0;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

/// Test statistic for [`DiagGaussian::coord_moments`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    /// `z_j`
    Linear,
    /// `z_j^2`
    Square,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidArgument("gaussian dimension must be >= 1".into()));
        }
        if mean.len() != log_std.len() {
            return Err(Error::dim("log_std length", mean.len(), log_std.len()));
        }
        if !mean.iter().chain(&log_std).all(|v| v.is_finite()) {
            return Err(Error::Numeric("gaussian parameters must be finite".into()));
        }
        Ok(DiagGaussian { mean, log_std })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        DiagGaussian::new(vec![0.0; dim], vec![0.0; dim])
    }

    /// Isotropic-per-coordinate construction from standard deviations.
    pub fn from_std(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        DiagGaussian::new(mean, std.iter().map(|s| s.ln()).collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self, j: usize) -> f64 {
        self.log_std[j].exp()
    }

    pub fn var(&self, j: usize) -> f64 {
        (2.0 * self.log_std[j]).exp()
    }

    fn check_dim(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::dim(what, self.dim(), got));
        }
        Ok(())
    }

    pub fn log_pdf(&self, z: &[f64]) -> Result<f64> {
        self.check_dim("point dimension", z.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(z)
            .map(|((m, s), x)| {
                let r = (x - m) * (-s).exp();
                -HALF_LN_2PI - s - 0.5 * r * r
            })
            .sum())
    }

    /// `KL(self || other)` in closed form.
    pub fn kl(&self, other: &DiagGaussian) -> Result<f64> {
        self.check_dim("kl dimension", other.dim())?;
        let mut total = 0.0;
        for j in 0..self.dim() {
            let (sp, sq) = (self.log_std[j], other.log_std[j]);
            let d = self.mean[j] - other.mean[j];
            total += sq - sp + 0.5 * ((2.0 * (sp - sq)).exp() + d * d * (-2.0 * sq).exp()) - 0.5;
        }
        Ok(total.max(0.0))
    }

    /// Normalized product of the two densities.
    pub fn fuse(&self, other: &DiagGaussian) -> Result<DiagGaussian> {
        self.check_dim("fuse dimension", other.dim())?;
        let mut mean = Vec::with_capacity(self.dim());
        let mut log_std = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let pa = (-2.0 * self.log_std[j]).exp();
            let pb = (-2.0 * other.log_std[j]).exp();
            let precision = pa + pb;
            mean.push((self.mean[j] * pa + other.mean[j] * pb) / precision);
            log_std.push(-0.5 * precision.ln());
        }
        DiagGaussian::new(mean, log_std)
    }

    /// Reparameterized draw `mean + std * noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_dim("noise dimension", noise.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, s), e)| m + s.exp() * e)
            .collect())
    }

    /// Mean and variance of `z_j` or `z_j^2`.
    pub fn coord_moments(&self, j: usize, kind: Statistic) -> Result<(f64, f64)> {
        if j >= self.dim() {
            return Err(Error::InvalidArgument(format!(
                "coordinate {j} out of range for dimension {}",
                self.dim()
            )));
        }
        let (mu, var) = (self.mean[j], self.var(j));
        Ok(match kind {
            Statistic::Linear => (mu, var),
            Statistic::Square => (mu * mu + var, 2.0 * var * var + 4.0 * mu * mu * var),
        })
    }
}

pub fn log_pdf(g: &DiagGaussian, z: &[f64]) -> Result<f64> {
    g.log_pdf(z)
}

pub fn kl(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    p.kl(q)
}

pub fn fuse(enc: &DiagGaussian, prior: &DiagGaussian) -> Result<DiagGaussian> {
    enc.fuse(prior)
}

pub fn sample(g: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    g.sample(noise)
}

pub fn coord_moments(g: &DiagGaussian, j: usize, kind: Statistic) -> Result<(f64, f64)> {
    g.coord_moments(j, kind)
}

/// Density of a univariate normal, used by quadrature oracles.
pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let r = (x - mean) / std;
    (-0.5 * r * r).exp() / (std * (2.0 * PI).sqrt())
}

/// A batch of diagonal Gaussians on a tape: `mean` and `log_std` are `[B, d]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussVars {
    pub mean: Var,
    pub log_std: Var,
}

impl GaussVars {
    /// Splits a `[B, 2d]` head into mean and clamped log-std halves.
    pub fn from_head(tape: &mut Tape, head: Var) -> Result<Self> {
        let width = tape.shape(head)[1];
        if width % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "gaussian head width {width} is not even"
            )));
        }
        let d = width / 2;
        let mean = tape.slice_cols(head, 0, d)?;
        let raw = tape.slice_cols(head, d, width)?;
        let log_std = tape.clamp(raw, -LOG_STD_BOUND, LOG_STD_BOUND)?;
        Ok(GaussVars { mean, log_std })
    }

    /// Reads row `i` back as a [`DiagGaussian`].
    pub fn row(&self, tape: &Tape, i: usize) -> Result<DiagGaussian> {
        DiagGaussian::new(
            tape.value(self.mean).row(i).to_vec(),
            tape.value(self.log_std).row(i).to_vec(),
        )
    }

    pub fn rows(&self, tape: &Tape) -> Result<Vec<DiagGaussian>> {
        (0..tape.value(self.mean).rows()).map(|i| self.row(tape, i)).collect()
    }

    /// Per-row log density at `z` (`[B, d]`), returned as `[B, 1]`.
    pub fn log_pdf(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let diff = tape.sub(z, self.mean)?;
        let neg_s = tape.neg(self.log_std)?;
        let inv = tape.exp(neg_s)?;
        let r = tape.mul(diff, inv)?;
        let r2 = tape.square(r)?;
        let half = tape.scale(r2, -0.5)?;
        let terms = tape.sub(half, self.log_std)?;
        let terms = tape.add_scalar(terms, -HALF_LN_2PI)?;
        tape.sum_axis(terms, 1)
    }

    /// Per-row `KL(self || other)` as `[B, 1]`.
    pub fn kl(&self, tape: &mut Tape, other: &GaussVars) -> Result<Var> {
        let ds = tape.sub(self.log_std, other.log_std)?;
        let ratio = tape.scale(ds, 2.0)?;
        let ratio = tape.exp(ratio)?;
        let dm = tape.sub(self.mean, other.mean)?;
        let dm2 = tape.square(dm)?;
        let inv_var = tape.scale(other.log_std, -2.0)?;
        let inv_var = tape.exp(inv_var)?;
        let maha = tape.mul(dm2, inv_var)?;
        let quad = tape.add(ratio, maha)?;
        let quad = tape.scale(quad, 0.5)?;
        let terms = tape.sub(quad, ds)?;
        let terms = tape.add_scalar(terms, -0.5)?;
        tape.sum_axis(terms, 1)
    }

    /// Precision-weighted product with `other`.
    pub fn fuse(&self, tape: &mut Tape, other: &GaussVars) -> Result<GaussVars> {
        let pa = tape.scale(self.log_std, -2.0)?;
        let pa = tape.exp(pa)?;
        let pb = tape.scale(other.log_std, -2.0)?;
        let pb = tape.exp(pb)?;
        let precision = tape.add(pa, pb)?;
        let ln_p = tape.log(precision)?;
        let log_std = tape.scale(ln_p, -0.5)?;
        let wa = tape.mul(self.mean, pa)?;
        let wb = tape.mul(other.mean, pb)?;
        let num = tape.add(wa, wb)?;
        let neg_ln_p = tape.neg(ln_p)?;
        let var = tape.exp(neg_ln_p)?;
        let mean = tape.mul(num, var)?;
        Ok(GaussVars { mean, log_std })
    }

    /// `mean + exp(log_std) * noise`.
    pub fn sample(&self, tape: &mut Tape, noise: Var) -> Result<Var> {
        let std = tape.exp(self.log_std)?;
        let scaled = tape.mul(std, noise)?;
        tape.add(self.mean, scaled)
    }

    /// Constant batch from explicit Gaussians.
    pub fn constant(tape: &mut Tape, gs: &[DiagGaussian]) -> Result<Self> {
        let means: Vec<&[f64]> = gs.iter().map(|g| g.mean()).collect();
        let log_stds: Vec<&[f64]> = gs.iter().map(|g| g.log_std()).collect();
        let mean = tape.constant(Tensor::from_rows(&means)?);
        let log_std = tape.constant(Tensor::from_rows(&log_stds)?);
        Ok(GaussVars { mean, log_std })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    use rand_xoshiro::SplitMix64;

    fn g(mean: &[f64], std: &[f64]) -> DiagGaussian {
        DiagGaussian::from_std(mean.to_vec(), std).unwrap()
    }

    /// Composite Simpson rule on `[a, b]` with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn log_pdf_peak_values() {
        let std_normal = DiagGaussian::standard(1).unwrap();
        assert!((std_normal.log_pdf(&[0.0]).unwrap() + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let wide = g(&[1.0], &[2.0]);
        let expected = -(2.0f64).ln() - 0.5 * (2.0 * PI).ln();
        assert!((wide.log_pdf(&[1.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn log_pdf_is_sum_of_scalar_densities() {
        let mut rng = SplitMix64::seed_from_u64(5);
        let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let std: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..3.0)).collect();
        let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let oracle: f64 = (0..3).map(|j| normal_pdf(z[j], mean[j], std[j]).ln()).sum();
        assert!((g(&mean, &std).log_pdf(&z).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = DiagGaussian::standard(2).unwrap();
        let b = DiagGaussian::standard(3).unwrap();
        assert!(a.log_pdf(&[0.0]).is_err());
        assert!(a.kl(&b).is_err());
        assert!(a.fuse(&b).is_err());
        assert!(a.sample(&[0.0; 3]).is_err());
        assert!(a.coord_moments(2, Statistic::Linear).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(DiagGaussian::new(vec![], vec![]).is_err());
    }

    #[test]
    fn kl_reference_values() {
        let a = g(&[0.3, -1.0], &[0.5, 2.0]);
        assert_eq!(a.kl(&a).unwrap(), 0.0);
        assert!((g(&[1.0], &[1.0]).kl(&g(&[0.0], &[1.0])).unwrap() - 0.5).abs() < 1e-15);

        let p = g(&[0.0], &[2.0]);
        let q = g(&[0.0], &[1.0]);
        let integrand = |x: f64| {
            let px = normal_pdf(x, 0.0, 2.0);
            if px == 0.0 {
                0.0
            } else {
                px * (p.log_pdf(&[x]).unwrap() - q.log_pdf(&[x]).unwrap())
            }
        };
        let quad = simpson(integrand, -40.0, 40.0, 80_000);
        assert!((p.kl(&q).unwrap() - quad).abs() < 1e-8, "{} vs {quad}", p.kl(&q).unwrap());
    }

    #[test]
    fn fuse_reference_values() {
        let f = g(&[0.0], &[1.0]).fuse(&g(&[2.0], &[1.0])).unwrap();
        assert!((f.mean()[0] - 1.0).abs() < 1e-15);
        assert!((f.var(0) - 0.5).abs() < 1e-15);

        let a = g(&[0.4, -2.0], &[0.7, 1.3]);
        let flat = g(&[5.0, 5.0], &[1e6, 1e6]);
        let f = a.fuse(&flat).unwrap();
        for j in 0..2 {
            assert!(((f.mean()[j] - a.mean()[j]) / a.mean()[j]).abs() < 1e-6);
            assert!(((f.std(j) - a.std(j)) / a.std(j)).abs() < 1e-6);
        }
    }

    #[test]
    fn fuse_matches_grid_product_density() {
        let a = g(&[0.5, -0.3], &[0.8, 1.2]);
        let b = g(&[-0.4, 0.9], &[1.1, 0.6]);
        let fused = a.fuse(&b).unwrap();
        // Renormalize the pointwise product on a grid.
        let (lo, hi, n) = (-8.0, 8.0, 400usize);
        let h = (hi - lo) / n as f64;
        let prod = |x: f64, y: f64| (a.log_pdf(&[x, y]).unwrap() + b.log_pdf(&[x, y]).unwrap()).exp();
        let weight = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let mut z = 0.0;
        for i in 0..=n {
            for k in 0..=n {
                z += weight(i) * weight(k) * prod(lo + i as f64 * h, lo + k as f64 * h);
            }
        }
        z *= h * h / 9.0;
        for &(x, y) in &[(0.0, 0.0), (0.3, 0.5), (-1.0, 1.2), (1.5, -0.7)] {
            let grid_density = prod(x, y) / z;
            let fused_density = fused.log_pdf(&[x, y]).unwrap().exp();
            assert!((grid_density - fused_density).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling() {
        let a = g(&[1.5, -0.5], &[0.2, 3.0]);
        assert_eq!(a.sample(&[0.0, 0.0]).unwrap(), a.mean());

        let std_normal = DiagGaussian::standard(1).unwrap();
        let mut rng = SplitMix64::seed_from_u64(99);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| std_normal.sample(&[rng.sample(StandardNormal)]).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn sample_gradient_wrt_mean_is_one() {
        let mut tape = Tape::new();
        let mean = tape.leaf(Tensor::matrix(1, 1, vec![0.7]).unwrap());
        let log_std = tape.leaf(Tensor::matrix(1, 1, vec![-0.2]).unwrap());
        let noise = tape.constant(Tensor::matrix(1, 1, vec![1.3]).unwrap());
        let z = GaussVars { mean, log_std }.sample(&mut tape, noise).unwrap();
        let out = tape.mean(z).unwrap();
        let grads = tape.backward(out).unwrap();
        assert_eq!(grads.wrt(mean).unwrap().item(), Some(1.0));
    }

    #[test]
    fn coord_moment_values() {
        assert_eq!(DiagGaussian::standard(1).unwrap().coord_moments(0, Statistic::Square).unwrap(), (1.0, 2.0));
        let one = g(&[1.0], &[1.0]);
        assert_eq!(one.coord_moments(0, Statistic::Square).unwrap(), (2.0, 6.0));
        let (m, v) = g(&[3.0], &[2.0]).coord_moments(0, Statistic::Linear).unwrap();
        assert_eq!(m, 3.0);
        assert!((v - 4.0).abs() < 1e-14);
    }

    #[test]
    fn square_moments_match_monte_carlo() {
        let one = g(&[1.0], &[1.0]);
        let mut rng = SplitMix64::seed_from_u64(2024);
        let n = 1_000_000;
        let sq: Vec<f64> = (0..n)
            .map(|_| {
                let z = one.sample(&[rng.sample(StandardNormal)]).unwrap()[0];
                z * z
            })
            .collect();
        let mean = sq.iter().sum::<f64>() / n as f64;
        let var = sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let fourth = sq.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let se_mean = (var / n as f64).sqrt();
        let se_var = ((fourth - var * var) / n as f64).sqrt();
        let (m, v) = one.coord_moments(0, Statistic::Square).unwrap();
        assert!((mean - m).abs() < 3.0 * se_mean);
        assert!((var - v).abs() < 3.0 * se_var);
    }

    #[test]
    fn tape_versions_agree_with_scalar_versions() {
        let a = g(&[0.5, -1.0], &[0.8, 1.5]);
        let b = g(&[-0.2, 0.4], &[1.2, 0.3]);
        let z = [0.1, 0.9];
        let mut tape = Tape::new();
        let va = GaussVars::constant(&mut tape, &[a.clone()]).unwrap();
        let vb = GaussVars::constant(&mut tape, &[b.clone()]).unwrap();
        let vz = tape.constant(Tensor::matrix(1, 2, z.to_vec()).unwrap());
        let lp = va.log_pdf(&mut tape, vz).unwrap();
        let k = va.kl(&mut tape, &vb).unwrap();
        let f = va.fuse(&mut tape, &vb).unwrap();
        assert!((tape.value(lp).data()[0] - a.log_pdf(&z).unwrap()).abs() < 1e-13);
        assert!((tape.value(k).data()[0] - a.kl(&b).unwrap()).abs() < 1e-13);
        let fused = f.row(&tape, 0).unwrap();
        let direct = a.fuse(&b).unwrap();
        for j in 0..2 {
            assert!((fused.mean()[j] - direct.mean()[j]).abs() < 1e-13);
            assert!((fused.log_std()[j] - direct.log_std()[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn log_pdf_integrates_to_one() {
        let mut rng = SplitMix64::seed_from_u64(31);
        for _ in 0..5 {
            let m = rng.random_range(-3.0..3.0);
            let s = rng.random_range(0.2..3.0);
            let d = g(&[m], &[s]);
            let total = simpson(|x| d.log_pdf(&[x]).unwrap().exp(), m - 20.0 * s, m + 20.0 * s, 20_000);
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    fn arb_gauss(d: usize) -> impl Strategy<Value = DiagGaussian> {
        (
            prop::collection::vec(-5.0f64..5.0, d),
            prop::collection::vec(-2.0f64..2.0, d),
        )
            .prop_map(|(m, s)| DiagGaussian::new(m, s).unwrap())
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_on_diagonal(p in arb_gauss(3), q in arb_gauss(3)) {
            let v = p.kl(&q).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert_eq!(p.kl(&p).unwrap(), 0.0);
            if p != q {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn fuse_commutes_and_associates(a in arb_gauss(2), b in arb_gauss(2), c in arb_gauss(2)) {
            let ab = a.fuse(&b).unwrap();
            let ba = b.fuse(&a).unwrap();
            for j in 0..2 {
                prop_assert!((ab.mean()[j] - ba.mean()[j]).abs() <= 1e-10 * (1.0 + ab.mean()[j].abs()));
                prop_assert!((ab.log_std()[j] - ba.log_std()[j]).abs() <= 1e-10);
            }
            let left = ab.fuse(&c).unwrap();
            let right = a.fuse(&b.fuse(&c).unwrap()).unwrap();
            for j in 0..2 {
                prop_assert!((left.mean()[j] - right.mean()[j]).abs() <= 1e-10 * (1.0 + left.mean()[j].abs()));
                prop_assert!((left.log_std()[j] - right.log_std()[j]).abs() <= 1e-10);
            }
        }
    }
}
