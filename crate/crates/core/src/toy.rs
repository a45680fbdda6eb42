//! One-dimensional linear-Gaussian model with a closed-form marginal:
//!
//! `u ~ U(-1, 1)`, `z | u ~ N(a u, s_p^2)`, `x | z ~ N(z, s_x^2)`, hence
//! `x | u ~ N(a u, s_p^2 + s_x^2)`.
//!
//! With linear nets the model family contains the truth, and an encoder
//! `N(x, s_x^2)` fused with the prior is the exact posterior.

use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::gauss::HALF_LN_2PI;
use crate::models::{Activation, CiModel, Fusion, Layer, MlpNet, Mode, ModelConfig};
use crate::rng::{self, normals, tags};
use crate::synthdata::{split, LabeledDataset, Provenance, Scheme, SplitTag, DEFAULT_FRACTIONS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjugateToy {
    pub slope: f64,
    pub prior_std: f64,
    pub obs_std: f64,
}

impl Default for ConjugateToy {
    fn default() -> Self {
        ConjugateToy {
            slope: 1.5,
            prior_std: 0.8,
            obs_std: 0.5,
        }
    }
}

fn linear(w: &[f64], b: &[f64]) -> Result<MlpNet> {
    MlpNet::new(vec![Layer {
        weight: Tensor::matrix(1, w.len(), w.to_vec())?,
        bias: Tensor::vector(b.to_vec()),
        activation: Activation::Identity,
    }])
}

impl ConjugateToy {
    /// `log p(x | u)`.
    pub fn log_marginal(&self, x: f64, u: f64) -> f64 {
        let var = self.prior_std.powi(2) + self.obs_std.powi(2);
        let r = x - self.slope * u;
        -HALF_LN_2PI - 0.5 * var.ln() - 0.5 * r * r / var
    }

    fn model(&self, enc_slope: f64, enc_shift: f64, enc_log_std: f64) -> Result<CiModel> {
        let prior = linear(&[self.slope, 0.0], &[0.0, self.prior_std.ln()])?;
        let enc = linear(&[enc_slope, 0.0], &[enc_shift, enc_log_std])?;
        let dec = linear(&[1.0], &[0.0])?;
        CiModel::new(prior, enc, dec, self.obs_std.ln(), Mode::Ivae)
    }

    /// True generative model with the exact-posterior encoder.
    pub fn exact_model(&self) -> Result<CiModel> {
        self.model(1.0, 0.0, self.obs_std.ln())
    }

    /// Exact model whose posterior is the encoder itself.
    pub fn tied_model(&self) -> Result<CiModel> {
        let mut m = self.exact_model()?;
        m.fusion = Fusion::Tied;
        Ok(m)
    }

    /// Encoder so wide that the fused posterior equals the prior to
    /// machine precision.
    pub fn collapsed_model(&self) -> Result<CiModel> {
        self.model(0.0, 0.0, crate::gauss::LOG_STD_BOUND)
    }

    /// Exact model with a miscalibrated encoder.
    pub fn perturbed_model(&self, enc_slope: f64) -> Result<CiModel> {
        self.model(enc_slope, 0.1, self.obs_std.ln() + 0.3)
    }

    /// Linear architecture able to represent the truth.
    pub fn model_config(&self, mode: Mode) -> ModelConfig {
        ModelConfig {
            d_x: 1,
            d_u: 1,
            d_z: 1,
            hidden: Vec::new(),
            decoder_hidden: Vec::new(),
            activation: Activation::Tanh,
            obs_log_std: self.obs_std.ln(),
            learn_obs_noise: false,
            mode,
            fusion: Fusion::Product,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        let (mut x, mut u, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let mut r = rng::stream(seed, tags::DATA_ROW, i as u64);
            let ui = r.random_range(-1.0..1.0);
            let e = normals(&mut r, 2);
            let zi = self.slope * ui + self.prior_std * e[0];
            u.push(ui);
            z.push(zi);
            x.push(zi + self.obs_std * e[1]);
        }
        let mut ds = LabeledDataset {
            x: Tensor::matrix(n, 1, x)?,
            u: Tensor::matrix(n, 1, u)?,
            z: Some(Tensor::matrix(n, 1, z)?),
            split: vec![SplitTag::Train; n],
            provenance: Provenance {
                scheme: Scheme::External,
                seed,
                flow_seed: 0,
                rng: rng::ALGORITHM.into(),
            },
        };
        split(&mut ds, DEFAULT_FRACTIONS, seed)?;
        Ok(ds)
    }

    /// Mean of `log p(x | u)` over the given rows.
    pub fn mean_log_marginal(&self, ds: &LabeledDataset, rows: &[usize]) -> f64 {
        rows.iter()
            .map(|&i| self.log_marginal(ds.x.row(i)[0], ds.u.row(i)[0]))
            .sum::<f64>()
            / rows.len() as f64
    }
}
