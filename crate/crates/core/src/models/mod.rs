//! Label-prior, encoder and decoder networks, their assembly into a
//! [`CiModel`], checkpoints, and the training loop.

mod checkpoint;
mod mlp;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use mlp::{Activation, Layer, MlpNet};
pub use train::{
    restart_seed, batch_objective, train, train_restarts, EpochRecord, TrainConfig, TrainOutcome,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::gauss::{DiagGaussian, HALF_LN_2PI, LOG_STD_BOUND};
use crate::rng::{self, tags};
use crate::synthdata::Scheme;

/// Which member of the ELBO family a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    /// Fused posterior only (mixture weight 0).
    Ivae,
    /// Encoder only (mixture weight 1).
    EncoderElbo,
    /// Samplewise optimal mixture weight.
    Ci,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ivae => "ivae",
            Mode::EncoderElbo => "encoder_elbo",
            Mode::Ci => "ci",
        }
    }
}

/// How the conditional posterior is formed from encoder and label prior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Fusion {
    /// Precision-weighted product of encoder and prior.
    #[default]
    Product,
    /// The posterior is the encoder itself (ablation).
    Tied,
}

/// Default decoder hidden widths.
pub const DECODER_HIDDEN: [usize; 2] = [128, 128];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_u: usize,
    pub d_z: usize,
    /// Hidden widths of the label-prior and encoder nets.
    pub hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub obs_log_std: f64,
    pub learn_obs_noise: bool,
    pub mode: Mode,
    #[serde(default)]
    pub fusion: Fusion,
}

impl ModelConfig {
    /// Simulation architecture: label prior and encoder with two hidden Tanh
    /// layers of 60 for the sine scheme and three for the others; the
    /// decoder has [`DECODER_HIDDEN`] Tanh layers.
    pub fn for_scheme(scheme: Scheme, d_x: usize, d_u: usize, mode: Mode) -> Self {
        let depth = if scheme == Scheme::Sine { 2 } else { 3 };
        ModelConfig {
            d_x,
            d_u,
            d_z: 2,
            hidden: vec![60; depth],
            decoder_hidden: DECODER_HIDDEN.to_vec(),
            activation: Activation::Tanh,
            obs_log_std: 0.0,
            learn_obs_noise: false,
            mode,
            fusion: Fusion::Product,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 || self.d_u == 0 || self.d_z == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !self.obs_log_std.is_finite() {
            return Err(Error::Config("observation log-std must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CiModel {
    pub prior_net: MlpNet,
    pub encoder_net: MlpNet,
    pub decoder_net: MlpNet,
    pub obs_log_std: f64,
    pub learn_obs_noise: bool,
    pub mode: Mode,
    pub fusion: Fusion,
}

/// Encoder, fused posterior and label prior for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub enc: DiagGaussian,
    pub post: DiagGaussian,
    pub prior: DiagGaussian,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Builds a model with fan-in scaled uniform weights; log-std heads start at 0.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<CiModel> {
    config.validate()?;
    let mut rng = rng::stream(seed, tags::INIT, 0);
    let d_z = config.d_z;
    let mut prior_net = MlpNet::init(&widths(config.d_u, &config.hidden, 2 * d_z), config.activation, &mut rng)?;
    let mut encoder_net = MlpNet::init(&widths(config.d_x, &config.hidden, 2 * d_z), config.activation, &mut rng)?;
    let decoder_net = MlpNet::init(&widths(d_z, &config.decoder_hidden, config.d_x), config.activation, &mut rng)?;
    prior_net.zero_output_columns(d_z, 2 * d_z);
    encoder_net.zero_output_columns(d_z, 2 * d_z);
    CiModel::new(
        prior_net,
        encoder_net,
        decoder_net,
        config.obs_log_std,
        config.mode,
    )
    .map(|m| CiModel {
        learn_obs_noise: config.learn_obs_noise,
        fusion: config.fusion,
        ..m
    })
}

impl CiModel {
    pub fn new(
        prior_net: MlpNet,
        encoder_net: MlpNet,
        decoder_net: MlpNet,
        obs_log_std: f64,
        mode: Mode,
    ) -> Result<Self> {
        let d_z2 = encoder_net.output_dim();
        if d_z2 % 2 != 0 {
            return Err(Error::Config(format!("encoder output width {d_z2} is not even")));
        }
        if prior_net.output_dim() != d_z2 {
            return Err(Error::dim("prior output width", d_z2, prior_net.output_dim()));
        }
        if decoder_net.input_dim() != d_z2 / 2 {
            return Err(Error::dim("decoder input width", d_z2 / 2, decoder_net.input_dim()));
        }
        if decoder_net.output_dim() != encoder_net.input_dim() {
            return Err(Error::dim(
                "decoder output width",
                encoder_net.input_dim(),
                decoder_net.output_dim(),
            ));
        }
        if !obs_log_std.is_finite() {
            return Err(Error::Config("observation log-std must be finite".into()));
        }
        Ok(CiModel {
            prior_net,
            encoder_net,
            decoder_net,
            obs_log_std,
            learn_obs_noise: false,
            mode,
            fusion: Fusion::Product,
        })
    }

    pub fn d_z(&self) -> usize {
        self.decoder_net.input_dim()
    }

    pub fn d_x(&self) -> usize {
        self.encoder_net.input_dim()
    }

    pub fn d_u(&self) -> usize {
        self.prior_net.input_dim()
    }

    /// Observation noise variance `exp(2 obs_log_std)`.
    pub fn gamma(&self) -> f64 {
        (2.0 * self.obs_log_std).exp()
    }

    pub fn param_count(&self) -> usize {
        self.prior_net.param_count() + self.encoder_net.param_count() + self.decoder_net.param_count()
    }

    fn heads(&self, head: &Tensor) -> Result<Vec<DiagGaussian>> {
        let d = self.d_z();
        (0..head.rows())
            .map(|i| {
                let row = head.row(i);
                DiagGaussian::new(
                    row[..d].to_vec(),
                    row[d..].iter().map(|s| s.clamp(-LOG_STD_BOUND, LOG_STD_BOUND)).collect(),
                )
            })
            .collect()
    }

    pub fn priors(&self, u: &Tensor) -> Result<Vec<DiagGaussian>> {
        self.heads(&self.prior_net.forward(u)?)
    }

    pub fn encoders(&self, x: &Tensor) -> Result<Vec<DiagGaussian>> {
        self.heads(&self.encoder_net.forward(x)?)
    }

    /// Row-wise [`posterior_of`].
    pub fn posteriors(&self, x: &Tensor, u: &Tensor) -> Result<Vec<Posterior>> {
        if x.rows() != u.rows() {
            return Err(Error::dim("covariate rows", x.rows(), u.rows()));
        }
        let encs = self.encoders(x)?;
        let priors = self.priors(u)?;
        encs.into_iter()
            .zip(priors)
            .map(|(enc, prior)| {
                let post = match self.fusion {
                    Fusion::Product => enc.fuse(&prior)?,
                    Fusion::Tied => enc.clone(),
                };
                Ok(Posterior { enc, post, prior })
            })
            .collect()
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder_net.forward(z)
    }

    /// `log N(x; decoder(z_k), gamma I)` for every row `z_k` of `z`.
    pub fn recon_batch(&self, x: &[f64], z: &Tensor) -> Result<Vec<f64>> {
        if x.len() != self.d_x() {
            return Err(Error::dim("observation dimension", self.d_x(), x.len()));
        }
        let mean = self.decode(z)?;
        Ok((0..z.rows())
            .map(|k| iso_log_pdf(mean.row(k), self.obs_log_std, x))
            .collect())
    }

    /// Named parameter tensors in registration order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, net) in [
            ("prior", &self.prior_net),
            ("encoder", &self.encoder_net),
            ("decoder", &self.decoder_net),
        ] {
            for (i, layer) in net.layers().iter().enumerate() {
                out.push((format!("{name}.{i}.weight"), &layer.weight));
                out.push((format!("{name}.{i}.bias"), &layer.bias));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.prior_net.params_mut();
        out.extend(self.encoder_net.params_mut());
        out.extend(self.decoder_net.params_mut());
        out
    }

    /// FNV-1a hash over the bit patterns of all parameters.
    pub fn param_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (_, t) in self.named_params() {
            for v in t.data() {
                feed(v.to_bits());
            }
        }
        feed(self.obs_log_std.to_bits());
        h
    }
}

/// Diagonal Gaussian log density with a shared log-std, evaluated with the
/// same arithmetic as [`DiagGaussian::log_pdf`].
pub(crate) fn iso_log_pdf(mean: &[f64], log_std: f64, x: &[f64]) -> f64 {
    let inv = (-log_std).exp();
    mean.iter()
        .zip(x)
        .map(|(m, v)| {
            let r = (v - m) * inv;
            -HALF_LN_2PI - log_std - 0.5 * r * r
        })
        .sum()
}

/// Encoder, fused posterior and label prior for a single `(x, u)`.
pub fn posterior_of(model: &CiModel, x: &[f64], u: &[f64]) -> Result<Posterior> {
    if x.len() != model.d_x() {
        return Err(Error::dim("observation dimension", model.d_x(), x.len()));
    }
    if u.len() != model.d_u() {
        return Err(Error::dim("covariate dimension", model.d_u(), u.len()));
    }
    let mut p = model.posteriors(
        &Tensor::matrix(1, x.len(), x.to_vec())?,
        &Tensor::matrix(1, u.len(), u.to_vec())?,
    )?;
    Ok(p.remove(0))
}

/// `log p(x | z)` under `N(decoder(z), gamma I)`.
pub fn recon_log_prob(model: &CiModel, x: &[f64], z: &[f64]) -> Result<f64> {
    if z.len() != model.d_z() {
        return Err(Error::dim("latent dimension", model.d_z(), z.len()));
    }
    let v = model.recon_batch(x, &Tensor::matrix(1, z.len(), z.to_vec())?)?[0];
    if !v.is_finite() {
        return Err(Error::Numeric("non-finite reconstruction log-probability".into()));
    }
    Ok(v)
}

/// Draws `x = decoder(z)` with `z = prior(u).sample(noise)`; when
/// `obs_noise` is given, `sqrt(gamma) * obs_noise` is added.
pub fn generate(model: &CiModel, u: &[f64], noise: &[f64], obs_noise: Option<&[f64]>) -> Result<Vec<f64>> {
    if u.len() != model.d_u() {
        return Err(Error::dim("covariate dimension", model.d_u(), u.len()));
    }
    let prior = model.priors(&Tensor::matrix(1, u.len(), u.to_vec())?)?.remove(0);
    let z = prior.sample(noise)?;
    let mut x = model.decode(&Tensor::matrix(1, z.len(), z)?)?.into_data();
    if let Some(e) = obs_noise {
        if e.len() != x.len() {
            return Err(Error::dim("observation noise dimension", x.len(), e.len()));
        }
        let s = model.obs_log_std.exp();
        for (v, e) in x.iter_mut().zip(e) {
            *v += s * e;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::fuse;
    use crate::rng::normals;

    fn sine_config() -> ModelConfig {
        ModelConfig::for_scheme(Scheme::Sine, 100, 1, Mode::Ci)
    }

    #[test]
    fn builds_are_deterministic() {
        let a = build_model(&sine_config(), 4).unwrap();
        let b = build_model(&sine_config(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_hash(), b.param_hash());
        assert_ne!(a.param_hash(), build_model(&sine_config(), 5).unwrap().param_hash());
    }

    #[test]
    fn sine_encoder_parameter_count() {
        let m = build_model(&sine_config(), 0).unwrap();
        // 100->60->60->4 with biases.
        assert_eq!(m.encoder_net.param_count(), (100 * 60 + 60) + (60 * 60 + 60) + (60 * 4 + 4));
        assert_eq!(m.encoder_net.param_count(), 9964);
    }

    #[test]
    fn log_std_heads_start_at_zero() {
        let m = build_model(&sine_config(), 0).unwrap();
        let last = m.encoder_net.layers().last().unwrap();
        for r in 0..last.fan_in() {
            assert_eq!(&last.weight.row(r)[2..], &[0.0, 0.0]);
        }
        assert_eq!(&last.bias.data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn latent_mismatch_is_rejected() {
        let mut rng = rng::stream(0, 0, 0);
        let prior = MlpNet::init(&[1, 4, 6], Activation::Tanh, &mut rng).unwrap();
        let enc = MlpNet::init(&[5, 4, 4], Activation::Tanh, &mut rng).unwrap();
        let dec = MlpNet::init(&[2, 4, 5], Activation::Tanh, &mut rng).unwrap();
        assert!(CiModel::new(prior, enc.clone(), dec.clone(), 0.0, Mode::Ci).is_err());
        let prior = MlpNet::init(&[1, 4, 4], Activation::Tanh, &mut rng).unwrap();
        let bad_dec = MlpNet::init(&[3, 4, 5], Activation::Tanh, &mut rng).unwrap();
        assert!(CiModel::new(prior.clone(), enc.clone(), bad_dec, 0.0, Mode::Ci).is_err());
        assert!(CiModel::new(prior, enc, dec, 0.0, Mode::Ci).is_ok());
    }

    fn force_head(net: &mut MlpNet, mean: f64, log_std: f64) {
        let d = net.output_dim() / 2;
        net.zero_output_columns(0, 2 * d);
        let last = net.layers().len() - 1;
        let mut layers = net.layers().to_vec();
        for j in 0..d {
            layers[last].bias.data_mut()[j] = mean;
            layers[last].bias.data_mut()[d + j] = log_std;
        }
        *net = MlpNet::new(layers).unwrap();
    }

    #[test]
    fn fusion_limits() {
        let cfg = ModelConfig::for_scheme(Scheme::Sine, 5, 1, Mode::Ci);
        let x = [0.3, -0.2, 1.0, 0.0, 0.5];
        let mut m = build_model(&cfg, 1).unwrap();
        force_head(&mut m.encoder_net, 0.7, 6.9);
        let p = posterior_of(&m, &x, &[1.0]).unwrap();
        for j in 0..2 {
            assert!((p.post.mean()[j] - p.prior.mean()[j]).abs() < 1e-4);
            assert!((p.post.log_std()[j] - p.prior.log_std()[j]).abs() < 1e-4);
        }
        let mut m = build_model(&cfg, 1).unwrap();
        force_head(&mut m.prior_net, -0.4, 6.9);
        let p = posterior_of(&m, &x, &[1.0]).unwrap();
        for j in 0..2 {
            assert!((p.post.mean()[j] - p.enc.mean()[j]).abs() < 1e-4);
            assert!((p.post.log_std()[j] - p.enc.log_std()[j]).abs() < 1e-4);
        }
    }

    #[test]
    fn posterior_precision_adds() {
        let cfg = ModelConfig::for_scheme(Scheme::Sine, 5, 1, Mode::Ci);
        let mut m = build_model(&cfg, 2).unwrap();
        // Give the log-std heads non-trivial weights.
        for net in [&mut m.encoder_net, &mut m.prior_net] {
            let mut layers = net.layers().to_vec();
            let last = layers.len() - 1;
            for v in layers[last].weight.data_mut() {
                if *v == 0.0 {
                    *v = 0.3;
                }
            }
            *net = MlpNet::new(layers).unwrap();
        }
        let p = posterior_of(&m, &[0.1, 0.2, 0.3, 0.4, 0.5], &[2.0]).unwrap();
        let oracle = fuse(&p.enc, &p.prior).unwrap();
        assert_eq!(p.post, oracle);
        for j in 0..2 {
            let lhs = 1.0 / p.post.var(j);
            let rhs = 1.0 / p.enc.var(j) + 1.0 / p.prior.var(j);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        }
    }

    #[test]
    fn reconstruction_log_prob() {
        let cfg = ModelConfig::for_scheme(Scheme::Sine, 6, 1, Mode::Ci);
        let m = build_model(&cfg, 3).unwrap();
        let z = [0.4, -1.1];
        let mean = m.decode(&Tensor::matrix(1, 2, z.to_vec()).unwrap()).unwrap().into_data();
        let at_mean = recon_log_prob(&m, &mean, &z).unwrap();
        assert!((at_mean + 3.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

        let r = [0.1, -0.2, 0.3, 0.0, 0.5, -0.4];
        let shifted = |c: f64| -> Vec<f64> { mean.iter().zip(&r).map(|(m, r)| m + c * r).collect() };
        let norm2: f64 = r.iter().map(|v| v * v).sum();
        let l1 = recon_log_prob(&m, &shifted(1.0), &z).unwrap();
        let l2 = recon_log_prob(&m, &shifted(2.0), &z).unwrap();
        assert!((l1 - l2 - 1.5 * norm2).abs() < 1e-12);

        let x = shifted(1.0);
        let g = DiagGaussian::new(mean.clone(), vec![m.obs_log_std; 6]).unwrap();
        assert_eq!(recon_log_prob(&m, &x, &z).unwrap(), g.log_pdf(&x).unwrap());
    }

    #[test]
    fn generation() {
        let cfg = ModelConfig::for_scheme(Scheme::Sine, 4, 1, Mode::Ci);
        let m = build_model(&cfg, 6).unwrap();
        let u = [1.3];
        let prior = m.priors(&Tensor::matrix(1, 1, u.to_vec()).unwrap()).unwrap().remove(0);
        let at_mean = m.decode(&Tensor::matrix(1, 2, prior.mean().to_vec()).unwrap()).unwrap();
        assert_eq!(generate(&m, &u, &[0.0, 0.0], None).unwrap(), at_mean.into_data());

        let mut rng = rng::stream(8, 0, 0);
        let n = 10_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            draws.push(generate(&m, &u, &normals(&mut rng, 2), None).unwrap());
        }
        // Push the same prior draws through the decoder directly.
        let mut rng = rng::stream(8, 0, 0);
        let zs: Vec<Vec<f64>> = (0..n).map(|_| prior.sample(&normals(&mut rng, 2)).unwrap()).collect();
        let oracle = m.decode(&Tensor::from_rows(&zs).unwrap()).unwrap();
        for j in 0..4 {
            let a: f64 = draws.iter().map(|d| d[j]).sum::<f64>() / n as f64;
            let b: f64 = (0..n).map(|i| oracle.row(i)[j]).sum::<f64>() / n as f64;
            assert!((a - b).abs() < 1e-10);
        }
        // And the generated mean sits within Monte-Carlo error of a larger independent run.
        let mut rng = rng::stream(9, 0, 0);
        let big = 100_000;
        let zs: Vec<Vec<f64>> = (0..big).map(|_| prior.sample(&normals(&mut rng, 2)).unwrap()).collect();
        let reference = m.decode(&Tensor::from_rows(&zs).unwrap()).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let r = (0..big).map(|i| reference.row(i)[j]).sum::<f64>() / big as f64;
            assert!((mean - r).abs() < 3.0 * (var / n as f64).sqrt() * 1.1);
        }
        let noisy = generate(&m, &u, &[0.0, 0.0], Some(&[1.0; 4])).unwrap();
        assert!(noisy.iter().zip(generate(&m, &u, &[0.0, 0.0], None).unwrap()).all(|(a, b)| (a - b - 1.0).abs() < 1e-12));
    }
}
