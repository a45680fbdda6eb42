use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{build_model, CiModel, Fusion, Mode, ModelConfig};
use crate::autodiff::{AdamConfig, AdamState, StepOutcome, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gauss::{GaussVars, HALF_LN_2PI};
use crate::objective::{grid_argmax, ElboTerms};
use crate::rng::{self, normals, tags};
use crate::synthdata::{LabeledDataset, SplitTag};

/// Consecutive non-finite batches tolerated before training aborts.
pub const MAX_CONSECUTIVE_SKIPS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Reparameterized draws per sample and step.
    pub k_train: usize,
    /// Grid size for the per-sample mixture weight during training.
    pub alpha_grid_train: usize,
    pub obs_noise_fixed: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 100,
            learning_rate: 3e-3,
            seed: 0,
            k_train: 1,
            alpha_grid_train: 21,
            obs_noise_fixed: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.k_train == 0 {
            return Err(Error::Config("epochs, batch size and draw count must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.alpha_grid_train < 2 {
            return Err(Error::Config("training grid needs at least two points".into()));
        }
        if n_train == 0 {
            return Err(Error::Data("training split is empty".into()));
        }
        if self.batch_size > n_train {
            return Err(Error::Config(format!(
                "batch size {} exceeds training rows {n_train}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean mixture weight used over the epoch's training batches.
    pub mean_alpha: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss.
    pub model: CiModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub steps: u64,
    /// Seed the returned model was initialized from.
    pub init_seed: u64,
}

/// Tape handles for every trainable quantity.
pub(crate) struct ModelVars {
    prior: Vec<Var>,
    enc: Vec<Var>,
    dec: Vec<Var>,
    obs: Option<Var>,
}

impl ModelVars {
    pub(crate) fn register(model: &CiModel, tape: &mut Tape, learn_obs: bool) -> Self {
        ModelVars {
            prior: model.prior_net.register(tape),
            enc: model.encoder_net.register(tape),
            dec: model.decoder_net.register(tape),
            obs: learn_obs.then(|| tape.leaf(Tensor::matrix(1, 1, vec![model.obs_log_std]).expect("1x1"))),
        }
    }

    fn all(&self) -> Vec<Var> {
        let mut v = self.prior.clone();
        v.extend(&self.enc);
        v.extend(&self.dec);
        v.extend(self.obs);
        v
    }
}

/// Differentiable batch objective.
pub struct BatchObjective {
    /// Negative mean ELBO of the batch.
    pub loss: Var,
    /// Per-sample ELBO at the chosen weights, `[B, 1]`.
    pub per_sample: Var,
    pub alphas: Vec<f64>,
}

fn recon_tape(model: &CiModel, tape: &mut Tape, vars: &ModelVars, x: Var, z: Var) -> Result<Var> {
    let mean = model.decoder_net.forward_tape(tape, &vars.dec, z)?;
    let diff = tape.sub(x, mean)?;
    let sq = tape.square(diff)?;
    let sq = tape.sum_axis(sq, 1)?;
    let d_x = model.d_x() as f64;
    match vars.obs {
        None => {
            let s = model.obs_log_std;
            let scaled = tape.scale(sq, -0.5 * (-2.0 * s).exp())?;
            tape.add_scalar(scaled, -d_x * (s + HALF_LN_2PI))
        }
        Some(s) => {
            let inv = tape.scale(s, -2.0)?;
            let inv = tape.exp(inv)?;
            let quad = tape.mul(sq, inv)?;
            let quad = tape.scale(quad, -0.5)?;
            let norm = tape.scale(s, -d_x)?;
            let out = tape.add(quad, norm)?;
            tape.add_scalar(out, -d_x * HALF_LN_2PI)
        }
    }
}

fn mean_of(tape: &mut Tape, items: &[Var]) -> Result<Var> {
    let mut acc = items[0];
    for &v in &items[1..] {
        acc = tape.add(acc, v)?;
    }
    if items.len() == 1 {
        Ok(acc)
    } else {
        tape.scale(acc, 1.0 / items.len() as f64)
    }
}

fn column(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

/// Builds the mode's objective for a batch. In `ci` mode the per-sample
/// weights are chosen by grid search on the same draws and enter the graph
/// as constants.
pub fn batch_objective(
    model: &CiModel,
    tape: &mut Tape,
    x: &Tensor,
    u: &Tensor,
    noises: &[Tensor],
    grid: usize,
) -> Result<BatchObjective> {
    let vars = ModelVars::register(model, tape, model.learn_obs_noise);
    objective_with_vars(model, tape, &vars, x, u, noises, grid)
}

pub(crate) fn objective_with_vars(
    model: &CiModel,
    tape: &mut Tape,
    vars: &ModelVars,
    x: &Tensor,
    u: &Tensor,
    noises: &[Tensor],
    grid: usize,
) -> Result<BatchObjective> {
    if noises.is_empty() {
        return Err(Error::InvalidArgument("at least one noise draw is required".into()));
    }
    let b = x.rows();
    let xv = tape.constant(x.clone());
    let uv = tape.constant(u.clone());
    let prior_head = model.prior_net.forward_tape(tape, &vars.prior, uv)?;
    let prior = GaussVars::from_head(tape, prior_head)?;
    let enc_head = model.encoder_net.forward_tape(tape, &vars.enc, xv)?;
    let enc = GaussVars::from_head(tape, enc_head)?;
    let post = match model.fusion {
        Fusion::Product => enc.fuse(tape, &prior)?,
        Fusion::Tied => enc,
    };
    let need_post = model.mode != Mode::EncoderElbo;
    let need_enc = model.mode != Mode::Ivae;
    let ci = model.mode == Mode::Ci;

    let (mut rp, mut re) = (Vec::new(), Vec::new());
    let (mut lqe_e, mut lqp_e, mut lqe_p, mut lqp_p) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for noise in noises {
        let nv = tape.constant(noise.clone());
        let zp = if need_post {
            let z = post.sample(tape, nv)?;
            rp.push(recon_tape(model, tape, vars, xv, z)?);
            Some(z)
        } else {
            None
        };
        if need_enc {
            let ze = enc.sample(tape, nv)?;
            re.push(recon_tape(model, tape, vars, xv, ze)?);
            if let (true, Some(zp)) = (ci, zp) {
                lqe_e.push(enc.log_pdf(tape, ze)?);
                lqp_e.push(post.log_pdf(tape, ze)?);
                lqe_p.push(enc.log_pdf(tape, zp)?);
                lqp_p.push(post.log_pdf(tape, zp)?);
            }
        }
    }
    let e0 = if need_post {
        let kl = post.kl(tape, &prior)?;
        let r = mean_of(tape, &rp)?;
        Some((tape.sub(r, kl)?, kl))
    } else {
        None
    };
    let e1 = if need_enc {
        let kl = enc.kl(tape, &prior)?;
        let r = mean_of(tape, &re)?;
        Some((tape.sub(r, kl)?, kl))
    } else {
        None
    };

    let (per_sample, alphas) = match (model.mode, e0, e1) {
        (Mode::Ivae, Some((e0, _)), _) => (e0, vec![0.0; b]),
        (Mode::EncoderElbo, _, Some((e1, _))) => (e1, vec![1.0; b]),
        (Mode::Ci, Some((e0, kl_post)), Some((e1, kl_enc))) => {
            let vals = |vs: &[Var], i: usize| -> Vec<f64> { vs.iter().map(|&v| tape.value(v).data()[i]).collect() };
            let kl_e = column(tape.value(kl_enc));
            let kl_p = column(tape.value(kl_post));
            let mut alphas = Vec::with_capacity(b);
            for i in 0..b {
                let terms = ElboTerms {
                    kl_enc: kl_e[i],
                    kl_post: kl_p[i],
                    recon_enc: vals(&re, i),
                    recon_post: vals(&rp, i),
                    lqe_at_enc: vals(&lqe_e, i),
                    lqp_at_enc: vals(&lqp_e, i),
                    lqe_at_post: vals(&lqe_p, i),
                    lqp_at_post: vals(&lqp_p, i),
                };
                alphas.push(grid_argmax(&terms, grid)?.0);
            }
            let alpha = tape.constant(Tensor::matrix(b, 1, alphas.clone())?);
            let rest = tape.constant(Tensor::matrix(b, 1, alphas.iter().map(|a| 1.0 - a).collect())?);
            let zero = tape.constant(Tensor::zeros(&[b, 1]));
            let mut se = Vec::with_capacity(noises.len());
            let mut sp = Vec::with_capacity(noises.len());
            for k in 0..noises.len() {
                let d = tape.sub(lqp_e[k], lqe_e[k])?;
                se.push(tape.log_mix_exp(zero, d, &alphas)?);
                let d = tape.sub(lqe_p[k], lqp_p[k])?;
                sp.push(tape.log_mix_exp(d, zero, &alphas)?);
            }
            let se = mean_of(tape, &se)?;
            let se = tape.neg(se)?;
            let sp = mean_of(tape, &sp)?;
            let sp = tape.neg(sp)?;
            let a = tape.mul(alpha, e1)?;
            let c = tape.mul(rest, e0)?;
            let t = tape.add(a, c)?;
            let s1 = tape.mul(alpha, se)?;
            let t = tape.add(t, s1)?;
            let s0 = tape.mul(rest, sp)?;
            (tape.add(t, s0)?, alphas)
        }
        _ => unreachable!("paths are built for every mode"),
    };
    let m = tape.mean(per_sample)?;
    let loss = tape.neg(m)?;
    Ok(BatchObjective {
        loss,
        per_sample,
        alphas,
    })
}

fn draw_noises(seed: u64, tag: u64, index: u64, k: usize, rows: usize, d_z: usize) -> Vec<Tensor> {
    let mut r = rng::stream(seed, tag, index);
    (0..k)
        .map(|_| Tensor::matrix(rows, d_z, normals(&mut r, rows * d_z)).expect("sized"))
        .collect()
}

/// Negative mean ELBO of `model` over `rows`, with noise fixed by `seed`.
pub(crate) fn evaluate_loss(model: &CiModel, ds: &LabeledDataset, rows: &[usize], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for (bi, chunk) in rows.chunks(cfg.batch_size).enumerate() {
        let sub = ds.select(chunk.to_vec());
        let noises = draw_noises(cfg.seed, tags::VAL_NOISE, bi as u64, cfg.k_train, chunk.len(), model.d_z());
        let mut tape = Tape::new();
        let obj = batch_objective(model, &mut tape, &sub.x, &sub.u, &noises, cfg.alpha_grid_train)?;
        total += tape.value(obj.loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

/// Ascends the mode's ELBO with Adam, keeping the minimum-validation-loss
/// snapshot. `progress` sees every finished epoch.
pub fn train(
    mut model: CiModel,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let train_rows = ds.indices(SplitTag::Train);
    cfg.validate(train_rows.len())?;
    if ds.d_x() != model.d_x() || ds.d_u() != model.d_u() {
        return Err(Error::dim("dataset observation width", model.d_x(), ds.d_x()));
    }
    let mut val_rows = ds.indices(SplitTag::Val);
    if val_rows.is_empty() {
        val_rows = train_rows.clone();
    }
    let learn_obs = model.learn_obs_noise && !cfg.obs_noise_fixed;
    model.learn_obs_noise = learn_obs;
    let mut obs = Tensor::matrix(1, 1, vec![model.obs_log_std])?;
    let mut adam = {
        let mut params: Vec<&Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
        if learn_obs {
            params.push(&obs);
        }
        AdamState::new(AdamConfig::with_lr(cfg.learning_rate), params)
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, CiModel)> = None;
    let mut step: u64 = 0;
    let mut consecutive = 0;
    for epoch in 1..=cfg.epochs {
        let perm = rng::permutation(&mut rng::stream(cfg.seed, tags::SHUFFLE, epoch as u64), train_rows.len());
        let order: Vec<usize> = perm.iter().map(|&p| train_rows[p]).collect();
        let (mut loss_sum, mut alpha_sum, mut seen, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let sub = ds.select(chunk.to_vec());
            let noises = draw_noises(cfg.seed, tags::TRAIN_NOISE, step, cfg.k_train, chunk.len(), model.d_z());
            let mut tape = Tape::new();
            let vars = ModelVars::register(&model, &mut tape, learn_obs);
            let outcome = objective_with_vars(&model, &mut tape, &vars, &sub.x, &sub.u, &noises, cfg.alpha_grid_train)
                .and_then(|obj| {
                    let grads = tape.backward(obj.loss)?;
                    let grads: Vec<Tensor> = vars
                        .all()
                        .into_iter()
                        .map(|v| grads.wrt(v).cloned().expect("registered leaf"))
                        .collect();
                    let mut params = model.params_mut();
                    if learn_obs {
                        params.push(&mut obs);
                    }
                    let applied = adam.step(&mut params, &grads)?;
                    Ok((tape.value(obj.loss).data()[0], obj.alphas, applied))
                });
            match outcome {
                Ok((loss, alphas, StepOutcome::Applied)) => {
                    consecutive = 0;
                    loss_sum += loss * chunk.len() as f64;
                    alpha_sum += alphas.iter().sum::<f64>();
                    seen += chunk.len();
                    if learn_obs {
                        model.obs_log_std = obs.data()[0];
                    }
                }
                Ok((_, _, StepOutcome::Skipped)) | Err(Error::NonFinite { .. }) | Err(Error::Numeric(_)) => {
                    skipped += 1;
                    consecutive += 1;
                    warn!("epoch {epoch} step {step}: non-finite batch skipped");
                    if consecutive >= MAX_CONSECUTIVE_SKIPS {
                        return Err(Error::Numeric(format!(
                            "{MAX_CONSECUTIVE_SKIPS} consecutive non-finite batches at epoch {epoch}, step {step}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let val_loss = evaluate_loss(&model, ds, &val_rows, cfg)?;
        let record = EpochRecord {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            val_loss,
            mean_alpha: if seen > 0 { alpha_sum / seen as f64 } else { f64::NAN },
            skipped,
        };
        progress(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }
    let (best_val, best_epoch, best_model) = best.expect("at least one epoch");
    info!("best validation loss {best_val:.4} at epoch {best_epoch}");
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
        best_val,
        steps: step,
        init_seed: cfg.seed,
    })
}

/// Seed of restart `r` under base seed `seed`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        let mut g = rng::stream(seed, tags::INIT, 1_000 + r as u64);
        rand::Rng::random(&mut g)
    }
}

/// Trains `restarts` independently initialized models and keeps the one
/// with the lowest validation loss.
pub fn train_restarts(
    config: &ModelConfig,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    restarts: usize,
    progress: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<TrainOutcome> {
    if restarts == 0 {
        return Err(Error::Config("restart count must be >= 1".into()));
    }
    let mut best: Option<TrainOutcome> = None;
    for r in 0..restarts {
        let seed = restart_seed(cfg.seed, r);
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let model = build_model(config, seed)?;
        let out = train(model, ds, &run_cfg, &mut |rec| progress(r, rec))?;
        if best.as_ref().is_none_or(|b| out.best_val < b.best_val) {
            best = Some(out);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{elbo_endpoint, Endpoint};
    use crate::synthdata::{gen_sine, GroundTruth, Scheme};
    use crate::toy::ConjugateToy;

    #[test]
    fn conjugate_toy_training_reaches_the_marginal_likelihood() {
        let toy = ConjugateToy::default();
        let ds = toy.sample(2500, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 100,
            learning_rate: 5e-3,
            seed: 3,
            ..TrainConfig::default()
        };
        let model = build_model(&toy.model_config(Mode::Ivae), 3).unwrap();
        let out = train(model, &ds, &cfg, &mut |_| {}).unwrap();
        assert_eq!(out.steps, 2000);
        let rows = ds.indices(SplitTag::Train);
        let mut neg_elbo = 0.0;
        for (n, &i) in rows.iter().enumerate() {
            let noise = Tensor::matrix(256, 1, normals(&mut rng::stream(77, 0, n as u64), 256)).unwrap();
            neg_elbo -= elbo_endpoint(&out.model, ds.x.row(i), ds.u.row(i), Endpoint::Post, &noise).unwrap();
        }
        neg_elbo /= rows.len() as f64;
        let analytic = -toy.mean_log_marginal(&ds, &rows);
        assert!((neg_elbo - analytic).abs() < 0.05, "{neg_elbo} vs {analytic}");
    }

    #[test]
    fn tied_ci_matches_ivae_bitwise() {
        let toy = ConjugateToy::default();
        let ds = toy.sample(300, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 30,
            learning_rate: 1e-2,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = |mode| {
            let mut mc = toy.model_config(mode);
            mc.fusion = Fusion::Tied;
            let model = build_model(&mc, 4).unwrap();
            train(model, &ds, &cfg, &mut |_| {}).unwrap()
        };
        let (a, b) = (run(Mode::Ivae), run(Mode::Ci));
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
        }
        assert_eq!(b.history.iter().map(|r| r.mean_alpha).sum::<f64>(), 0.0);
        assert_eq!(a.model.param_hash(), b.model.param_hash());
    }

    #[test]
    fn ivae_mode_equals_posterior_endpoint_objective() {
        let toy = ConjugateToy::default();
        let m = toy.perturbed_model(0.6).unwrap();
        let ds = toy.sample(40, 5).unwrap();
        let noises = draw_noises(5, 0, 0, 1, 40, 1);
        let mut tape = Tape::new();
        let obj = batch_objective(&m, &mut tape, &ds.x, &ds.u, &noises, 21).unwrap();
        let per = tape.value(obj.per_sample).data().to_vec();
        for i in 0..40 {
            let noise = Tensor::matrix(1, 1, vec![noises[0].data()[i]]).unwrap();
            let e = elbo_endpoint(&m, ds.x.row(i), ds.u.row(i), Endpoint::Post, &noise).unwrap();
            assert!((per[i] - e).abs() < 1e-10);
        }
    }

    #[test]
    fn ci_objective_matches_grid_breakdown() {
        let toy = ConjugateToy::default();
        let mut m = toy.perturbed_model(0.6).unwrap();
        m.mode = Mode::Ci;
        let ds = toy.sample(20, 6).unwrap();
        let noises = draw_noises(6, 0, 0, 2, 20, 1);
        let mut tape = Tape::new();
        let obj = batch_objective(&m, &mut tape, &ds.x, &ds.u, &noises, 21).unwrap();
        let per = tape.value(obj.per_sample).data().to_vec();
        for i in 0..20 {
            let noise = Tensor::matrix(2, 1, vec![noises[0].data()[i], noises[1].data()[i]]).unwrap();
            let b = crate::objective::elbo_alpha(&m, ds.x.row(i), ds.u.row(i), obj.alphas[i], &noise).unwrap();
            assert!((per[i] - b.total).abs() < 1e-9, "{} vs {}", per[i], b.total);
        }
    }

    fn tiny_gradient_check(mode: Mode, learn_obs: bool) {
        let mc = ModelConfig {
            d_x: 5,
            d_u: 1,
            d_z: 2,
            hidden: vec![4],
            decoder_hidden: vec![4],
            activation: crate::models::Activation::Tanh,
            obs_log_std: 0.2,
            learn_obs_noise: learn_obs,
            mode,
            fusion: Fusion::Product,
        };
        let gt = GroundTruth::new(5, 1).unwrap();
        let ds = gen_sine(8, 2, &gt).unwrap();
        let mut model = build_model(&mc, 9).unwrap();
        // Non-zero log-std heads so every path carries gradient.
        for net in [&mut model.encoder_net, &mut model.prior_net] {
            let mut layers = net.layers().to_vec();
            let last = layers.len() - 1;
            let mut r = rng::stream(10, 0, 0);
            for v in layers[last].weight.data_mut() {
                *v += 0.3 * normals(&mut r, 1)[0];
            }
            *net = crate::models::MlpNet::new(layers).unwrap();
        }
        let noises = draw_noises(11, 0, 0, 1, 8, 2);
        let loss_of = |m: &CiModel| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let obj = batch_objective(m, &mut tape, &ds.x, &ds.u, &noises, 21).unwrap();
            (tape.value(obj.loss).data()[0], obj.alphas)
        };
        let mut tape = Tape::new();
        let vars = ModelVars::register(&model, &mut tape, learn_obs);
        let obj = objective_with_vars(&model, &mut tape, &vars, &ds.x, &ds.u, &noises, 21).unwrap();
        let grads = tape.backward(obj.loss).unwrap();
        let analytic: Vec<Tensor> = vars.all().into_iter().map(|v| grads.wrt(v).unwrap().clone()).collect();
        let alphas = obj.alphas.clone();
        let h = 1e-5;
        let n_params = model.named_params().len();
        let mut checked = 0;
        for (pi, g) in analytic.iter().enumerate() {
            for j in 0..g.len() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                if pi < n_params {
                    plus.params_mut()[pi].data_mut()[j] += h;
                    minus.params_mut()[pi].data_mut()[j] -= h;
                } else {
                    plus.obs_log_std += h;
                    minus.obs_log_std -= h;
                }
                let (lp, ap) = loss_of(&plus);
                let (lm, am) = loss_of(&minus);
                if ap != alphas || am != alphas {
                    continue;
                }
                let fd = (lp - lm) / (2.0 * h);
                let a = g.data()[j];
                assert!(
                    (fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-3),
                    "{mode:?} param {pi}[{j}]: fd {fd} vs {a}"
                );
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn gradient_check_all_modes() {
        tiny_gradient_check(Mode::Ivae, false);
        tiny_gradient_check(Mode::EncoderElbo, false);
        tiny_gradient_check(Mode::Ci, false);
        tiny_gradient_check(Mode::Ci, true);
    }

    #[test]
    fn validation_and_determinism() {
        let gt = GroundTruth::new(6, 2).unwrap();
        let ds = gen_sine(200, 3, &gt).unwrap();
        let mc = ModelConfig::for_scheme(Scheme::Sine, 6, 1, Mode::Ci);
        let bad = TrainConfig { batch_size: 1000, ..TrainConfig::default() };
        assert!(matches!(train(build_model(&mc, 0).unwrap(), &ds, &bad, &mut |_| {}), Err(Error::Config(_))));
        let cfg = TrainConfig { epochs: 2, batch_size: 40, ..TrainConfig::default() };
        let a = train(build_model(&mc, 0).unwrap(), &ds, &cfg, &mut |_| {}).unwrap();
        let b = train(build_model(&mc, 0).unwrap(), &ds, &cfg, &mut |_| {}).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 2);
    }
}
