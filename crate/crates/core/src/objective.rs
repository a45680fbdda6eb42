//! The mixture ELBO family and its analysis functions.
//!
//! For a mixture `m = a q_enc + (1 - a) q_post` the bound decomposes as
//!
//! `ELBO(a) = a ELBO(1) + (1 - a) ELBO(0) + a KL(q_enc || m) + (1 - a) KL(q_post || m)`
//!
//! where `ELBO(1)` uses the encoder and `ELBO(0)` the fused posterior. Both
//! skew terms are estimated from reparameterized draws that share one noise
//! matrix, so the endpoint identities hold exactly and the grid search over
//! `a` compares values computed from common random numbers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_mix_exp, Tensor};
use crate::error::{Error, Result};
use crate::gauss::{DiagGaussian, Statistic};
use crate::models::{posterior_of, CiModel, Posterior};

pub const EPSILON_MIN: f64 = 1e-6;
pub const EPSILON_MAX: f64 = 1e6;

/// A Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

impl McEstimate {
    pub fn from_draws(draws: &[f64]) -> Self {
        let n = draws.len() as f64;
        let value = draws.iter().sum::<f64>() / n;
        let se = if draws.len() > 1 {
            (draws.iter().map(|d| (d - value).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::INFINITY
        };
        McEstimate { value, se }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub recon_enc: f64,
    pub recon_post: f64,
    pub kl_enc: f64,
    pub kl_post: f64,
    pub skew_enc: f64,
    pub skew_post: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Which endpoint of the family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// Fused posterior, mixture weight 0.
    Post,
    /// Encoder, mixture weight 1.
    Enc,
}

/// Per-draw ingredients of `ELBO(a)` for one sample. Draw `k` uses
/// `z_enc = mu_e + s_e * noise_k` and `z_post = mu_p + s_p * noise_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboTerms {
    pub kl_enc: f64,
    pub kl_post: f64,
    pub recon_enc: Vec<f64>,
    pub recon_post: Vec<f64>,
    pub lqe_at_enc: Vec<f64>,
    pub lqp_at_enc: Vec<f64>,
    pub lqe_at_post: Vec<f64>,
    pub lqp_at_post: Vec<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("mixture weight {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `a + alpha (b - a)`, evaluated from the nearer endpoint so that
/// `alpha = 0` and `alpha = 1` return `a` and `b` exactly.
fn lerp(a: f64, b: f64, alpha: f64) -> f64 {
    if alpha < 0.5 {
        a + alpha * (b - a)
    } else {
        b - (1.0 - alpha) * (b - a)
    }
}

fn samples(g: &DiagGaussian, noise: &Tensor) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = (0..noise.rows())
        .map(|k| g.sample(noise.row(k)))
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}

fn log_pdfs(g: &DiagGaussian, z: &Tensor) -> Result<Vec<f64>> {
    (0..z.rows()).map(|k| g.log_pdf(z.row(k))).collect()
}

fn check_noise(noise: &Tensor, d: usize) -> Result<()> {
    if noise.shape().len() != 2 || noise.rows() == 0 {
        return Err(Error::InvalidArgument("noise must be a non-empty [K, d] matrix".into()));
    }
    if noise.cols() != d {
        return Err(Error::dim("noise width", d, noise.cols()));
    }
    Ok(())
}

impl ElboTerms {
    /// Evaluates all terms for `(x, posterior)` under the `[K, d_z]` noise matrix.
    pub fn compute(model: &CiModel, x: &[f64], p: &Posterior, noise: &Tensor) -> Result<Self> {
        check_noise(noise, model.d_z())?;
        let z_enc = samples(&p.enc, noise)?;
        let z_post = samples(&p.post, noise)?;
        let terms = ElboTerms {
            kl_enc: p.enc.kl(&p.prior)?,
            kl_post: p.post.kl(&p.prior)?,
            recon_enc: model.recon_batch(x, &z_enc)?,
            recon_post: model.recon_batch(x, &z_post)?,
            lqe_at_enc: log_pdfs(&p.enc, &z_enc)?,
            lqp_at_enc: log_pdfs(&p.post, &z_enc)?,
            lqe_at_post: log_pdfs(&p.enc, &z_post)?,
            lqp_at_post: log_pdfs(&p.post, &z_post)?,
        };
        terms.check_finite()?;
        Ok(terms)
    }

    fn check_finite(&self) -> Result<()> {
        let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
        if !self.kl_enc.is_finite()
            || !self.kl_post.is_finite()
            || bad(&self.recon_enc)
            || bad(&self.recon_post)
            || bad(&self.lqe_at_enc)
            || bad(&self.lqp_at_enc)
            || bad(&self.lqe_at_post)
            || bad(&self.lqp_at_post)
        {
            return Err(Error::Numeric(format!(
                "non-finite ELBO component: kl_enc {}, kl_post {}, recon_enc {:?}, recon_post {:?}",
                self.kl_enc,
                self.kl_post,
                self.recon_enc.iter().find(|v| !v.is_finite()),
                self.recon_post.iter().find(|v| !v.is_finite()),
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.recon_post.len()
    }

    fn mean(&self, f: impl Fn(usize) -> f64) -> f64 {
        let mut s = 0.0;
        for k in 0..self.k() {
            s += f(k);
        }
        s / self.k() as f64
    }

    fn e1(&self, k: usize) -> f64 {
        self.recon_enc[k] - self.kl_enc
    }

    fn e0(&self, k: usize) -> f64 {
        self.recon_post[k] - self.kl_post
    }

    /// `KL(q_enc || m)` integrand at draw `k`.
    fn skew_enc_draw(&self, k: usize, alpha: f64) -> f64 {
        -log_mix_exp(0.0, self.lqp_at_enc[k] - self.lqe_at_enc[k], alpha)
    }

    /// `KL(q_post || m)` integrand at draw `k`.
    fn skew_post_draw(&self, k: usize, alpha: f64) -> f64 {
        -log_mix_exp(self.lqe_at_post[k] - self.lqp_at_post[k], 0.0, alpha)
    }

    fn total_draw(&self, k: usize, alpha: f64) -> f64 {
        lerp(self.e0(k), self.e1(k), alpha)
            + alpha * self.skew_enc_draw(k, alpha)
            + (1.0 - alpha) * self.skew_post_draw(k, alpha)
    }

    /// `ELBO(1)`.
    pub fn elbo_enc(&self) -> f64 {
        self.mean(|k| self.e1(k))
    }

    /// `ELBO(0)`.
    pub fn elbo_post(&self) -> f64 {
        self.mean(|k| self.e0(k))
    }

    /// `ELBO(1) - ELBO(0)`.
    pub fn delta(&self) -> f64 {
        self.elbo_enc() - self.elbo_post()
    }

    pub fn skew_enc(&self, alpha: f64) -> f64 {
        self.mean(|k| self.skew_enc_draw(k, alpha))
    }

    pub fn skew_post(&self, alpha: f64) -> f64 {
        self.mean(|k| self.skew_post_draw(k, alpha))
    }

    /// `ELBO(alpha)`; callers guarantee `alpha` in `[0, 1]`.
    pub fn total(&self, alpha: f64) -> f64 {
        self.mean(|k| self.total_draw(k, alpha))
    }

    /// Per-draw values whose mean is [`ElboTerms::total`].
    pub fn draw_totals(&self, alpha: f64) -> Vec<f64> {
        (0..self.k()).map(|k| self.total_draw(k, alpha)).collect()
    }

    pub fn breakdown(&self, alpha: f64) -> Result<ElboBreakdown> {
        check_alpha(alpha)?;
        let b = ElboBreakdown {
            recon_enc: self.mean(|k| self.recon_enc[k]),
            recon_post: self.mean(|k| self.recon_post[k]),
            kl_enc: self.kl_enc,
            kl_post: self.kl_post,
            skew_enc: self.skew_enc(alpha),
            skew_post: self.skew_post(alpha),
            alpha,
            total: self.total(alpha),
        };
        if !b.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite ELBO: {b:?}")));
        }
        Ok(b)
    }
}

/// `ELBO(1)` or `ELBO(0)` for one sample: mean reconstruction over the `K`
/// noise rows minus the closed-form KL to the label prior.
pub fn elbo_endpoint(model: &CiModel, x: &[f64], u: &[f64], which: Endpoint, noise: &Tensor) -> Result<f64> {
    check_noise(noise, model.d_z())?;
    let p = posterior_of(model, x, u)?;
    let q = match which {
        Endpoint::Post => &p.post,
        Endpoint::Enc => &p.enc,
    };
    let kl = q.kl(&p.prior)?;
    let recon = model.recon_batch(x, &samples(q, noise)?)?;
    let mut s = 0.0;
    for r in &recon {
        s += r - kl;
    }
    let v = s / recon.len() as f64;
    if !v.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite ELBO endpoint: kl {kl}, recon {:?}",
            recon.iter().find(|r| !r.is_finite())
        )));
    }
    Ok(v)
}

/// `ELBO(alpha)` for one sample with its decomposition.
pub fn elbo_alpha(model: &CiModel, x: &[f64], u: &[f64], alpha: f64, noise: &Tensor) -> Result<ElboBreakdown> {
    check_alpha(alpha)?;
    let p = posterior_of(model, x, u)?;
    ElboTerms::compute(model, x, &p, noise)?.breakdown(alpha)
}

/// `KL(p || (1 - a) p + a q)` from draws `p.mean + p.std * noise_k`.
pub fn skew_divergence(p: &DiagGaussian, q: &DiagGaussian, a: f64, noise: &Tensor) -> Result<McEstimate> {
    check_alpha(a)?;
    check_noise(noise, p.dim())?;
    if q.dim() != p.dim() {
        return Err(Error::dim("skew divergence dimension", p.dim(), q.dim()));
    }
    let z = samples(p, noise)?;
    let draws: Vec<f64> = (0..z.rows())
        .map(|k| {
            let lp = p.log_pdf(z.row(k))?;
            let lq = q.log_pdf(z.row(k))?;
            Ok(-log_mix_exp(lq - lp, 0.0, a))
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_draws(&draws))
}

/// `1 / max SNR` over the statistics `z_j` and `z_j^2`, clamped.
pub fn estimate_epsilon(q_enc: &DiagGaussian, q_post: &DiagGaussian) -> Result<f64> {
    if q_enc.dim() != q_post.dim() {
        return Err(Error::dim("epsilon dimension", q_enc.dim(), q_post.dim()));
    }
    let mut best: f64 = 0.0;
    for j in 0..q_enc.dim() {
        for kind in [Statistic::Linear, Statistic::Square] {
            let (me, ve) = q_enc.coord_moments(j, kind)?;
            let (mp, vp) = q_post.coord_moments(j, kind)?;
            best = best.max((me - mp).powi(2) / ve.max(vp));
        }
    }
    Ok((1.0 / best).clamp(EPSILON_MIN, EPSILON_MAX))
}

fn lb_root(epsilon: f64) -> f64 {
    (1.0 + 4.0 * epsilon).sqrt()
}

/// Closed-form maximizer of the LB function, clamped to `[0, 1]`:
/// `(1 - s)/2 + s sigmoid(s delta)` with `s = sqrt(1 + 4 epsilon)`.
pub fn alpha_star_formula(epsilon: f64, delta: f64) -> f64 {
    let s = lb_root(epsilon);
    // sigmoid(x) - 1/2 = tanh(x/2)/2, exact at delta = 0.
    let v = 0.5 + 0.5 * s * (0.5 * s * delta).tanh();
    v.clamp(0.0, 1.0)
}

/// Largest `|delta|` for which [`alpha_star_formula`] needs no clamping.
pub fn interior_delta_bound(epsilon: f64) -> f64 {
    let s = lb_root(epsilon);
    ((s + 1.0).powi(2) / (4.0 * epsilon)).ln() / s
}

/// Maximizer of `ELBO(alpha)` over `grid_size` equally spaced weights
/// including both endpoints. Ties go to the smaller weight.
pub fn grid_argmax(terms: &ElboTerms, grid_size: usize) -> Result<(f64, f64)> {
    if grid_size < 2 {
        return Err(Error::InvalidArgument("grid needs at least two points".into()));
    }
    let last = (grid_size - 1) as f64;
    let mut best = (0.0, terms.total(0.0));
    for i in 1..grid_size {
        let alpha = i as f64 / last;
        let v = terms.total(alpha);
        if v > best.1 {
            best = (alpha, v);
        }
    }
    Ok(best)
}

pub fn alpha_star_grid(model: &CiModel, x: &[f64], u: &[f64], grid_size: usize, noise: &Tensor) -> Result<(f64, f64)> {
    let p = posterior_of(model, x, u)?;
    grid_argmax(&ElboTerms::compute(model, x, &p, noise)?, grid_size)
}

fn check_lb_args(alpha: f64, epsilon: f64) -> Result<()> {
    check_alpha(alpha)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
    }
    Ok(())
}

fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.abs().ln()
    }
}

/// Lower bound on `ELBO(alpha) - ELBO(0)` as a function of the mixture
/// weight, the mismatch `epsilon` and `delta = ELBO(1) - ELBO(0)`.
pub fn lb_value(alpha: f64, epsilon: f64, delta: f64) -> Result<f64> {
    check_lb_args(alpha, epsilon)?;
    let s = lb_root(epsilon);
    let (tp, tm) = ((1.0 + s) / 2.0, (1.0 - s) / 2.0);
    // Offsets written so that both endpoints cancel exactly.
    let (ap, am) = ((2.0 * alpha - 1.0 - s) / 2.0, (2.0 * alpha - 1.0 + s) / 2.0);
    let bracket = (xlnx(ap) + xlnx(tp)) - (xlnx(am) + xlnx(tm));
    Ok(alpha * delta + bracket / s)
}

/// First and second derivatives of [`lb_value`] in `alpha`.
pub fn lb_derivative(alpha: f64, epsilon: f64, delta: f64) -> Result<(f64, f64)> {
    check_lb_args(alpha, epsilon)?;
    let s = lb_root(epsilon);
    let (tp, tm) = ((1.0 + s) / 2.0, (1.0 - s) / 2.0);
    let first = delta + ((alpha - tp).abs().ln() - (alpha - tm).abs().ln()) / s;
    let second = -1.0 / (alpha * (1.0 - alpha) + epsilon);
    Ok((first, second))
}

/// Per-sample outcome of the grid-versus-formula comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub sample_id: usize,
    pub delta_1_0: f64,
    pub epsilon: f64,
    pub alpha_grid: f64,
    pub alpha_formula: f64,
    pub elbo_0: f64,
    pub elbo_1: f64,
    pub elbo_star: f64,
}

pub fn alpha_record(
    model: &CiModel,
    sample_id: usize,
    x: &[f64],
    u: &[f64],
    grid_size: usize,
    noise: &Tensor,
) -> Result<AlphaRecord> {
    let p = posterior_of(model, x, u)?;
    let terms = ElboTerms::compute(model, x, &p, noise)?;
    let (alpha_grid, elbo_star) = grid_argmax(&terms, grid_size)?;
    let epsilon = estimate_epsilon(&p.enc, &p.post)?;
    let delta = terms.delta();
    Ok(AlphaRecord {
        sample_id,
        delta_1_0: delta,
        epsilon,
        alpha_grid,
        alpha_formula: alpha_star_formula(epsilon, delta),
        elbo_0: terms.elbo_post(),
        elbo_1: terms.elbo_enc(),
        elbo_star,
    })
}

/// Buckets a weight into 0 (exactly 0), 1 (interior) or 2 (exactly 1).
pub fn alpha_bucket(alpha: f64) -> usize {
    if alpha <= 0.0 {
        0
    } else if alpha >= 1.0 {
        2
    } else {
        1
    }
}

/// 3x3 contingency table: rows grid bucket, columns formula bucket.
pub fn contingency(records: &[AlphaRecord]) -> [[usize; 3]; 3] {
    let mut t = [[0; 3]; 3];
    for r in records {
        t[alpha_bucket(r.alpha_grid)][alpha_bucket(r.alpha_formula)] += 1;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::normal_pdf;
    use crate::rng::{self, normals};
    use crate::toy::ConjugateToy;
    use rand::Rng as _;

    fn noise(seed: u64, k: usize, d: usize) -> Tensor {
        Tensor::matrix(k, d, normals(&mut rng::stream(seed, 0, 0), k * d)).unwrap()
    }

    fn g(m: &[f64], s: &[f64]) -> DiagGaussian {
        DiagGaussian::from_std(m.to_vec(), s).unwrap()
    }

    /// Adaptive Simpson quadrature.
    fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let diff = left + right - whole;
            // A few forced levels guard against spurious early agreement.
            if depth == 0 || (depth < 46 && diff.abs() <= 15.0 * tol) {
                left + right + diff / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    fn lb_quadrature(alpha: f64, eps: f64, delta: f64) -> f64 {
        let f1 = |t: f64| (1.0 - t) / (t * (1.0 - t) + eps);
        let f2 = |t: f64| t / (t * (1.0 - t) + eps);
        alpha * delta
            + alpha * integrate(&f1, alpha, 1.0, 1e-13)
            + (1.0 - alpha) * integrate(&f2, 0.0, alpha, 1e-13)
    }

    #[test]
    fn skew_divergence_endpoints() {
        let p = g(&[0.3, -0.2], &[0.7, 1.4]);
        let q = g(&[1.0, 0.5], &[1.1, 0.6]);
        let e = noise(1, 8192, 2);
        assert_eq!(skew_divergence(&p, &q, 0.0, &e).unwrap().value, 0.0);
        let full = skew_divergence(&p, &q, 1.0, &e).unwrap();
        assert!((full.value - p.kl(&q).unwrap()).abs() < 3.0 * full.se);
        assert!(skew_divergence(&p, &q, 1.5, &e).is_err());
    }

    #[test]
    fn skew_divergence_matches_quadrature() {
        let p = g(&[0.0], &[1.0]);
        let q = g(&[3.0], &[1.0]);
        let f = |x: f64| {
            let (a, b) = (normal_pdf(x, 0.0, 1.0), normal_pdf(x, 3.0, 1.0));
            if a == 0.0 {
                0.0
            } else {
                a * (a / (0.5 * a + 0.5 * b)).ln()
            }
        };
        let quad = integrate(&f, -40.0, 40.0, 1e-12);
        let est = skew_divergence(&p, &q, 0.5, &noise(2, 8192, 1)).unwrap();
        assert!((est.value - quad).abs() < 3.0 * est.se, "{est:?} vs {quad}");
    }

    #[test]
    fn epsilon_examples() {
        let a = g(&[0.2, 0.4], &[1.0, 2.0]);
        assert_eq!(estimate_epsilon(&a, &a).unwrap(), EPSILON_MAX);
        let eps = estimate_epsilon(&g(&[3.0], &[1.0]), &g(&[0.0], &[1.0])).unwrap();
        assert!((eps - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn epsilon_matches_first_principles() {
        let mut r = rng::stream(3, 0, 0);
        let mut v = || -> f64 { r.random_range(-1.0..1.0) };
        let (me, se) = ([v(), v()], [v().exp(), v().exp()]);
        let (mp, sp) = ([v(), v()], [v().exp(), v().exp()]);
        let mut best: f64 = 0.0;
        for j in 0..2 {
            // E[z] and Var[z].
            let lin = (me[j] - mp[j]).powi(2) / (se[j] * se[j]).max(sp[j] * sp[j]);
            // E[z^2] = m^2 + s^2, Var[z^2] = E[z^4] - E[z^2]^2 with E[z^4] = m^4 + 6 m^2 s^2 + 3 s^4.
            let m2 = |m: f64, s: f64| m * m + s * s;
            let v2 = |m: f64, s: f64| m.powi(4) + 6.0 * m * m * s * s + 3.0 * s.powi(4) - m2(m, s).powi(2);
            let sq = (m2(me[j], se[j]) - m2(mp[j], sp[j])).powi(2) / v2(me[j], se[j]).max(v2(mp[j], sp[j]));
            best = best.max(lin).max(sq);
        }
        let eps = estimate_epsilon(&g(&me, &se), &g(&mp, &sp)).unwrap();
        assert!((eps - 1.0 / best).abs() <= 1e-12 * eps.max(1.0));
    }

    #[test]
    fn formula_examples() {
        assert!((alpha_star_formula(0.3, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(alpha_star_formula(7.0, 0.0), 0.5);
        assert_eq!(alpha_star_formula(0.01, 1e6), 1.0);
        assert_eq!(alpha_star_formula(0.01, -1e6), 0.0);
        // sigmoid(s) s + (1 - s)/2 with s = sqrt(1 + 4e-6), computed with the
        // logistic written out in terms of exp.
        let s: f64 = (1.0f64 + 4e-6).sqrt();
        let reference = s / (1.0 + (-s).exp()) + (1.0 - s) / 2.0;
        assert!((alpha_star_formula(1e-6, 1.0) - reference).abs() < 1e-14);
        assert!((alpha_star_formula(1e-6, 1.0) - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn lb_examples() {
        for (eps, delta) in [(0.1, 2.0), (3.0, -1.0), (1e-4, 0.0)] {
            assert_eq!(lb_value(0.0, eps, delta).unwrap(), 0.0);
        }
        for i in 0..=10 {
            let a = i as f64 / 10.0;
            let v = lb_value(a, 0.25, 0.0).unwrap();
            assert!(v >= -1e-12);
            assert!((v - lb_quadrature(a, 0.25, 0.0)).abs() < 1e-9, "{a}: {v} vs {}", lb_quadrature(a, 0.25, 0.0));
        }
        assert_eq!(lb_derivative(0.5, 0.25, 0.3).unwrap().1, -2.0);
        assert!(lb_value(1.2, 0.1, 0.0).is_err());
        assert!(lb_value(0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn lb_matches_quadrature() {
        let mut r = rng::stream(4, 0, 0);
        for _ in 0..50 {
            let a = r.random_range(0.0..=1.0);
            let eps = 10f64.powf(r.random_range(-3.0..1.0));
            let d = r.random_range(-5.0..5.0);
            let v = lb_value(a, eps, d).unwrap();
            let q = lb_quadrature(a, eps, d);
            assert!((v - q).abs() < 1e-8, "a={a} eps={eps} d={d}: {v} vs {q}");
        }
    }

    #[test]
    fn lb_derivative_matches_finite_differences() {
        let mut r = rng::stream(5, 0, 0);
        let h = 1e-6;
        for _ in 0..100 {
            let a = r.random_range(0.01..0.99);
            let eps = 10f64.powf(r.random_range(-2.0..1.0));
            let d = r.random_range(-3.0..3.0);
            let fd = (lb_value(a + h, eps, d).unwrap() - lb_value(a - h, eps, d).unwrap()) / (2.0 * h);
            let (first, _) = lb_derivative(a, eps, d).unwrap();
            assert!((fd - first).abs() <= 1e-4 * first.abs().max(1e-2), "{fd} vs {first}");
        }
    }

    #[test]
    fn formula_is_stationary_and_margin_holds() {
        let mut r = rng::stream(6, 0, 0);
        let mut interior = 0;
        for _ in 0..200 {
            let eps = 10f64.powf(r.random_range(-3.0..1.0));
            let d = r.random_range(-8.0..8.0);
            let a = alpha_star_formula(eps, d);
            let is_interior = d.abs() <= interior_delta_bound(eps);
            assert_eq!(is_interior, a > 0.0 && a < 1.0, "eps={eps} d={d} a={a}");
            if is_interior {
                interior += 1;
                assert!(lb_derivative(a, eps, d).unwrap().0.abs() < 1e-10);
            }
            let (_, second) = lb_derivative(a, eps, d).unwrap();
            assert!(second < 0.0);
        }
        assert!(interior > 20);
        for _ in 0..200 {
            let eps: f64 = r.random_range(1e-4..0.05);
            let d = r.random_range(eps.ln()..-eps.ln());
            assert!(lb_value(alpha_star_formula(eps, d), eps, d).unwrap() >= 0.0);
        }
    }

    #[test]
    fn endpoints_and_tie_break() {
        let toy = ConjugateToy::default();
        let m = toy.exact_model().unwrap();
        let (x, u) = ([0.8], [0.3]);
        let e = noise(7, 64, 1);
        let b0 = elbo_alpha(&m, &x, &u, 0.0, &e).unwrap();
        let b1 = elbo_alpha(&m, &x, &u, 1.0, &e).unwrap();
        assert_eq!(b0.total, elbo_endpoint(&m, &x, &u, Endpoint::Post, &e).unwrap());
        assert_eq!(b1.total, elbo_endpoint(&m, &x, &u, Endpoint::Enc, &e).unwrap());
        assert_eq!(b0.skew_post, 0.0);
        assert_eq!(b1.skew_enc, 0.0);

        let tied = toy.tied_model().unwrap();
        let p = posterior_of(&tied, &x, &u).unwrap();
        let terms = ElboTerms::compute(&tied, &x, &p, &e).unwrap();
        let v0 = terms.total(0.0);
        for i in 0..=100 {
            assert_eq!(terms.total(i as f64 / 100.0), v0);
        }
        assert_eq!(grid_argmax(&terms, 1001).unwrap(), (0.0, v0));
        assert_eq!(
            elbo_endpoint(&tied, &x, &u, Endpoint::Post, &e).unwrap(),
            elbo_endpoint(&tied, &x, &u, Endpoint::Enc, &e).unwrap()
        );
    }

    #[test]
    fn breakdown_invariant_and_grid_dominance() {
        let toy = ConjugateToy::default();
        let m = toy.perturbed_model(0.7).unwrap();
        let e = noise(8, 64, 1);
        for (x, u) in [([0.5], [0.1]), ([-1.2], [0.9]), ([2.0], [-0.4])] {
            for a in [0.0, 0.2, 0.5, 0.9, 1.0] {
                let b = elbo_alpha(&m, &x, &u, a, &e).unwrap();
                let rhs = a * (b.recon_enc - b.kl_enc)
                    + (1.0 - a) * (b.recon_post - b.kl_post)
                    + a * b.skew_enc
                    + (1.0 - a) * b.skew_post;
                assert!((b.total - rhs).abs() < 1e-10);
                assert!(b.skew_enc >= 0.0 || a == 0.0);
            }
            let (a, v) = alpha_star_grid(&m, &x, &u, 101, &e).unwrap();
            assert!((0.0..=1.0).contains(&a));
            let e0 = elbo_endpoint(&m, &x, &u, Endpoint::Post, &e).unwrap();
            let e1 = elbo_endpoint(&m, &x, &u, Endpoint::Enc, &e).unwrap();
            assert!(v >= e0.max(e1));
        }
        assert!(elbo_alpha(&m, &[0.0], &[0.0], -0.1, &e).is_err());
    }

    #[test]
    fn exact_posterior_elbo_is_the_marginal_likelihood() {
        let toy = ConjugateToy::default();
        let m = toy.exact_model().unwrap();
        let (x, u) = ([1.1], [-0.5]);
        let e = noise(9, 4096, 1);
        let p = posterior_of(&m, &x, &u).unwrap();
        let terms = ElboTerms::compute(&m, &x, &p, &e).unwrap();
        let est = McEstimate::from_draws(&terms.draw_totals(0.0));
        let truth = toy.log_marginal(x[0], u[0]);
        assert!((est.value - truth).abs() <= 3.0 * est.se + 1e-12, "{est:?} vs {truth}");
        // Prior as the variational distribution: the KL term vanishes.
        let collapsed = toy.collapsed_model().unwrap();
        let b = elbo_alpha(&collapsed, &x, &u, 0.0, &e).unwrap();
        assert!(b.kl_post < 1e-10);
    }

    #[test]
    fn tightness_on_the_conjugate_toy() {
        let toy = ConjugateToy::default();
        let m = toy.perturbed_model(0.5).unwrap();
        let e = noise(10, 4096, 1);
        let (x, u) = ([0.4], [0.6]);
        let p = posterior_of(&m, &x, &u).unwrap();
        let terms = ElboTerms::compute(&m, &x, &p, &e).unwrap();
        let truth = toy.log_marginal(x[0], u[0]);
        for i in 0..=10 {
            let est = McEstimate::from_draws(&terms.draw_totals(i as f64 / 10.0));
            assert!(est.value <= truth + 3.0 * est.se);
        }
    }

    #[test]
    fn contingency_counts() {
        let rec = |g: f64, f: f64| AlphaRecord {
            sample_id: 0,
            delta_1_0: 0.0,
            epsilon: 1.0,
            alpha_grid: g,
            alpha_formula: f,
            elbo_0: 0.0,
            elbo_1: 0.0,
            elbo_star: 0.0,
        };
        let t = contingency(&[rec(0.0, 0.0), rec(1.0, 0.7), rec(0.4, 1.0), rec(1.0, 1.0)]);
        assert_eq!(t[0][0], 1);
        assert_eq!(t[1][2], 1);
        assert_eq!(t[2][1], 1);
        assert_eq!(t[2][2], 1);
        assert_eq!(t.iter().flatten().sum::<usize>(), 4);
    }
}
