//! Evaluation metrics: MCC, COD, SSW/SST, Monte-Carlo conditional
//! log-likelihood and the posterior-collapse score.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::CiModel;
use crate::objective::McEstimate;
use crate::rng::{self, normals, tags};
use crate::synthdata::{LabeledDataset, SplitTag};

/// Largest latent dimension handled by exhaustive assignment search.
pub const MAX_ASSIGNMENT_DIM: usize = 8;
pub const RIDGE: f64 = 1e-8;
const JACKKNIFE_BLOCKS: usize = 10;

fn check_pair(a: &Tensor, b: &Tensor, min_rows: usize) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "metric",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    if a.rows() < min_rows {
        return Err(Error::InvalidArgument(format!(
            "metric needs at least {min_rows} rows, got {}",
            a.rows()
        )));
    }
    Ok(())
}

fn col(t: &Tensor, j: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.row(i)[j]).collect()
}

/// Pearson correlation; `None` if either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Visits every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Mean absolute correlation under the best one-to-one assignment
/// (`m[i][j]` pairs true `i` with estimated `j`).
pub fn best_assignment(m: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let d = m.len();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for_each_permutation(d, |p| {
        let s: f64 = p.iter().enumerate().map(|(i, &j)| m[i][j]).sum();
        if s > best.1 {
            best = (p.to_vec(), s);
        }
    });
    let mean = best.1 / d as f64;
    (best.0, mean)
}

/// Mean correlation coefficient between true and estimated latents.
pub fn mcc(z_true: &Tensor, z_est: &Tensor) -> Result<f64> {
    check_pair(z_true, z_est, 3)?;
    let d = z_true.cols();
    if d > MAX_ASSIGNMENT_DIM {
        return Err(Error::InvalidArgument(format!(
            "assignment search supports d <= {MAX_ASSIGNMENT_DIM}, got {d}"
        )));
    }
    let est: Vec<Vec<f64>> = (0..d).map(|j| col(z_est, j)).collect();
    let mut m = vec![vec![0.0; d]; d];
    for (i, row) in m.iter_mut().enumerate() {
        let t = col(z_true, i);
        for (j, e) in est.iter().enumerate() {
            row[j] = match pearson(&t, e) {
                Some(r) => r.abs(),
                None => {
                    warn!("constant column in correlation ({i}, {j}); using 0");
                    0.0
                }
            };
        }
    }
    Ok(best_assignment(&m).1)
}

/// Mean R^2 of affine least-squares fits from `z_est` to each true coordinate.
pub fn cod(z_true: &Tensor, z_est: &Tensor) -> Result<f64> {
    check_pair(z_true, z_est, z_true.cols() + 2)?;
    let (n, d) = (z_est.rows(), z_est.cols());
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { z_est.row(i)[j - 1] });
    let gram = design.transpose() * &design;
    let sv = gram.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let chol = if smin > smax * 1e-12 {
        gram.clone().cholesky()
    } else {
        None
    };
    let chol = match chol {
        Some(c) => c,
        None => {
            warn!("rank-deficient design in COD; adding ridge {RIDGE}");
            let ridged = gram + DMatrix::identity(d + 1, d + 1) * RIDGE * smax.max(1.0);
            ridged
                .cholesky()
                .ok_or_else(|| Error::Numeric("ridge-regularized COD system is singular".into()))?
        }
    };
    let mut total = 0.0;
    for j in 0..z_true.cols() {
        let y = DVector::from_iterator(n, col(z_true, j));
        let beta = chol.solve(&(design.transpose() * &y));
        let resid = &y - &design * beta;
        let sse = resid.norm_squared();
        let mean = y.mean();
        let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };
        total += r2.clamp(0.0, 1.0);
    }
    Ok(total / z_true.cols() as f64)
}

/// Within-class over total sum of squares.
pub fn ssw_sst(reps: &Tensor, labels: &[usize]) -> Result<f64> {
    if reps.rows() != labels.len() {
        return Err(Error::dim("label count", reps.rows(), labels.len()));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let d = reps.cols();
    let mut sums = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    let mut grand = vec![0.0; d];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (j, v) in reps.row(i).iter().enumerate() {
            sums[c][j] += v;
            grand[j] += v;
        }
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::InvalidArgument("SSW/SST needs at least two classes".into()));
    }
    let n = labels.len() as f64;
    let (mut ssw, mut sst) = (0.0, 0.0);
    for (i, &c) in labels.iter().enumerate() {
        for (j, v) in reps.row(i).iter().enumerate() {
            ssw += (v - sums[c][j] / counts[c] as f64).powi(2);
            sst += (v - grand[j] / n).powi(2);
        }
    }
    if sst == 0.0 {
        return Ok(0.0);
    }
    Ok((ssw / sst).clamp(0.0, 1.0))
}

/// Log-mean-exp of `values` with its delta-method standard error.
pub fn log_mean_exp(values: &[f64]) -> Result<McEstimate> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Numeric(format!(
            "log-mean-exp over {} summands has no finite maximum ({m})",
            values.len()
        )));
    }
    let w: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let s = w.len() as f64;
    let mean = w.iter().sum::<f64>() / s;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s - 1.0).max(1.0);
    Ok(McEstimate {
        value: m + mean.ln(),
        se: (var / s).sqrt() / mean,
    })
}

/// `log p(x | u)` estimated from `s` draws of the label prior.
pub fn mc_loglik(model: &CiModel, x: &[f64], u: &[f64], s: usize, seed: u64) -> Result<McEstimate> {
    if s < 2 {
        return Err(Error::InvalidArgument("need at least two prior draws".into()));
    }
    let prior = model.priors(&Tensor::matrix(1, u.len(), u.to_vec())?)?.remove(0);
    let mut r = rng::stream(seed, tags::LOGLIK, 0);
    let d = model.d_z();
    let rows: Vec<Vec<f64>> = (0..s)
        .map(|_| prior.sample(&normals(&mut r, d)))
        .collect::<Result<_>>()?;
    let l = model.recon_batch(x, &Tensor::from_rows(&rows)?)?;
    log_mean_exp(&l)
}

/// Mean `KL(q_post || prior)` over the given rows.
pub fn collapse_score(model: &CiModel, x: &Tensor, u: &Tensor) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("collapse score needs at least one row".into()));
    }
    let ps = model.posteriors(x, u)?;
    let mut total = 0.0;
    for p in &ps {
        total += p.post.kl(&p.prior)?;
    }
    Ok(total / ps.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mcc_post: Option<Metric>,
    pub mcc_enc: Option<Metric>,
    pub cod_post: Option<Metric>,
    pub cod_enc: Option<Metric>,
    pub loglik: Metric,
    pub ssw_sst: Option<Metric>,
    pub collapse_score: Metric,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 14] = [
        "mcc_post", "mcc_post_se", "mcc_enc", "mcc_enc_se", "cod_post", "cod_post_se", "cod_enc",
        "cod_enc_se", "loglik", "loglik_se", "ssw_sst", "ssw_sst_se", "collapse_score",
        "collapse_score_se",
    ];

    pub fn csv_values(&self) -> Vec<f64> {
        let opt = |m: &Option<Metric>| m.map_or([f64::NAN, f64::NAN], |m| [m.value, m.se]);
        let mut v = Vec::new();
        for m in [&self.mcc_post, &self.mcc_enc, &self.cod_post, &self.cod_enc] {
            v.extend(opt(m));
        }
        v.extend([self.loglik.value, self.loglik.se]);
        v.extend(opt(&self.ssw_sst));
        v.extend([self.collapse_score.value, self.collapse_score.se]);
        v
    }

    /// Checks every metric against its declared range.
    pub fn in_range(&self) -> bool {
        let unit = |m: &Option<Metric>| m.is_none_or(|m| (0.0..=1.0).contains(&m.value) && m.se >= 0.0);
        unit(&self.mcc_post)
            && unit(&self.mcc_enc)
            && unit(&self.cod_post)
            && unit(&self.cod_enc)
            && unit(&self.ssw_sst)
            && self.loglik.value.is_finite()
            && self.collapse_score.value >= 0.0
    }
}

/// Delete-a-block jackknife standard error of `stat` over rows.
fn jackknife(n: usize, stat: impl Fn(&[usize]) -> Result<f64>) -> Result<f64> {
    let blocks = JACKKNIFE_BLOCKS.min(n);
    let mut thetas = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let (lo, hi) = (b * n / blocks, (b + 1) * n / blocks);
        let keep: Vec<usize> = (0..n).filter(|&i| i < lo || i >= hi).collect();
        thetas.push(stat(&keep)?);
    }
    let k = blocks as f64;
    let mean = thetas.iter().sum::<f64>() / k;
    Ok(((k - 1.0) / k * thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>()).sqrt())
}

fn with_se(n: usize, full: f64, stat: impl Fn(&[usize]) -> Result<f64>) -> Result<Metric> {
    Ok(Metric {
        value: full,
        se: jackknife(n, stat)?,
        n,
    })
}

fn mean_se(values: &[f64]) -> Metric {
    let e = McEstimate::from_draws(values);
    Metric {
        value: e.value,
        se: if values.len() > 1 { e.se } else { 0.0 },
        n: values.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Prior draws per sample for the log-likelihood.
    pub loglik_draws: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            loglik_draws: 512,
            seed: 0,
        }
    }
}

/// Full metric report for one split. Representations are conditional means.
pub fn evaluate(model: &CiModel, ds: &LabeledDataset, split: SplitTag, opts: &EvalOptions) -> Result<MetricReport> {
    let sub = ds.subset(split);
    let n = sub.rows.len();
    if n == 0 {
        return Err(Error::Data(format!("split {} is empty", split.as_str())));
    }
    if ds.d_x() != model.d_x() || ds.d_u() != model.d_u() {
        return Err(Error::dim("dataset observation width", model.d_x(), ds.d_x()));
    }
    let ps = model.posteriors(&sub.x, &sub.u)?;
    let means = |enc: bool| -> Result<Tensor> {
        let rows: Vec<&[f64]> = ps.iter().map(|p| if enc { p.enc.mean() } else { p.post.mean() }).collect();
        Tensor::from_rows(&rows)
    };
    let (post_m, enc_m) = (means(false)?, means(true)?);

    let paired = |f: fn(&Tensor, &Tensor) -> Result<f64>, est: &Tensor| -> Result<Option<Metric>> {
        match &sub.z {
            Some(z) if z.cols() == est.cols() && n > est.cols() + 2 => {
                let full = f(z, est)?;
                Ok(Some(with_se(n, full, |keep| f(&z.select_rows(keep), &est.select_rows(keep)))?))
            }
            _ => Ok(None),
        }
    };

    let labels: Vec<usize> = {
        let all = ds.class_labels();
        sub.rows.iter().map(|&i| all[i]).collect()
    };
    let ssw = if labels.iter().any(|&l| l != labels[0]) {
        let full = ssw_sst(&post_m, &labels)?;
        Some(with_se(n, full, |keep| {
            let l: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
            ssw_sst(&post_m.select_rows(keep), &l)
        })?)
    } else {
        None
    };

    let mut lls = Vec::with_capacity(n);
    for (k, &row) in sub.rows.iter().enumerate() {
        let seed = rng::stream(opts.seed, tags::LOGLIK, row as u64);
        let seed = rand::Rng::random::<u64>(&mut { seed });
        lls.push(mc_loglik(model, sub.x.row(k), sub.u.row(k), opts.loglik_draws, seed)?.value);
    }
    let kls: Vec<f64> = ps.iter().map(|p| p.post.kl(&p.prior)).collect::<Result<_>>()?;

    Ok(MetricReport {
        mcc_post: paired(mcc, &post_m)?,
        mcc_enc: paired(mcc, &enc_m)?,
        cod_post: paired(cod, &post_m)?,
        cod_enc: paired(cod, &enc_m)?,
        loglik: mean_se(&lls),
        ssw_sst: ssw,
        collapse_score: mean_se(&kls),
    })
}
