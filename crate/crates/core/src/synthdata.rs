//! Synthetic benchmark generators and the on-disk dataset format.
//!
//! Each scheme draws a covariate `u`, a latent `z | u` from a Gaussian whose
//! mean traces a curve in the plane, and an observation
//! `x = flow(pad(z)) + N(0, I)` through a fixed random coupling stack.
//!
//! A dataset directory holds `manifest.json` plus `x.csv`, `u.csv`, optional
//! `z.csv` and `split.csv`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flows::{pad_batch, CouplingStack};
use crate::rng::{self, normals, tags};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_D_X: usize = 100;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];
/// Lower bound applied to conditional latent variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Number of quantile bins used as classes for scalar covariates.
pub const COVARIATE_BINS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scheme {
    Sine,
    Quadratic,
    TwoCircles,
    External,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sine => "sine",
            Scheme::Quadratic => "quadratic",
            Scheme::TwoCircles => "two_circles",
            Scheme::External => "external",
        }
    }

    pub fn d_u(self) -> usize {
        match self {
            Scheme::TwoCircles => 3,
            _ => 1,
        }
    }

    pub fn d_z(self) -> usize {
        2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme: Scheme,
    pub seed: u64,
    pub flow_seed: u64,
    pub rng: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: Tensor,
    pub u: Tensor,
    pub z: Option<Tensor>,
    pub split: Vec<SplitTag>,
    pub provenance: Provenance,
}

/// Rows of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Subset {
    pub rows: Vec<usize>,
    pub x: Tensor,
    pub u: Tensor,
    pub z: Option<Tensor>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn d_u(&self) -> usize {
        self.u.cols()
    }

    pub fn d_z(&self) -> Option<usize> {
        self.z.as_ref().map(|z| z.cols())
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == tag).collect()
    }

    pub fn counts(&self) -> SplitCounts {
        let count = |t| self.split.iter().filter(|&&s| s == t).count();
        SplitCounts {
            train: count(SplitTag::Train),
            val: count(SplitTag::Val),
            test: count(SplitTag::Test),
        }
    }

    pub fn subset(&self, tag: SplitTag) -> Subset {
        self.select(self.indices(tag))
    }

    pub fn select(&self, rows: Vec<usize>) -> Subset {
        Subset {
            x: self.x.select_rows(&rows),
            u: self.u.select_rows(&rows),
            z: self.z.as_ref().map(|z| z.select_rows(&rows)),
            rows,
        }
    }

    /// Class ids for within/total sum-of-squares: the circle index for the
    /// two-circles scheme, otherwise quantile bins of the first covariate.
    pub fn class_labels(&self) -> Vec<usize> {
        if self.provenance.scheme == Scheme::TwoCircles {
            return (0..self.len())
                .map(|i| if self.u.row(i)[1] >= 0.5 { 0 } else { 1 })
                .collect();
        }
        let first: Vec<f64> = (0..self.len()).map(|i| self.u.row(i)[0]).collect();
        quantile_bins(&first, COVARIATE_BINS)
    }

    fn check(&self) -> Result<()> {
        let n = self.x.rows();
        if self.u.rows() != n || self.split.len() != n {
            return Err(Error::Data(format!(
                "row counts disagree: x {n}, u {}, split {}",
                self.u.rows(),
                self.split.len()
            )));
        }
        if let Some(z) = &self.z {
            if z.rows() != n {
                return Err(Error::Data(format!("row counts disagree: x {n}, z {}", z.rows())));
            }
        }
        if !self.x.is_finite() || !self.u.is_finite() {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Bin index of each value among `bins` equal-count bins.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; values.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / values.len().max(1);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// The fixed mixing function shared by all rows of a dataset.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub flow: CouplingStack,
    pub flow_seed: u64,
}

impl GroundTruth {
    pub fn new(d_x: usize, flow_seed: u64) -> Result<Self> {
        Ok(GroundTruth {
            flow: CouplingStack::ground_truth(d_x, flow_seed)?,
            flow_seed,
        })
    }

    pub fn d_x(&self) -> usize {
        self.flow.dim()
    }

    /// Noise-free observations `flow(pad(z))` for the rows of `z`.
    pub fn mix(&self, z: &Tensor) -> Result<Tensor> {
        self.flow.forward_batch(&pad_batch(z, self.d_x(), self.flow_seed)?)
    }
}

/// Conditional latent mean and per-coordinate variance given the scheme's
/// raw covariate (`u` itself; for two circles `(angle, radius)`).
pub fn latent_conditional(scheme: Scheme, u: &[f64]) -> Result<([f64; 2], f64)> {
    let (mean, var) = match scheme {
        Scheme::Sine => ([u[0], 2.0 * u[0].sin()], u[0] / (4.0 * PI)),
        Scheme::Quadratic => ([u[0], u[0] * u[0]], (2.0 * u[0] + PI) / (4.0 * PI)),
        Scheme::TwoCircles => {
            let (angle, radius) = (u[0], u[1]);
            (
                [radius * angle.cos(), radius * angle.sin()],
                (PI - angle.abs()) / (10.0 * PI),
            )
        }
        Scheme::External => {
            return Err(Error::InvalidArgument(
                "external datasets have no latent model".into(),
            ))
        }
    };
    Ok((mean, var.max(VARIANCE_FLOOR)))
}

fn generate_rows(scheme: Scheme, n: usize, seed: u64, gt: &GroundTruth) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be >= 1".into()));
    }
    let d_x = gt.d_x();
    let d_u = scheme.d_u();
    let mut u_data = Vec::with_capacity(n * d_u);
    let mut z_data = Vec::with_capacity(n * 2);
    let mut noise = Vec::with_capacity(n * d_x);
    for i in 0..n {
        let mut r = rng::stream(seed, tags::DATA_ROW, i as u64);
        let raw = match scheme {
            Scheme::Sine => vec![r.random_range(0.0..2.0 * PI)],
            Scheme::Quadratic => vec![r.random_range(-PI / 2.0..PI / 2.0)],
            Scheme::TwoCircles => {
                let angle = r.random_range(-PI..PI);
                let radius = if r.random_bool(0.5) { 1.0 } else { 2.0 };
                vec![angle, radius]
            }
            Scheme::External => {
                return Err(Error::InvalidArgument("cannot generate an external dataset".into()))
            }
        };
        let (mean, var) = latent_conditional(scheme, &raw)?;
        let e = normals(&mut r, 2);
        z_data.push(mean[0] + var.sqrt() * e[0]);
        z_data.push(mean[1] + var.sqrt() * e[1]);
        match scheme {
            Scheme::TwoCircles => {
                let first = raw[1] == 1.0;
                u_data.extend([raw[0], f64::from(u8::from(first)), f64::from(u8::from(!first))]);
            }
            _ => u_data.push(raw[0]),
        }
        noise.extend(normals(&mut r, d_x));
    }
    let z = Tensor::matrix(n, 2, z_data)?;
    let mut x = gt.mix(&z)?;
    for (v, e) in x.data_mut().iter_mut().zip(&noise) {
        *v += e;
    }
    let mut ds = LabeledDataset {
        x,
        u: Tensor::matrix(n, d_u, u_data)?,
        z: Some(z),
        split: vec![SplitTag::Train; n],
        provenance: Provenance {
            scheme,
            seed,
            flow_seed: gt.flow_seed,
            rng: rng::ALGORITHM.into(),
        },
    };
    split(&mut ds, DEFAULT_FRACTIONS, seed)?;
    Ok(ds)
}

/// `u ~ U(0, 2pi)`, `z | u ~ N((u, 2 sin u), u/(4 pi) I)`.
pub fn gen_sine(n: usize, seed: u64, gt: &GroundTruth) -> Result<LabeledDataset> {
    generate_rows(Scheme::Sine, n, seed, gt)
}

/// `u ~ U(-pi/2, pi/2)`, `z | u ~ N((u, u^2), (2u + pi)/(4 pi) I)`.
pub fn gen_quadratic(n: usize, seed: u64, gt: &GroundTruth) -> Result<LabeledDataset> {
    generate_rows(Scheme::Quadratic, n, seed, gt)
}

/// Angle `u1 ~ U(-pi, pi)`, radius 1 or 2 with equal odds,
/// `z | u ~ N((r cos u1, r sin u1), (pi - |u1|)/(10 pi) I)`.
/// Covariates are stored as `(angle, one-hot radius class)`.
pub fn gen_two_circles(n: usize, seed: u64, gt: &GroundTruth) -> Result<LabeledDataset> {
    generate_rows(Scheme::TwoCircles, n, seed, gt)
}

/// Generates a dataset with the default observation dimension.
pub fn generate(scheme: Scheme, n: usize, seed: u64, flow_seed: u64) -> Result<LabeledDataset> {
    generate_with(scheme, n, DEFAULT_D_X, seed, flow_seed)
}

/// As [`generate`] with an explicit observation width.
pub fn generate_with(scheme: Scheme, n: usize, d_x: usize, seed: u64, flow_seed: u64) -> Result<LabeledDataset> {
    let gt = GroundTruth::new(d_x, flow_seed)?;
    generate_rows(scheme, n, seed, &gt)
}

/// Split sizes for `n` rows: rounded train and validation shares, rest test.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<SplitCounts> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let train = ((n as f64) * fractions[0]).round() as usize;
    let val = (((n as f64) * fractions[1]).round() as usize).min(n - train);
    Ok(SplitCounts {
        train,
        val,
        test: n - train - val,
    })
}

/// Seeded shuffle then contiguous train/val/test assignment.
pub fn split(ds: &mut LabeledDataset, fractions: [f64; 3], seed: u64) -> Result<()> {
    let n = ds.len();
    let counts = split_counts(n, fractions)?;
    let perm = rng::permutation(&mut rng::stream(seed, tags::SPLIT, 0), n);
    for (rank, &i) in perm.iter().enumerate() {
        ds.split[i] = if rank < counts.train {
            SplitTag::Train
        } else if rank < counts.train + counts.val {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub scheme: Scheme,
    pub seed: u64,
    pub flow_seed: u64,
    pub rng: String,
    pub n: usize,
    pub d_x: usize,
    pub d_u: usize,
    pub d_z: Option<usize>,
    pub split_counts: SplitCounts,
    pub files: Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Files {
    pub x: String,
    pub u: String,
    pub z: Option<String>,
    pub split: String,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_matrix(path: &Path, prefix: &str, m: &Tensor) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record((0..m.cols()).map(|j| format!("{prefix}{j}")))
        .map_err(csv_err)?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|&v| fmt_f64(v)))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_matrix(path: &Path) -> Result<Tensor> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let cols = r.headers().map_err(csv_err)?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|_| {
                Error::Data(format!("{}: row {}: not a number: {field:?}", path.display(), rows + 1))
            })?);
        }
        rows += 1;
    }
    Tensor::matrix(rows, cols, data)
        .map_err(|_| Error::Data(format!("{}: ragged rows", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

impl LabeledDataset {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            scheme: self.provenance.scheme,
            seed: self.provenance.seed,
            flow_seed: self.provenance.flow_seed,
            rng: self.provenance.rng.clone(),
            n: self.len(),
            d_x: self.d_x(),
            d_u: self.d_u(),
            d_z: self.d_z(),
            split_counts: self.counts(),
            files: Files {
                x: "x.csv".into(),
                u: "u.csv".into(),
                z: self.z.as_ref().map(|_| "z.csv".into()),
                split: "split.csv".into(),
            },
        }
    }

    /// Writes the manifest and CSV files into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = self.manifest();
        write_matrix(&dir.join(&m.files.x), "x", &self.x)?;
        write_matrix(&dir.join(&m.files.u), "u", &self.u)?;
        if let (Some(z), Some(name)) = (&self.z, &m.files.z) {
            write_matrix(&dir.join(name), "z", z)?;
        }
        let path = dir.join(&m.files.split);
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(["split"]).map_err(csv_err)?;
        for tag in &self.split {
            w.write_record([tag.as_str()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        write_json(&dir.join("manifest.json"), &m)?;
        Ok(m)
    }

    /// Loads a dataset directory and checks it against its manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let m: Manifest = read_json(&dir.join("manifest.json"))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported dataset format version {}",
                m.format_version
            )));
        }
        let x = read_matrix(&dir.join(&m.files.x))?;
        let u = read_matrix(&dir.join(&m.files.u))?;
        let z = m.files.z.as_ref().map(|f| read_matrix(&dir.join(f))).transpose()?;
        let split_path: PathBuf = dir.join(&m.files.split);
        let mut r = csv::Reader::from_path(&split_path).map_err(|source| Error::Csv {
            path: split_path.clone(),
            source,
        })?;
        let mut split = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|source| Error::Csv {
                path: split_path.clone(),
                source,
            })?;
            let field = rec.get(0).unwrap_or("");
            split.push(SplitTag::parse(field.trim()).ok_or_else(|| {
                Error::Data(format!("{}: unknown split tag {field:?}", split_path.display()))
            })?);
        }
        let ds = LabeledDataset {
            x,
            u,
            z,
            split,
            provenance: Provenance {
                scheme: m.scheme,
                seed: m.seed,
                flow_seed: m.flow_seed,
                rng: m.rng.clone(),
            },
        };
        ds.check()?;
        if ds.len() != m.n || ds.d_x() != m.d_x || ds.d_u() != m.d_u || ds.d_z() != m.d_z {
            return Err(Error::Data(format!(
                "{}: files disagree with manifest dimensions",
                dir.display()
            )));
        }
        if ds.counts() != m.split_counts {
            return Err(Error::Data(format!(
                "{}: split counts disagree with manifest",
                dir.display()
            )));
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_gt() -> GroundTruth {
        GroundTruth::new(6, 3).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        assert_eq!(
            split_counts(10, DEFAULT_FRACTIONS).unwrap(),
            SplitCounts { train: 8, val: 1, test: 1 }
        );
        assert!(split_counts(10, [0.5, 0.5, 0.5]).is_err());
        let a = gen_sine(50, 1, &small_gt()).unwrap();
        let b = gen_sine(50, 1, &small_gt()).unwrap();
        assert_eq!(a.split, b.split);
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        for n in [1usize, 7, 33, 101] {
            let ds = gen_quadratic(n, n as u64, &small_gt()).unwrap();
            let mut seen = HashSet::new();
            for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
                for i in ds.indices(tag) {
                    assert!(seen.insert(i));
                }
            }
            assert_eq!(seen.len(), n);
        }
    }

    #[test]
    fn conditional_formulas() {
        let (m, v) = latent_conditional(Scheme::Sine, &[PI / 2.0]).unwrap();
        assert!((m[0] - PI / 2.0).abs() < 1e-15 && (m[1] - 2.0).abs() < 1e-15);
        assert!((v - 0.125).abs() < 1e-15);
        let (_, v) = latent_conditional(Scheme::Quadratic, &[0.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        let (_, v) = latent_conditional(Scheme::Quadratic, &[-PI / 2.0]).unwrap();
        assert_eq!(v, VARIANCE_FLOOR);
        let (m, v) = latent_conditional(Scheme::TwoCircles, &[0.0, 1.0]).unwrap();
        assert_eq!(m, [1.0, 0.0]);
        assert!((v - 0.1).abs() < 1e-15);
        let (_, v) = latent_conditional(Scheme::TwoCircles, &[PI, 2.0]).unwrap();
        assert_eq!(v, VARIANCE_FLOOR);
        let (_, v) = latent_conditional(Scheme::Sine, &[1e-12]).unwrap();
        assert_eq!(v, VARIANCE_FLOOR);
    }

    #[test]
    fn two_circles_encoding() {
        let ds = gen_two_circles(200, 5, &small_gt()).unwrap();
        assert_eq!(ds.d_u(), 3);
        for i in 0..ds.len() {
            let u = ds.u.row(i);
            assert_eq!(u[1] + u[2], 1.0);
            assert!((-PI..PI).contains(&u[0]));
        }
        let labels = ds.class_labels();
        assert!(labels.contains(&0) && labels.contains(&1));
    }

    #[test]
    fn save_and_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_two_circles(40, 2, &small_gt()).unwrap();
        ds.save(dir.path()).unwrap();
        let back = LabeledDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn load_rejects_inconsistent_files() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_sine(20, 2, &small_gt()).unwrap();
        ds.save(dir.path()).unwrap();
        let short = ds.x.select_rows(&[0, 1, 2]);
        write_matrix(&dir.path().join("x.csv"), "x", &short).unwrap();
        assert!(matches!(LabeledDataset::load(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn quantile_bins_are_balanced() {
        let v: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let bins = quantile_bins(&v, 10);
        for b in 0..10 {
            assert_eq!(bins.iter().filter(|&&x| x == b).count(), 10);
        }
    }
}
