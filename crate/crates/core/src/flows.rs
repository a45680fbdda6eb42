//! Affine coupling stacks used as fixed, randomly initialized mixing functions.
//!
//! Block `k` splits a vector into halves `a = v[..h]` and `b = v[h..]` with
//! `h = d / 2`. Even blocks transform `b` conditioned on `a`, odd blocks the
//! reverse:
//!
//! `b' = b * exp(2 tanh(s(a))) + t(a)`

use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{Activation, MlpNet};
use crate::rng::{self, tags};

/// Amplitude bound of the constants filling padded latent coordinates.
pub const PAD_AMPLITUDE: f64 = 0.01;
pub const GT_BLOCKS: usize = 4;
pub const GT_HIDDEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    /// 0 transforms the upper half, 1 the lower half.
    pub parity: usize,
    pub scale_net: MlpNet,
    pub shift_net: MlpNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingStack {
    dim: usize,
    blocks: Vec<CouplingBlock>,
}

impl CouplingStack {
    pub fn new(dim: usize, blocks: Vec<CouplingBlock>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument("coupling stack needs dimension >= 2".into()));
        }
        for block in &blocks {
            let (cond, moved) = halves(dim, block.parity);
            for net in [&block.scale_net, &block.shift_net] {
                if net.input_dim() != cond.len() {
                    return Err(Error::dim("coupling net input", cond.len(), net.input_dim()));
                }
                if net.output_dim() != moved.len() {
                    return Err(Error::dim("coupling net output", moved.len(), net.output_dim()));
                }
            }
        }
        Ok(CouplingStack { dim, blocks })
    }

    /// Randomly initialized stack with `Dense(hidden)-Tanh-Dense` coupling nets
    /// (Glorot-uniform weights, zero biases).
    pub fn random(dim: usize, n_blocks: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument("coupling stack needs dimension >= 2".into()));
        }
        let mut rng = rng::stream(seed, tags::FLOW, 0);
        let blocks = (0..n_blocks)
            .map(|k| {
                let parity = k % 2;
                let (cond, moved) = halves(dim, parity);
                let widths = [cond.len(), hidden, moved.len()];
                Ok(CouplingBlock {
                    parity,
                    scale_net: MlpNet::init_glorot(&widths, Activation::Tanh, &mut rng)?,
                    shift_net: MlpNet::init_glorot(&widths, Activation::Tanh, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CouplingStack::new(dim, blocks)
    }

    /// The fixed mixing-function architecture for synthetic data.
    pub fn ground_truth(dim: usize, seed: u64) -> Result<Self> {
        CouplingStack::random(dim, GT_BLOCKS, GT_HIDDEN, seed)
    }

    /// Stack whose coupling nets output zero everywhere.
    pub fn identity(dim: usize, n_blocks: usize, hidden: usize) -> Result<Self> {
        let mut stack = CouplingStack::random(dim, n_blocks, hidden, 0)?;
        for block in &mut stack.blocks {
            block.scale_net.zero();
            block.shift_net.zero();
        }
        Ok(stack)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    /// Forward map over the rows of `v` (`[B, d]`).
    pub fn forward_batch(&self, v: &Tensor) -> Result<Tensor> {
        self.check(v)?;
        let mut cur = v.clone();
        for block in &self.blocks {
            cur = self.apply(block, &cur, false)?;
        }
        Ok(cur)
    }

    pub fn inverse_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut cur = x.clone();
        for block in self.blocks.iter().rev() {
            cur = self.apply(block, &cur, true)?;
        }
        Ok(cur)
    }

    fn check(&self, v: &Tensor) -> Result<()> {
        if v.shape().len() != 2 || v.cols() != self.dim {
            return Err(Error::dim("flow input dimension", self.dim, v.cols()));
        }
        Ok(())
    }

    fn apply(&self, block: &CouplingBlock, v: &Tensor, inverse: bool) -> Result<Tensor> {
        let (cond, moved) = halves(self.dim, block.parity);
        let rows = v.rows();
        let gather = |cols: &std::ops::Range<usize>| {
            let data = (0..rows)
                .flat_map(|i| v.row(i)[cols.clone()].iter().copied())
                .collect();
            Tensor::matrix(rows, cols.len(), data)
        };
        let c = gather(&cond)?;
        let s = block.scale_net.forward(&c)?;
        let t = block.shift_net.forward(&c)?;
        let mut out = v.clone();
        let d = self.dim;
        let w = moved.len();
        for i in 0..rows {
            for (k, j) in moved.clone().enumerate() {
                let log_scale = 2.0 * s.data()[i * w + k].tanh();
                let shift = t.data()[i * w + k];
                let x = &mut out.data_mut()[i * d + j];
                *x = if inverse {
                    (*x - shift) * (-log_scale).exp()
                } else {
                    *x * log_scale.exp() + shift
                };
            }
        }
        Ok(out)
    }
}

fn halves(dim: usize, parity: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let h = dim / 2;
    if parity == 0 {
        (0..h, h..dim)
    } else {
        (h..dim, 0..h)
    }
}

pub fn flow_forward(f: &CouplingStack, v: &[f64]) -> Result<Vec<f64>> {
    Ok(f.forward_batch(&Tensor::matrix(1, v.len(), v.to_vec())?)?.into_data())
}

pub fn flow_inverse(f: &CouplingStack, x: &[f64]) -> Result<Vec<f64>> {
    Ok(f.inverse_batch(&Tensor::matrix(1, x.len(), x.to_vec())?)?.into_data())
}

/// The seed-derived constants filling coordinates `d_z..d_x`.
pub fn pad_constants(d_z: usize, d_x: usize, seed: u64) -> Result<Vec<f64>> {
    if d_z > d_x {
        return Err(Error::InvalidArgument(format!(
            "latent dimension {d_z} exceeds target dimension {d_x}"
        )));
    }
    let mut rng = rng::stream(seed, tags::PAD, d_x as u64);
    Ok((d_z..d_x)
        .map(|_| rng.random_range(-PAD_AMPLITUDE..=PAD_AMPLITUDE))
        .collect())
}

/// Embeds `z` into `d_x` dimensions: `z` first, padding constants after.
pub fn pad_latent(z: &[f64], d_x: usize, seed: u64) -> Result<Vec<f64>> {
    let mut out = z.to_vec();
    out.extend(pad_constants(z.len(), d_x, seed)?);
    Ok(out)
}

/// Row-wise [`pad_latent`] for a `[B, d_z]` matrix.
pub fn pad_batch(z: &Tensor, d_x: usize, seed: u64) -> Result<Tensor> {
    let pad = pad_constants(z.cols(), d_x, seed)?;
    let mut data = Vec::with_capacity(z.rows() * d_x);
    for i in 0..z.rows() {
        data.extend_from_slice(z.row(i));
        data.extend_from_slice(&pad);
    }
    Tensor::matrix(z.rows(), d_x, data)
}
