use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul_nn, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    LeakyRelu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
        }
    }
}

/// One dense layer: `act(x W + b)` with `W` of shape `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Dense feed-forward network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNet {
    layers: Vec<Layer>,
}

impl MlpNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for layer in &layers {
            if layer.weight.shape().len() != 2 || layer.bias.shape() != [layer.fan_out()] {
                return Err(Error::ShapeMismatch {
                    op: "layer",
                    left: layer.weight.shape().to_vec(),
                    right: layer.bias.shape().to_vec(),
                });
            }
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::dim("layer chain", pair[0].fan_out(), pair[1].fan_in()));
            }
        }
        Ok(MlpNet { layers })
    }

    /// Widths `[in, h1, ..., out]`; hidden layers use `hidden`, the last layer
    /// is linear. Weights and biases are uniform on `±1/sqrt(fan_in)`.
    pub fn init(widths: &[usize], hidden: Activation, rng: &mut Rng) -> Result<Self> {
        MlpNet::init_with(widths, hidden, rng, |fan_in, _| (1.0 / (fan_in as f64).sqrt(), true))
    }

    /// Glorot-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`) and zero biases.
    pub fn init_glorot(widths: &[usize], hidden: Activation, rng: &mut Rng) -> Result<Self> {
        MlpNet::init_with(widths, hidden, rng, |fan_in, fan_out| {
            ((6.0 / (fan_in + fan_out) as f64).sqrt(), false)
        })
    }

    /// `scheme(fan_in, fan_out)` gives the uniform bound and whether biases
    /// are drawn with it (otherwise zero).
    fn init_with(
        widths: &[usize],
        hidden: Activation,
        rng: &mut Rng,
        scheme: impl Fn(usize, usize) -> (f64, bool),
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer widths {widths:?}")));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let (bound, random_bias) = scheme(fan_in, fan_out);
            let weight = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias = (0..fan_out)
                .map(|_| if random_bias { rng.random_range(-bound..bound) } else { 0.0 })
                .collect();
            let activation = if i + 2 == widths.len() {
                Activation::Identity
            } else {
                hidden
            };
            layers.push(Layer {
                weight: Tensor::matrix(fan_in, fan_out, weight)?,
                bias: Tensor::vector(bias),
                activation,
            });
        }
        MlpNet::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Zeroes the output columns `start..end` of the last layer.
    pub fn zero_output_columns(&mut self, start: usize, end: usize) {
        let last = self.layers.last_mut().expect("nonempty");
        let cols = last.fan_out();
        for r in 0..last.fan_in() {
            for c in start..end.min(cols) {
                last.weight.data_mut()[r * cols + c] = 0.0;
            }
        }
        for c in start..end.min(cols) {
            last.bias.data_mut()[c] = 0.0;
        }
    }

    /// Zeroes every parameter.
    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.data_mut().fill(0.0);
            l.bias.data_mut().fill(0.0);
        }
    }

    /// Plain forward pass over the rows of `x` (`[B, in]`).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::dim("network input width", self.input_dim(), x.cols()));
        }
        let rows = x.rows();
        let mut h = x.data().to_vec();
        for layer in &self.layers {
            let (k, n) = (layer.fan_in(), layer.fan_out());
            let mut out = vec![0.0; rows * n];
            matmul_nn(&h, layer.weight.data(), &mut out, rows, k, n);
            let bias = layer.bias.data();
            for row in out.chunks_mut(n) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            h = out;
        }
        let out = Tensor::matrix(rows, self.output_dim(), h)?;
        if !out.is_finite() {
            return Err(Error::Numeric("network produced a non-finite output".into()));
        }
        Ok(out)
    }

    pub fn forward_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .forward(&Tensor::matrix(1, x.len(), x.to_vec())?)?
            .into_data())
    }

    /// Places the parameters on `tape` as trainable leaves, in
    /// `[w0, b0, w1, b1, ...]` order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .map(|t| tape.leaf(t))
            .collect()
    }

    /// Differentiable forward pass using parameters from [`MlpNet::register`].
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::dim("registered parameters", 2 * self.layers.len(), params.len()));
        }
        let mut h = x;
        for (layer, p) in self.layers.iter().zip(params.chunks(2)) {
            let z = tape.matmul(h, p[0])?;
            let z = tape.add(z, p[1])?;
            h = match layer.activation {
                Activation::Identity => z,
                Activation::Tanh => tape.tanh(z)?,
                Activation::LeakyRelu => tape.leaky_relu(z)?,
            };
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn init_is_seeded_and_sized() {
        let a = MlpNet::init(&[3, 5, 2], Activation::Tanh, &mut rng::stream(1, 0, 0)).unwrap();
        let b = MlpNet::init(&[3, 5, 2], Activation::Tanh, &mut rng::stream(1, 0, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_count(), 3 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(a.layers()[1].activation, Activation::Identity);
    }

    #[test]
    fn plain_and_tape_forward_agree_bitwise() {
        let net = MlpNet::init(&[4, 6, 6, 3], Activation::LeakyRelu, &mut rng::stream(2, 0, 0)).unwrap();
        let x = Tensor::matrix(2, 4, vec![0.1, -0.3, 2.0, 0.5, -1.0, 0.0, 0.7, 0.2]).unwrap();
        let plain = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let params = net.register(&mut tape);
        let xv = tape.constant(x);
        let out = net.forward_tape(&mut tape, &params, xv).unwrap();
        assert_eq!(tape.value(out), &plain);
    }

    #[test]
    fn chain_mismatch_is_rejected() {
        let mut net = MlpNet::init(&[2, 3, 1], Activation::Tanh, &mut rng::stream(3, 0, 0)).unwrap();
        let mut layers = net.layers().to_vec();
        layers[1].weight = Tensor::matrix(4, 1, vec![0.0; 4]).unwrap();
        assert!(MlpNet::new(layers).is_err());
        net.zero_output_columns(0, 1);
        assert_eq!(net.layers()[1].bias.data(), &[0.0]);
        assert!(net.forward(&Tensor::matrix(1, 3, vec![0.0; 3]).unwrap()).is_err());
    }
}
