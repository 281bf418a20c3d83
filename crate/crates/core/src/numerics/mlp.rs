//! Multilayer perceptrons: relu hidden layers, identity output.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of one network. Every layer except the last is followed by a
/// relu.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
}

impl ParamSet {
    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))` for both
    /// weights and biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes())
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Layer::output_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("empty ParamSet").output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Checks that layer widths chain and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for layer in &self.layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Dimension("bias length differs from layer width".into()));
            }
        }
        if self.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                node: 0,
                op: "parameter",
            });
        }
        Ok(())
    }

    /// Every scalar parameter in declaration order: layer by layer, weight
    /// (row-major) then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Mutable access to the `index`-th scalar in declaration order.
    pub fn flat_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weight.len();
            if index < nw {
                let cols = layer.weight.ncols();
                return &mut layer.weight[[index / cols, index % cols]];
            }
            index -= nw;
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params());
        for (p, v) in self.iter_mut().zip(values) {
            *p = *v;
        }
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn dot(&self, other: &ParamSet) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Forward pass over a batch (one row per sample).
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight.t()) + &layer.bias.view().insert_axis(Axis(0));
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }
}

/// Single-sample forward pass.
pub fn mlp_forward(params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(params.forward_batch(&x)?.into_raw_vec_and_offset().0)
}

/// Tape handles for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    layers: Vec<(Var, Var)>,
    sizes: Vec<usize>,
}

impl BoundParams {
    pub fn vars(&self) -> &[(Var, Var)] {
        &self.layers
    }
}

impl Tape {
    /// Records a network's parameters. With `trainable = false` the values
    /// are constants and receive no gradient.
    pub fn bind(&mut self, params: &ParamSet, trainable: bool) -> BoundParams {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                let w = l.weight.clone();
                let b = l.bias.clone().insert_axis(Axis(0));
                if trainable {
                    (self.leaf(w), self.leaf(b))
                } else {
                    (self.constant(w), self.constant(b))
                }
            })
            .collect();
        BoundParams {
            layers,
            sizes: params.sizes(),
        }
    }

    /// Batched forward pass of a bound network.
    pub fn mlp(&mut self, net: &BoundParams, input: Var) -> Var {
        assert_eq!(
            self.value(input).ncols(),
            net.sizes[0],
            "mlp input width mismatch"
        );
        let last = net.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in net.layers.iter().enumerate() {
            let z = self.matmul_t(h, w);
            h = self.add_bias(z, b);
            if i < last {
                h = self.relu(h);
            }
        }
        h
    }
}

impl Gradients {
    /// Gradient of a bound network, shaped like its [`ParamSet`].
    pub fn param_grads(&mut self, net: &BoundParams) -> ParamSet {
        let layers = net
            .layers
            .iter()
            .map(|&(w, b)| Layer {
                weight: self.take(w),
                bias: self.take(b).remove_axis(Axis(0)),
            })
            .collect();
        ParamSet { layers }
    }
}
