use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, Rng, Tape, Tensor2, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// Widths of the three input blocks `[condition | E | θ]`.
///
/// The condition block is the label encoding for G-DAN and the parent
/// values for a causal module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub condition: usize,
    pub noise: usize,
    pub theta: usize,
}

impl InputLayout {
    pub fn width(&self) -> usize {
        self.condition + self.noise + self.theta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Dense {
    w: Tensor2,
    b: Tensor2,
}

/// Fully connected generator; hidden layers use `activation`, the output
/// layer is affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    layout: InputLayout,
    activation: Activation,
    layers: Vec<Dense>,
}

impl GeneratorNet {
    /// Fan-in scaled uniform weights `U(-1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn new(
        layout: InputLayout,
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if layout.width() == 0 || out_dim == 0 || hidden.contains(&0) {
            return Err(Error::contract("generator layers need positive widths"));
        }
        let mut widths = vec![layout.width()];
        widths.extend_from_slice(hidden);
        widths.push(out_dim);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| bound * (2.0 * rng.uniform() - 1.0))
                    .collect();
                Dense {
                    w: Tensor2::from_vec(w[0], w[1], data).expect("sized"),
                    b: Tensor2::zeros(1, w[1]),
                }
            })
            .collect();
        Ok(Self {
            layout,
            activation,
            layers,
        })
    }

    pub fn layout(&self) -> InputLayout {
        self.layout
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.cols())
    }

    /// Input, hidden and output widths.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layout.width()];
        w.extend(self.layers.iter().map(|l| l.w.cols()));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameters: each layer's weights (row-major) then its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(l.b.data());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::contract(format!(
                "{} parameters given, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for t in [&mut l.w, &mut l.b] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Zeroes every weight leaving the given input columns, cutting them off.
    pub fn zero_input_columns(&mut self, cols: std::ops::Range<usize>) {
        let first = &mut self.layers[0].w;
        for r in cols {
            for v in first.row_mut(r) {
                *v = 0.0;
            }
        }
    }

    /// Builds `[condition | noise | θ]` with θ repeated on every row.
    pub fn assemble(&self, condition: &Tensor2, noise: &Tensor2, theta: &[f64]) -> Result<Tensor2> {
        let layout = self.layout;
        let n = condition.rows();
        if condition.cols() != layout.condition || noise.cols() != layout.noise || noise.rows() != n
        {
            return Err(Error::shape(
                "generator input",
                (n, condition.cols() + noise.cols()),
                (n, layout.condition + layout.noise),
            ));
        }
        if theta.len() != layout.theta {
            return Err(Error::contract(format!(
                "θ has length {}, generator expects {}",
                theta.len(),
                layout.theta
            )));
        }
        let mut out = Tensor2::zeros(n, layout.width());
        for r in 0..n {
            let row = out.row_mut(r);
            row[..layout.condition].copy_from_slice(condition.row(r));
            row[layout.condition..layout.condition + layout.noise].copy_from_slice(noise.row(r));
            row[layout.condition + layout.noise..].copy_from_slice(theta);
        }
        Ok(out)
    }

    pub fn forward(&self, input: &Tensor2) -> Result<Tensor2> {
        if input.cols() != self.layout.width() {
            return Err(Error::shape(
                "generator forward",
                input.shape(),
                (input.rows(), self.layout.width()),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = matmul(&h, &l.w)?.add_row(&l.b)?;
            if i < last {
                h = match self.activation {
                    Activation::Tanh => h.map(f64::tanh),
                    Activation::Relu => h.map(|v| v.max(0.0)),
                };
            }
        }
        Ok(h)
    }

    /// Records the parameters as tape leaves, in [`Self::params`] order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.clone(), l.b.clone()])
            .map(|t| tape.param(t))
            .collect()
    }

    /// Differentiable forward pass over leaves from [`Self::leaves`].
    pub fn forward_tape(&self, tape: &mut Tape, leaves: &[Var], input: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = input;
        for i in 0..self.layers.len() {
            let z = tape.matmul(h, leaves[2 * i])?;
            h = tape.add_row(z, leaves[2 * i + 1])?;
            if i < last {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        Ok(h)
    }

    /// Gradient leaves in [`Self::params`] order, flattened.
    pub fn flat_grads(&self, grads: &crate::numerics::Gradients, leaves: &[Var], out: &mut [f64]) {
        let mut off = 0;
        for v in leaves {
            let g = grads.wrt(*v);
            for (o, x) in out[off..off + g.len()].iter_mut().zip(g.data()) {
                *o += x;
            }
            off += g.len();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(hidden: &[usize]) -> GeneratorNet {
        let layout = InputLayout {
            condition: 2,
            noise: 3,
            theta: 1,
        };
        GeneratorNet::new(layout, hidden, 2, Activation::Tanh, &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn parameter_count_matches_architecture() {
        let g = net(&[4]);
        assert_eq!(g.param_count(), 6 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(g.params().len(), g.param_count());
        assert_eq!(g.widths(), vec![6, 4, 2]);
    }

    #[test]
    fn params_round_trip() {
        let mut g = net(&[3, 3]);
        let p: Vec<f64> = (0..g.param_count()).map(|i| i as f64 * 0.01).collect();
        g.set_params(&p).unwrap();
        assert_eq!(g.params(), p);
        assert!(g.set_params(&p[1..]).is_err());
    }

    #[test]
    fn tape_forward_matches_numeric() {
        let g = net(&[5]);
        let mut rng = Rng::new(4);
        let x = rng.gaussian(7, 6).unwrap();
        let mut tape = Tape::new();
        let leaves = g.leaves(&mut tape);
        let input = tape.constant(x.clone());
        let out = g.forward_tape(&mut tape, &leaves, input).unwrap();
        assert_eq!(tape.value(out), &g.forward(&x).unwrap());
    }

    #[test]
    fn wrong_theta_length_rejected() {
        let g = net(&[2]);
        let c = Tensor2::zeros(1, 2);
        let e = Tensor2::zeros(1, 3);
        assert!(g.assemble(&c, &e, &[1.0, 2.0]).is_err());
    }
}
