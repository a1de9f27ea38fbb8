//! One-hidden-layer perceptron: `out = W2 tanh(W1 x + b1) + b2`.

use crate::rng::Rng;
use crate::tensor::{ParamSet, Tensor};

#[derive(Clone)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    /// Weights initialized uniform(-0.1, 0.1), biases zero.
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Mlp {
        Mlp {
            w1: Tensor::param(&[hidden, input], rng.uniform_vec(hidden * input, -0.1, 0.1)),
            b1: Tensor::param(&[hidden], vec![0.0; hidden]),
            w2: Tensor::param(&[output, hidden], rng.uniform_vec(output * hidden, -0.1, 0.1)),
            b2: Tensor::param(&[output], vec![0.0; output]),
        }
    }

    /// All-zero weights; forward output is exactly zero everywhere.
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Mlp {
        Mlp {
            w1: Tensor::param(&[hidden, input], vec![0.0; hidden * input]),
            b1: Tensor::param(&[hidden], vec![0.0; hidden]),
            w2: Tensor::param(&[output, hidden], vec![0.0; output * hidden]),
            b2: Tensor::param(&[output], vec![0.0; output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w2.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let h = (self.w1.matmul(x) + &self.b1).tanh();
        self.w2.matmul(&h) + &self.b2
    }

    pub fn params(&self, prefix: &str) -> ParamSet {
        let mut set = ParamSet::new();
        set.push(format!("{prefix}.w1"), self.w1.clone());
        set.push(format!("{prefix}.b1"), self.b1.clone());
        set.push(format!("{prefix}.w2"), self.w2.clone());
        set.push(format!("{prefix}.b2"), self.b2.clone());
        set
    }
}
