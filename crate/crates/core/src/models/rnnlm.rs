//! Elman RNN language model and the mixture-of-RNNLMs family.
//!
//! Per step: `h_t = tanh(W_in [x_{t-1}; z] + W_rec h_{t-1} + b)`, token
//! distribution `softmax(W_out h_t)`. The conditional variant concatenates a
//! latent vector onto every step's input; with a zero latent block (or z = 0)
//! it reduces exactly to the unconditional model.

use crate::rng::Rng;
use crate::tensor::{no_grad, ParamSet, Tensor};
use crate::util;

pub struct RnnLm {
    /// Word embeddings, `[V, embed]`.
    pub embed: Tensor,
    /// Input weights, `[hidden, embed + z_dim]`.
    pub w_in: Tensor,
    /// Recurrent weights, `[hidden, hidden]`.
    pub w_rec: Tensor,
    /// Hidden bias, `[hidden]`.
    pub bias: Tensor,
    /// Output projection, `[V, hidden]`.
    pub w_out: Tensor,
    /// Width of the conditioning vector; 0 for the unconditional model.
    pub z_dim: usize,
}

impl RnnLm {
    pub fn new(v: usize, embed: usize, hidden: usize, z_dim: usize, rng: &mut Rng) -> RnnLm {
        RnnLm {
            embed: Tensor::param(&[v, embed], rng.uniform_vec(v * embed, -0.1, 0.1)),
            w_in: Tensor::param(&[hidden, embed + z_dim], rng.uniform_vec(hidden * (embed + z_dim), -0.1, 0.1)),
            w_rec: Tensor::param(&[hidden, hidden], rng.uniform_vec(hidden * hidden, -0.1, 0.1)),
            bias: Tensor::param(&[hidden], vec![0.0; hidden]),
            w_out: Tensor::param(&[v, hidden], rng.uniform_vec(v * hidden, -0.1, 0.1)),
            z_dim,
        }
    }

    pub fn zeros(v: usize, embed: usize, hidden: usize, z_dim: usize) -> RnnLm {
        RnnLm {
            embed: Tensor::param(&[v, embed], vec![0.0; v * embed]),
            w_in: Tensor::param(&[hidden, embed + z_dim], vec![0.0; hidden * (embed + z_dim)]),
            w_rec: Tensor::param(&[hidden, hidden], vec![0.0; hidden * hidden]),
            bias: Tensor::param(&[hidden], vec![0.0; hidden]),
            w_out: Tensor::param(&[v, hidden], vec![0.0; v * hidden]),
            z_dim,
        }
    }

    pub fn v(&self) -> usize {
        self.embed.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_rec.shape()[0]
    }

    fn step(&self, h: &Tensor, prev_token: usize, z: Option<&Tensor>) -> Tensor {
        let emb = self.embed.row(prev_token);
        let input = match z {
            Some(zt) => Tensor::concat(&[&emb, zt]),
            None => emb,
        };
        (self.w_in.matmul(&input) + self.w_rec.matmul(h) + &self.bias).tanh()
    }

    /// `sum_t log softmax(W_out h_t)[x_t]` over exactly the given tokens,
    /// with `x_0 = bos` as the first input. Summing `exp` of this over all
    /// length-T sequences gives 1 for any parameters.
    pub fn log_likelihood_t(&self, tokens: &[usize], bos: usize, z: Option<&Tensor>) -> Tensor {
        if let Some(zt) = z {
            assert_eq!(
                zt.len(),
                self.z_dim,
                "crnnlm: latent width mismatch, got {} for model width {}",
                zt.len(),
                self.z_dim
            );
        } else {
            assert_eq!(self.z_dim, 0, "rnnlm: model expects a latent input of width {}", self.z_dim);
        }
        let mut h = Tensor::zeros(&[self.hidden()]);
        let mut total = Tensor::scalar(0.0);
        let mut prev = bos;
        for &t in tokens {
            assert!(t < self.v(), "rnnlm: token id {t} outside vocabulary (V={})", self.v());
            h = self.step(&h, prev, z);
            let log_probs = self.w_out.matmul(&h).log_softmax();
            total = total + log_probs.get(t);
            prev = t;
        }
        total
    }

    pub fn log_likelihood(&self, tokens: &[usize], bos: usize, z: Option<&[f64]>) -> f64 {
        no_grad(|| {
            let zt = z.map(Tensor::vector);
            self.log_likelihood_t(tokens, bos, zt.as_ref()).value()
        })
    }

    /// Next-token distribution given the current hidden state (sampling path).
    pub fn next_token_probs(&self, h: &Tensor) -> Vec<f64> {
        util::softmax(&self.w_out.matmul(h).values())
    }

    pub(crate) fn step_no_grad(&self, h: &Tensor, prev: usize, z: Option<&Tensor>) -> Tensor {
        no_grad(|| self.step(h, prev, z))
    }

    pub fn params(&self, prefix: &str) -> ParamSet {
        let mut set = ParamSet::new();
        set.push(format!("{prefix}.embed"), self.embed.clone());
        set.push(format!("{prefix}.w_in"), self.w_in.clone());
        set.push(format!("{prefix}.w_rec"), self.w_rec.clone());
        set.push(format!("{prefix}.bias"), self.bias.clone());
        set.push(format!("{prefix}.w_out"), self.w_out.clone());
        set
    }
}

/// Mixture of K RNN language models with categorical mixing weights.
pub struct MixtureRnn {
    pub mix_logits: Tensor,
    pub components: Vec<RnnLm>,
}

impl MixtureRnn {
    pub fn new(k: usize, v: usize, embed: usize, hidden: usize, rng: &mut Rng) -> MixtureRnn {
        let mix = rng.dirichlet_uniform(k);
        let logits: Vec<f64> = mix.iter().map(|&p| util::safe_ln(p)).collect();
        MixtureRnn {
            mix_logits: Tensor::param(&[k], logits),
            components: (0..k).map(|_| RnnLm::new(v, embed, hidden, 0, rng)).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn v(&self) -> usize {
        self.components[0].v()
    }

    pub fn log_joint_t(&self, tokens: &[usize], z: usize, bos: usize) -> Tensor {
        assert!(z < self.k(), "mixture log_joint: component {z} out of range (K={})", self.k());
        self.mix_logits.log_softmax().get(z) + self.components[z].log_likelihood_t(tokens, bos, None)
    }

    pub fn log_joint(&self, tokens: &[usize], z: usize, bos: usize) -> f64 {
        no_grad(|| self.log_joint_t(tokens, z, bos).value())
    }

    /// `log p(x)` by enumeration over the K components, differentiable.
    pub fn log_marginal_t(&self, tokens: &[usize], bos: usize) -> Tensor {
        let per_z: Vec<Tensor> = (0..self.k()).map(|z| self.log_joint_t(tokens, z, bos)).collect();
        let refs: Vec<&Tensor> = per_z.iter().collect();
        Tensor::concat(&refs).logsumexp()
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        set.push("mix.mix_logits", self.mix_logits.clone());
        for (i, comp) in self.components.iter().enumerate() {
            set.extend(comp.params(&format!("mix.comp{i}")));
        }
        set
    }
}
