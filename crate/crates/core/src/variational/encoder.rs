//! Amortized inference network: an RNN over the sentence, final hidden state
//! pooled through one MLP layer, then linear heads producing either Gaussian
//! `(mean, log-variance)` or categorical logits.

use crate::models::Mlp;
use crate::rng::Rng;
use crate::tensor::{ParamSet, Tensor};

use super::QParams;

pub enum EncoderHead {
    Gaussian { w_mean: Tensor, b_mean: Tensor, w_logvar: Tensor, b_logvar: Tensor },
    Categorical { w: Tensor, b: Tensor },
}

pub struct Encoder {
    pub embed: Tensor,
    pub w_in: Tensor,
    pub w_rec: Tensor,
    pub bias: Tensor,
    pub pool: Mlp,
    pub head: EncoderHead,
}

impl Encoder {
    pub fn gaussian(v: usize, embed: usize, hidden: usize, latent_dim: usize, rng: &mut Rng) -> Encoder {
        Encoder {
            embed: Tensor::param(&[v, embed], rng.uniform_vec(v * embed, -0.1, 0.1)),
            w_in: Tensor::param(&[hidden, embed], rng.uniform_vec(hidden * embed, -0.1, 0.1)),
            w_rec: Tensor::param(&[hidden, hidden], rng.uniform_vec(hidden * hidden, -0.1, 0.1)),
            bias: Tensor::param(&[hidden], vec![0.0; hidden]),
            pool: Mlp::new(hidden, hidden, hidden, rng),
            head: EncoderHead::Gaussian {
                w_mean: Tensor::param(&[latent_dim, hidden], rng.uniform_vec(latent_dim * hidden, -0.1, 0.1)),
                b_mean: Tensor::param(&[latent_dim], vec![0.0; latent_dim]),
                w_logvar: Tensor::param(&[latent_dim, hidden], rng.uniform_vec(latent_dim * hidden, -0.1, 0.1)),
                b_logvar: Tensor::param(&[latent_dim], vec![0.0; latent_dim]),
            },
        }
    }

    pub fn categorical(v: usize, embed: usize, hidden: usize, k: usize, rng: &mut Rng) -> Encoder {
        Encoder {
            embed: Tensor::param(&[v, embed], rng.uniform_vec(v * embed, -0.1, 0.1)),
            w_in: Tensor::param(&[hidden, embed], rng.uniform_vec(hidden * embed, -0.1, 0.1)),
            w_rec: Tensor::param(&[hidden, hidden], rng.uniform_vec(hidden * hidden, -0.1, 0.1)),
            bias: Tensor::param(&[hidden], vec![0.0; hidden]),
            pool: Mlp::new(hidden, hidden, hidden, rng),
            head: EncoderHead::Categorical {
                w: Tensor::param(&[k, hidden], rng.uniform_vec(k * hidden, -0.1, 0.1)),
                b: Tensor::param(&[k], vec![0.0; k]),
            },
        }
    }

    /// All-zero weights; useful for the init contracts (`mu = 0, var = 1`,
    /// uniform categorical).
    pub fn zeros_gaussian(v: usize, embed: usize, hidden: usize, latent_dim: usize) -> Encoder {
        Encoder {
            embed: Tensor::param(&[v, embed], vec![0.0; v * embed]),
            w_in: Tensor::param(&[hidden, embed], vec![0.0; hidden * embed]),
            w_rec: Tensor::param(&[hidden, hidden], vec![0.0; hidden * hidden]),
            bias: Tensor::param(&[hidden], vec![0.0; hidden]),
            pool: Mlp::zeros(hidden, hidden, hidden),
            head: EncoderHead::Gaussian {
                w_mean: Tensor::param(&[latent_dim, hidden], vec![0.0; latent_dim * hidden]),
                b_mean: Tensor::param(&[latent_dim], vec![0.0; latent_dim]),
                w_logvar: Tensor::param(&[latent_dim, hidden], vec![0.0; latent_dim * hidden]),
                b_logvar: Tensor::param(&[latent_dim], vec![0.0; latent_dim]),
            },
        }
    }

    fn pooled_hidden(&self, x: &[usize]) -> Tensor {
        assert!(!x.is_empty(), "encoder: empty sentence");
        let hidden = self.w_rec.shape()[0];
        let mut h = Tensor::zeros(&[hidden]);
        for &t in x {
            let emb = self.embed.row(t);
            h = (self.w_in.matmul(&emb) + self.w_rec.matmul(&h) + &self.bias).tanh();
        }
        self.pool.forward(&h)
    }

    /// Variational parameters for `x`, as graph-connected tensors.
    pub fn forward_t(&self, x: &[usize]) -> QParams {
        let h = self.pooled_hidden(x);
        match &self.head {
            EncoderHead::Gaussian { w_mean, b_mean, w_logvar, b_logvar } => QParams::Gaussian {
                mean: w_mean.matmul(&h) + b_mean,
                log_var: w_logvar.matmul(&h) + b_logvar,
            },
            EncoderHead::Categorical { w, b } => QParams::Categorical { logits: w.matmul(&h) + b },
        }
    }

    /// Detached variational parameters (plain values).
    pub fn forward_q(&self, x: &[usize]) -> QParams {
        crate::tensor::no_grad(|| self.forward_t(x)).detached_params()
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        set.push("enc.embed", self.embed.clone());
        set.push("enc.w_in", self.w_in.clone());
        set.push("enc.w_rec", self.w_rec.clone());
        set.push("enc.bias", self.bias.clone());
        set.extend(self.pool.params("enc.pool"));
        match &self.head {
            EncoderHead::Gaussian { w_mean, b_mean, w_logvar, b_logvar } => {
                set.push("enc.w_mean", w_mean.clone());
                set.push("enc.b_mean", b_mean.clone());
                set.push("enc.w_logvar", w_logvar.clone());
                set.push("enc.b_logvar", b_logvar.clone());
            }
            EncoderHead::Categorical { w, b } => {
                set.push("enc.head_w", w.clone());
                set.push("enc.head_b", b.clone());
            }
        }
        set
    }
}
