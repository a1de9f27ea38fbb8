//! Naive Bayes mixture: `p(x, z) = mu_z * prod_t pi_{z, x_t}`.
//!
//! Parameters live as logits tensors so the same model trains by closed-form
//! EM (which writes probability rows) and by gradient ascent on the marginal
//! (which updates logits through the softmax).

use crate::rng::Rng;
use crate::tensor::{ParamSet, Tensor};
use crate::util;

pub struct NaiveBayes {
    /// Mixture-weight logits, shape `[K]`.
    pub mix_logits: Tensor,
    /// Per-component emission logits, shape `[K, V]`.
    pub emit_logits: Tensor,
}

impl NaiveBayes {
    pub fn from_probs(mix: &[f64], emit_rows: &[Vec<f64>]) -> NaiveBayes {
        let k = mix.len();
        assert_eq!(emit_rows.len(), k, "naive bayes: {} emission rows for K={k}", emit_rows.len());
        let v = emit_rows[0].len();
        let mix_logits: Vec<f64> = mix.iter().map(|&p| util::safe_ln(p)).collect();
        let mut emit_logits = Vec::with_capacity(k * v);
        for row in emit_rows {
            assert_eq!(row.len(), v, "naive bayes: ragged emission rows");
            emit_logits.extend(row.iter().map(|&p| util::safe_ln(p)));
        }
        NaiveBayes {
            mix_logits: Tensor::param(&[k], mix_logits),
            emit_logits: Tensor::param(&[k, v], emit_logits),
        }
    }

    /// Random initialization: symmetric Dirichlet(1) rows.
    pub fn random(k: usize, v: usize, rng: &mut Rng) -> NaiveBayes {
        let mix = rng.dirichlet_uniform(k);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| rng.dirichlet_uniform(v)).collect();
        NaiveBayes::from_probs(&mix, &rows)
    }

    /// Random initialization with zero mass on the reserved ids, so sampled
    /// corpora never contain `<s>`/`</s>`.
    pub fn random_no_reserved(k: usize, v: usize, reserved: &[usize], rng: &mut Rng) -> NaiveBayes {
        let mix = rng.dirichlet_uniform(k);
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let free: Vec<usize> = (0..v).filter(|i| !reserved.contains(i)).collect();
                let weights = rng.dirichlet_uniform(free.len());
                let mut row = vec![0.0; v];
                for (slot, w) in free.iter().zip(weights) {
                    row[*slot] = w;
                }
                row
            })
            .collect();
        NaiveBayes::from_probs(&mix, &rows)
    }

    pub fn k(&self) -> usize {
        self.mix_logits.len()
    }

    pub fn v(&self) -> usize {
        self.emit_logits.shape()[1]
    }

    /// Current mixture weights as probabilities.
    pub fn mix_probs(&self) -> Vec<f64> {
        util::softmax(&self.mix_logits.values())
    }

    /// Current emission rows as probabilities.
    pub fn emit_probs(&self) -> Vec<Vec<f64>> {
        let v = self.v();
        let vals = self.emit_logits.values();
        (0..self.k()).map(|z| util::softmax(&vals[z * v..(z + 1) * v])).collect()
    }

    /// Log tables `(log mu, log pi)` normalized once; the fast path for
    /// E-steps and enumeration over whole corpora.
    pub fn log_tables(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let log_mix = util::log_softmax(&self.mix_logits.values());
        let v = self.v();
        let vals = self.emit_logits.values();
        let log_emit = (0..self.k())
            .map(|z| util::log_softmax(&vals[z * v..(z + 1) * v]))
            .collect();
        (log_mix, log_emit)
    }

    /// Overwrites parameters with explicit probability rows (the EM M-step
    /// writes through here).
    pub fn set_probs(&self, mix: &[f64], emit_rows: &[Vec<f64>]) {
        assert_eq!(mix.len(), self.k());
        let logits: Vec<f64> = mix.iter().map(|&p| util::safe_ln(p)).collect();
        self.mix_logits.set_values(&logits);
        let mut emit = Vec::with_capacity(self.k() * self.v());
        for row in emit_rows {
            assert_eq!(row.len(), self.v());
            emit.extend(row.iter().map(|&p| util::safe_ln(p)));
        }
        self.emit_logits.set_values(&emit);
    }

    pub fn log_joint(&self, x: &[usize], z: usize) -> f64 {
        assert!(z < self.k(), "naive bayes log_joint: component {z} out of range (K={})", self.k());
        let (log_mix, log_emit) = self.log_tables();
        let mut total = log_mix[z];
        for &t in x {
            assert!(t < self.v(), "naive bayes log_joint: token id {t} outside vocabulary (V={})", self.v());
            total += log_emit[z][t];
        }
        total
    }

    pub fn log_joint_t(&self, x: &[usize], z: usize) -> Tensor {
        assert!(z < self.k(), "naive bayes log_joint: component {z} out of range (K={})", self.k());
        let log_mix = self.mix_logits.log_softmax();
        let log_row = self.emit_logits.row(z).log_softmax();
        let mut counts = vec![0.0; self.v()];
        for &t in x {
            assert!(t < self.v(), "naive bayes log_joint: token id {t} outside vocabulary (V={})", self.v());
            counts[t] += 1.0;
        }
        log_mix.get(z) + log_row.dot(&Tensor::vector(&counts))
    }

    /// `log p(x)` as a tensor: `logsumexp_k [log mu_k + counts . log pi_k]`.
    pub fn log_marginal_t(&self, x: &[usize]) -> Tensor {
        let mut counts = vec![0.0; self.v()];
        for &t in x {
            assert!(t < self.v(), "naive bayes: token id {t} outside vocabulary (V={})", self.v());
            counts[t] += 1.0;
        }
        let log_mix = self.mix_logits.log_softmax();
        let token_ll = self.emit_logits.log_softmax().matmul(&Tensor::vector(&counts));
        (log_mix + token_ll).logsumexp()
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        set.push("nb.mix_logits", self.mix_logits.clone());
        set.push("nb.emit_logits", self.emit_logits.clone());
        set
    }
}
