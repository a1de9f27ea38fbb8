//! Hidden Markov models, tabular and neural.
//!
//! Both representations realize into the same row structure: a start row
//! over states, a `[K, K]` transition matrix (row = source state), and a
//! `[K, V]` emission matrix (row = current state). Everything downstream
//! (joint scoring, the forward algorithm, training) consumes realized rows,
//! so the two parameterizations share all inference code. Emission at step t
//! conditions on the state at step t.

use crate::rng::Rng;
use crate::tensor::{no_grad, ParamSet, Tensor};
use crate::util;

use super::Mlp;

/// Realized log-probability rows as tensors (gradients flow back into the
/// underlying parameterization).
pub struct HmmRows {
    /// `log p(z_1 = k)`, shape `[K]`.
    pub start: Tensor,
    /// `log p(z_t = k | z_{t-1} = j)` at `[j, k]`, shape `[K, K]`.
    pub trans: Tensor,
    /// `log p(x_t = v | z_t = k)` at `[k, v]`, shape `[K, V]`.
    pub emit: Tensor,
}

/// Realized rows as plain numbers, for the fast scoring paths.
pub struct HmmTables {
    pub start: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub emit: Vec<Vec<f64>>,
}

pub struct TabularHmm {
    pub start_logits: Tensor,
    pub trans_logits: Tensor,
    pub emit_logits: Tensor,
}

impl TabularHmm {
    pub fn from_probs(start: &[f64], trans_rows: &[Vec<f64>], emit_rows: &[Vec<f64>]) -> TabularHmm {
        let k = start.len();
        assert_eq!(trans_rows.len(), k, "hmm: {} transition rows for K={k}", trans_rows.len());
        assert_eq!(emit_rows.len(), k, "hmm: {} emission rows for K={k}", emit_rows.len());
        let v = emit_rows[0].len();
        let ln = |p: &f64| util::safe_ln(*p);
        TabularHmm {
            start_logits: Tensor::param(&[k], start.iter().map(ln).collect()),
            trans_logits: Tensor::param(&[k, k], trans_rows.iter().flat_map(|r| r.iter().map(ln)).collect()),
            emit_logits: Tensor::param(&[k, v], emit_rows.iter().flat_map(|r| r.iter().map(ln)).collect()),
        }
    }

    pub fn random(k: usize, v: usize, rng: &mut Rng) -> TabularHmm {
        let start = rng.dirichlet_uniform(k);
        let trans: Vec<Vec<f64>> = (0..k).map(|_| rng.dirichlet_uniform(k)).collect();
        let emit: Vec<Vec<f64>> = (0..k).map(|_| rng.dirichlet_uniform(v)).collect();
        TabularHmm::from_probs(&start, &trans, &emit)
    }

    /// Random with zero emission mass on reserved token ids.
    pub fn random_no_reserved(k: usize, v: usize, reserved: &[usize], rng: &mut Rng) -> TabularHmm {
        let start = rng.dirichlet_uniform(k);
        let trans: Vec<Vec<f64>> = (0..k).map(|_| rng.dirichlet_uniform(k)).collect();
        let emit: Vec<Vec<f64>> = (0..k)
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
        TabularHmm::from_probs(&start, &trans, &emit)
    }

    pub fn k(&self) -> usize {
        self.start_logits.len()
    }

    pub fn v(&self) -> usize {
        self.emit_logits.shape()[1]
    }

    pub fn realize_t(&self) -> HmmRows {
        HmmRows {
            start: self.start_logits.log_softmax(),
            trans: self.trans_logits.log_softmax(),
            emit: self.emit_logits.log_softmax(),
        }
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        set.push("hmm.start_logits", self.start_logits.clone());
        set.push("hmm.trans_logits", self.trans_logits.clone());
        set.push("hmm.emit_logits", self.emit_logits.clone());
        set
    }
}

/// Neural parameterization: per-state embeddings feed transition and
/// emission MLPs whose outputs are softmax-normalized on demand. Embedding
/// row 0 is the start context; row `j + 1` belongs to state `j`.
pub struct NeuralHmm {
    pub state_emb: Tensor,
    pub trans_mlp: Mlp,
    pub emit_mlp: Mlp,
    k: usize,
    v: usize,
}

impl NeuralHmm {
    pub fn new(k: usize, v: usize, emb_dim: usize, hidden: usize, rng: &mut Rng) -> NeuralHmm {
        NeuralHmm {
            state_emb: Tensor::param(&[k + 1, emb_dim], rng.uniform_vec((k + 1) * emb_dim, -0.1, 0.1)),
            trans_mlp: Mlp::new(emb_dim, hidden, k, rng),
            emit_mlp: Mlp::new(emb_dim, hidden, v, rng),
            k,
            v,
        }
    }

    pub fn zeros(k: usize, v: usize, emb_dim: usize, hidden: usize) -> NeuralHmm {
        NeuralHmm {
            state_emb: Tensor::param(&[k + 1, emb_dim], vec![0.0; (k + 1) * emb_dim]),
            trans_mlp: Mlp::zeros(emb_dim, hidden, k),
            emit_mlp: Mlp::zeros(emb_dim, hidden, v),
            k,
            v,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn realize_t(&self) -> HmmRows {
        let start = self.trans_mlp.forward(&self.state_emb.row(0)).log_softmax();
        let trans_rows: Vec<Tensor> = (0..self.k)
            .map(|j| self.trans_mlp.forward(&self.state_emb.row(j + 1)).log_softmax())
            .collect();
        let emit_rows: Vec<Tensor> = (0..self.k)
            .map(|j| self.emit_mlp.forward(&self.state_emb.row(j + 1)).log_softmax())
            .collect();
        HmmRows {
            start,
            trans: Tensor::stack_rows(&trans_rows),
            emit: Tensor::stack_rows(&emit_rows),
        }
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        set.push("hmm.state_emb", self.state_emb.clone());
        set.extend(self.trans_mlp.params("hmm.trans_mlp"));
        set.extend(self.emit_mlp.params("hmm.emit_mlp"));
        set
    }
}

pub enum Hmm {
    Tabular(TabularHmm),
    Neural(NeuralHmm),
}

impl Hmm {
    pub fn k(&self) -> usize {
        match self {
            Hmm::Tabular(m) => m.k(),
            Hmm::Neural(m) => m.k(),
        }
    }

    pub fn v(&self) -> usize {
        match self {
            Hmm::Tabular(m) => m.v(),
            Hmm::Neural(m) => m.v(),
        }
    }

    pub fn realize_t(&self) -> HmmRows {
        match self {
            Hmm::Tabular(m) => m.realize_t(),
            Hmm::Neural(m) => m.realize_t(),
        }
    }

    /// Realized rows as plain log-probability tables.
    pub fn realize(&self) -> HmmTables {
        no_grad(|| {
            let rows = self.realize_t();
            let k = self.k();
            let v = self.v();
            let trans_vals = rows.trans.to_vec();
            let emit_vals = rows.emit.to_vec();
            HmmTables {
                start: rows.start.to_vec(),
                trans: (0..k).map(|j| trans_vals[j * k..(j + 1) * k].to_vec()).collect(),
                emit: (0..k).map(|j| emit_vals[j * v..(j + 1) * v].to_vec()).collect(),
            }
        })
    }

    /// `log p(x, z)` along a full state path (`z.len() == x.len()`).
    pub fn log_joint(&self, x: &[usize], z: &[usize]) -> f64 {
        assert_eq!(z.len(), x.len(), "hmm log_joint: path length {} vs sentence length {}", z.len(), x.len());
        let tables = self.realize();
        let mut total = 0.0;
        for (t, (&state, &tok)) in z.iter().zip(x).enumerate() {
            assert!(state < self.k(), "hmm log_joint: state {state} out of range (K={})", self.k());
            assert!(tok < self.v(), "hmm log_joint: token id {tok} outside vocabulary (V={})", self.v());
            total += if t == 0 { tables.start[state] } else { tables.trans[z[t - 1]][state] };
            total += tables.emit[state][tok];
        }
        total
    }

    pub fn log_joint_t(&self, x: &[usize], z: &[usize]) -> Tensor {
        assert_eq!(z.len(), x.len(), "hmm log_joint: path length {} vs sentence length {}", z.len(), x.len());
        let rows = self.realize_t();
        let mut total = Tensor::scalar(0.0);
        for (t, (&state, &tok)) in z.iter().zip(x).enumerate() {
            let trans_term = if t == 0 {
                rows.start.get(state)
            } else {
                rows.trans.row(z[t - 1]).get(state)
            };
            total = total + trans_term + rows.emit.row(state).get(tok);
        }
        total
    }

    pub fn params(&self) -> ParamSet {
        match self {
            Hmm::Tabular(m) => m.params(),
            Hmm::Neural(m) => m.params(),
        }
    }
}
