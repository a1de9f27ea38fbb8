//! Ground-truth inference: posteriors and log marginals by enumeration, the
//! HMM forward algorithm, and direct gradient ascent on the log marginal
//! likelihood.
//!
//! All dynamic programs run in log space with log-sum-exp; linear-space
//! probabilities underflow well before T = 50. The forward recursion is the
//! canonical DP; the backward recursion exists only as a test oracle.

use thiserror::Error;

use crate::models::{Hmm, HmmRows, Model, Sentence, Vocab};
use crate::rng::Rng;
use crate::tensor::{no_grad, Optimizer, Tensor};
use crate::training::{minibatches, EpochRecord, TrainError};
use crate::util;

/// Enumeration refuses supports beyond this many configurations.
pub const ENUMERATION_GUARD: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("exact inference unsupported for continuous-latent family {0}")]
    ContinuousLatent(&'static str),
    #[error("latent support too large: {size} configurations exceed the {limit} guard")]
    SupportTooLarge { size: u128, limit: u128 },
}

/// Normalized posterior over an enumerable latent support, held in log space.
#[derive(Debug, Clone)]
pub struct PosteriorTable {
    log_probs: Vec<f64>,
}

impl PosteriorTable {
    /// Normalizes raw log-joints; shifting them all by a constant leaves the
    /// table unchanged.
    pub fn from_log_joints(log_joints: &[f64]) -> PosteriorTable {
        let lse = util::log_sum_exp(log_joints);
        PosteriorTable { log_probs: log_joints.iter().map(|l| l - lse).collect() }
    }

    pub fn k(&self) -> usize {
        self.log_probs.len()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }
}

/// Posterior over the flat latent `z in {0..K-1}` by enumeration.
pub fn enumerate_posterior(model: &Model, x: &Sentence, vocab: &Vocab) -> Result<PosteriorTable, InferenceError> {
    let log_joints = flat_log_joints(model, x, vocab)?;
    Ok(PosteriorTable::from_log_joints(&log_joints))
}

fn flat_log_joints(model: &Model, x: &Sentence, vocab: &Vocab) -> Result<Vec<f64>, InferenceError> {
    let k = match model {
        Model::NaiveBayes(m) => m.k(),
        Model::MixtureRnn(m) => m.k(),
        Model::Hmm(_) => {
            return Err(InferenceError::ContinuousLatent(
                "hmm (structured latent; use hmm_path_log_joints or the forward algorithm)",
            ))
        }
        Model::GaussianBow(_) => return Err(InferenceError::ContinuousLatent("gaussian-bow")),
        Model::GaussianCrnn(_) => return Err(InferenceError::ContinuousLatent("gaussian-crnn")),
    };
    Ok((0..k)
        .map(|z| model.log_joint(x, &crate::models::Latent::Discrete(z), vocab))
        .collect())
}

/// `log p(x)` by summing the joint over the full latent support.
pub fn log_marginal_enumeration(model: &Model, x: &Sentence, vocab: &Vocab) -> Result<f64, InferenceError> {
    match model {
        Model::NaiveBayes(_) | Model::MixtureRnn(_) => {
            Ok(util::log_sum_exp(&flat_log_joints(model, x, vocab)?))
        }
        Model::Hmm(hmm) => Ok(util::log_sum_exp(&hmm_path_log_joints(
            hmm,
            &model.scored_tokens(x, vocab),
        )?)),
        Model::GaussianBow(_) => Err(InferenceError::ContinuousLatent("gaussian-bow")),
        Model::GaussianCrnn(_) => Err(InferenceError::ContinuousLatent("gaussian-crnn")),
    }
}

/// Log-joints of every K^T state path (the brute-force HMM oracle).
pub fn hmm_path_log_joints(hmm: &Hmm, x: &[usize]) -> Result<Vec<f64>, InferenceError> {
    let size = (hmm.k() as u128).checked_pow(x.len() as u32).unwrap_or(u128::MAX);
    if size > ENUMERATION_GUARD {
        return Err(InferenceError::SupportTooLarge { size, limit: ENUMERATION_GUARD });
    }
    let k = hmm.k();
    let mut path = vec![0usize; x.len()];
    let mut out = Vec::with_capacity(size as usize);
    loop {
        out.push(hmm.log_joint(x, &path));
        // Odometer increment over the K-ary path.
        let mut pos = 0;
        loop {
            if pos == path.len() {
                return Ok(out);
            }
            path[pos] += 1;
            if path[pos] < k {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

/// Forward algorithm: `log p(x)` in O(T K^2), log space.
pub fn hmm_forward(hmm: &Hmm, x: &[usize]) -> f64 {
    assert!(!x.is_empty(), "hmm_forward: empty sentence");
    let tables = hmm.realize();
    let k = hmm.k();
    let mut alpha: Vec<f64> = (0..k).map(|s| tables.start[s] + tables.emit[s][x[0]]).collect();
    let mut scratch = vec![0.0; k];
    for &tok in &x[1..] {
        for (s, slot) in scratch.iter_mut().enumerate() {
            let terms: Vec<f64> = (0..k).map(|j| alpha[j] + tables.trans[j][s]).collect();
            *slot = util::log_sum_exp(&terms) + tables.emit[s][tok];
        }
        std::mem::swap(&mut alpha, &mut scratch);
    }
    util::log_sum_exp(&alpha)
}

/// Forward algorithm over realized rows as a differentiable tensor program.
pub fn hmm_forward_rows_t(rows: &HmmRows, x: &[usize]) -> Tensor {
    assert!(!x.is_empty(), "hmm_forward: empty sentence");
    let emit_by_token = rows.emit.transpose();
    let trans_into = rows.trans.transpose();
    let mut alpha = &rows.start + emit_by_token.row(x[0]);
    for &tok in &x[1..] {
        // Row s of (trans_into + alpha) holds alpha[j] + log trans[j -> s].
        alpha = (&trans_into + &alpha).logsumexp() + emit_by_token.row(tok);
    }
    alpha.logsumexp()
}

pub fn hmm_forward_t(hmm: &Hmm, x: &[usize]) -> Tensor {
    hmm_forward_rows_t(&hmm.realize_t(), x)
}

/// `log p(x)` as a differentiable tensor expression, for the families with a
/// tractable marginal.
pub fn log_marginal_t(model: &Model, x: &Sentence, vocab: &Vocab) -> Result<Tensor, InferenceError> {
    let tokens = model.scored_tokens(x, vocab);
    match model {
        Model::NaiveBayes(m) => Ok(m.log_marginal_t(&tokens)),
        Model::MixtureRnn(m) => Ok(m.log_marginal_t(&tokens, vocab.bos())),
        Model::Hmm(hmm) => Ok(hmm_forward_rows_t(&hmm.realize_t(), &tokens)),
        Model::GaussianBow(_) => Err(InferenceError::ContinuousLatent("gaussian-bow")),
        Model::GaussianCrnn(_) => Err(InferenceError::ContinuousLatent("gaussian-crnn")),
    }
}

/// Corpus log-likelihood via the tractable marginal, without recording a
/// graph.
pub fn corpus_log_likelihood(model: &Model, corpus: &[Sentence], vocab: &Vocab) -> f64 {
    no_grad(|| {
        corpus
            .iter()
            .map(|x| log_marginal_t(model, x, vocab).expect("tractable marginal").value())
            .sum()
    })
}

pub struct DirectTrainOpts {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Minibatch gradient ascent directly on the log marginal likelihood.
/// Records the full-corpus log-likelihood once per epoch, with the value at
/// initialization as epoch 0.
pub fn train_direct_marginal(
    model: &Model,
    corpus: &[Sentence],
    vocab: &Vocab,
    opts: &DirectTrainOpts,
    optimizer: &mut Optimizer,
    rng: &mut Rng,
) -> Result<Vec<EpochRecord>, TrainError> {
    let params = model.params();
    let mut records = vec![EpochRecord { epoch: 0, value: corpus_log_likelihood(model, corpus, vocab) }];
    for epoch in 1..=opts.epochs {
        for (batch_idx, batch) in minibatches(corpus.len(), opts.batch_size, rng).into_iter().enumerate() {
            params.zero_grad();
            let mut objective = Tensor::scalar(0.0);
            for i in &batch {
                let lm = log_marginal_t(model, &corpus[*i], vocab)
                    .map_err(|e| TrainError::Unsupported(e.to_string()))?;
                objective = objective + lm;
            }
            let objective = objective.scale(1.0 / batch.len() as f64);
            if !objective.value().is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: batch_idx });
            }
            objective.backward();
            optimizer.ascent_step(&params)?;
        }
        records.push(EpochRecord { epoch, value: corpus_log_likelihood(model, corpus, vocab) });
    }
    Ok(records)
}
