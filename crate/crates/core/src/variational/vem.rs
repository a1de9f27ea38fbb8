//! Variational EM and its stochastic variant.
//!
//! Variational EM keeps one set of per-datum variational parameters warm
//! across epochs: each epoch refines every lambda with gradient steps on the
//! ELBO, then takes model-parameter ascent steps on the expected
//! complete-data likelihood with the lambdas frozen. The stochastic variant
//! (SVI-EM) works on minibatches and re-initializes each datum's lambda from
//! scratch before its inner refinement, following the per-batch recipe.

use crate::models::{Latent, Model, Sentence, Vocab};
use crate::rng::Rng;
use crate::tensor::{no_grad, Optimizer, Tensor};
use crate::training::{minibatches, EpochRecord, TrainError};

use super::{elbo_exact_categorical_t, elbo_reparam_gaussian_t, FamilyKind, QParams};

#[derive(Debug, Clone)]
pub struct VemOpts {
    pub epochs: usize,
    pub batch_size: usize,
    /// Inner gradient steps on each lambda per visit.
    pub e_steps: usize,
    pub e_lr: f64,
    pub m_lr: f64,
    pub adam: bool,
}

impl Default for VemOpts {
    fn default() -> Self {
        VemOpts { epochs: 20, batch_size: 32, e_steps: 10, e_lr: 0.5, m_lr: 1e-2, adam: true }
    }
}

fn fresh_q(model: &Model, family: FamilyKind) -> QParams {
    match family {
        FamilyKind::Categorical => QParams::uniform_categorical(
            model.discrete_k().expect("categorical family needs a discrete latent"),
        ),
        FamilyKind::Gaussian => QParams::standard_gaussian(
            model.latent_dim().expect("gaussian family needs a vector latent"),
        ),
    }
}

fn refine_q(
    model: &Model,
    x: &Sentence,
    q: &QParams,
    steps: usize,
    lr: f64,
    rng: &mut Rng,
    vocab: &Vocab,
) -> Result<(), TrainError> {
    let leaves = q.leaves();
    let mut opt = Optimizer::sgd(lr);
    for _ in 0..steps {
        leaves.zero_grad();
        let objective = match q {
            QParams::Categorical { logits } => {
                elbo_exact_categorical_t(model, logits, x, vocab, 1.0, 0.0).0
            }
            QParams::Gaussian { mean, log_var } => {
                let noise = vec![rng.normal_vec(mean.len())];
                elbo_reparam_gaussian_t(model, mean, log_var, x, &noise, vocab, 1.0, 0.0).0
            }
        };
        objective.backward();
        opt.ascent_step(&leaves)?;
    }
    Ok(())
}

/// Expected complete-data log-likelihood for one sentence with q frozen, as
/// a tensor in the model parameters only.
fn m_objective(model: &Model, x: &Sentence, q: &QParams, rng: &mut Rng, vocab: &Vocab) -> Tensor {
    match q {
        QParams::Categorical { .. } => {
            let weights = q.categorical();
            let mut objective = Tensor::scalar(0.0);
            for (z, &w) in weights.probs().iter().enumerate() {
                if w > 0.0 {
                    objective = objective + model.log_joint_t(x, &Latent::Discrete(z), vocab).scale(w);
                }
            }
            objective
        }
        QParams::Gaussian { .. } => {
            let z = q.gaussian().sample(rng);
            model.log_joint_t(x, &Latent::Vector(z), vocab)
        }
    }
}

fn corpus_elbo(
    model: &Model,
    corpus: &[Sentence],
    qs: &[QParams],
    rng: &mut Rng,
    vocab: &Vocab,
) -> f64 {
    no_grad(|| {
        corpus
            .iter()
            .zip(qs)
            .map(|(x, q)| match q {
                QParams::Categorical { logits } => {
                    elbo_exact_categorical_t(model, logits, x, vocab, 1.0, 0.0).0.value()
                }
                QParams::Gaussian { mean, log_var } => {
                    let noise = vec![rng.normal_vec(mean.len())];
                    elbo_reparam_gaussian_t(model, mean, log_var, x, &noise, vocab, 1.0, 0.0)
                        .0
                        .value()
                }
            })
            .sum()
    })
}

/// Variational EM with warm-started per-datum lambdas. Each epoch record
/// carries the aggregate ELBO under the current `(theta, lambda)`.
pub fn train_variational_em(
    model: &Model,
    corpus: &[Sentence],
    vocab: &Vocab,
    family: FamilyKind,
    opts: &VemOpts,
    rng: &mut Rng,
) -> Result<Vec<EpochRecord>, TrainError> {
    let params = model.params();
    let mut optimizer = if opts.adam { Optimizer::adam(opts.m_lr) } else { Optimizer::sgd(opts.m_lr) };
    let mut qs: Vec<QParams> = corpus.iter().map(|_| fresh_q(model, family)).collect();
    let mut records = vec![EpochRecord { epoch: 0, value: corpus_elbo(model, corpus, &qs, rng, vocab) }];
    for epoch in 1..=opts.epochs {
        // Variational E-step: refine every lambda in place.
        for (x, q) in corpus.iter().zip(qs.iter_mut()) {
            refine_q(model, x, q, opts.e_steps, opts.e_lr, rng, vocab)?;
        }
        // M-step: minibatch ascent on the expected complete-data likelihood.
        for (batch_idx, batch) in minibatches(corpus.len(), opts.batch_size, rng).into_iter().enumerate() {
            params.zero_grad();
            let mut objective = Tensor::scalar(0.0);
            for i in &batch {
                objective = objective + m_objective(model, &corpus[*i], &qs[*i], rng, vocab);
            }
            let objective = objective.scale(1.0 / batch.len() as f64);
            if !objective.value().is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: batch_idx });
            }
            objective.backward();
            optimizer.ascent_step(&params)?;
        }
        records.push(EpochRecord { epoch, value: corpus_elbo(model, corpus, &qs, rng, vocab) });
    }
    Ok(records)
}

/// Stochastic variational EM: per minibatch, each sentence's lambda is
/// freshly initialized and refined for `e_steps`, then the model takes one
/// ascent step with those lambdas fixed.
pub fn train_svi_em(
    model: &Model,
    corpus: &[Sentence],
    vocab: &Vocab,
    family: FamilyKind,
    opts: &VemOpts,
    rng: &mut Rng,
) -> Result<Vec<EpochRecord>, TrainError> {
    let params = model.params();
    let mut optimizer = if opts.adam { Optimizer::adam(opts.m_lr) } else { Optimizer::sgd(opts.m_lr) };
    let mut records = Vec::with_capacity(opts.epochs + 1);
    {
        let qs: Vec<QParams> = corpus.iter().map(|_| fresh_q(model, family)).collect();
        records.push(EpochRecord { epoch: 0, value: corpus_elbo(model, corpus, &qs, rng, vocab) });
    }
    for epoch in 1..=opts.epochs {
        for (batch_idx, batch) in minibatches(corpus.len(), opts.batch_size, rng).into_iter().enumerate() {
            let mut qs = Vec::with_capacity(batch.len());
            for i in &batch {
                let q = fresh_q(model, family);
                refine_q(model, &corpus[*i], &q, opts.e_steps, opts.e_lr, rng, vocab)?;
                qs.push(q);
            }
            params.zero_grad();
            let mut objective = Tensor::scalar(0.0);
            for (i, q) in batch.iter().zip(&qs) {
                objective = objective + m_objective(model, &corpus[*i], q, rng, vocab);
            }
            let objective = objective.scale(1.0 / batch.len() as f64);
            if !objective.value().is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: batch_idx });
            }
            objective.backward();
            optimizer.ascent_step(&params)?;
        }
        let qs: Vec<QParams> = corpus
            .iter()
            .map(|x| {
                let q = fresh_q(model, family);
                refine_q(model, x, &q, opts.e_steps, opts.e_lr, rng, vocab).map(|_| q)
            })
            .collect::<Result<_, _>>()?;
        records.push(EpochRecord { epoch, value: corpus_elbo(model, corpus, &qs, rng, vocab) });
    }
    Ok(records)
}
