//! Joint training of a generative model and its inference network by
//! gradient ascent on the ELBO, with KL warm-up and free-bits floors as the
//! posterior-collapse countermeasures.

use crate::dist::{gaussian_log_prob_t, gaussian_reparam_t};
use crate::flows::FlowStack;
use crate::models::{Latent, Model, Sentence, Vocab};
use crate::rng::Rng;
use crate::tensor::{Optimizer, ParamSet, Tensor};
use crate::training::{minibatches, TrainError};

use super::{
    elbo_estimate_with, elbo_exact_categorical_t, elbo_reparam_gaussian_t, kl_anneal, Encoder,
    ElboReport, QParams,
};

#[derive(Debug, Clone, Copy)]
pub enum VaeEstimator {
    /// Exact expectation over an enumerable categorical latent.
    ExactCategorical,
    /// Reparameterized pathwise gradients (Gaussian latents).
    Reparam,
    /// Score-function gradients for a discrete latent, `n_samples` draws.
    Score { n_samples: usize },
}

#[derive(Debug, Clone)]
pub struct VaeOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: bool,
    /// Monte Carlo samples per sentence during training.
    pub train_samples: usize,
    /// Monte Carlo samples for the per-epoch reports.
    pub eval_samples: usize,
    /// Target value of beta (annealed toward when `beta_warmup > 0`).
    pub beta: f64,
    /// Warm-up steps for the KL weight; 0 disables annealing.
    pub beta_warmup: usize,
    /// Free-bits floor on the aggregate KL.
    pub free_bits: f64,
    /// Importance samples behind the per-epoch `lp_is` estimate.
    pub is_samples: usize,
    pub estimator: VaeEstimator,
}

impl Default for VaeOpts {
    fn default() -> Self {
        VaeOpts {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            adam: true,
            train_samples: 1,
            eval_samples: 16,
            beta: 1.0,
            beta_warmup: 0,
            free_bits: 0.0,
            is_samples: 16,
            estimator: VaeEstimator::Reparam,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub beta: f64,
    pub train: ElboReport,
    pub heldout: Option<ElboReport>,
    /// Mean importance-sampled log marginal per split (`is_samples` draws).
    pub train_lp_is: f64,
    pub heldout_lp_is: Option<f64>,
}

fn beta_at(step: usize, opts: &VaeOpts) -> f64 {
    if opts.beta_warmup > 0 {
        opts.beta * kl_anneal(step, opts.beta_warmup)
    } else {
        opts.beta
    }
}

fn split_lp_is(
    model: &Model,
    encoder: &Encoder,
    flow: Option<&FlowStack>,
    split: &[Sentence],
    vocab: &Vocab,
    opts: &VaeOpts,
    rng: &mut Rng,
) -> f64 {
    let mut total = 0.0;
    for x in split {
        let q = encoder.forward_q(x);
        total += match flow {
            Some(stack) => crate::flows::flow_importance_bound(
                model, &q, stack, x, opts.is_samples, rng, vocab,
            ),
            None => crate::estimators::is_log_marginal(
                &q,
                |z| model.log_joint(x, z, vocab),
                opts.is_samples,
                rng,
            ),
        } / split.len() as f64;
    }
    total
}

fn split_report(
    model: &Model,
    encoder: &Encoder,
    flow: Option<&FlowStack>,
    split: &[Sentence],
    vocab: &Vocab,
    opts: &VaeOpts,
    beta: f64,
    rng: &mut Rng,
) -> ElboReport {
    let mut elbo = 0.0;
    let mut recon = 0.0;
    let mut kl = 0.0;
    for x in split {
        let q = encoder.forward_q(x);
        let r = match flow {
            None => elbo_estimate_with(model, &q, x, opts.eval_samples, rng, vocab, beta, opts.free_bits, false),
            Some(stack) => {
                // Average of single-sample flow reports.
                let mut recon_s = 0.0;
                let mut kl_s = 0.0;
                for _ in 0..opts.eval_samples {
                    let r = crate::flows::flow_elbo(model, &q, stack, x, rng, vocab);
                    recon_s += r.reconstruction / opts.eval_samples as f64;
                    kl_s += r.kl / opts.eval_samples as f64;
                }
                ElboReport {
                    elbo: recon_s - beta * super::free_bits(kl_s, opts.free_bits),
                    reconstruction: recon_s,
                    kl: kl_s,
                    n_samples: opts.eval_samples,
                    beta,
                    free_bits: opts.free_bits,
                }
            }
        };
        elbo += r.elbo / split.len() as f64;
        recon += r.reconstruction / split.len() as f64;
        kl += r.kl / split.len() as f64;
    }
    ElboReport {
        elbo,
        reconstruction: recon,
        kl,
        n_samples: opts.eval_samples,
        beta,
        free_bits: opts.free_bits,
    }
}

/// Single-sample flow objective: `log p(x | z_K) - beta * max(log q_K(z_K)
/// - log p(z_K), floor)` with the noise reparameterized at the base.
fn flow_objective(
    model: &Model,
    encoder: &Encoder,
    stack: &FlowStack,
    x: &Sentence,
    vocab: &Vocab,
    opts: &VaeOpts,
    beta: f64,
    rng: &mut Rng,
) -> Result<Tensor, TrainError> {
    let QParams::Gaussian { mean, log_var } = encoder.forward_t(x) else {
        return Err(TrainError::Unsupported(
            "flow-augmented posteriors need a Gaussian encoder head".into(),
        ));
    };
    let d = mean.len();
    let mut objective = Tensor::scalar(0.0);
    for _ in 0..opts.train_samples {
        let eps = rng.normal_vec(d);
        let z0 = gaussian_reparam_t(&mean, &log_var, &eps);
        let log_q0 = gaussian_log_prob_t(&mean, &log_var, &z0);
        let (z_k, log_det) = stack.forward(&z0);
        let log_qk = log_q0 - log_det;
        let recon = model.log_likelihood_given_t(x, &z_k, vocab);
        let log_prior =
            gaussian_log_prob_t(model.prior_mean(), &Tensor::zeros(&[d]), &z_k);
        let kl = log_qk - log_prior;
        objective = objective + recon - kl.clamp_min(opts.free_bits).scale(beta);
    }
    Ok(objective.scale(1.0 / opts.train_samples as f64))
}

fn sentence_objective(
    model: &Model,
    encoder: &Encoder,
    flow: Option<&FlowStack>,
    x: &Sentence,
    vocab: &Vocab,
    opts: &VaeOpts,
    beta: f64,
    rng: &mut Rng,
) -> Result<Tensor, TrainError> {
    if let Some(stack) = flow {
        return flow_objective(model, encoder, stack, x, vocab, opts, beta, rng);
    }
    match opts.estimator {
        VaeEstimator::ExactCategorical => {
            let QParams::Categorical { logits } = encoder.forward_t(x) else {
                return Err(TrainError::Unsupported(
                    "exact-categorical estimator needs a categorical encoder head".into(),
                ));
            };
            Ok(elbo_exact_categorical_t(model, &logits, x, vocab, beta, opts.free_bits).0)
        }
        VaeEstimator::Reparam => {
            let QParams::Gaussian { mean, log_var } = encoder.forward_t(x) else {
                return Err(TrainError::Unsupported(
                    "reparameterized estimator needs a Gaussian encoder head".into(),
                ));
            };
            let noises: Vec<Vec<f64>> =
                (0..opts.train_samples).map(|_| rng.normal_vec(mean.len())).collect();
            Ok(elbo_reparam_gaussian_t(model, &mean, &log_var, x, &noises, vocab, beta, opts.free_bits).0)
        }
        VaeEstimator::Score { n_samples } => {
            if opts.free_bits != 0.0 {
                return Err(TrainError::Unsupported(
                    "free bits are not defined for the score-function surrogate".into(),
                ));
            }
            let QParams::Categorical { logits } = encoder.forward_t(x) else {
                return Err(TrainError::Unsupported(
                    "score estimator needs a categorical encoder head".into(),
                ));
            };
            let log_prior_t = match model {
                Model::NaiveBayes(m) => m.mix_logits.log_softmax(),
                Model::MixtureRnn(m) => m.mix_logits.log_softmax(),
                _ => {
                    return Err(TrainError::Unsupported(
                        "score estimator needs an enumerable discrete latent".into(),
                    ))
                }
            };
            let q = crate::dist::Categorical::from_logits(&logits.values());
            let log_q_t = logits.log_softmax();
            let log_q_vals = crate::util::log_softmax(&logits.values());
            let log_prior_vals = log_prior_t.to_vec();
            let mut surrogate = Tensor::scalar(0.0);
            for _ in 0..n_samples {
                let z = q.sample(rng);
                let loglik_t = model.log_joint_t(x, &Latent::Discrete(z), vocab) - log_prior_t.get(z);
                let loglik = loglik_t.value();
                // Reward uses detached values; the gradient of the surrogate
                // is the score-function ELBO gradient in phi and the
                // posterior-sampled likelihood gradient in theta.
                let reward = loglik - beta * (log_q_vals[z] - log_prior_vals[z]);
                surrogate = surrogate
                    + log_q_t.get(z).scale(reward)
                    + loglik_t
                    + log_prior_t.get(z).scale(beta);
            }
            Ok(surrogate.scale(1.0 / n_samples as f64))
        }
    }
}

/// Minibatch ascent on the (annealed, floored) ELBO over `(theta, phi)`
/// jointly. Returns one record per epoch, including epoch 0 before any
/// update, each carrying mean train/held-out reports.
pub fn train_vae(
    model: &Model,
    encoder: &Encoder,
    train: &[Sentence],
    heldout: &[Sentence],
    vocab: &Vocab,
    opts: &VaeOpts,
    rng: &mut Rng,
) -> Result<Vec<VaeEpoch>, TrainError> {
    train_vae_with(model, encoder, None, train, heldout, vocab, opts, rng)
}

/// [`train_vae`] with an optional flow stack on the variational posterior;
/// the flow parameters train jointly with `(theta, phi)`.
#[allow(clippy::too_many_arguments)]
pub fn train_vae_with(
    model: &Model,
    encoder: &Encoder,
    flow: Option<&FlowStack>,
    train: &[Sentence],
    heldout: &[Sentence],
    vocab: &Vocab,
    opts: &VaeOpts,
    rng: &mut Rng,
) -> Result<Vec<VaeEpoch>, TrainError> {
    let mut params = ParamSet::new();
    params.extend(model.params());
    params.extend(encoder.params());
    if let Some(stack) = flow {
        params.extend(stack.params());
    }
    let mut optimizer = if opts.adam { Optimizer::adam(opts.lr) } else { Optimizer::sgd(opts.lr) };

    let mut epochs = Vec::with_capacity(opts.epochs + 1);
    let initial_beta = beta_at(0, opts);
    epochs.push(VaeEpoch {
        epoch: 0,
        beta: initial_beta,
        train: split_report(model, encoder, flow, train, vocab, opts, initial_beta, rng),
        heldout: if heldout.is_empty() {
            None
        } else {
            Some(split_report(model, encoder, flow, heldout, vocab, opts, initial_beta, rng))
        },
        train_lp_is: split_lp_is(model, encoder, flow, train, vocab, opts, rng),
        heldout_lp_is: if heldout.is_empty() {
            None
        } else {
            Some(split_lp_is(model, encoder, flow, heldout, vocab, opts, rng))
        },
    });

    let mut step = 0usize;
    for epoch in 1..=opts.epochs {
        for (batch_idx, batch) in minibatches(train.len(), opts.batch_size, rng).into_iter().enumerate() {
            let beta = beta_at(step, opts);
            params.zero_grad();
            let mut objective = Tensor::scalar(0.0);
            for i in &batch {
                objective = objective + sentence_objective(model, encoder, flow, &train[*i], vocab, opts, beta, rng)?;
            }
            let objective = objective.scale(1.0 / batch.len() as f64);
            if !objective.value().is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: batch_idx });
            }
            objective.backward();
            optimizer.ascent_step(&params)?;
            step += 1;
        }
        let beta = beta_at(step, opts);
        epochs.push(VaeEpoch {
            epoch,
            beta,
            train: split_report(model, encoder, flow, train, vocab, opts, beta, rng),
            heldout: if heldout.is_empty() {
                None
            } else {
                Some(split_report(model, encoder, flow, heldout, vocab, opts, beta, rng))
            },
            train_lp_is: split_lp_is(model, encoder, flow, train, vocab, opts, rng),
            heldout_lp_is: if heldout.is_empty() {
                None
            } else {
                Some(split_lp_is(model, encoder, flow, heldout, vocab, opts, rng))
            },
        });
    }
    Ok(epochs)
}

/// Deterministic 90/10 split by shuffled sentence index.
pub fn train_heldout_split(corpus: &[Sentence], rng: &mut Rng) -> (Vec<Sentence>, Vec<Sentence>) {
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    rng.shuffle(&mut idx);
    let cut = (corpus.len() * 9) / 10;
    let train = idx[..cut].iter().map(|&i| corpus[i].clone()).collect();
    let heldout = idx[cut..].iter().map(|&i| corpus[i].clone()).collect();
    (train, heldout)
}
