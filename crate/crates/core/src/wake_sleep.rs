//! Wake-sleep: wake-phase generative updates on recognition-sampled latents,
//! sleep-phase recognition updates on phantom data drawn from the model.
//!
//! The wake phase never touches encoder parameters and the sleep phase never
//! touches model parameters; each phase owns its optimizer.

use crate::dist::gaussian_log_prob_t;
use crate::exact::{corpus_log_likelihood, enumerate_posterior};
use crate::models::{ancestral_sample, Latent, Model, Sentence, Vocab};
use crate::rng::Rng;
use crate::tensor::{Optimizer, Tensor};
use crate::training::{minibatches, EpochRecord, TrainError};
use crate::variational::{elbo_estimate, Encoder, QParams};

/// Phantom pairs `(z, x)` ancestrally sampled from the generative model.
/// Pairs whose sentence was truncated at the length cap (or came out empty)
/// are discarded rather than kept, so the recognition target is never biased
/// toward clipped text.
pub struct PhantomBatch {
    pub pairs: Vec<(Latent, Sentence)>,
}

impl PhantomBatch {
    /// Draws until `size` usable pairs are collected; gives up after
    /// `20 * size` attempts.
    pub fn draw(model: &Model, vocab: &Vocab, size: usize, max_len: usize, rng: &mut Rng) -> Result<PhantomBatch, TrainError> {
        let mut pairs = Vec::with_capacity(size);
        let mut attempts = 0;
        while pairs.len() < size {
            attempts += 1;
            if attempts > 20 * size {
                return Err(TrainError::Unsupported(
                    "phantom sampling keeps hitting the length cap; raise the cap or fix the model".into(),
                ));
            }
            let s = ancestral_sample(model, vocab, max_len, rng);
            if s.truncated || s.tokens.is_empty() {
                continue;
            }
            pairs.push((s.latent, s.tokens));
        }
        Ok(PhantomBatch { pairs })
    }
}

/// Recognition log-density `log q(z | x; phi)` as a tensor in the encoder
/// parameters.
pub fn recognition_log_prob_t(encoder: &Encoder, x: &Sentence, z: &Latent) -> Tensor {
    match (encoder.forward_t(x), z) {
        (QParams::Categorical { logits }, Latent::Discrete(k)) => logits.log_softmax().get(*k),
        (QParams::Gaussian { mean, log_var }, Latent::Vector(v)) => {
            gaussian_log_prob_t(&mean, &log_var, &Tensor::vector(v))
        }
        _ => panic!("recognition model and latent kind do not match"),
    }
}

fn sample_recognition(encoder: &Encoder, x: &Sentence, rng: &mut Rng) -> Latent {
    match encoder.forward_q(x) {
        QParams::Categorical { .. } => {
            let q = encoder.forward_q(x).categorical();
            Latent::Discrete(q.sample(rng))
        }
        QParams::Gaussian { .. } => Latent::Vector(encoder.forward_q(x).gaussian().sample(rng)),
    }
}

/// Wake phase: latents drawn from the recognition model (no gradient
/// pathways), one ascent step on the mean complete-data log-likelihood with
/// respect to the generative parameters.
pub fn wake_step(
    model: &Model,
    encoder: &Encoder,
    batch: &[Sentence],
    optimizer: &mut Optimizer,
    rng: &mut Rng,
    vocab: &Vocab,
) -> Result<(), TrainError> {
    let params = model.params();
    params.zero_grad();
    let mut objective = Tensor::scalar(0.0);
    for x in batch {
        let z = sample_recognition(encoder, x, rng);
        objective = objective + model.log_joint_t(x, &z, vocab);
    }
    let objective = objective.scale(1.0 / batch.len() as f64);
    if !objective.value().is_finite() {
        return Err(TrainError::NonFinite { epoch: 0, batch: 0 });
    }
    objective.backward();
    optimizer.ascent_step(&params)?;
    Ok(())
}

/// Sleep phase: phantom pairs from the generative model, one ascent step on
/// the recognition log-likelihood with respect to the encoder parameters.
pub fn sleep_step(
    model: &Model,
    encoder: &Encoder,
    batch_size: usize,
    max_len: usize,
    optimizer: &mut Optimizer,
    rng: &mut Rng,
    vocab: &Vocab,
) -> Result<(), TrainError> {
    let phantoms = PhantomBatch::draw(model, vocab, batch_size, max_len, rng)?;
    let params = encoder.params();
    params.zero_grad();
    let mut objective = Tensor::scalar(0.0);
    for (z, x) in &phantoms.pairs {
        objective = objective + recognition_log_prob_t(encoder, x, z);
    }
    let objective = objective.scale(1.0 / phantoms.pairs.len() as f64);
    if !objective.value().is_finite() {
        return Err(TrainError::NonFinite { epoch: 0, batch: 0 });
    }
    objective.backward();
    optimizer.ascent_step(&params)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct WakeSleepOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: bool,
    pub max_len: usize,
    /// Wake steps taken per sleep step (1 = strict alternation).
    pub wake_per_sleep: usize,
}

impl Default for WakeSleepOpts {
    fn default() -> Self {
        WakeSleepOpts { epochs: 20, batch_size: 32, lr: 1e-2, adam: true, max_len: 20, wake_per_sleep: 1 }
    }
}

/// Alternating wake/sleep over epochs. Each record carries the train data
/// log-likelihood for enumerable models, or the mean amortized ELBO
/// otherwise. Phantom generation runs on an rng stream split off from the
/// main one, decoupling the phases' randomness.
pub fn wake_sleep_train(
    model: &Model,
    encoder: &Encoder,
    corpus: &[Sentence],
    vocab: &Vocab,
    opts: &WakeSleepOpts,
    rng: &mut Rng,
) -> Result<Vec<EpochRecord>, TrainError> {
    let mut theta_opt = if opts.adam { Optimizer::adam(opts.lr) } else { Optimizer::sgd(opts.lr) };
    let mut phi_opt = if opts.adam { Optimizer::adam(opts.lr) } else { Optimizer::sgd(opts.lr) };
    let mut phantom_rng = rng.split();

    let objective = |rng: &mut Rng| -> f64 {
        if matches!(model, Model::GaussianBow(_) | Model::GaussianCrnn(_)) {
            corpus
                .iter()
                .map(|x| {
                    let q = encoder.forward_q(x);
                    elbo_estimate(model, &q, x, 4, rng, vocab).elbo
                })
                .sum::<f64>()
                / corpus.len() as f64
        } else {
            corpus_log_likelihood(model, corpus, vocab)
        }
    };

    let mut records = vec![EpochRecord { epoch: 0, value: objective(rng) }];
    let mut wake_budget = 0usize;
    for epoch in 1..=opts.epochs {
        for batch in minibatches(corpus.len(), opts.batch_size, rng) {
            let sentences: Vec<Sentence> = batch.iter().map(|i| corpus[*i].clone()).collect();
            wake_step(model, encoder, &sentences, &mut theta_opt, rng, vocab)?;
            wake_budget += 1;
            if wake_budget >= opts.wake_per_sleep {
                sleep_step(model, encoder, sentences.len(), opts.max_len, &mut phi_opt, &mut phantom_rng, vocab)?;
                wake_budget = 0;
            }
        }
        records.push(EpochRecord { epoch, value: objective(rng) });
    }
    Ok(records)
}

/// Mean total variation between the recognition posterior and the exact
/// posterior across a corpus (enumerable models).
pub fn mean_recognition_tv(model: &Model, encoder: &Encoder, corpus: &[Sentence], vocab: &Vocab) -> f64 {
    corpus
        .iter()
        .map(|x| {
            let q = encoder.forward_q(x).categorical();
            let post = enumerate_posterior(model, x, vocab).expect("enumerable model").probs();
            crate::util::total_variation(q.probs(), &post)
        })
        .sum::<f64>()
        / corpus.len() as f64
}
