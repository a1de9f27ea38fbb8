//! Run drivers: build models from a configuration, dispatch training per
//! inference method, and evaluate/sample/diagnose against a checkpoint. Every
//! run echoes its resolved config, streams metrics, and writes a final
//! checkpoint into its output directory.

use std::path::{Path, PathBuf};

use crate::em::em_fit;
use crate::exact::{
    corpus_log_likelihood, enumerate_posterior, log_marginal_enumeration, train_direct_marginal,
    DirectTrainOpts,
};
use crate::estimators::{is_log_marginal, iwae_bound};
use crate::models::{
    GaussianBow, GaussianCrnn, Hmm, Latent, MixtureRnn, Model, NaiveBayes, NeuralHmm, Sentence,
    TabularHmm, Vocab,
};
use crate::rng::Rng;
use crate::tensor::{load_checkpoint, load_into_params, save_checkpoint, Optimizer, ParamSet};
use crate::flows::FlowStack;
use crate::variational::{
    elbo_estimate, inference_gap_report, train_heldout_split, train_svi_em, train_variational_em,
    train_vae_with, Encoder, FamilyKind, QParams, VaeEstimator, VaeOpts, VemOpts,
};
use crate::wake_sleep::{wake_sleep_train, WakeSleepOpts};

use super::config::{Config, EstimatorKind, FlowKind, Inference, OptimizerKind};
use super::corpus::{load_corpus, load_vocab};
use super::metrics::MetricsWriter;
use super::HarnessError;

/// Random trainable initialization for a family (full-support emissions).
pub fn build_model(cfg: &Config, vocab: &Vocab, rng: &mut Rng) -> Model {
    let v = vocab.size();
    match cfg.family {
        crate::models::Family::NaiveBayes => Model::NaiveBayes(NaiveBayes::random(cfg.k, v, rng)),
        crate::models::Family::MixtureRnn => {
            Model::MixtureRnn(MixtureRnn::new(cfg.k, v, cfg.embed_dim, cfg.hidden_dim, rng))
        }
        crate::models::Family::GaussianBow => Model::GaussianBow(GaussianBow::new(v, cfg.latent_dim, rng)),
        crate::models::Family::GaussianCrnn => {
            Model::GaussianCrnn(GaussianCrnn::new(v, cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim, rng))
        }
        crate::models::Family::Hmm => Model::Hmm(Hmm::Tabular(TabularHmm::random(cfg.k, v, rng))),
        crate::models::Family::NeuralHmm => {
            Model::Hmm(Hmm::Neural(NeuralHmm::new(cfg.k, v, cfg.state_emb_dim, cfg.mlp_hidden, rng)))
        }
    }
}

/// Inference network matching the model's latent type.
pub fn build_encoder(cfg: &Config, model: &Model, vocab: &Vocab, rng: &mut Rng) -> Encoder {
    match model.latent_dim() {
        Some(d) => Encoder::gaussian(vocab.size(), cfg.embed_dim, cfg.hidden_dim, d, rng),
        None => Encoder::categorical(vocab.size(), cfg.embed_dim, cfg.hidden_dim, cfg.k, rng),
    }
}

/// Flow stack per the config's `flow`/`flow_depth` keys, for models with a
/// vector latent.
pub fn build_flow(cfg: &Config, model: &Model, rng: &mut Rng) -> Result<Option<FlowStack>, HarnessError> {
    if cfg.flow == FlowKind::None {
        return Ok(None);
    }
    let Some(d) = model.latent_dim() else {
        return Err(HarnessError::Invalid(format!(
            "flow-augmented posteriors need a vector latent; family {} has none",
            model.family().name()
        )));
    };
    Ok(Some(match cfg.flow {
        FlowKind::Planar => FlowStack::planar(d, cfg.flow_depth, rng),
        FlowKind::Iaf => FlowStack::iaf(d, cfg.flow_depth, cfg.mlp_hidden, rng),
        FlowKind::None => unreachable!(),
    }))
}

fn make_optimizer(cfg: &Config) -> Optimizer {
    match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::sgd(cfg.lr),
        OptimizerKind::Adam => Optimizer::adam(cfg.lr),
    }
}

fn load_data(cfg: &Config) -> Result<(Vocab, Vec<Sentence>), HarnessError> {
    let vocab_path = cfg.vocab.as_ref().ok_or_else(|| {
        HarnessError::Invalid("config needs a `vocab` path for this command".into())
    })?;
    let corpus_path = cfg.corpus.as_ref().ok_or_else(|| {
        HarnessError::Invalid("config needs a `corpus` path for this command".into())
    })?;
    let vocab = load_vocab(vocab_path)?;
    let corpus = load_corpus(corpus_path, &vocab)?;
    Ok((vocab, corpus))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Final objective (log-likelihood or ELBO, per method).
    pub final_value: f64,
}

/// Trains per the config's `inference` key and writes `resolved.cfg`,
/// `metrics.txt`, and `model.ckpt` into the output directory.
pub fn run_train(cfg: &Config) -> Result<TrainOutcome, HarnessError> {
    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    cfg.write_echo(&out_dir.join("resolved.cfg"))?;
    let (vocab, corpus) = load_data(cfg)?;
    let mut rng = Rng::seeded(cfg.seed);
    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.txt"))?;

    let model = build_model(cfg, &vocab, &mut rng);
    if let Some(init) = &cfg.init_checkpoint {
        load_into_params(init, &model.params())?;
    }

    let mut params = ParamSet::new();
    params.extend(model.params());
    let final_value;

    match cfg.inference {
        Inference::Em => {
            let Model::NaiveBayes(_) = &model else {
                return Err(HarnessError::Invalid(
                    "closed-form EM is implemented for the naive-bayes family; use direct-marginal or variational-em".into(),
                ));
            };
            let fit = em_fit(&corpus, cfg.k, vocab.size(), cfg.epochs, &mut rng)
                .map_err(HarnessError::Train)?;
            for (iter, ll) in fit.trajectory.iter().enumerate() {
                metrics.write(&[
                    ("run", cfg.run_id.as_str().into()),
                    ("iter", iter.into()),
                    ("loglik", (*ll).into()),
                ])?;
            }
            final_value = *fit.trajectory.last().unwrap();
            // The fitted parameters become the checkpointed model.
            if let Model::NaiveBayes(m) = &model {
                m.mix_logits.set_values(&fit.model.mix_logits.to_vec());
                m.emit_logits.set_values(&fit.model.emit_logits.to_vec());
            }
        }
        Inference::DirectMarginal => {
            let mut optimizer = make_optimizer(cfg);
            let records = train_direct_marginal(
                &model,
                &corpus,
                &vocab,
                &DirectTrainOpts { epochs: cfg.epochs, batch_size: cfg.batch_size },
                &mut optimizer,
                &mut rng,
            )
            .map_err(HarnessError::Train)?;
            for r in &records {
                metrics.write(&[
                    ("run", cfg.run_id.as_str().into()),
                    ("epoch", r.epoch.into()),
                    ("loglik", r.value.into()),
                ])?;
            }
            final_value = records.last().unwrap().value;
        }
        Inference::VariationalEm | Inference::Svi => {
            let family = if model.latent_dim().is_some() {
                FamilyKind::Gaussian
            } else {
                FamilyKind::Categorical
            };
            let opts = VemOpts {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                e_steps: cfg.svi_steps,
                e_lr: cfg.svi_lr,
                m_lr: cfg.lr,
                adam: cfg.optimizer == OptimizerKind::Adam,
            };
            let records = if cfg.inference == Inference::VariationalEm {
                train_variational_em(&model, &corpus, &vocab, family, &opts, &mut rng)
            } else {
                train_svi_em(&model, &corpus, &vocab, family, &opts, &mut rng)
            }
            .map_err(HarnessError::Train)?;
            for r in &records {
                metrics.write(&[
                    ("run", cfg.run_id.as_str().into()),
                    ("epoch", r.epoch.into()),
                    ("elbo", r.value.into()),
                ])?;
            }
            final_value = records.last().unwrap().value;
        }
        Inference::Vae => {
            let encoder = build_encoder(cfg, &model, &vocab, &mut rng);
            params.extend(encoder.params());
            let flow = build_flow(cfg, &model, &mut rng)?;
            if let Some(stack) = &flow {
                params.extend(stack.params());
            }
            let estimator = match (cfg.estimator, model.latent_dim()) {
                (EstimatorKind::Exact | EstimatorKind::Reparam, Some(_)) => VaeEstimator::Reparam,
                (EstimatorKind::Exact, None) => VaeEstimator::ExactCategorical,
                (EstimatorKind::Score, None) => VaeEstimator::Score { n_samples: cfg.train_samples.max(1) },
                (EstimatorKind::Concrete, _) => {
                    return Err(HarnessError::Invalid(format!(
                        "the {} likelihood is not defined on the simplex interior; the Concrete \
                         relaxation applies to the one-hot relaxable models only",
                        model.family().name()
                    )));
                }
                (kind, _) => {
                    return Err(HarnessError::Invalid(format!(
                        "estimator {} does not apply to family {}",
                        kind.name(),
                        model.family().name()
                    )));
                }
            };
            let (train, heldout) = train_heldout_split(&corpus, &mut rng);
            let opts = VaeOpts {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                adam: cfg.optimizer == OptimizerKind::Adam,
                train_samples: cfg.train_samples,
                eval_samples: cfg.eval_samples,
                beta: cfg.beta,
                beta_warmup: cfg.beta_warmup,
                free_bits: cfg.free_bits,
                is_samples: cfg.is_k.min(64),
                estimator,
            };
            let epochs =
                train_vae_with(&model, &encoder, flow.as_ref(), &train, &heldout, &vocab, &opts, &mut rng)
                    .map_err(HarnessError::Train)?;
            let lp_is_key = format!("lp_is_{}", opts.is_samples);
            for e in &epochs {
                metrics.write(&[
                    ("run", cfg.run_id.as_str().into()),
                    ("epoch", e.epoch.into()),
                    ("split", "train".into()),
                    ("elbo", e.train.elbo.into()),
                    ("recon", e.train.reconstruction.into()),
                    ("kl", e.train.kl.into()),
                    ("beta", e.beta.into()),
                    (lp_is_key.as_str(), e.train_lp_is.into()),
                ])?;
                if let (Some(h), Some(h_lp)) = (&e.heldout, e.heldout_lp_is) {
                    metrics.write(&[
                        ("run", cfg.run_id.as_str().into()),
                        ("epoch", e.epoch.into()),
                        ("split", "heldout".into()),
                        ("elbo", h.elbo.into()),
                        ("recon", h.reconstruction.into()),
                        ("kl", h.kl.into()),
                        ("beta", e.beta.into()),
                        (lp_is_key.as_str(), h_lp.into()),
                    ])?;
                }
            }
            final_value = epochs.last().unwrap().train.elbo;
        }
        Inference::WakeSleep => {
            let encoder = build_encoder(cfg, &model, &vocab, &mut rng);
            params.extend(encoder.params());
            let opts = WakeSleepOpts {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                adam: cfg.optimizer == OptimizerKind::Adam,
                max_len: cfg.t_cap,
                wake_per_sleep: cfg.wake_per_sleep,
            };
            let records = wake_sleep_train(&model, &encoder, &corpus, &vocab, &opts, &mut rng)
                .map_err(HarnessError::Train)?;
            for r in &records {
                metrics.write(&[
                    ("run", cfg.run_id.as_str().into()),
                    ("epoch", r.epoch.into()),
                    ("loglik", r.value.into()),
                ])?;
            }
            final_value = records.last().unwrap().value;
        }
    }

    metrics.finish()?;
    let checkpoint = out_dir.join("model.ckpt");
    save_checkpoint(&checkpoint, &params)?;
    Ok(TrainOutcome { out_dir, checkpoint, final_value })
}

/// Restores a model (and encoder, when the checkpoint carries one) for
/// evaluation-style commands.
pub fn restore(
    cfg: &Config,
    checkpoint: &Path,
    vocab: &Vocab,
) -> Result<(Model, Option<Encoder>, Option<FlowStack>), HarnessError> {
    let mut rng = Rng::seeded(cfg.seed);
    let model = build_model(cfg, vocab, &mut rng);
    let records = load_checkpoint(checkpoint)?;
    let has_encoder = records.iter().any(|(name, _, _)| name.starts_with("enc."));
    let mut params = ParamSet::new();
    params.extend(model.params());
    let encoder = if has_encoder {
        let enc = build_encoder(cfg, &model, vocab, &mut rng);
        params.extend(enc.params());
        Some(enc)
    } else {
        None
    };
    let has_flow = records.iter().any(|(name, _, _)| name.starts_with("flow"));
    let flow = if has_flow {
        let stack = build_flow(cfg, &model, &mut rng)?.ok_or_else(|| {
            HarnessError::Invalid(
                "checkpoint carries flow parameters but the config sets flow = none".into(),
            )
        })?;
        params.extend(stack.params());
        Some(stack)
    } else {
        None
    };
    load_into_params(checkpoint, &params)?;
    Ok((model, encoder, flow))
}

/// Evaluation proposal: the amortized posterior when the checkpoint has
/// one; otherwise the exact flat posterior for enumerable latents. HMMs
/// without an encoder fall through to the exact marginal (the bound a
/// tight posterior would give), and continuous-latent models require the
/// encoder.
enum EvalProposal {
    Q(QParams),
    ExactMarginal(f64),
}

fn eval_q(model: &Model, encoder: &Option<Encoder>, x: &Sentence, vocab: &Vocab) -> Result<EvalProposal, HarnessError> {
    if let Some(enc) = encoder {
        return Ok(EvalProposal::Q(enc.forward_q(x)));
    }
    if let Ok(post) = enumerate_posterior(model, x, vocab) {
        return Ok(EvalProposal::Q(QParams::Categorical {
            logits: crate::tensor::Tensor::param(&[post.k()], post.log_probs().to_vec()),
        }));
    }
    if let Model::Hmm(hmm) = model {
        let tokens = model.scored_tokens(x, vocab);
        return Ok(EvalProposal::ExactMarginal(crate::exact::hmm_forward(hmm, &tokens)));
    }
    Err(HarnessError::Invalid(
        "evaluation needs an amortized checkpoint (enc.* parameters) for continuous-latent models"
            .into(),
    ))
}

pub struct EvalRecord {
    pub sentence_id: usize,
    pub elbo: f64,
    pub iwae: f64,
    pub lp_is: f64,
}

/// Per-sentence ELBO, IWAE bound at `iwae_k`, and importance-sampled log
/// marginal at `is_k`; records are written to `eval.txt` in the output
/// directory and returned.
pub fn run_eval(cfg: &Config, checkpoint: &Path) -> Result<Vec<EvalRecord>, HarnessError> {
    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let (vocab, corpus) = load_data(cfg)?;
    let (model, encoder, flow) = restore(cfg, checkpoint, &vocab)?;
    let mut rng = Rng::seeded(cfg.seed);
    let mut metrics = MetricsWriter::create(&out_dir.join("eval.txt"))?;
    let mut records = Vec::with_capacity(corpus.len());
    for (i, x) in corpus.iter().enumerate() {
        let proposal = eval_q(&model, &encoder, x, &vocab)?;
        let q = match proposal {
            EvalProposal::Q(q) => q,
            EvalProposal::ExactMarginal(lp) => {
                // Tight-posterior degenerate case: all three bounds equal
                // the exact log marginal.
                let iwae_key = format!("iwae_{}", cfg.iwae_k);
                let is_key = format!("lp_is_{}", cfg.is_k);
                metrics.write(&[
                    ("sentence_id", i.into()),
                    ("elbo", lp.into()),
                    (iwae_key.as_str(), lp.into()),
                    (is_key.as_str(), lp.into()),
                ])?;
                records.push(EvalRecord { sentence_id: i, elbo: lp, iwae: lp, lp_is: lp });
                continue;
            }
        };
        let elbo = match &flow {
            None => elbo_estimate(&model, &q, x, cfg.eval_samples, &mut rng, &vocab).elbo,
            Some(stack) => {
                (0..cfg.eval_samples)
                    .map(|_| crate::flows::flow_elbo(&model, &q, stack, x, &mut rng, &vocab).elbo)
                    .sum::<f64>()
                    / cfg.eval_samples as f64
            }
        };
        let log_joint = |z: &Latent| model.log_joint(x, z, &vocab);
        // The IWAE field estimates the bound E[log I_K] by averaging
        // independent realizations; the IS field is the single large-K
        // evaluation estimator.
        let reps = cfg.eval_samples.max(1);
        let (iwae, lp_is) = match &flow {
            None => (
                (0..reps)
                    .map(|_| iwae_bound(&q, log_joint, cfg.iwae_k, &mut rng).0)
                    .sum::<f64>()
                    / reps as f64,
                is_log_marginal(&q, log_joint, cfg.is_k, &mut rng),
            ),
            Some(stack) => (
                (0..reps)
                    .map(|_| {
                        crate::flows::flow_importance_bound(&model, &q, stack, x, cfg.iwae_k, &mut rng, &vocab)
                    })
                    .sum::<f64>()
                    / reps as f64,
                crate::flows::flow_importance_bound(&model, &q, stack, x, cfg.is_k, &mut rng, &vocab),
            ),
        };
        let iwae_key = format!("iwae_{}", cfg.iwae_k);
        let is_key = format!("lp_is_{}", cfg.is_k);
        metrics.write(&[
            ("sentence_id", i.into()),
            ("elbo", elbo.into()),
            (iwae_key.as_str(), iwae.into()),
            (is_key.as_str(), lp_is.into()),
        ])?;
        records.push(EvalRecord { sentence_id: i, elbo, iwae, lp_is });
    }
    metrics.finish()?;
    Ok(records)
}

/// Ancestral samples from a checkpointed model, written to `samples.txt` and
/// returned as token strings.
pub fn run_sample(cfg: &Config, checkpoint: &Path, n: usize) -> Result<Vec<String>, HarnessError> {
    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let vocab_path = cfg.vocab.as_ref().ok_or_else(|| {
        HarnessError::Invalid("config needs a `vocab` path for sampling".into())
    })?;
    let vocab = load_vocab(vocab_path)?;
    let (model, _, _) = restore(cfg, checkpoint, &vocab)?;
    let mut rng = Rng::seeded(cfg.seed);
    let mut lines = Vec::with_capacity(n);
    for _ in 0..n {
        let s = crate::models::ancestral_sample(&model, &vocab, cfg.t_cap, &mut rng);
        let text: Vec<&str> = s.tokens.iter().map(|&t| vocab.token(t)).collect();
        lines.push(text.join(" "));
    }
    std::fs::write(out_dir.join("samples.txt"), lines.join("\n") + "\n")?;
    Ok(lines)
}

pub struct DiagnoseRecord {
    pub sentence_id: usize,
    pub report: crate::variational::GapReport,
}

/// Per-sentence inference-gap decomposition, written to `diagnose.txt`.
pub fn run_diagnose(cfg: &Config, checkpoint: &Path) -> Result<Vec<DiagnoseRecord>, HarnessError> {
    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let (vocab, corpus) = load_data(cfg)?;
    let (model, encoder, _) = restore(cfg, checkpoint, &vocab)?;
    let encoder = encoder.ok_or_else(|| {
        HarnessError::Invalid("diagnose needs an amortized checkpoint (enc.* parameters)".into())
    })?;
    let mut rng = Rng::seeded(cfg.seed);
    let mut metrics = MetricsWriter::create(&out_dir.join("diagnose.txt"))?;
    let mut records = Vec::with_capacity(corpus.len());
    for (i, x) in corpus.iter().enumerate() {
        let q = encoder.forward_q(x);
        let report = inference_gap_report(&model, &q, x, cfg.refine_steps, cfg.svi_lr, &mut rng, &vocab);
        metrics.write(&[
            ("sentence_id", i.into()),
            ("inference_gap", report.inference_gap.into()),
            ("approximation_gap", report.approximation_gap.into()),
            ("amortization_gap", report.amortization_gap.into()),
            ("exact", if report.exact { "yes".into() } else { "lower-bound".into() }),
        ])?;
        records.push(DiagnoseRecord { sentence_id: i, report });
    }
    metrics.finish()?;
    Ok(records)
}

/// Exact train log-likelihood for enumerable checkpointed models; the
/// "recompute the reported objective offline" primitive.
pub fn recompute_log_likelihood(cfg: &Config, checkpoint: &Path) -> Result<f64, HarnessError> {
    let (vocab, corpus) = load_data(cfg)?;
    let (model, _, _) = restore(cfg, checkpoint, &vocab)?;
    log_marginal_enumeration(&model, &corpus[0], &vocab)
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    Ok(corpus_log_likelihood(&model, &corpus, &vocab))
}
