//! Shipped experiment recipes: named, config-only presets plus their
//! runners. Each recipe is fully seeded, writes metrics under its own
//! directory, and reruns byte-identically.

use std::path::Path;

use crate::em::{em_fit_from, nb_m_step, Responsibilities};
use crate::estimators::{reparam_grad, score_function_grad};
use crate::exact::{corpus_log_likelihood, train_direct_marginal, DirectTrainOpts};
use crate::models::{Family, Latent, Model, NaiveBayes, Sentence, Vocab};
use crate::rng::Rng;
use crate::tensor::{Optimizer, Tensor};
use crate::util;
use crate::variational::{
    elbo_exact_categorical_t, svi_fit, train_svi_em, train_variational_em, train_vae, Encoder,
    FamilyKind, QParams, VaeEstimator, VaeOpts, VemOpts,
};

use super::config::Config;
use super::metrics::{MetricsWriter, Value};
use super::synth::synth_corpus;
use super::HarnessError;

pub struct Recipe {
    pub name: &'static str,
    pub description: &'static str,
}

/// The shipped presets.
pub fn experiment_recipes() -> Vec<Recipe> {
    vec![
        Recipe {
            name: "table1-sweep",
            description: "all five inference methods on one synthetic Naive Bayes corpus, \
                          single comparison report",
        },
        Recipe {
            name: "collapse-demo",
            description: "conditional-RNN decoder VAE with and without free bits, reporting the \
                          final KL of each run",
        },
        Recipe {
            name: "gap-study",
            description: "amortization vs approximation gaps before and after SVI refinement",
        },
        Recipe {
            name: "estimator-bench",
            description: "score-function vs reparameterized gradient variance table on the 1-D \
                          Gaussian toy",
        },
    ]
}

// ---------------------------------------------------------------------------
// table1-sweep
// ---------------------------------------------------------------------------

pub struct Table1Outcome {
    /// `(method, final exact train log-likelihood)`.
    pub results: Vec<(&'static str, f64)>,
}

/// Runs EM, direct-marginal, variational EM, stochastic variational EM, and
/// the (exact-expectation) VAE on one synthetic Naive Bayes corpus, then
/// scores every trained model by its exact train log-likelihood. EM and
/// direct-marginal start from the same initial parameters.
pub fn run_table1_sweep(dir: &Path) -> Result<Table1Outcome, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let cfg = Config {
        family: Family::NaiveBayes,
        k: 2,
        vocab_size: 12,
        t_cap: 8,
        n_sentences: 600,
        seed: 1001,
        ..Config::default()
    };
    let mut rng = Rng::seeded(cfg.seed);
    let synth = synth_corpus(&cfg, &dir.join("data"), &mut rng)?;
    let corpus = &synth.corpus;
    let vocab = &synth.vocab;
    let v = vocab.size();
    let mut results = Vec::new();
    let mut metrics = MetricsWriter::create(&dir.join("table1.txt"))?;

    // Shared initialization for the two exact-posterior methods.
    let init_q = Responsibilities::random(corpus.len(), cfg.k, &mut rng);
    let init_step = nb_m_step(&init_q, corpus, v);

    // EM.
    let em = em_fit_from(
        NaiveBayes::from_probs(&init_step.mix, &init_step.emit),
        corpus,
        300,
    )
    .map_err(HarnessError::Train)?;
    let em_ll = *em.trajectory.last().unwrap();
    results.push(("em", em_ll));

    // Direct gradient ascent on the log marginal, same start. Full-batch
    // ascent with a staged step size so the final log-likelihood matches
    // the EM optimum to well under 1e-3.
    let direct_model = Model::NaiveBayes(NaiveBayes::from_probs(&init_step.mix, &init_step.emit));
    let mut run_rng = Rng::seeded(cfg.seed + 1);
    for (lr, epochs) in [(0.05, 600), (0.01, 600), (2e-3, 600), (2e-4, 400)] {
        let mut opt = Optimizer::adam(lr);
        train_direct_marginal(
            &direct_model,
            corpus,
            vocab,
            &DirectTrainOpts { epochs, batch_size: corpus.len() },
            &mut opt,
            &mut run_rng,
        )
        .map_err(HarnessError::Train)?;
    }
    results.push(("direct-marginal", corpus_log_likelihood(&direct_model, corpus, vocab)));

    // Variational EM.
    let mut run_rng = Rng::seeded(cfg.seed + 2);
    let vem_model = Model::NaiveBayes(NaiveBayes::random(cfg.k, v, &mut run_rng));
    let opts = VemOpts { epochs: 25, batch_size: 64, e_steps: 30, e_lr: 0.5, m_lr: 0.05, adam: true };
    train_variational_em(&vem_model, corpus, vocab, FamilyKind::Categorical, &opts, &mut run_rng)
        .map_err(HarnessError::Train)?;
    results.push(("variational-em", corpus_log_likelihood(&vem_model, corpus, vocab)));

    // Stochastic variational EM.
    let mut run_rng = Rng::seeded(cfg.seed + 3);
    let svi_model = Model::NaiveBayes(NaiveBayes::random(cfg.k, v, &mut run_rng));
    train_svi_em(&svi_model, corpus, vocab, FamilyKind::Categorical, &opts, &mut run_rng)
        .map_err(HarnessError::Train)?;
    results.push(("svi", corpus_log_likelihood(&svi_model, corpus, vocab)));

    // Amortized VI (exact-expectation VAE).
    let mut run_rng = Rng::seeded(cfg.seed + 4);
    let vae_model = Model::NaiveBayes(NaiveBayes::random(cfg.k, v, &mut run_rng));
    let encoder = Encoder::categorical(v, 4, 8, cfg.k, &mut run_rng);
    let vae_opts = VaeOpts {
        epochs: 30,
        batch_size: 50,
        lr: 0.02,
        estimator: VaeEstimator::ExactCategorical,
        ..VaeOpts::default()
    };
    train_vae(&vae_model, &encoder, corpus, &[], vocab, &vae_opts, &mut run_rng)
        .map_err(HarnessError::Train)?;
    results.push(("vae", corpus_log_likelihood(&vae_model, corpus, vocab)));

    for (method, ll) in &results {
        metrics.write(&[("method", (*method).into()), ("loglik", (*ll).into())])?;
    }
    metrics.finish()?;
    Ok(Table1Outcome { results })
}

// ---------------------------------------------------------------------------
// collapse-demo
// ---------------------------------------------------------------------------

pub struct CollapseOutcome {
    /// Final KL of the run without countermeasures.
    pub plain_kl: f64,
    /// Final KL of the free-bits run.
    pub floored_kl: f64,
    /// KL term as it enters the floored objective: `max(kl, floor)`.
    pub floored_objective_kl: f64,
    pub floor: f64,
}

/// Paired seeded runs of a conditional-RNN-decoder VAE: the strong decoder
/// collapses the posterior without countermeasures; the paired run applies a
/// free-bits floor of 2 nats.
pub fn run_collapse_demo(dir: &Path) -> Result<CollapseOutcome, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let floor = 2.0;
    let cfg = Config {
        family: Family::GaussianCrnn,
        latent_dim: 4,
        vocab_size: 14,
        embed_dim: 6,
        hidden_dim: 12,
        t_cap: 10,
        n_sentences: 400,
        seed: 2002,
        ..Config::default()
    };
    // Ground truth with the latent input disconnected: the data genuinely
    // carries no information about z, the regime where collapse appears.
    let mut rng = Rng::seeded(cfg.seed);
    let vocab = Vocab::synthetic(cfg.vocab_size - 2);
    let truth = crate::models::GaussianCrnn::new(
        vocab.size(),
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.latent_dim,
        &mut rng,
    );
    {
        // Zero the latent block of the input weights.
        let mut w = truth.rnn().w_in.to_vec();
        let cols = cfg.embed_dim + cfg.latent_dim;
        for r in 0..cfg.hidden_dim {
            for c in cfg.embed_dim..cols {
                w[r * cols + c] = 0.0;
            }
        }
        truth.rnn().w_in.set_values(&w);
    }
    let truth = Model::GaussianCrnn(truth);
    let data_dir = dir.join("data");
    std::fs::create_dir_all(&data_dir)?;
    let mut corpus: Vec<Sentence> = Vec::with_capacity(cfg.n_sentences);
    while corpus.len() < cfg.n_sentences {
        let s = crate::models::ancestral_sample(&truth, &vocab, cfg.t_cap, &mut rng);
        if !s.tokens.is_empty() {
            corpus.push(s.tokens);
        }
    }
    super::corpus::save_vocab(&data_dir.join("vocab.txt"), &vocab)?;
    super::corpus::save_corpus(&data_dir.join("corpus.txt"), &corpus, &vocab)?;
    let vocab = &vocab;
    let corpus = &corpus;

    let mut metrics = MetricsWriter::create(&dir.join("collapse.txt"))?;
    let mut run = |name: &str, free_bits: f64, seed: u64| -> Result<(f64, f64), HarnessError> {
        let mut rng = Rng::seeded(seed);
        let model = Model::GaussianCrnn(crate::models::GaussianCrnn::new(
            vocab.size(),
            cfg.embed_dim,
            cfg.hidden_dim,
            cfg.latent_dim,
            &mut rng,
        ));
        let encoder = Encoder::gaussian(vocab.size(), cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim, &mut rng);
        let opts = VaeOpts {
            epochs: 8,
            batch_size: 16,
            lr: 5e-3,
            eval_samples: 8,
            free_bits,
            ..VaeOpts::default()
        };
        let epochs = train_vae(&model, &encoder, corpus, &[], vocab, &opts, &mut rng)
            .map_err(HarnessError::Train)?;
        for e in &epochs {
            metrics.write(&[
                ("run", name.into()),
                ("epoch", e.epoch.into()),
                ("split", "train".into()),
                ("elbo", e.train.elbo.into()),
                ("recon", e.train.reconstruction.into()),
                ("kl", e.train.kl.into()),
                ("beta", e.beta.into()),
            ])?;
        }
        let last = epochs.last().unwrap();
        Ok((last.train.kl, crate::variational::free_bits(last.train.kl, free_bits)))
    };

    let (plain_kl, _) = run("plain", 0.0, cfg.seed + 10)?;
    let (floored_kl, floored_objective_kl) = run("free-bits", floor, cfg.seed + 10)?;
    metrics.write(&[
        ("run", "summary".into()),
        ("plain_kl", plain_kl.into()),
        ("floored_kl", floored_kl.into()),
        ("floored_objective_kl", floored_objective_kl.into()),
    ])?;
    metrics.finish()?;
    Ok(CollapseOutcome { plain_kl, floored_kl, floored_objective_kl, floor })
}

// ---------------------------------------------------------------------------
// gap-study
// ---------------------------------------------------------------------------

pub struct GapOutcome {
    pub mean_gap_r0: f64,
    pub mean_gap_r20: f64,
    /// Fraction of sentences where 20 refinement steps did not increase the
    /// amortization gap.
    pub fraction_non_increasing: f64,
    /// Per-sentence `(gap_r0, gap_r20)`.
    pub per_sentence: Vec<(f64, f64)>,
}

/// Trains a small amortized model, then measures the amortization gap of the
/// encoder posterior before and after 20 SVI refinement steps, against a
/// converged per-sentence optimum.
pub fn run_gap_study(dir: &Path) -> Result<GapOutcome, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let cfg = Config {
        family: Family::NaiveBayes,
        k: 3,
        vocab_size: 12,
        t_cap: 8,
        n_sentences: 300,
        seed: 3003,
        ..Config::default()
    };
    let mut rng = Rng::seeded(cfg.seed);
    let synth = synth_corpus(&cfg, &dir.join("data"), &mut rng)?;
    let vocab = &synth.vocab;
    let corpus = &synth.corpus;

    // A deliberately under-trained encoder: enough to be informative, short
    // enough to leave a visible amortization gap.
    let model = Model::NaiveBayes(NaiveBayes::random(cfg.k, vocab.size(), &mut rng));
    let encoder = Encoder::categorical(vocab.size(), 4, 8, cfg.k, &mut rng);
    let opts = VaeOpts {
        epochs: 3,
        batch_size: 50,
        lr: 0.02,
        estimator: VaeEstimator::ExactCategorical,
        ..VaeOpts::default()
    };
    train_vae(&model, &encoder, corpus, &[], vocab, &opts, &mut rng).map_err(HarnessError::Train)?;

    let mut metrics = MetricsWriter::create(&dir.join("gaps.txt"))?;
    let eval_elbo = |q: &QParams, x: &Sentence| -> f64 {
        crate::tensor::no_grad(|| match q {
            QParams::Categorical { logits } => {
                elbo_exact_categorical_t(&model, logits, x, vocab, 1.0, 0.0).0.value()
            }
            _ => unreachable!(),
        })
    };

    let sentences = &corpus[..60.min(corpus.len())];
    let mut per_sentence = Vec::with_capacity(sentences.len());
    let mut non_increasing = 0usize;
    for (i, x) in sentences.iter().enumerate() {
        let q_enc = encoder.forward_q(x);
        let refined = svi_fit(&model, x, q_enc.clone(), 20, 0.5, &mut rng, vocab)
            .map_err(HarnessError::Train)?;
        let best = svi_fit(&model, x, q_enc.clone(), 400, 0.5, &mut rng, vocab)
            .map_err(HarnessError::Train)?;
        let elbo_best = eval_elbo(&best.q, x);
        let gap_r0 = elbo_best - eval_elbo(&q_enc, x);
        let gap_r20 = elbo_best - eval_elbo(&refined.q, x);
        if gap_r20 <= gap_r0 + 1e-12 {
            non_increasing += 1;
        }
        metrics.write(&[
            ("sentence_id", i.into()),
            ("gap_r0", gap_r0.into()),
            ("gap_r20", gap_r20.into()),
        ])?;
        per_sentence.push((gap_r0, gap_r20));
    }
    let n = per_sentence.len() as f64;
    let outcome = GapOutcome {
        mean_gap_r0: per_sentence.iter().map(|(a, _)| a).sum::<f64>() / n,
        mean_gap_r20: per_sentence.iter().map(|(_, b)| b).sum::<f64>() / n,
        fraction_non_increasing: non_increasing as f64 / n,
        per_sentence,
    };
    metrics.write(&[
        ("sentence_id", Value::Text("summary".into())),
        ("gap_r0", outcome.mean_gap_r0.into()),
        ("gap_r20", outcome.mean_gap_r20.into()),
    ])?;
    metrics.finish()?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// estimator-bench
// ---------------------------------------------------------------------------

pub struct EstimatorBenchOutcome {
    pub score_variance: f64,
    pub reparam_variance: f64,
    pub score_mean: f64,
    pub reparam_mean: f64,
}

/// Variance table for the two unbiased ELBO gradient estimators on the 1-D
/// conjugate Gaussian toy (prior N(0,1), likelihood N(x; z, 1), x = 1.3).
pub fn run_estimator_bench(dir: &Path) -> Result<EstimatorBenchOutcome, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let observed = 1.3;
    let log_joint = move |z: f64| -> f64 {
        -(2.0 * std::f64::consts::PI).ln() - 0.5 * z * z - 0.5 * (observed - z) * (observed - z)
    };
    let q = QParams::Gaussian {
        mean: Tensor::param(&[1], vec![0.4]),
        log_var: Tensor::param(&[1], vec![-0.3]),
    };
    let draws = 2000;
    let mut rng = Rng::seeded(4004);
    let score_draws: Vec<f64> = (0..draws)
        .map(|_| {
            score_function_grad(
                &q,
                |z| match z {
                    Latent::Vector(v) => log_joint(v[0]),
                    _ => unreachable!(),
                },
                1,
                &mut rng,
            )
            .get("q.mean")
            .unwrap()[0]
        })
        .collect();
    let mut rng = Rng::seeded(4005);
    let reparam_draws: Vec<f64> = (0..draws)
        .map(|_| {
            reparam_grad(
                &q,
                |z| {
                    let d = z.add_const(-observed);
                    (&d * &d).sum().scale(-0.5).add_const(-0.5 * (2.0 * std::f64::consts::PI).ln())
                },
                &[0.0],
                1,
                &mut rng,
            )
            .unwrap()
            .get("q.mean")
            .unwrap()[0]
        })
        .collect();
    let (score_mean, score_variance) = util::mean_var(&score_draws);
    let (reparam_mean, reparam_variance) = util::mean_var(&reparam_draws);
    let mut metrics = MetricsWriter::create(&dir.join("estimators.txt"))?;
    metrics.write(&[
        ("estimator", "score".into()),
        ("mean", score_mean.into()),
        ("variance", score_variance.into()),
    ])?;
    metrics.write(&[
        ("estimator", "reparam".into()),
        ("mean", reparam_mean.into()),
        ("variance", reparam_variance.into()),
    ])?;
    metrics.finish()?;
    Ok(EstimatorBenchOutcome { score_variance, reparam_variance, score_mean, reparam_mean })
}
