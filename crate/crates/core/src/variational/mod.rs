//! The ELBO and everything that maximizes it: variational families, SVI,
//! amortized inference, the VAE trainer with posterior-collapse
//! countermeasures, and inference-gap diagnostics.
//!
//! For enumerable categorical posteriors the expectation in the ELBO is
//! computed exactly; for Gaussian posteriors the reconstruction term is a
//! reparameterized Monte Carlo average and the KL against the unit-variance
//! Gaussian prior is analytic. The objective is always assembled as
//! `reconstruction - beta * max(kl, free_bits)`.

mod encoder;
mod vae;
mod vem;

pub use encoder::{Encoder, EncoderHead};
pub use vae::{train_heldout_split, train_vae, train_vae_with, VaeEpoch, VaeEstimator, VaeOpts};
pub use vem::{train_svi_em, train_variational_em, VemOpts};

use crate::dist::{gaussian_kl_t, gaussian_reparam_t, Categorical, DiagGaussian};
use crate::exact::{enumerate_posterior, log_marginal_enumeration};
use crate::models::{Model, Sentence, Vocab};
use crate::rng::Rng;
use crate::tensor::{no_grad, ParamSet, Tensor};
use crate::training::TrainError;
use crate::util;

/// Which KL enters a relaxed (Concrete) objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlMode {
    /// KL between the underlying categorical distributions (closed form).
    #[default]
    Categorical,
    /// Single-sample log-ratio of the relaxed densities.
    Concrete,
}

/// Variational family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Categorical,
    Gaussian,
}

/// Per-datum variational parameters (or an encoder's output), held as
/// tensors so the same object serves SVI leaves and amortized heads.
#[derive(Clone)]
pub enum QParams {
    Categorical { logits: Tensor },
    Gaussian { mean: Tensor, log_var: Tensor },
}

impl QParams {
    pub fn uniform_categorical(k: usize) -> QParams {
        QParams::Categorical { logits: Tensor::param(&[k], vec![0.0; k]) }
    }

    pub fn standard_gaussian(dim: usize) -> QParams {
        QParams::Gaussian {
            mean: Tensor::param(&[dim], vec![0.0; dim]),
            log_var: Tensor::param(&[dim], vec![0.0; dim]),
        }
    }

    /// Fresh leaf tensors carrying the same values; the warm start used by
    /// SVI refinement.
    pub fn detached_params(&self) -> QParams {
        match self {
            QParams::Categorical { logits } => QParams::Categorical {
                logits: Tensor::param(logits.shape(), logits.to_vec()),
            },
            QParams::Gaussian { mean, log_var } => QParams::Gaussian {
                mean: Tensor::param(mean.shape(), mean.to_vec()),
                log_var: Tensor::param(log_var.shape(), log_var.to_vec()),
            },
        }
    }

    pub fn leaves(&self) -> ParamSet {
        let mut set = ParamSet::new();
        match self {
            QParams::Categorical { logits } => set.push("q.logits", logits.clone()),
            QParams::Gaussian { mean, log_var } => {
                set.push("q.mean", mean.clone());
                set.push("q.log_var", log_var.clone());
            }
        }
        set
    }

    pub fn categorical(&self) -> Categorical {
        match self {
            QParams::Categorical { logits } => Categorical::from_logits(&logits.values()),
            _ => panic!("q-params: expected categorical"),
        }
    }

    pub fn gaussian(&self) -> DiagGaussian {
        match self {
            QParams::Gaussian { mean, log_var } => DiagGaussian::new(mean.to_vec(), log_var.to_vec()),
            _ => panic!("q-params: expected gaussian"),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            QParams::Categorical { .. } => FamilyKind::Categorical,
            QParams::Gaussian { .. } => FamilyKind::Gaussian,
        }
    }
}

/// ELBO value with its decomposition. Constructed so that
/// `elbo == reconstruction - beta * max(kl, free_bits)` holds exactly.
#[derive(Debug, Clone, Copy)]
pub struct ElboReport {
    pub elbo: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub n_samples: usize,
    pub beta: f64,
    pub free_bits: f64,
}

impl ElboReport {
    fn assemble(reconstruction: f64, kl: f64, n_samples: usize, beta: f64, free_bits_floor: f64) -> ElboReport {
        ElboReport {
            elbo: reconstruction - beta * free_bits(kl, free_bits_floor),
            reconstruction,
            kl,
            n_samples,
            beta,
            free_bits: free_bits_floor,
        }
    }
}

/// Linear KL warm-up: `min(1, step / warmup_steps)`.
pub fn kl_anneal(step: usize, warmup_steps: usize) -> f64 {
    assert!(warmup_steps >= 1, "kl_anneal: warmup_steps must be at least 1");
    (step as f64 / warmup_steps as f64).min(1.0)
}

/// Free-bits floor: `max(kl, floor)`; the objective cannot profit from
/// pushing the KL below the floor.
pub fn free_bits(kl_value: f64, floor: f64) -> f64 {
    assert!(floor >= 0.0, "free_bits: floor must be nonnegative");
    kl_value.max(floor)
}

fn model_prior_categorical(model: &Model) -> Categorical {
    match model {
        Model::NaiveBayes(m) => Categorical::from_probs(&m.mix_probs()),
        Model::MixtureRnn(m) => Categorical::from_logits(&m.mix_logits.values()),
        _ => panic!("categorical prior requested for family {:?}", model.family()),
    }
}

fn discrete_log_likelihoods(model: &Model, x: &Sentence, vocab: &Vocab) -> Vec<f64> {
    let prior = model_prior_categorical(model);
    (0..prior.k())
        .map(|z| {
            model.log_joint(x, &crate::models::Latent::Discrete(z), vocab) - prior.log_prob(z)
        })
        .collect()
}

/// ELBO estimate for a `(model, q, x)` triple.
///
/// Categorical q on an enumerable model: the expectation is exact and the KL
/// is closed-form. Gaussian q on a continuous-latent model: reconstruction by
/// `n_samples` reparameterized draws, analytic KL against the `N(mu, I)`
/// prior.
pub fn elbo_estimate(
    model: &Model,
    q: &QParams,
    x: &Sentence,
    n_samples: usize,
    rng: &mut Rng,
    vocab: &Vocab,
) -> ElboReport {
    elbo_estimate_with(model, q, x, n_samples, rng, vocab, 1.0, 0.0, false)
}

/// Full-control variant: `beta`, free-bits floor, and a sampled-KL mode that
/// replaces the analytic/exact KL with a Monte Carlo log-ratio estimate.
#[allow(clippy::too_many_arguments)]
pub fn elbo_estimate_with(
    model: &Model,
    q: &QParams,
    x: &Sentence,
    n_samples: usize,
    rng: &mut Rng,
    vocab: &Vocab,
    beta: f64,
    free_bits_floor: f64,
    sampled_kl: bool,
) -> ElboReport {
    match q {
        QParams::Categorical { .. } => {
            let qc = q.categorical();
            let prior = model_prior_categorical(model);
            assert_eq!(qc.k(), prior.k(), "elbo: q support {} vs prior support {}", qc.k(), prior.k());
            let lls = discrete_log_likelihoods(model, x, vocab);
            let reconstruction: f64 = qc.probs().iter().zip(&lls).map(|(w, ll)| w * ll).sum();
            let kl = if sampled_kl {
                (0..n_samples)
                    .map(|_| {
                        let z = qc.sample(rng);
                        qc.log_prob(z) - prior.log_prob(z)
                    })
                    .sum::<f64>()
                    / n_samples as f64
            } else {
                qc.kl(&prior)
            };
            ElboReport::assemble(reconstruction, kl, n_samples, beta, free_bits_floor)
        }
        QParams::Gaussian { .. } => {
            let qg = q.gaussian();
            let prior_mean = model.prior_mean().to_vec();
            let mut reconstruction = 0.0;
            let mut kl_mc = 0.0;
            for _ in 0..n_samples {
                let z = qg.sample(rng);
                reconstruction += no_grad(|| {
                    model.log_likelihood_given_t(x, &Tensor::vector(&z), vocab).value()
                }) / n_samples as f64;
                if sampled_kl {
                    let prior = DiagGaussian::new(prior_mean.clone(), vec![0.0; qg.dim()]);
                    kl_mc += (qg.log_prob(&z) - prior.log_prob(&z)) / n_samples as f64;
                }
            }
            let kl = if sampled_kl { kl_mc } else { qg.kl_to_unit_gaussian(&prior_mean) };
            ElboReport::assemble(reconstruction, kl, n_samples, beta, free_bits_floor)
        }
    }
}

/// Exact-expectation ELBO for a categorical q as a differentiable tensor:
/// `(objective, reconstruction, kl)`, where the objective applies `beta` and
/// the free-bits floor.
pub fn elbo_exact_categorical_t(
    model: &Model,
    q_logits: &Tensor,
    x: &Sentence,
    vocab: &Vocab,
    beta: f64,
    free_bits_floor: f64,
) -> (Tensor, Tensor, Tensor) {
    let k = q_logits.len();
    let q = q_logits.softmax();
    let log_q = q_logits.log_softmax();
    let log_prior = match model {
        Model::NaiveBayes(m) => m.mix_logits.log_softmax(),
        Model::MixtureRnn(m) => m.mix_logits.log_softmax(),
        _ => panic!("categorical ELBO requested for family {:?}", model.family()),
    };
    let lls: Vec<Tensor> = (0..k)
        .map(|z| {
            model.log_joint_t(x, &crate::models::Latent::Discrete(z), vocab) - log_prior.get(z)
        })
        .collect();
    let ll_refs: Vec<&Tensor> = lls.iter().collect();
    let reconstruction = q.dot(&Tensor::concat(&ll_refs));
    let kl = q.dot(&(&log_q - &log_prior));
    let objective = &reconstruction - kl.clamp_min(free_bits_floor).scale(beta);
    (objective, reconstruction, kl)
}

/// Single- or multi-sample reparameterized ELBO for a Gaussian q as a
/// differentiable tensor: `(objective, reconstruction, kl)`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_reparam_gaussian_t(
    model: &Model,
    mean: &Tensor,
    log_var: &Tensor,
    x: &Sentence,
    noises: &[Vec<f64>],
    vocab: &Vocab,
    beta: f64,
    free_bits_floor: f64,
) -> (Tensor, Tensor, Tensor) {
    assert!(!noises.is_empty(), "elbo: needs at least one noise draw");
    let mut reconstruction = Tensor::scalar(0.0);
    for eps in noises {
        let z = gaussian_reparam_t(mean, log_var, eps);
        reconstruction = reconstruction + model.log_likelihood_given_t(x, &z, vocab);
    }
    let reconstruction = reconstruction.scale(1.0 / noises.len() as f64);
    let kl = gaussian_kl_t(mean, log_var, model.prior_mean());
    let objective = &reconstruction - kl.clamp_min(free_bits_floor).scale(beta);
    (objective, reconstruction, kl)
}

pub struct SviFit {
    pub q: QParams,
    /// Objective value per gradient step (before each update), then final.
    pub trajectory: Vec<f64>,
}

/// Gradient ascent on the ELBO with respect to the variational parameters
/// only; model parameters stay frozen. Aborts when the objective falls
/// below -1e8.
pub fn svi_fit(
    model: &Model,
    x: &Sentence,
    init: QParams,
    steps: usize,
    lr: f64,
    rng: &mut Rng,
    vocab: &Vocab,
) -> Result<SviFit, TrainError> {
    let q = init.detached_params();
    let leaves = q.leaves();
    let mut optimizer = crate::tensor::Optimizer::sgd(lr);
    let mut trajectory = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        leaves.zero_grad();
        let objective = match &q {
            QParams::Categorical { logits } => {
                elbo_exact_categorical_t(model, logits, x, vocab, 1.0, 0.0).0
            }
            QParams::Gaussian { mean, log_var } => {
                let noise = vec![rng.normal_vec(mean.len())];
                elbo_reparam_gaussian_t(model, mean, log_var, x, &noise, vocab, 1.0, 0.0).0
            }
        };
        let value = objective.value();
        if value < -1e8 {
            return Err(TrainError::Diverged { step, value });
        }
        trajectory.push(value);
        objective.backward();
        optimizer.ascent_step(&leaves)?;
    }
    let final_value = match &q {
        QParams::Categorical { logits } => {
            no_grad(|| elbo_exact_categorical_t(model, logits, x, vocab, 1.0, 0.0).0.value())
        }
        QParams::Gaussian { mean, log_var } => {
            let noise = vec![rng.normal_vec(mean.len())];
            no_grad(|| {
                elbo_reparam_gaussian_t(model, mean, log_var, x, &noise, vocab, 1.0, 0.0).0.value()
            })
        }
    };
    trajectory.push(final_value);
    Ok(SviFit { q, trajectory })
}

/// Inference-gap decomposition for one sentence.
#[derive(Debug, Clone, Copy)]
pub struct GapReport {
    pub inference_gap: f64,
    pub approximation_gap: f64,
    pub amortization_gap: f64,
    /// `log p(x)` when the model is enumerable; otherwise the best-found
    /// ELBO stands in and `exact` is false (gaps are then lower bounds).
    pub log_marginal: f64,
    pub exact: bool,
    pub refinement_diverged: bool,
}

/// Decomposes the inference gap of an encoder's posterior into approximation
/// and amortization parts. `lambda_star` comes from `refine_steps` of SVI
/// initialized at the encoder output; the identity
/// `inference = approximation + amortization` holds by construction.
pub fn inference_gap_report(
    model: &Model,
    q_encoder: &QParams,
    x: &Sentence,
    refine_steps: usize,
    lr: f64,
    rng: &mut Rng,
    vocab: &Vocab,
) -> GapReport {
    let elbo_samples = 256;
    let elbo_enc = elbo_estimate(model, q_encoder, x, elbo_samples, rng, vocab).elbo;
    let (elbo_star, diverged) =
        match svi_fit(model, x, q_encoder.clone(), refine_steps, lr, rng, vocab) {
            Ok(fit) => (
                elbo_estimate(model, &fit.q, x, elbo_samples, rng, vocab).elbo,
                false,
            ),
            Err(_) => (elbo_enc, true),
        };
    // Refinement is only credited when it helped; a noisy or diverged refit
    // must not report a negative amortization gap.
    let elbo_star = elbo_star.max(elbo_enc);
    let (log_marginal, exact) = match log_marginal_enumeration(model, x, vocab) {
        Ok(lp) => (lp, true),
        Err(_) => (elbo_star, false),
    };
    let inference_gap = log_marginal - elbo_enc;
    let amortization_gap = elbo_star - elbo_enc;
    let approximation_gap = inference_gap - amortization_gap;
    GapReport {
        inference_gap,
        approximation_gap,
        amortization_gap,
        log_marginal,
        exact,
        refinement_diverged: diverged,
    }
}

/// KL between a categorical q and the exact enumerated posterior; the
/// quantity the ELBO gap must equal on enumerable models.
pub fn kl_q_to_posterior(model: &Model, q: &Categorical, x: &Sentence, vocab: &Vocab) -> f64 {
    let post = enumerate_posterior(model, x, vocab).expect("enumerable model");
    q.probs()
        .iter()
        .zip(post.log_probs())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &lp)| p * (util::safe_ln(p) - lp))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::NaiveBayes;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn nb_model(k: usize, v: usize, seed: u64) -> Model {
        let mut rng = Rng::seeded(seed);
        Model::NaiveBayes(NaiveBayes::random(k, v, &mut rng))
    }

    #[test]
    fn anneal_and_free_bits_contracts() {
        assert_eq!(kl_anneal(0, 100), 0.0);
        assert_eq!(kl_anneal(100, 100), 1.0);
        assert_eq!(kl_anneal(50, 100), 0.5);
        assert_eq!(kl_anneal(500, 100), 1.0);
        assert_eq!(free_bits(0.1, 0.5), 0.5);
        assert_eq!(free_bits(3.0, 0.5), 3.0);
        assert_eq!(free_bits(0.7, 0.0), 0.7);
    }

    #[test]
    fn elbo_tight_at_exact_posterior() {
        let model = nb_model(3, 5, 71);
        let vocab = Vocab::synthetic(3);
        let x = vec![2, 4, 1];
        let post = enumerate_posterior(&model, &x, &vocab).unwrap();
        let q = QParams::Categorical { logits: Tensor::param(&[3], post.log_probs().to_vec()) };
        let mut rng = Rng::seeded(1);
        let report = elbo_estimate(&model, &q, &x, 1, &mut rng, &vocab);
        let lp = log_marginal_enumeration(&model, &x, &vocab).unwrap();
        assert_close(report.elbo, lp, 1e-9);
    }

    #[test]
    fn elbo_gap_equals_kl_to_posterior() {
        let model = nb_model(4, 6, 72);
        let vocab = Vocab::synthetic(4);
        let x = vec![5, 0, 3];
        let q = QParams::Categorical { logits: Tensor::param(&[4], vec![0.3, -0.2, 0.9, 0.0]) };
        let mut rng = Rng::seeded(2);
        let report = elbo_estimate(&model, &q, &x, 1, &mut rng, &vocab);
        let lp = log_marginal_enumeration(&model, &x, &vocab).unwrap();
        assert!(report.elbo <= lp + 1e-9);
        let gap = lp - report.elbo;
        assert_close(gap, kl_q_to_posterior(&model, &q.categorical(), &x, &vocab), 1e-9);
    }

    #[test]
    fn likelihood_independent_of_latent_gives_log_marginal_and_zero_kl() {
        // Identical emission rows: p(x | z) does not depend on z. With
        // q = prior, the ELBO is exactly log p(x) and the KL is 0.
        let row = vec![0.2, 0.5, 0.3];
        let nb = NaiveBayes::from_probs(&[0.4, 0.6], &[row.clone(), row]);
        let model = Model::NaiveBayes(nb);
        let vocab = Vocab::synthetic(1);
        let x = vec![1, 2];
        let prior_logits = match &model {
            Model::NaiveBayes(m) => m.mix_logits.to_vec(),
            _ => unreachable!(),
        };
        let q = QParams::Categorical { logits: Tensor::param(&[2], prior_logits) };
        let mut rng = Rng::seeded(3);
        let report = elbo_estimate(&model, &q, &x, 1, &mut rng, &vocab);
        assert_close(report.kl, 0.0, 1e-12);
        assert_close(report.elbo, log_marginal_enumeration(&model, &x, &vocab).unwrap(), 1e-9);
    }

    #[test]
    fn analytic_and_sampled_kl_agree_for_gaussian_q() {
        let mut rng = Rng::seeded(73);
        let model = Model::GaussianBow(crate::models::GaussianBow::new(5, 2, &mut rng));
        let vocab = Vocab::synthetic(3);
        let x = vec![4, 2, 2];
        let q = QParams::Gaussian {
            mean: Tensor::param(&[2], vec![0.4, -0.3]),
            log_var: Tensor::param(&[2], vec![-0.5, 0.2]),
        };
        let n = 10_000;
        let analytic = elbo_estimate(&model, &q, &x, n, &mut rng, &vocab);
        let sampled = elbo_estimate_with(&model, &q, &x, n, &mut rng, &vocab, 1.0, 0.0, true);
        // Combined-noise band: KL draws are one-sample log-ratios.
        let qg = q.gaussian();
        let prior = DiagGaussian::new(model.prior_mean().to_vec(), vec![0.0, 0.0]);
        let mut check_rng = Rng::seeded(99);
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let z = qg.sample(&mut check_rng);
                qg.log_prob(&z) - prior.log_prob(&z)
            })
            .collect();
        let (_, var) = util::mean_var(&draws);
        let se = (var / n as f64).sqrt();
        assert!(
            (analytic.kl - sampled.kl).abs() < 3.0 * se + 1e-9,
            "analytic {} vs sampled {} (se {se})",
            analytic.kl,
            sampled.kl
        );
    }

    #[test]
    fn elbo_report_identity_holds() {
        let model = nb_model(2, 4, 74);
        let vocab = Vocab::synthetic(2);
        let x = vec![3, 1];
        let q = QParams::uniform_categorical(2);
        let mut rng = Rng::seeded(5);
        let report = elbo_estimate_with(&model, &q, &x, 1, &mut rng, &vocab, 0.37, 1.5, false);
        assert_close(
            report.elbo,
            report.reconstruction - report.beta * free_bits(report.kl, report.free_bits),
            1e-12,
        );
    }

    #[test]
    fn svi_converges_to_exact_posterior() {
        let model = nb_model(3, 5, 75);
        let vocab = Vocab::synthetic(3);
        let x = vec![1, 4, 4, 2];
        let mut rng = Rng::seeded(6);
        let fit = svi_fit(&model, &x, QParams::uniform_categorical(3), 400, 0.5, &mut rng, &vocab).unwrap();
        let post = enumerate_posterior(&model, &x, &vocab).unwrap().probs();
        let got = fit.q.categorical();
        let tv = util::total_variation(got.probs(), &post);
        assert!(tv < 1e-4, "total variation {tv}");
    }

    #[test]
    fn svi_stationary_at_exact_posterior() {
        let model = nb_model(3, 4, 76);
        let vocab = Vocab::synthetic(2);
        let x = vec![0, 3];
        let post = enumerate_posterior(&model, &x, &vocab).unwrap();
        let init = QParams::Categorical { logits: Tensor::param(&[3], post.log_probs().to_vec()) };
        let mut rng = Rng::seeded(7);
        let fit = svi_fit(&model, &x, init, 20, 0.2, &mut rng, &vocab).unwrap();
        for w in fit.trajectory.windows(2) {
            assert!((w[1] - w[0]).abs() < 1e-8, "ELBO moved at the optimum: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn svi_gaussian_trajectory_improves() {
        let mut rng = Rng::seeded(77);
        let model = Model::GaussianBow(crate::models::GaussianBow::new(6, 2, &mut rng));
        let vocab = Vocab::synthetic(4);
        let x = vec![5, 5, 2];
        let fit = svi_fit(&model, &x, QParams::standard_gaussian(2), 300, 1e-2, &mut rng, &vocab).unwrap();
        // Noisy ascent: compare smoothed start and end.
        let head: f64 = fit.trajectory[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = fit.trajectory[fit.trajectory.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(tail > head - 1e-6, "ELBO did not improve: {head} -> {tail}");
    }

    #[test]
    fn gap_decomposition_identity_and_signs() {
        let model = nb_model(3, 5, 78);
        let vocab = Vocab::synthetic(3);
        let mut rng = Rng::seeded(8);
        let x = vec![2, 0, 4];
        // A deliberately bad amortized posterior.
        let q = QParams::Categorical { logits: Tensor::param(&[3], vec![2.0, -1.0, 0.3]) };
        let report = inference_gap_report(&model, &q, &x, 300, 0.5, &mut rng, &vocab);
        assert!(report.exact);
        assert_close(
            report.inference_gap,
            report.approximation_gap + report.amortization_gap,
            1e-12,
        );
        assert!(report.amortization_gap >= -1e-9);
        // The categorical family contains the truth, so refinement drives
        // the approximation gap to zero.
        assert!(report.approximation_gap.abs() < 1e-4, "approximation gap {}", report.approximation_gap);
    }

    #[test]
    fn gap_report_zero_amortization_at_exact_posterior() {
        let model = nb_model(2, 4, 79);
        let vocab = Vocab::synthetic(2);
        let x = vec![1, 3, 3];
        let post = enumerate_posterior(&model, &x, &vocab).unwrap();
        let q = QParams::Categorical { logits: Tensor::param(&[2], post.log_probs().to_vec()) };
        let mut rng = Rng::seeded(9);
        let report = inference_gap_report(&model, &q, &x, 100, 0.3, &mut rng, &vocab);
        assert!(report.amortization_gap.abs() < 1e-8, "amortization {}", report.amortization_gap);
        assert!(report.inference_gap.abs() < 1e-8, "inference {}", report.inference_gap);
    }
}
