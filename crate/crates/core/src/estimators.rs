//! Interchangeable stochastic gradient estimators for the ELBO and tighter
//! bounds: score-function, reparameterized, Concrete-relaxed, and the
//! importance-weighted family, plus the importance-sampled log-likelihood
//! evaluator.
//!
//! All weight arithmetic happens in log space; normalized importance weights
//! come out of a softmax over log-weights and therefore sum to one exactly.
//! The score-function estimator ships without baselines or control variates.

use thiserror::Error;

use crate::dist::{
    concrete_sample_t, gaussian_reparam_t, gumbel_vec, Categorical, DiagGaussian,
};
use crate::models::{Latent, Model, RnnLm, Sentence};
use crate::rng::Rng;
use crate::tensor::{no_grad, ParamSet, Tensor};
use crate::util;
use crate::variational::{KlMode, QParams};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("family is not reparameterizable; use score_function_grad instead")]
    NotReparameterizable,
    #[error("likelihood of {0} is not defined on the simplex interior (discrete indexing)")]
    NotSimplexExtensible(&'static str),
}

/// Per-parameter gradient arrays with estimator provenance.
#[derive(Debug, Clone)]
pub struct GradEstimate {
    pub grads: Vec<(String, Vec<f64>)>,
    pub estimator: &'static str,
    pub n_samples: usize,
    pub seed: u64,
}

impl GradEstimate {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.iter().find(|(n, _)| n == name).map(|(_, g)| g.as_slice())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|(_, g)| g.iter().copied()).collect()
    }
}

fn collect_grads(params: &ParamSet, estimator: &'static str, n_samples: usize, seed: u64) -> GradEstimate {
    let grads = params
        .iter()
        .map(|(n, t)| (n.to_string(), t.grad().unwrap_or_else(|| vec![0.0; t.len()])))
        .collect();
    GradEstimate { grads, estimator, n_samples, seed }
}

/// Score-function (likelihood-ratio) gradient of the ELBO with respect to
/// the variational parameters: the Monte Carlo average of
/// `(log p(x, z) - log q(z)) * grad log q(z)`, with `z` drawn without
/// gradient pathways.
///
/// `log_joint` evaluates `log p(x, z)` as a plain number.
pub fn score_function_grad(
    q: &QParams,
    log_joint: impl Fn(&Latent) -> f64,
    n_samples: usize,
    rng: &mut Rng,
) -> GradEstimate {
    let seed = rng.seed();
    let params = q.leaves();
    params.zero_grad();
    let mut surrogate = Tensor::scalar(0.0);
    for _ in 0..n_samples {
        let (z, log_q_z, log_q_t) = match q {
            QParams::Categorical { logits } => {
                let cat = Categorical::from_logits(&logits.values());
                let k = cat.sample(rng);
                let log_q_t = logits.log_softmax().get(k);
                (Latent::Discrete(k), cat.log_prob(k), log_q_t)
            }
            QParams::Gaussian { mean, log_var } => {
                let g = DiagGaussian::new(mean.to_vec(), log_var.to_vec());
                let z = g.sample(rng);
                let log_q_t = crate::dist::gaussian_log_prob_t(mean, log_var, &Tensor::vector(&z));
                let lq = g.log_prob(&z);
                (Latent::Vector(z), lq, log_q_t)
            }
        };
        let reward = log_joint(&z) - log_q_z;
        surrogate = surrogate + log_q_t.scale(reward);
    }
    surrogate.scale(1.0 / n_samples as f64).backward();
    collect_grads(&params, "score", n_samples, seed)
}

/// Pathwise (reparameterized) gradient of the ELBO with respect to the
/// variational parameters: reconstruction through `z = mu + sigma * eps`
/// plus the analytic KL gradient against `N(prior_mean, I)`.
///
/// `log_lik_t` builds `log p(x | z)` as a tensor in `z`.
pub fn reparam_grad(
    q: &QParams,
    log_lik_t: impl Fn(&Tensor) -> Tensor,
    prior_mean: &[f64],
    n_samples: usize,
    rng: &mut Rng,
) -> Result<GradEstimate, EstimatorError> {
    let QParams::Gaussian { mean, log_var } = q else {
        return Err(EstimatorError::NotReparameterizable);
    };
    let seed = rng.seed();
    let params = q.leaves();
    params.zero_grad();
    let mut recon = Tensor::scalar(0.0);
    for _ in 0..n_samples {
        let eps = rng.normal_vec(mean.len());
        let z = gaussian_reparam_t(mean, log_var, &eps);
        recon = recon + log_lik_t(&z);
    }
    let kl = crate::dist::gaussian_kl_t(mean, log_var, &Tensor::vector(prior_mean));
    let objective = recon.scale(1.0 / n_samples as f64) - kl;
    objective.backward();
    Ok(collect_grads(&params, "reparam", n_samples, seed))
}

// ---------------------------------------------------------------------------
// Concrete relaxation
// ---------------------------------------------------------------------------

/// Discrete-latent models whose likelihood formula is well-defined on the
/// simplex interior, so a Concrete sample can stand in for the one-hot
/// latent. Tabular Naive Bayes indexes its emission table by `z` and is
/// rejected.
pub enum RelaxableModel<'a> {
    /// `z` one-hot into a bag-of-words projection: `p(x | z) =
    /// prod_t softmax(W z)_{x_t}` with `W: [V, K]`.
    OneHotBow { mix_logits: &'a Tensor, w: &'a Tensor },
    /// `z` one-hot concatenated onto a conditional RNN's step inputs.
    OneHotCrnn { mix_logits: &'a Tensor, rnn: &'a RnnLm, bos: usize },
}

impl<'a> RelaxableModel<'a> {
    pub fn k(&self) -> usize {
        match self {
            RelaxableModel::OneHotBow { mix_logits, .. } => mix_logits.len(),
            RelaxableModel::OneHotCrnn { mix_logits, .. } => mix_logits.len(),
        }
    }

    pub fn mix_logits(&self) -> &Tensor {
        match self {
            RelaxableModel::OneHotBow { mix_logits, .. } => mix_logits,
            RelaxableModel::OneHotCrnn { mix_logits, .. } => mix_logits,
        }
    }

    /// `log p(x | z = s)` for any point of the simplex (vertices included).
    pub fn log_likelihood_simplex_t(&self, x: &Sentence, s: &Tensor) -> Tensor {
        assert_eq!(s.len(), self.k(), "relaxed likelihood: simplex dimension mismatch");
        match self {
            RelaxableModel::OneHotBow { w, .. } => {
                let mut counts = vec![0.0; w.shape()[0]];
                for &t in x {
                    counts[t] += 1.0;
                }
                w.matmul(s).log_softmax().dot(&Tensor::vector(&counts))
            }
            RelaxableModel::OneHotCrnn { rnn, bos, .. } => rnn.log_likelihood_t(x, *bos, Some(s)),
        }
    }

    fn one_hot(&self, z: usize) -> Tensor {
        let mut v = vec![0.0; self.k()];
        v[z] = 1.0;
        Tensor::vector(&v)
    }

    /// Discrete log-joint `log mu_z + log p(x | onehot(z))`.
    pub fn log_joint_t(&self, x: &Sentence, z: usize) -> Tensor {
        self.mix_logits().log_softmax().get(z) + self.log_likelihood_simplex_t(x, &self.one_hot(z))
    }

    /// Exact ELBO gradient for a categorical q by enumeration; the oracle
    /// the relaxation is compared against.
    pub fn exact_elbo_grad(&self, q_logits: &Tensor, x: &Sentence) -> Vec<f64> {
        q_logits.zero_grad();
        let q = q_logits.softmax();
        let log_q = q_logits.log_softmax();
        let per_z: Vec<Tensor> = (0..self.k())
            .map(|z| self.log_joint_t(x, z) - log_q.get(z))
            .collect();
        let refs: Vec<&Tensor> = per_z.iter().collect();
        q.dot(&Tensor::concat(&refs)).backward();
        q_logits.grad().unwrap()
    }
}

/// Builds the relaxable view of a model, or the spec'd failure for families
/// whose likelihood cannot leave the vertices.
pub fn relaxable_view<'a>(model: &'a Model) -> Result<RelaxableModel<'a>, EstimatorError> {
    match model {
        Model::NaiveBayes(_) => Err(EstimatorError::NotSimplexExtensible("naive-bayes")),
        Model::MixtureRnn(_) => Err(EstimatorError::NotSimplexExtensible("mixture-rnn")),
        Model::Hmm(_) => Err(EstimatorError::NotSimplexExtensible("hmm")),
        _ => Err(EstimatorError::NotSimplexExtensible("continuous-latent model")),
    }
}

/// Pathwise gradient of the relaxed ELBO through Gumbel noise: `s =
/// softmax((logits + g) / tau)` replaces the one-hot latent inside the
/// likelihood. Biased for the discrete objective; the KL term follows
/// `kl_mode` (categorical closed form by default).
pub fn concrete_relaxed_grad(
    model: &RelaxableModel,
    q_logits: &Tensor,
    x: &Sentence,
    tau: f64,
    n_samples: usize,
    kl_mode: KlMode,
    rng: &mut Rng,
) -> GradEstimate {
    let seed = rng.seed();
    let mut params = ParamSet::new();
    params.push("q.logits", q_logits.clone());
    params.zero_grad();
    let tau_t = Tensor::scalar(tau);
    let mut objective = Tensor::scalar(0.0);
    for _ in 0..n_samples {
        let g = gumbel_vec(q_logits.len(), rng);
        let s = concrete_sample_t(q_logits, &tau_t, &g);
        let recon = model.log_likelihood_simplex_t(x, &s);
        let kl = match kl_mode {
            KlMode::Categorical => {
                let q = q_logits.softmax();
                let log_q = q_logits.log_softmax();
                q.dot(&(&log_q - &model.mix_logits().log_softmax()))
            }
            KlMode::Concrete => {
                // Single-sample log-ratio of relaxed densities, pathwise in s.
                let prior_logits = model.mix_logits().detach();
                crate::dist::concrete_log_density_t(&s, q_logits, &tau_t)
                    - crate::dist::concrete_log_density_t(&s, &prior_logits, &tau_t)
            }
        };
        objective = objective + recon - kl;
    }
    objective.scale(1.0 / n_samples as f64).backward();
    collect_grads(&params, "concrete", n_samples, seed)
}

// ---------------------------------------------------------------------------
// Importance weighting
// ---------------------------------------------------------------------------

/// K latent draws with their log-weights and normalized weights.
#[derive(Debug, Clone)]
pub struct IwaeSample {
    pub latents: Vec<Latent>,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

fn draw_latent(q: &QParams, rng: &mut Rng) -> (Latent, f64) {
    match q {
        QParams::Categorical { logits } => {
            let cat = Categorical::from_logits(&logits.values());
            let k = cat.sample(rng);
            (Latent::Discrete(k), cat.log_prob(k))
        }
        QParams::Gaussian { mean, log_var } => {
            let g = DiagGaussian::new(mean.to_vec(), log_var.to_vec());
            let z = g.sample(rng);
            let lq = g.log_prob(&z);
            (Latent::Vector(z), lq)
        }
    }
}

/// `log (1/K) sum_k p(x, z_k) / q(z_k)` in log space, with the draws and
/// normalized weights attached.
pub fn iwae_bound(
    q: &QParams,
    log_joint: impl Fn(&Latent) -> f64,
    k: usize,
    rng: &mut Rng,
) -> (f64, IwaeSample) {
    assert!(k >= 1, "iwae_bound: needs at least one sample");
    let mut latents = Vec::with_capacity(k);
    let mut log_weights = Vec::with_capacity(k);
    for _ in 0..k {
        let (z, log_q) = draw_latent(q, rng);
        log_weights.push(log_joint(&z) - log_q);
        latents.push(z);
    }
    let value = util::log_sum_exp(&log_weights) - (k as f64).ln();
    let weights = util::softmax(&log_weights);
    (value, IwaeSample { latents, log_weights, weights })
}

/// Importance-sampled log-marginal estimate: the same computation as
/// [`iwae_bound`], exposed as the evaluation-time estimator (use a large K).
pub fn is_log_marginal(
    q: &QParams,
    log_joint: impl Fn(&Latent) -> f64,
    k: usize,
    rng: &mut Rng,
) -> f64 {
    iwae_bound(q, log_joint, k, rng).0
}

/// Gradients of the importance-weighted bound for a Gaussian q.
///
/// The model gradient is the weight-averaged joint gradient (weights
/// detached); the variational gradient differentiates `log I_K` pathwise
/// with the noise held fixed.
pub struct IwaeGrads {
    pub model: GradEstimate,
    pub variational: GradEstimate,
    pub value: f64,
}

pub fn iwae_grads(
    model_params: &ParamSet,
    q: &QParams,
    log_joint_t: impl Fn(&Tensor) -> Tensor,
    k: usize,
    rng: &mut Rng,
) -> Result<IwaeGrads, EstimatorError> {
    let QParams::Gaussian { mean, log_var } = q else {
        return Err(EstimatorError::NotReparameterizable);
    };
    assert!(k >= 1, "iwae_grads: needs at least one sample");
    let seed = rng.seed();
    let q_params = q.leaves();
    model_params.zero_grad();
    q_params.zero_grad();

    let noises: Vec<Vec<f64>> = (0..k).map(|_| rng.normal_vec(mean.len())).collect();
    let log_w: Vec<Tensor> = noises
        .iter()
        .map(|eps| {
            let z = gaussian_reparam_t(mean, log_var, eps);
            let log_q = crate::dist::gaussian_log_prob_t(mean, log_var, &z);
            log_joint_t(&z) - log_q
        })
        .collect();
    let refs: Vec<&Tensor> = log_w.iter().collect();
    let stacked = Tensor::concat(&refs);
    let bound = stacked.logsumexp().add_const(-(k as f64).ln());
    let value = bound.value();
    bound.backward();
    let variational = collect_grads(&q_params, "iwae-pathwise", k, seed);

    // Model side: sum_k w_k * grad_theta log p(x, z_k) with w detached.
    model_params.zero_grad();
    let weights = util::softmax(&stacked.to_vec());
    let mut surrogate = Tensor::scalar(0.0);
    for (eps, w) in noises.iter().zip(&weights) {
        let z_vals = no_grad(|| gaussian_reparam_t(mean, log_var, eps).to_vec());
        surrogate = surrogate + log_joint_t(&Tensor::vector(&z_vals)).scale(*w);
    }
    surrogate.backward();
    let model = collect_grads(model_params, "iwae-weighted", k, seed);

    Ok(IwaeGrads { model, variational, value })
}
