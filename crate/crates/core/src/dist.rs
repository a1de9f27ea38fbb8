//! Probability distributions used as priors, likelihood factors, variational
//! posteriors, and relaxations: categorical, diagonal Gaussian, Gumbel, and
//! the Gumbel-Softmax (Concrete) distribution.
//!
//! Each distribution has a plain `f64` evaluation/sampling path plus tensor
//! builders for the quantities that have to carry gradients. Zero
//! probabilities never produce NaN: logs are clamped at 1e-300, so a
//! degenerate categorical entry scores around -690.

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::util;

/// Uniform draws are kept inside `(UNIFORM_CLAMP, 1 - UNIFORM_CLAMP)` before
/// the double-log Gumbel transform so the noise stays finite.
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// Point in the probability simplex, stored as probabilities with a logits
/// accessor.
#[derive(Debug, Clone)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn from_probs(probs: &[f64]) -> Categorical {
        assert!(!probs.is_empty(), "categorical: empty support");
        let sum: f64 = probs.iter().sum();
        assert!(
            (sum - 1.0).abs() < 1e-9 && probs.iter().all(|&p| p >= 0.0),
            "categorical: probabilities must be nonnegative and sum to 1, got sum {sum}"
        );
        Categorical { probs: probs.to_vec() }
    }

    pub fn from_logits(logits: &[f64]) -> Categorical {
        Categorical { probs: util::softmax(logits) }
    }

    pub fn uniform(k: usize) -> Categorical {
        Categorical { probs: vec![1.0 / k as f64; k] }
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> Vec<f64> {
        self.probs.iter().map(|&p| util::safe_ln(p)).collect()
    }

    /// `log p_k`; clamped for zero entries, panics for an out-of-range index.
    pub fn log_prob(&self, k: usize) -> f64 {
        assert!(k < self.probs.len(), "categorical log_prob: index {k} out of range (K={})", self.probs.len());
        util::safe_ln(self.probs[k])
    }

    /// Inverse-CDF sample; deterministic given the generator state.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (k, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.probs.len() - 1
    }

    /// Exact entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// `KL[self || other]`.
    pub fn kl(&self, other: &Categorical) -> f64 {
        assert_eq!(self.k(), other.k(), "categorical kl: support sizes differ");
        self.probs
            .iter()
            .zip(&other.probs)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &q)| p * (util::safe_ln(p) - util::safe_ln(q)))
            .sum()
    }
}

/// Diagonal Gaussian with mean and log-variance vectors.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> DiagGaussian {
        assert_eq!(mean.len(), log_var.len(), "diag gaussian: mean and log_var lengths differ");
        DiagGaussian { mean, log_var }
    }

    pub fn standard(dim: usize) -> DiagGaussian {
        DiagGaussian::new(vec![0.0; dim], vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.dim(), "gaussian log_prob: dimension mismatch {} vs {}", z.len(), self.dim());
        let mut total = 0.0;
        for j in 0..z.len() {
            let var = self.log_var[j].exp();
            let d = z[j] - self.mean[j];
            total += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
        }
        total
    }

    /// `z = mean + sigma * eps` for caller-supplied standard-normal noise.
    pub fn sample_reparam(&self, eps: &[f64]) -> Vec<f64> {
        assert_eq!(eps.len(), self.dim(), "gaussian reparam: dimension mismatch {} vs {}", eps.len(), self.dim());
        self.mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.normal_vec(self.dim());
        self.sample_reparam(&eps)
    }

    /// Analytic `KL[self || N(0, I)]`.
    pub fn kl_standard(&self) -> f64 {
        -0.5
            * self
                .mean
                .iter()
                .zip(&self.log_var)
                .map(|(m, lv)| lv - lv.exp() - m * m + 1.0)
                .sum::<f64>()
    }

    /// Analytic `KL[self || N(prior_mean, I)]`.
    pub fn kl_to_unit_gaussian(&self, prior_mean: &[f64]) -> f64 {
        assert_eq!(prior_mean.len(), self.dim(), "gaussian kl: dimension mismatch");
        0.5 * self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(prior_mean)
            .map(|((m, lv), pm)| lv.exp() + (m - pm) * (m - pm) - 1.0 - lv)
            .sum::<f64>()
    }
}

/// One Gumbel(0, 1) draw: `-log(-log u)` with `u` clamped away from {0, 1}.
pub fn gumbel_sample(rng: &mut Rng) -> f64 {
    let u = rng.uniform().clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

pub fn gumbel_vec(k: usize, rng: &mut Rng) -> Vec<f64> {
    (0..k).map(|_| gumbel_sample(rng)).collect()
}

/// Categorical sample via `argmax(g + logits)`; ties break to the lowest
/// index. Panics on non-finite logits.
pub fn gumbel_max_sample(logits: &[f64], rng: &mut Rng) -> usize {
    assert!(!logits.is_empty(), "gumbel_max_sample: empty logits");
    assert!(
        logits.iter().all(|l| l.is_finite()),
        "gumbel_max_sample: non-finite logits"
    );
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &l) in logits.iter().enumerate() {
        let v = gumbel_sample(rng) + l;
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Gumbel-Softmax (Concrete) distribution on the simplex interior.
#[derive(Debug, Clone)]
pub struct Concrete {
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl Concrete {
    pub fn new(logits: Vec<f64>, temperature: f64) -> Concrete {
        assert!(logits.len() >= 2, "concrete: needs K >= 2");
        assert!(temperature > 0.0, "concrete: temperature must be positive, got {temperature}");
        Concrete { logits, temperature }
    }

    pub fn k(&self) -> usize {
        self.logits.len()
    }

    /// `softmax((logits + g) / tau)` for given Gumbel noise.
    pub fn sample_with_noise(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.k(), "concrete sample: noise dimension mismatch");
        let scaled: Vec<f64> = self
            .logits
            .iter()
            .zip(g)
            .map(|(l, gi)| (l + gi) / self.temperature)
            .collect();
        util::softmax(&scaled)
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let g = gumbel_vec(self.k(), rng);
        self.sample_with_noise(&g)
    }

    /// Log-density at an interior simplex point, computed in log space:
    /// `log (K-1)! + (K-1) log tau + sum_k [log a_k - (tau+1) log s_k]
    ///  - K * logsumexp_j(log a_j - tau log s_j)`.
    pub fn log_density(&self, s: &[f64]) -> f64 {
        let k = self.k();
        assert_eq!(s.len(), k, "concrete log_density: dimension mismatch");
        assert!(
            s.iter().all(|&v| v > 0.0),
            "concrete log_density: point must be strictly inside the simplex"
        );
        let tau = self.temperature;
        let log_fact: f64 = (1..k).map(|i| (i as f64).ln()).sum();
        let mut total = log_fact + (k as f64 - 1.0) * tau.ln();
        let mut denom_terms = Vec::with_capacity(k);
        for j in 0..k {
            total += self.logits[j] - (tau + 1.0) * s[j].ln();
            denom_terms.push(self.logits[j] - tau * s[j].ln());
        }
        total - k as f64 * util::log_sum_exp(&denom_terms)
    }

    /// The categorical this relaxation targets.
    pub fn base_categorical(&self) -> Categorical {
        Categorical::from_logits(&self.logits)
    }
}

// ---------------------------------------------------------------------------
// Tensor builders: same formulas, but differentiable.
// ---------------------------------------------------------------------------

/// Diagonal-Gaussian log-density as a tensor expression in `(mean, log_var,
/// z)`; any of them may carry gradients.
pub fn gaussian_log_prob_t(mean: &Tensor, log_var: &Tensor, z: &Tensor) -> Tensor {
    assert_eq!(mean.len(), z.len(), "gaussian log_prob: dimension mismatch {} vs {}", mean.len(), z.len());
    let d = z.len() as f64;
    let diff = z - mean;
    let var = log_var.exp();
    let quad = (&diff * &diff / &var).sum();
    let norm = log_var.sum().add_const(d * (2.0 * std::f64::consts::PI).ln());
    (quad + norm).scale(-0.5)
}

/// `z = mean + exp(log_var / 2) * eps` with fixed noise.
pub fn gaussian_reparam_t(mean: &Tensor, log_var: &Tensor, eps: &[f64]) -> Tensor {
    assert_eq!(mean.len(), eps.len(), "gaussian reparam: dimension mismatch {} vs {}", mean.len(), eps.len());
    let noise = Tensor::vector(eps);
    mean + log_var.scale(0.5).exp() * noise
}

/// Analytic `KL[N(mean, diag var) || N(prior_mean, I)]` as a tensor scalar;
/// pass zeros for the standard-normal prior.
pub fn gaussian_kl_t(mean: &Tensor, log_var: &Tensor, prior_mean: &Tensor) -> Tensor {
    let diff = mean - prior_mean;
    let terms = log_var.exp() + &diff * &diff - log_var.add_const(1.0);
    terms.sum().scale(0.5)
}

/// Concrete sample as a tensor expression in `(logits, tau)` for fixed noise.
pub fn concrete_sample_t(logits: &Tensor, tau: &Tensor, g: &[f64]) -> Tensor {
    assert_eq!(logits.len(), g.len(), "concrete sample: noise dimension mismatch");
    assert!(tau.is_scalar(), "concrete sample: tau must be a scalar");
    ((logits + Tensor::vector(g)) / tau).softmax()
}

/// Concrete log-density as a tensor expression in `(s, logits, tau)`.
pub fn concrete_log_density_t(s: &Tensor, logits: &Tensor, tau: &Tensor) -> Tensor {
    let k = logits.len();
    assert_eq!(s.len(), k, "concrete log_density: dimension mismatch");
    let log_fact: f64 = (1..k).map(|i| (i as f64).ln()).sum();
    let log_s = s.log();
    let per_k = (logits - (tau.add_const(1.0) * &log_s)).sum();
    let denom = (logits - tau * &log_s).logsumexp().scale(k as f64);
    tau.log().scale(k as f64 - 1.0).add_const(log_fact) + per_k - denom
}
