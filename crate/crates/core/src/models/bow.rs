//! Continuous-latent families: Gaussian bag-of-words and the Gaussian-latent
//! conditional RNN.

use crate::dist::{gaussian_log_prob_t, DiagGaussian};
use crate::rng::Rng;
use crate::tensor::{no_grad, ParamSet, Tensor};

/// `z ~ N(mu, I)`, tokens iid from `softmax(W z)`.
pub struct GaussianBow {
    /// Prior mean, `[d]`.
    pub prior_mean: Tensor,
    /// Output projection, `[V, d]`.
    pub w: Tensor,
}

impl GaussianBow {
    pub fn new(v: usize, d: usize, rng: &mut Rng) -> GaussianBow {
        GaussianBow {
            prior_mean: Tensor::param(&[d], vec![0.0; d]),
            w: Tensor::param(&[v, d], rng.uniform_vec(v * d, -0.1, 0.1)),
        }
    }

    pub fn zeros(v: usize, d: usize) -> GaussianBow {
        GaussianBow {
            prior_mean: Tensor::param(&[d], vec![0.0; d]),
            w: Tensor::param(&[v, d], vec![0.0; v * d]),
        }
    }

    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn v(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn prior(&self) -> DiagGaussian {
        DiagGaussian::new(self.prior_mean.to_vec(), vec![0.0; self.dim()])
    }

    /// `sum_t log softmax(W z)[x_t]`; order-independent by construction.
    pub fn log_likelihood_t(&self, tokens: &[usize], z: &Tensor) -> Tensor {
        assert_eq!(z.len(), self.dim(), "gaussian bow: dimension mismatch {} vs {}", z.len(), self.dim());
        let mut counts = vec![0.0; self.v()];
        for &t in tokens {
            assert!(t < self.v(), "gaussian bow: token id {t} outside vocabulary (V={})", self.v());
            counts[t] += 1.0;
        }
        self.w.matmul(z).log_softmax().dot(&Tensor::vector(&counts))
    }

    pub fn log_joint_t(&self, tokens: &[usize], z: &Tensor) -> Tensor {
        let log_var = Tensor::zeros(&[self.dim()]);
        gaussian_log_prob_t(&self.prior_mean, &log_var, z) + self.log_likelihood_t(tokens, z)
    }

    pub fn log_joint(&self, tokens: &[usize], z: &[f64]) -> f64 {
        no_grad(|| self.log_joint_t(tokens, &Tensor::vector(z)).value())
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        set.push("bow.prior_mean", self.prior_mean.clone());
        set.push("bow.w", self.w.clone());
        set
    }
}

/// `z ~ N(mu, I)`, sentence from a conditional RNN with `z` concatenated
/// onto every step input.
pub struct GaussianCrnn {
    pub prior_mean: Tensor,
    rnn: super::RnnLm,
}

impl GaussianCrnn {
    pub fn new(v: usize, embed: usize, hidden: usize, d: usize, rng: &mut Rng) -> GaussianCrnn {
        GaussianCrnn {
            prior_mean: Tensor::param(&[d], vec![0.0; d]),
            rnn: super::RnnLm::new(v, embed, hidden, d, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn v(&self) -> usize {
        self.rnn.v()
    }

    pub fn rnn(&self) -> &super::RnnLm {
        &self.rnn
    }

    pub fn rnn_mut(&mut self) -> &mut super::RnnLm {
        &mut self.rnn
    }

    pub fn prior(&self) -> DiagGaussian {
        DiagGaussian::new(self.prior_mean.to_vec(), vec![0.0; self.dim()])
    }

    pub fn log_joint_t(&self, tokens: &[usize], z: &Tensor, bos: usize) -> Tensor {
        let log_var = Tensor::zeros(&[self.dim()]);
        gaussian_log_prob_t(&self.prior_mean, &log_var, z)
            + self.rnn.log_likelihood_t(tokens, bos, Some(z))
    }

    pub fn log_joint(&self, tokens: &[usize], z: &[f64], bos: usize) -> f64 {
        no_grad(|| self.log_joint_t(tokens, &Tensor::vector(z), bos).value())
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        set.push("crnn.prior_mean", self.prior_mean.clone());
        set.extend(self.rnn.params("crnn.rnn"));
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn zero_model_at_origin() {
        // W = 0, mu = 0, z = 0, T = 2, V = 3: -(d/2) ln(2 pi) - 2 ln 3.
        let bow = GaussianBow::zeros(3, 2);
        let got = bow.log_joint(&[0, 2], &[0.0, 0.0]);
        let want = -1.0 * (2.0 * std::f64::consts::PI).ln() - 2.0 * 3.0f64.ln();
        assert_close(got, want, 1e-12);
    }

    #[test]
    fn token_term_is_order_invariant() {
        let mut rng = Rng::seeded(11);
        let bow = GaussianBow::new(4, 3, &mut rng);
        let z = [0.3, -0.5, 0.9];
        assert_close(
            bow.log_joint(&[0, 1, 3, 1], &z),
            bow.log_joint(&[1, 3, 1, 0], &z),
            1e-12,
        );
    }

    #[test]
    fn bow_gradient_wrt_latent() {
        let mut rng = Rng::seeded(12);
        let bow = GaussianBow::new(5, 3, &mut rng);
        let z = Tensor::param(&[3], vec![0.2, -0.4, 0.6]);
        let err = grad_check(|z| bow.log_joint_t(&[1, 4, 2], z), &z, 1e-5);
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn crnn_joint_is_prior_plus_likelihood() {
        let mut rng = Rng::seeded(13);
        let m = GaussianCrnn::new(4, 2, 3, 2, &mut rng);
        let z = [0.4, -0.8];
        let x = vec![1, 3, 0];
        let direct = m.prior().log_prob(&z) + m.rnn().log_likelihood(&x, 0, Some(&z));
        assert_close(m.log_joint(&x, &z, 0), direct, 1e-12);
    }

    #[test]
    fn crnn_joint_finite_on_random_draws() {
        let mut rng = Rng::seeded(14);
        for _ in 0..10 {
            let m = GaussianCrnn::new(5, 2, 3, 2, &mut rng);
            let z = rng.normal_vec(2);
            let t_len = rng.range_inclusive(1, 6);
            let x: Vec<usize> = (0..t_len).map(|_| rng.below(5)).collect();
            assert!(m.log_joint(&x, &z, 0).is_finite());
        }
    }
}
