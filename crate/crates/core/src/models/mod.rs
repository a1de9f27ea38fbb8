//! The archetypal generative families over token sequences: Naive Bayes
//! mixture, mixture of RNN language models, continuous-latent bag-of-words,
//! Gaussian-latent conditional RNN, and tabular/neural hidden Markov models.
//!
//! Family structs score exactly the token sequence they are given. Sentence
//! conventions (the RNN families define sentence probability over sequences
//! terminated by the end-of-sentence id) are applied by the [`Model`]
//! wrapper, which appends `eos` before scoring for those families.

mod bow;
mod hmm;
mod mlp;
mod naive_bayes;
mod rnnlm;
mod sampling;

pub use bow::{GaussianBow, GaussianCrnn};
pub use hmm::{Hmm, HmmRows, HmmTables, NeuralHmm, TabularHmm};
pub use mlp::Mlp;
pub use naive_bayes::NaiveBayes;
pub use rnnlm::{MixtureRnn, RnnLm};
pub use sampling::{ancestral_sample, SampleOutcome};

use crate::tensor::{ParamSet, Tensor};

/// Token ids over a fixed vocabulary.
pub type Sentence = Vec<usize>;

/// Vocabulary: dense token ids with reserved start- and end-of-sentence ids.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    bos: usize,
    eos: usize,
}

impl Vocab {
    pub const BOS_TOKEN: &'static str = "<s>";
    pub const EOS_TOKEN: &'static str = "</s>";

    pub fn new(tokens: Vec<String>, bos: usize, eos: usize) -> Vocab {
        assert!(bos < tokens.len() && eos < tokens.len(), "vocab: reserved ids out of range");
        assert_ne!(bos, eos, "vocab: reserved ids must be distinct");
        Vocab { tokens, bos, eos }
    }

    /// Synthetic vocabulary: the two reserved tokens followed by `n_words`
    /// word tokens `w0..`.
    pub fn synthetic(n_words: usize) -> Vocab {
        let mut tokens = vec![Self::BOS_TOKEN.to_string(), Self::EOS_TOKEN.to_string()];
        tokens.extend((0..n_words).map(|i| format!("w{i}")));
        Vocab::new(tokens, 0, 1)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn bos(&self) -> usize {
        self.bos
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }
}

/// A realized latent variable, one shape per family.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    /// Mixture indicator in `{0..K-1}`.
    Discrete(usize),
    /// HMM state path, one state per token.
    Path(Vec<usize>),
    /// Continuous latent vector.
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    NaiveBayes,
    MixtureRnn,
    GaussianBow,
    GaussianCrnn,
    Hmm,
    NeuralHmm,
}

impl Family {
    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "naive-bayes" => Some(Family::NaiveBayes),
            "mixture-rnn" => Some(Family::MixtureRnn),
            "gaussian-bow" => Some(Family::GaussianBow),
            "gaussian-crnn" => Some(Family::GaussianCrnn),
            "hmm" => Some(Family::Hmm),
            "neural-hmm" => Some(Family::NeuralHmm),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::NaiveBayes => "naive-bayes",
            Family::MixtureRnn => "mixture-rnn",
            Family::GaussianBow => "gaussian-bow",
            Family::GaussianCrnn => "gaussian-crnn",
            Family::Hmm => "hmm",
            Family::NeuralHmm => "neural-hmm",
        }
    }

    pub fn discrete_latent(&self) -> bool {
        matches!(self, Family::NaiveBayes | Family::MixtureRnn | Family::Hmm | Family::NeuralHmm)
    }
}

/// A generative model of one of the supported families, plus the sentence
/// conventions shared by training and evaluation code.
pub enum Model {
    NaiveBayes(NaiveBayes),
    MixtureRnn(MixtureRnn),
    GaussianBow(GaussianBow),
    GaussianCrnn(GaussianCrnn),
    Hmm(Hmm),
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::NaiveBayes(_) => Family::NaiveBayes,
            Model::MixtureRnn(_) => Family::MixtureRnn,
            Model::GaussianBow(_) => Family::GaussianBow,
            Model::GaussianCrnn(_) => Family::GaussianCrnn,
            Model::Hmm(Hmm::Tabular(_)) => Family::Hmm,
            Model::Hmm(Hmm::Neural(_)) => Family::NeuralHmm,
        }
    }

    /// Number of mixture components / states for discrete-latent families.
    pub fn discrete_k(&self) -> Option<usize> {
        match self {
            Model::NaiveBayes(m) => Some(m.k()),
            Model::MixtureRnn(m) => Some(m.k()),
            Model::Hmm(m) => Some(m.k()),
            _ => None,
        }
    }

    /// Latent dimension for continuous-latent families.
    pub fn latent_dim(&self) -> Option<usize> {
        match self {
            Model::GaussianBow(m) => Some(m.dim()),
            Model::GaussianCrnn(m) => Some(m.dim()),
            _ => None,
        }
    }

    pub fn params(&self) -> ParamSet {
        match self {
            Model::NaiveBayes(m) => m.params(),
            Model::MixtureRnn(m) => m.params(),
            Model::GaussianBow(m) => m.params(),
            Model::GaussianCrnn(m) => m.params(),
            Model::Hmm(m) => m.params(),
        }
    }

    /// Tokens actually scored for sentence `x`: RNN-likelihood families
    /// append the end-of-sentence id, the others score `x` as-is.
    pub fn scored_tokens(&self, x: &Sentence, vocab: &Vocab) -> Vec<usize> {
        match self {
            Model::MixtureRnn(_) | Model::GaussianCrnn(_) => {
                let mut t = x.clone();
                t.push(vocab.eos());
                t
            }
            _ => x.clone(),
        }
    }

    /// `log p(x, z)` for a realized latent, as a plain number.
    pub fn log_joint(&self, x: &Sentence, z: &Latent, vocab: &Vocab) -> f64 {
        let tokens = self.scored_tokens(x, vocab);
        match (self, z) {
            (Model::NaiveBayes(m), Latent::Discrete(k)) => m.log_joint(&tokens, *k),
            (Model::MixtureRnn(m), Latent::Discrete(k)) => m.log_joint(&tokens, *k, vocab.bos()),
            (Model::GaussianBow(m), Latent::Vector(v)) => m.log_joint(&tokens, v),
            (Model::GaussianCrnn(m), Latent::Vector(v)) => m.log_joint(&tokens, v, vocab.bos()),
            (Model::Hmm(m), Latent::Path(path)) => m.log_joint(&tokens, path),
            _ => panic!("log_joint: latent kind does not match family {:?}", self.family()),
        }
    }

    /// `log p(x, z)` as a differentiable tensor expression.
    pub fn log_joint_t(&self, x: &Sentence, z: &Latent, vocab: &Vocab) -> Tensor {
        let tokens = self.scored_tokens(x, vocab);
        match (self, z) {
            (Model::NaiveBayes(m), Latent::Discrete(k)) => m.log_joint_t(&tokens, *k),
            (Model::MixtureRnn(m), Latent::Discrete(k)) => m.log_joint_t(&tokens, *k, vocab.bos()),
            (Model::GaussianBow(m), Latent::Vector(v)) => m.log_joint_t(&tokens, &Tensor::vector(v)),
            (Model::GaussianCrnn(m), Latent::Vector(v)) => {
                m.log_joint_t(&tokens, &Tensor::vector(v), vocab.bos())
            }
            (Model::Hmm(m), Latent::Path(path)) => m.log_joint_t(&tokens, path),
            _ => panic!("log_joint_t: latent kind does not match family {:?}", self.family()),
        }
    }

    /// `log p(x | z)` for continuous-latent families, with `z` carried as a
    /// tensor so gradients can flow into it.
    pub fn log_likelihood_given_t(&self, x: &Sentence, z: &Tensor, vocab: &Vocab) -> Tensor {
        let tokens = self.scored_tokens(x, vocab);
        match self {
            Model::GaussianBow(m) => m.log_likelihood_t(&tokens, z),
            Model::GaussianCrnn(m) => m.rnn().log_likelihood_t(&tokens, vocab.bos(), Some(z)),
            _ => panic!("log_likelihood_given_t: family {:?} has no vector latent", self.family()),
        }
    }

    /// Prior mean tensor for the continuous families.
    pub fn prior_mean(&self) -> &Tensor {
        match self {
            Model::GaussianBow(m) => &m.prior_mean,
            Model::GaussianCrnn(m) => &m.prior_mean,
            _ => panic!("prior_mean: family {:?} has no vector latent", self.family()),
        }
    }
}
