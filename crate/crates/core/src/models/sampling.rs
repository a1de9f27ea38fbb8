//! Ancestral sampling: draw the latent from its prior, then the sentence
//! from the conditional, following each family's generative story.
//!
//! The RNN families emit tokens until the end-of-sentence id or the length
//! cap; the returned sentence excludes the terminator, and hitting the cap
//! sets the `truncated` flag. The fixed-length families (Naive Bayes,
//! bag-of-words, HMM) condition on a length drawn uniformly from
//! `1..=max_len`, since their joint densities treat T as given.

use crate::dist::Categorical;
use crate::rng::Rng;
use crate::tensor::{no_grad, Tensor};
use crate::util;

use super::{Latent, Model, Vocab};

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub latent: Latent,
    pub tokens: Vec<usize>,
    pub truncated: bool,
}

pub fn ancestral_sample(model: &Model, vocab: &Vocab, max_len: usize, rng: &mut Rng) -> SampleOutcome {
    assert!(max_len >= 1, "ancestral_sample: length cap must be at least 1");
    match model {
        Model::NaiveBayes(m) => {
            let mix = Categorical::from_probs(&m.mix_probs());
            let z = mix.sample(rng);
            let emit = Categorical::from_probs(&m.emit_probs()[z]);
            let t_len = rng.range_inclusive(1, max_len);
            let tokens = (0..t_len).map(|_| emit.sample(rng)).collect();
            SampleOutcome { latent: Latent::Discrete(z), tokens, truncated: false }
        }
        Model::MixtureRnn(m) => {
            let mix = Categorical::from_probs(&util::softmax(&m.mix_logits.values()));
            let z = mix.sample(rng);
            let (tokens, truncated) = sample_rnn(&m.components[z], None, vocab, max_len, rng);
            SampleOutcome { latent: Latent::Discrete(z), tokens, truncated }
        }
        Model::GaussianBow(m) => {
            let z = m.prior().sample(rng);
            let probs = no_grad(|| util::softmax(&m.w.matmul(&Tensor::vector(&z)).values()));
            let emit = Categorical::from_probs(&probs);
            let t_len = rng.range_inclusive(1, max_len);
            let tokens = (0..t_len).map(|_| emit.sample(rng)).collect();
            SampleOutcome { latent: Latent::Vector(z), tokens, truncated: false }
        }
        Model::GaussianCrnn(m) => {
            let z = m.prior().sample(rng);
            let zt = Tensor::vector(&z);
            let (tokens, truncated) = sample_rnn(m.rnn(), Some(&zt), vocab, max_len, rng);
            SampleOutcome { latent: Latent::Vector(z), tokens, truncated }
        }
        Model::Hmm(m) => {
            let tables = m.realize();
            let t_len = rng.range_inclusive(1, max_len);
            let mut path = Vec::with_capacity(t_len);
            let mut tokens = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let row = if t == 0 { &tables.start } else { &tables.trans[path[t - 1]] };
                let probs: Vec<f64> = row.iter().map(|l| l.exp()).collect();
                let state = Categorical::from_probs(&renormalize(probs)).sample(rng);
                path.push(state);
                let emit: Vec<f64> = tables.emit[state].iter().map(|l| l.exp()).collect();
                tokens.push(Categorical::from_probs(&renormalize(emit)).sample(rng));
            }
            SampleOutcome { latent: Latent::Path(path), tokens, truncated: false }
        }
    }
}

fn renormalize(mut probs: Vec<f64>) -> Vec<f64> {
    let s: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= s;
    }
    probs
}

fn sample_rnn(
    rnn: &super::RnnLm,
    z: Option<&Tensor>,
    vocab: &Vocab,
    max_len: usize,
    rng: &mut Rng,
) -> (Vec<usize>, bool) {
    let mut h = Tensor::zeros(&[rnn.hidden()]);
    let mut prev = vocab.bos();
    let mut tokens = Vec::new();
    for _ in 0..=max_len {
        h = rnn.step_no_grad(&h, prev, z);
        let probs = rnn.next_token_probs(&h);
        let tok = Categorical::from_probs(&renormalize(probs)).sample(rng);
        if tok == vocab.eos() {
            return (tokens, false);
        }
        if tokens.len() == max_len {
            return (tokens, true);
        }
        tokens.push(tok);
        prev = tok;
    }
    (tokens, true)
}
