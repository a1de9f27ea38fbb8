//! Expectation-Maximization: closed-form EM for the Naive Bayes mixture and
//! generalized (gradient M-step) EM for the mixture of RNNLMs.

use crate::exact::enumerate_posterior;
use crate::models::{MixtureRnn, Model, NaiveBayes, Sentence, Vocab};
use crate::rng::Rng;
use crate::tensor::{Optimizer, Tensor};
use crate::training::TrainError;
use crate::util;

/// Clusters whose total responsibility falls below this get reinitialized
/// uniformly in the M-step.
pub const EMPTY_CLUSTER_FLOOR: f64 = 1e-12;

/// Stop when the trajectory improves by less than this for three
/// consecutive iterations.
pub const EM_TOLERANCE: f64 = 1e-7;

/// N x K posterior matrix: row n is `p(z | x_n)` under the current
/// parameters.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    rows: Vec<Vec<f64>>,
}

impl Responsibilities {
    pub fn new(rows: Vec<Vec<f64>>) -> Responsibilities {
        for (n, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!(
                (sum - 1.0).abs() < 1e-9 && row.iter().all(|&q| (0.0..=1.0 + 1e-12).contains(&q)),
                "responsibilities: row {n} is not a distribution (sum {sum})"
            );
        }
        Responsibilities { rows }
    }

    /// Random rows from a symmetric Dirichlet(1); the seeded way to break
    /// label symmetry at initialization.
    pub fn random(n: usize, k: usize, rng: &mut Rng) -> Responsibilities {
        Responsibilities::new((0..n).map(|_| rng.dirichlet_uniform(k)).collect())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn k(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }
}

/// E-step: exact posteriors for every sentence.
pub fn nb_e_step(nb: &NaiveBayes, corpus: &[Sentence]) -> Responsibilities {
    let (log_mix, log_emit) = nb.log_tables();
    let rows = corpus
        .iter()
        .map(|x| {
            let log_joints: Vec<f64> = (0..nb.k())
                .map(|z| log_mix[z] + x.iter().map(|&t| log_emit[z][t]).sum::<f64>())
                .collect();
            let lse = util::log_sum_exp(&log_joints);
            log_joints.iter().map(|l| (l - lse).exp()).collect()
        })
        .collect();
    Responsibilities::new(rows)
}

/// Closed-form M-step output.
pub struct MStep {
    pub mix: Vec<f64>,
    pub emit: Vec<Vec<f64>>,
    /// Clusters that had to be reinitialized uniformly.
    pub reinitialized: Vec<usize>,
}

/// M-step: the exact maximizer of the expected complete-data likelihood.
/// Mixture weights are mean responsibilities; emission rows are expected
/// token counts normalized by expected token totals.
pub fn nb_m_step(q: &Responsibilities, corpus: &[Sentence], v: usize) -> MStep {
    let n = corpus.len();
    assert_eq!(q.n(), n, "m-step: {} responsibility rows for {n} sentences", q.n());
    let k = q.k();
    let mut mix = vec![0.0; k];
    let mut counts = vec![vec![0.0; v]; k];
    let mut totals = vec![0.0; k];
    for (x, row) in corpus.iter().zip(q.rows()) {
        for (z, &w) in row.iter().enumerate() {
            mix[z] += w / n as f64;
            totals[z] += w * x.len() as f64;
            for &t in x {
                counts[z][t] += w;
            }
        }
    }
    let mut reinitialized = Vec::new();
    let emit = (0..k)
        .map(|z| {
            if totals[z] < EMPTY_CLUSTER_FLOOR {
                reinitialized.push(z);
                eprintln!("warning: cluster {z} has no responsibility mass; reinitializing its emission row uniformly");
                vec![1.0 / v as f64; v]
            } else {
                counts[z].iter().map(|c| c / totals[z]).collect()
            }
        })
        .collect();
    MStep { mix, emit, reinitialized }
}

/// Expected complete-data likelihood `Q(theta | q)`; the quantity the M-step
/// maximizes, exposed for the monotonicity and stationarity checks.
pub fn nb_expected_complete_likelihood(nb: &NaiveBayes, q: &Responsibilities, corpus: &[Sentence]) -> f64 {
    let (log_mix, log_emit) = nb.log_tables();
    corpus
        .iter()
        .zip(q.rows())
        .map(|(x, row)| {
            row.iter()
                .enumerate()
                .map(|(z, &w)| w * (log_mix[z] + x.iter().map(|&t| log_emit[z][t]).sum::<f64>()))
                .sum::<f64>()
        })
        .sum()
}

pub struct EmFit {
    pub model: NaiveBayes,
    /// Corpus log-likelihood after every M-step.
    pub trajectory: Vec<f64>,
    pub converged_at: Option<usize>,
}

fn nb_corpus_log_likelihood(nb: &NaiveBayes, corpus: &[Sentence]) -> f64 {
    let (log_mix, log_emit) = nb.log_tables();
    corpus
        .iter()
        .map(|x| {
            let per_z: Vec<f64> = (0..nb.k())
                .map(|z| log_mix[z] + x.iter().map(|&t| log_emit[z][t]).sum::<f64>())
                .collect();
            util::log_sum_exp(&per_z)
        })
        .sum()
}

/// Full EM: random responsibilities, an initial M-step, then alternating
/// E/M until `iters` or until improvement stays below [`EM_TOLERANCE`] for
/// three consecutive iterations.
pub fn em_fit(corpus: &[Sentence], k: usize, v: usize, iters: usize, rng: &mut Rng) -> Result<EmFit, TrainError> {
    let init = Responsibilities::random(corpus.len(), k, rng);
    let first = nb_m_step(&init, corpus, v);
    em_fit_from(NaiveBayes::from_probs(&first.mix, &first.emit), corpus, iters)
}

/// EM from explicit starting parameters (used when several methods must
/// share one initialization).
pub fn em_fit_from(nb: NaiveBayes, corpus: &[Sentence], iters: usize) -> Result<EmFit, TrainError> {
    assert!(iters >= 1, "em_fit: needs at least one iteration");
    let v = nb.v();
    let mut trajectory = vec![nb_corpus_log_likelihood(&nb, corpus)];
    let mut slow_iters = 0;
    let mut converged_at = None;
    for iter in 1..=iters {
        let q = nb_e_step(&nb, corpus);
        let step = nb_m_step(&q, corpus, v);
        nb.set_probs(&step.mix, &step.emit);
        let ll = nb_corpus_log_likelihood(&nb, corpus);
        if !ll.is_finite() {
            return Err(TrainError::NonFinite { epoch: iter, batch: 0 });
        }
        let improvement = ll - trajectory.last().unwrap();
        trajectory.push(ll);
        if improvement.abs() < EM_TOLERANCE {
            slow_iters += 1;
            if slow_iters >= 3 {
                converged_at = Some(iter);
                break;
            }
        } else {
            slow_iters = 0;
        }
    }
    Ok(EmFit { model: nb, trajectory, converged_at })
}

/// One generalized-EM step for the mixture of RNNLMs: exact posteriors
/// (detached from the graph), then a single gradient ascent step on the
/// expected complete-data likelihood. The gradient equals the direct
/// log-marginal gradient.
pub fn generalized_em_step(
    mix: &MixtureRnn,
    batch: &[Sentence],
    vocab: &Vocab,
    optimizer: &mut Optimizer,
) -> Result<(), TrainError> {
    let model_view = Model::MixtureRnn(MixtureRnn {
        mix_logits: mix.mix_logits.clone(),
        components: mix
            .components
            .iter()
            .map(|c| crate::models::RnnLm {
                embed: c.embed.clone(),
                w_in: c.w_in.clone(),
                w_rec: c.w_rec.clone(),
                bias: c.bias.clone(),
                w_out: c.w_out.clone(),
                z_dim: c.z_dim,
            })
            .collect(),
    });
    let params = mix.params();
    params.zero_grad();
    let objective = generalized_em_objective_t(&model_view, batch, vocab)?;
    if !objective.value().is_finite() {
        return Err(TrainError::NonFinite { epoch: 0, batch: 0 });
    }
    objective.backward();
    optimizer.ascent_step(&params)?;
    Ok(())
}

/// The expected complete-data likelihood over a batch with posteriors held
/// fixed, as a tensor; shared between the step itself and the identity tests.
pub fn generalized_em_objective_t(model: &Model, batch: &[Sentence], vocab: &Vocab) -> Result<Tensor, TrainError> {
    let mut objective = Tensor::scalar(0.0);
    for x in batch {
        let posterior = enumerate_posterior(model, x, vocab)
            .map_err(|e| TrainError::Unsupported(e.to_string()))?
            .probs();
        for (z, &w) in posterior.iter().enumerate() {
            let lj = model.log_joint_t(x, &crate::models::Latent::Discrete(z), vocab);
            objective = objective + lj.scale(w);
        }
    }
    Ok(objective.scale(1.0 / batch.len() as f64))
}
