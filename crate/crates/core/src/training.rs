//! Shared training-loop plumbing: error type, epoch records, minibatching.

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::OptimizerError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite objective at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("objective diverged at step {step} (value {value})")]
    Diverged { step: usize, value: f64 },
    #[error(transparent)]
    Optim(#[from] OptimizerError),
    #[error("{0}")]
    Unsupported(String),
}

/// One per-epoch log-likelihood (or ELBO) measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub value: f64,
}

/// Shuffled minibatch index lists covering `0..n` once.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "minibatches: batch size must be positive");
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minibatches_cover_everything_once() {
        let mut rng = Rng::seeded(1);
        let batches = minibatches(13, 4, &mut rng);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..13).collect::<Vec<_>>());
        assert_eq!(batches.len(), 4);
    }
}
