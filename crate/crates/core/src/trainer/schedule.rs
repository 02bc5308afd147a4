use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Draws a task index from the probability vector `alpha`.
pub fn sample_task(alpha: &[f64], rng: &mut Rng) -> Result<usize> {
    if alpha.is_empty() {
        return Err(Error::Config("no tasks to sample from".into()));
    }
    if alpha.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Config(format!("task probabilities must be non-negative: {alpha:?}")));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("task probabilities sum to {total}, not 1")));
    }
    Ok(rng.categorical(alpha))
}

/// Normalizes positive sampling weights into a probability vector.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Config("at least one seq2seq task is required".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::Config(format!("task weights must be positive: {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Whether update `u` (1-based) is the pair-classification step that
/// follows every `nli_every` seq2seq updates.
pub fn is_nli_update(u: u64, nli_every: u64) -> bool {
    (u - 1) % (nli_every + 1) == nli_every
}
