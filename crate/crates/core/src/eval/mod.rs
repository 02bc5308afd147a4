//! Evaluation of frozen sentence representations.

pub mod expand;
pub mod heldout;
pub mod logreg;
pub mod mlp;
pub mod nn;
pub mod probe;
pub mod repr;
pub mod sts;

pub use expand::{expand_vocab, expanded_model, Expansion, WordTable};
pub use heldout::{greedy_token_accuracy, heldout_loss, heldout_metrics, pair_accuracy, wellformed_rate, HeldoutMetrics};
pub use logreg::{cross_validate, eval_threads, logreg_cv_eval, CvResult, LogReg, LogRegConfig};
pub use mlp::{mlp_eval, mlp_pair_eval, MlpClassifier, MlpClassifierConfig, SplitEval};
pub use nn::{nearest_neighbors, nearest_neighbors_of_row, Neighbor};
pub use probe::{build_probe, run_probe, Lexicon, ProbeClassifier, ProbeDataset, ProbeKind, ProbeResult};
pub use repr::{concat_representations, encode_corpus, model_fingerprint, RepresentationMatrix};
pub use sts::{cosine, cosine_sts, pearson, spearman, StsResult};

use serde::Serialize;

use crate::corpus::dataset::Sentence;
use crate::encoder::PoolingStrategy;
use crate::error::Result;
use crate::model::Model;

/// Max pooling only when it strictly beats last-state pooling.
pub fn prefer_pooling(last_score: f64, max_score: f64) -> PoolingStrategy {
    if max_score > last_score {
        PoolingStrategy::Max
    } else {
        PoolingStrategy::Last
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoolingChoice {
    pub chosen: String,
    pub last_cv_accuracy: f64,
    pub max_cv_accuracy: f64,
}

/// Picks a pooling strategy by cross-validated accuracy on a training set
/// only; test data is never consulted.
pub fn select_pooling(model: &Model, sentences: &[Sentence], labels: &[usize], cfg: &LogRegConfig) -> Result<PoolingChoice> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let score = |p: PoolingStrategy| -> Result<f64> {
        let reps = encode_corpus(model, sentences, p, 256)?;
        Ok(cross_validate(&reps.values, labels, classes, cfg)?.1)
    };
    let last = score(PoolingStrategy::Last)?;
    let max = score(PoolingStrategy::Max)?;
    Ok(PoolingChoice {
        chosen: prefer_pooling(last, max).to_string(),
        last_cv_accuracy: last,
        max_cv_accuracy: max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_keep_last_state() {
        assert_eq!(prefer_pooling(0.8, 0.8), PoolingStrategy::Last);
        assert_eq!(prefer_pooling(0.8, 0.81), PoolingStrategy::Max);
        assert_eq!(prefer_pooling(0.9, 0.81), PoolingStrategy::Last);
    }
}
