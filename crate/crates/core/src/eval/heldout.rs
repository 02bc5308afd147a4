//! Held-out metrics for the training tasks themselves.

use serde::Serialize;

use crate::config::TaskData;
use crate::corpus::pcfg::delinearize;
use crate::corpus::{EncodedTask, Examples, Sentence, TaskDataset, TaskKind};
use crate::encoder::PoolingStrategy;
use crate::error::{Error, Result};
use crate::model::{batch_loss, Head, Model};
use crate::nli_head::{mlp_forward, pair_features_batch};
use crate::numcore::Rng;

use super::logreg::argmax;

const CHUNK: usize = 256;

fn decoder_task(model: &Model, task: &str) -> Result<(usize, Head)> {
    let index = model.task_index(task).ok_or_else(|| Error::Input(format!("unknown task '{task}'")))?;
    match model.head(index) {
        Head::Decoder(d) => Ok((index, Head::Decoder(d))),
        Head::Nli => Err(Error::Input(format!("task '{task}' has no decoder"))),
    }
}

fn seq_pairs(ds: &TaskDataset) -> Result<&[(Sentence, Sentence)]> {
    match &ds.examples {
        Examples::Seq2seq(p) if !p.is_empty() => Ok(p),
        _ => Err(Error::Input(format!("{}: expected non-empty sentence pairs", ds.name))),
    }
}

/// Mean per-token teacher-forced cross-entropy (end marker included).
pub fn heldout_loss(model: &Model, task: &str, ds: &TaskDataset) -> Result<f64> {
    let (index, head) = decoder_task(model, task)?;
    let pairs = seq_pairs(ds)?;
    let enc = EncodedTask::encode(ds, &model.source_vocab, model.tasks[index].target_vocab.as_ref())?;
    let (mut total, mut tokens) = (0.0, 0usize);
    let idx: Vec<usize> = (0..pairs.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let count: usize = chunk.iter().map(|&i| pairs[i].1.len() + 1).sum();
        let loss = batch_loss(&model.params, head, &enc.batch(chunk)?, false, &mut Rng::new(0))?;
        total += loss * count as f64;
        tokens += count;
    }
    Ok(total / tokens as f64)
}

/// Position-wise agreement of greedy output with the reference, over the
/// longer of the two lengths.
pub fn greedy_token_accuracy(model: &Model, task: &str, ds: &TaskDataset, max_len: usize) -> Result<f64> {
    let pairs = seq_pairs(ds)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for chunk in pairs.chunks(CHUNK) {
        let src: Vec<Sentence> = chunk.iter().map(|p| p.0.clone()).collect();
        for (out, (_, gold)) in model.translate(task, &src, max_len)?.iter().zip(chunk) {
            total += out.len().max(gold.len());
            hit += out.iter().zip(gold).filter(|(a, b)| a == b).count();
        }
    }
    Ok(hit as f64 / total as f64)
}

/// Fraction of greedy outputs that delinearize into a tree.
pub fn wellformed_rate(model: &Model, task: &str, sources: &[Sentence], max_len: usize) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::Input("no sentences to parse".into()));
    }
    let mut ok = 0;
    for chunk in sources.chunks(CHUNK) {
        ok += model.translate(task, chunk, max_len)?.iter().filter(|t| delinearize(t).is_ok()).count();
    }
    Ok(ok as f64 / sources.len() as f64)
}

/// Accuracy of the pair-classification head.
pub fn pair_accuracy(model: &Model, ds: &TaskDataset) -> Result<f64> {
    let head = model.params.nli.as_ref().ok_or_else(|| Error::Input("model has no pair head".into()))?;
    let Examples::Pairs(pairs) = &ds.examples else {
        return Err(Error::Input(format!("{}: expected labelled pairs", ds.name)));
    };
    if pairs.is_empty() {
        return Err(Error::Input(format!("{}: no pairs", ds.name)));
    }
    let mut hit = 0;
    for chunk in pairs.chunks(CHUNK) {
        let p: Vec<Sentence> = chunk.iter().map(|e| e.premise.clone()).collect();
        let h: Vec<Sentence> = chunk.iter().map(|e| e.hypothesis.clone()).collect();
        let u = model.represent(&p, PoolingStrategy::Last)?;
        let v = model.represent(&h, PoolingStrategy::Last)?;
        let logits = mlp_forward(&pair_features_batch(&u, &v)?, head, false, &mut Rng::new(0))?;
        hit += chunk.iter().enumerate().filter(|(i, e)| argmax(logits.row(*i)) == e.label).count();
    }
    Ok(hit as f64 / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeldoutMetrics {
    pub task: String,
    pub kind: TaskKind,
    pub examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// `ln |V_tgt|`, the loss of a uniform predictor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Loss for every seq2seq task and accuracy for the pair task, on each
/// task's held-out split.
pub fn heldout_metrics(model: &Model, data: &[TaskData]) -> Result<Vec<HeldoutMetrics>> {
    let mut out = Vec::new();
    for d in data {
        let Some(ho) = &d.heldout else { continue };
        if ho.is_empty() {
            continue;
        }
        let mut m = HeldoutMetrics {
            task: d.name.clone(),
            kind: ho.kind(),
            examples: ho.len(),
            loss: None,
            uniform_loss: None,
            accuracy: None,
        };
        match ho.kind() {
            TaskKind::Seq2seq => {
                m.loss = Some(heldout_loss(model, &d.name, ho)?);
                let index = model.task_index(&d.name).expect("checked by heldout_loss");
                let v = model.tasks[index].target_vocab.as_ref().map_or(0, |v| v.len());
                m.uniform_loss = Some((v as f64).ln());
            }
            TaskKind::PairClassification => m.accuracy = Some(pair_accuracy(model, ho)?),
        }
        out.push(m);
    }
    Ok(out)
}
