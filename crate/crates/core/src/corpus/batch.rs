use crate::corpus::dataset::{Examples, TaskDataset};
use crate::corpus::vocab::Vocabulary;
use crate::encoder::SentenceBatch;
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// A task's examples as token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EncodedExamples {
    Seq2seq(Vec<(Vec<u32>, Vec<u32>)>),
    Pairs(Vec<(Vec<u32>, Vec<u32>, usize)>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedTask {
    pub name: String,
    pub examples: EncodedExamples,
}

/// One padded minibatch.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskBatch {
    Seq2seq {
        source: SentenceBatch,
        target: SentenceBatch,
    },
    Pairs {
        premise: SentenceBatch,
        hypothesis: SentenceBatch,
        labels: Vec<usize>,
    },
}

impl TaskBatch {
    pub fn len(&self) -> usize {
        match self {
            TaskBatch::Seq2seq { source, .. } => source.n(),
            TaskBatch::Pairs { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl EncodedTask {
    /// Maps tokens to ids; `target` is required for seq2seq datasets.
    pub fn encode(ds: &TaskDataset, source: &Vocabulary, target: Option<&Vocabulary>) -> Result<Self> {
        let examples = match &ds.examples {
            Examples::Seq2seq(e) => {
                let tv = target.ok_or_else(|| {
                    Error::Config(format!("{}: seq2seq task needs a target vocabulary", ds.name))
                })?;
                EncodedExamples::Seq2seq(e.iter().map(|(s, t)| (source.encode(s), tv.encode(t))).collect())
            }
            Examples::Pairs(e) => EncodedExamples::Pairs(
                e.iter()
                    .map(|p| (source.encode(&p.premise), source.encode(&p.hypothesis), p.label))
                    .collect(),
            ),
        };
        Ok(EncodedTask { name: ds.name.clone(), examples })
    }

    pub fn len(&self) -> usize {
        match &self.examples {
            EncodedExamples::Seq2seq(e) => e.len(),
            EncodedExamples::Pairs(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx`, each side padded to its own maximum length.
    pub fn batch(&self, idx: &[usize]) -> Result<TaskBatch> {
        if idx.is_empty() {
            return Err(Error::DegenerateBatch(format!("{}: empty batch", self.name)));
        }
        Ok(match &self.examples {
            EncodedExamples::Seq2seq(e) => {
                let (s, t): (Vec<_>, Vec<_>) = idx.iter().map(|&i| (e[i].0.clone(), e[i].1.clone())).unzip();
                TaskBatch::Seq2seq {
                    source: SentenceBatch::from_rows(&s)?,
                    target: SentenceBatch::from_rows(&t)?,
                }
            }
            EncodedExamples::Pairs(e) => {
                let p: Vec<_> = idx.iter().map(|&i| e[i].0.clone()).collect();
                let h: Vec<_> = idx.iter().map(|&i| e[i].1.clone()).collect();
                TaskBatch::Pairs {
                    premise: SentenceBatch::from_rows(&p)?,
                    hypothesis: SentenceBatch::from_rows(&h)?,
                    labels: idx.iter().map(|&i| e[i].2).collect(),
                }
            }
        })
    }
}

/// One epoch of minibatches in seeded shuffled order; the last batch may be
/// short.
pub fn batchify(task: &EncodedTask, batch_size: usize, rng: &mut Rng) -> Result<Vec<TaskBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let order = rng.permutation(task.len());
    order.chunks(batch_size).map(|c| task.batch(c)).collect()
}
