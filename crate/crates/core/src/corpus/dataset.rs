use serde::{Deserialize, Serialize};

use crate::corpus::pcfg::SyntaxMeta;
use crate::error::{Error, Result};

/// Whitespace-tokenized sentence.
pub type Sentence = Vec<String>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Seq2seq,
    PairClassification,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairExample {
    pub premise: Sentence,
    pub hypothesis: Sentence,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Examples {
    Seq2seq(Vec<(Sentence, Sentence)>),
    Pairs(Vec<PairExample>),
}

/// One task's corpus in token form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskDataset {
    pub name: String,
    pub examples: Examples,
    /// Class count for pair tasks; 0 for seq2seq.
    pub num_classes: usize,
    /// Per-example syntactic metadata (parsing corpora only).
    pub meta: Option<Vec<SyntaxMeta>>,
}

impl TaskDataset {
    pub fn seq2seq(name: impl Into<String>, pairs: Vec<(Sentence, Sentence)>) -> Result<Self> {
        let ds = TaskDataset {
            name: name.into(),
            examples: Examples::Seq2seq(pairs),
            num_classes: 0,
            meta: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn pairs(name: impl Into<String>, pairs: Vec<PairExample>, num_classes: usize) -> Result<Self> {
        let ds = TaskDataset {
            name: name.into(),
            examples: Examples::Pairs(pairs),
            num_classes,
            meta: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn kind(&self) -> TaskKind {
        match self.examples {
            Examples::Seq2seq(_) => TaskKind::Seq2seq,
            Examples::Pairs(_) => TaskKind::PairClassification,
        }
    }

    pub fn len(&self) -> usize {
        match &self.examples {
            Examples::Seq2seq(e) => e.len(),
            Examples::Pairs(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every sentence the shared encoder reads.
    pub fn source_sentences(&self) -> Vec<&Sentence> {
        match &self.examples {
            Examples::Seq2seq(e) => e.iter().map(|(s, _)| s).collect(),
            Examples::Pairs(e) => e.iter().flat_map(|p| [&p.premise, &p.hypothesis]).collect(),
        }
    }

    /// Decoder-side sentences (empty for pair tasks).
    pub fn target_sentences(&self) -> Vec<&Sentence> {
        match &self.examples {
            Examples::Seq2seq(e) => e.iter().map(|(_, t)| t).collect(),
            Examples::Pairs(_) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |s: &Sentence| s.is_empty();
        match &self.examples {
            Examples::Seq2seq(e) => {
                if let Some(i) = e.iter().position(|(s, t)| empty(s) || empty(t)) {
                    return Err(Error::Input(format!("{}: example {i} has an empty side", self.name)));
                }
            }
            Examples::Pairs(e) => {
                if let Some(i) = e.iter().position(|p| empty(&p.premise) || empty(&p.hypothesis)) {
                    return Err(Error::Input(format!("{}: example {i} has an empty side", self.name)));
                }
                if let Some(p) = e.iter().find(|p| p.label >= self.num_classes) {
                    return Err(Error::Input(format!(
                        "{}: label {} outside {} classes",
                        self.name, p.label, self.num_classes
                    )));
                }
            }
        }
        if let Some(meta) = &self.meta {
            if meta.len() != self.len() {
                return Err(Error::Input(format!("{}: metadata rows do not match examples", self.name)));
            }
        }
        Ok(())
    }

    /// Repeats every example `times` times (gold-parse up-weighting).
    pub fn duplicated(mut self, times: usize) -> Self {
        if times <= 1 {
            return self;
        }
        fn rep<T: Clone>(v: &[T], times: usize) -> Vec<T> {
            v.iter().flat_map(|x| std::iter::repeat_n(x.clone(), times)).collect()
        }
        self.examples = match &self.examples {
            Examples::Seq2seq(e) => Examples::Seq2seq(rep(e, times)),
            Examples::Pairs(e) => Examples::Pairs(rep(e, times)),
        };
        self.meta = self.meta.as_ref().map(|m| rep(m, times));
        self
    }

    /// Splits off the last `fraction` of examples (order preserved).
    pub fn split_tail(&self, fraction: f64) -> (TaskDataset, TaskDataset) {
        let n = self.len();
        let cut = n - ((n as f64 * fraction).round() as usize).min(n);
        let mut head = self.clone();
        let mut tail = self.clone();
        match (&mut head.examples, &mut tail.examples) {
            (Examples::Seq2seq(h), Examples::Seq2seq(t)) => {
                *t = h.split_off(cut);
            }
            (Examples::Pairs(h), Examples::Pairs(t)) => {
                *t = h.split_off(cut);
            }
            _ => unreachable!(),
        }
        if let Some(m) = &mut head.meta {
            tail.meta = Some(m.split_off(cut));
        }
        (head, tail)
    }
}
