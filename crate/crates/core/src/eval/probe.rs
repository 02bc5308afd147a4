//! Auxiliary prediction tasks that read surface and syntactic properties
//! off frozen sentence representations.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::Sentence;
use crate::corpus::pcfg::SyntaxMeta;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numcore::{Rng, Tensor};

use super::logreg::{logreg_cv_eval, LogRegConfig};
use super::mlp::{mlp_eval, MlpClassifierConfig};
use super::repr::RepresentationMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Length,
    Content,
    Order,
    Passive,
    Tense,
    Tss,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 6] = [
        ProbeKind::Length,
        ProbeKind::Content,
        ProbeKind::Order,
        ProbeKind::Passive,
        ProbeKind::Tense,
        ProbeKind::Tss,
    ];

    pub fn needs_meta(self) -> bool {
        matches!(self, ProbeKind::Passive | ProbeKind::Tense | ProbeKind::Tss)
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Length => "length",
            ProbeKind::Content => "content",
            ProbeKind::Order => "order",
            ProbeKind::Passive => "passive",
            ProbeKind::Tense => "tense",
            ProbeKind::Tss => "tss",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown probe '{s}'")))
    }
}

pub const LENGTH_BINS: usize = 8;

/// Word vectors used by the content and order probes.
#[derive(Clone, Copy, Debug)]
pub struct Lexicon<'a> {
    pub vocab: &'a Vocabulary,
    /// One row per vocabulary id.
    pub table: &'a Tensor,
}

impl<'a> Lexicon<'a> {
    /// The encoder's input embedding table.
    pub fn from_model(model: &'a Model) -> Self {
        Lexicon { vocab: &model.source_vocab, table: &model.params.encoder.embedding }
    }

    fn vector(&self, word: &str) -> &[f64] {
        self.table.row(self.vocab.id(word) as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeDataset {
    pub kind: ProbeKind,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Source sentence of each example; splits never separate a group.
    pub groups: Vec<usize>,
    /// Longest length in each bin, for the length probe.
    pub bin_edges: Option<Vec<usize>>,
}

/// Equal-population bins over the length ranking (ties broken by index).
pub fn length_bins(lengths: &[usize], bins: usize) -> (Vec<usize>, Vec<usize>) {
    let n = lengths.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let mut labels = vec![0; n];
    let mut edges = vec![0; bins];
    for (rank, &i) in order.iter().enumerate() {
        let b = rank * bins / n;
        labels[i] = b;
        edges[b] = edges[b].max(lengths[i]);
    }
    (labels, edges)
}

fn meta_labels(kind: ProbeKind, meta: Option<&[SyntaxMeta]>, n: usize) -> Result<(Vec<usize>, usize)> {
    let meta = meta.ok_or_else(|| {
        let field = match kind {
            ProbeKind::Tense => "past",
            ProbeKind::Passive => "passive",
            _ => "tss",
        };
        Error::Input(format!("probe '{kind}' needs syntax metadata field '{field}'"))
    })?;
    if meta.len() != n {
        return Err(Error::Input(format!("{} metadata rows for {n} sentences", meta.len())));
    }
    let labels: Vec<usize> = meta
        .iter()
        .map(|m| match kind {
            ProbeKind::Passive => usize::from(m.passive),
            ProbeKind::Tense => usize::from(m.past),
            _ => m.tss,
        })
        .collect();
    let classes = match kind {
        ProbeKind::Tss => labels.iter().max().map_or(1, |m| m + 1),
        _ => 2,
    };
    Ok((labels, classes))
}

fn join(parts: &[&[f64]]) -> Vec<f64> {
    parts.concat()
}

/// Builds the labelled examples for one probe. Content and order examples
/// append word vectors from `lexicon` to the sentence representation.
pub fn build_probe(
    kind: ProbeKind,
    sentences: &[Sentence],
    reps: &RepresentationMatrix,
    meta: Option<&[SyntaxMeta]>,
    lexicon: Option<Lexicon<'_>>,
    seed: u64,
) -> Result<ProbeDataset> {
    let n = sentences.len();
    if reps.n() != n {
        return Err(Error::Input(format!("{} representations for {n} sentences", reps.n())));
    }
    if n == 0 {
        return Err(Error::Input("probe corpus is empty".into()));
    }
    let whole = |labels: Vec<usize>, num_classes, bin_edges| ProbeDataset {
        kind,
        features: reps.values.clone(),
        labels,
        num_classes,
        groups: (0..n).collect(),
        bin_edges,
    };
    match kind {
        ProbeKind::Length => {
            let lengths: Vec<usize> = sentences.iter().map(Vec::len).collect();
            let (labels, edges) = length_bins(&lengths, LENGTH_BINS);
            Ok(whole(labels, LENGTH_BINS, Some(edges)))
        }
        ProbeKind::Passive | ProbeKind::Tense | ProbeKind::Tss => {
            let (labels, classes) = meta_labels(kind, meta, n)?;
            Ok(whole(labels, classes, None))
        }
        ProbeKind::Content | ProbeKind::Order => {
            let lex = lexicon.ok_or_else(|| Error::Input(format!("probe '{kind}' needs word vectors")))?;
            if lex.table.rows() != lex.vocab.len() {
                return Err(Error::Input("word table does not match its vocabulary".into()));
            }
            let mut rng = Rng::new(seed);
            let mut data = Vec::new();
            let mut labels = Vec::new();
            let mut groups = Vec::new();
            for (i, s) in sentences.iter().enumerate() {
                let rep = reps.row(i);
                if kind == ProbeKind::Content {
                    if s.is_empty() {
                        continue;
                    }
                    let present: BTreeSet<&str> = s.iter().map(String::as_str).collect();
                    let absent: Vec<&String> = lex.vocab.words().iter().filter(|w| !present.contains(w.as_str())).collect();
                    if absent.is_empty() {
                        continue;
                    }
                    let pos = &s[rng.below(s.len())];
                    let neg = absent[rng.below(absent.len())];
                    data.extend(join(&[rep, lex.vector(pos)]));
                    data.extend(join(&[rep, lex.vector(neg)]));
                    labels.extend([1, 0]);
                    groups.extend([i, i]);
                } else {
                    let mut counts: HashMap<&str, usize> = HashMap::new();
                    for w in s {
                        *counts.entry(w).or_default() += 1;
                    }
                    let unique: Vec<usize> = (0..s.len()).filter(|&p| counts[s[p].as_str()] == 1).collect();
                    if unique.len() < 2 {
                        continue;
                    }
                    let a = rng.below(unique.len());
                    let mut b = rng.below(unique.len() - 1);
                    if b >= a {
                        b += 1;
                    }
                    let (first, second) = (unique[a.min(b)], unique[a.max(b)]);
                    let (x, y) = (lex.vector(&s[first]), lex.vector(&s[second]));
                    data.extend(join(&[rep, x, y]));
                    data.extend(join(&[rep, y, x]));
                    labels.extend([1, 0]);
                    groups.extend([i, i]);
                }
            }
            if labels.is_empty() {
                return Err(Error::DegenerateTask(format!("no sentence yields a '{kind}' example")));
            }
            let width = data.len() / labels.len();
            Ok(ProbeDataset {
                kind,
                features: Tensor::new(vec![labels.len(), width], data)?,
                labels,
                num_classes: 2,
                groups,
                bin_edges: None,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum ProbeClassifier {
    Logreg(LogRegConfig),
    Mlp(MlpClassifierConfig),
}

impl ProbeClassifier {
    pub fn default_for(kind: ProbeKind) -> Self {
        match kind {
            ProbeKind::Content | ProbeKind::Order => ProbeClassifier::Mlp(MlpClassifierConfig::default()),
            _ => ProbeClassifier::Logreg(LogRegConfig::default()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProbeClassifier::Logreg(_) => "logreg",
            ProbeClassifier::Mlp(_) => "mlp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub kind: ProbeKind,
    pub classifier: String,
    pub accuracy: f64,
    /// Frequency of the most common class in the test split.
    pub baseline: f64,
    pub train_size: usize,
    pub test_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_edges: Option<Vec<usize>>,
}

/// Seeded 80/20 split over groups; returns row indices.
pub fn grouped_split(groups: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let distinct: Vec<usize> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let perm = Rng::new(seed).permutation(distinct.len());
    let n_test = (distinct.len() / 5).max(1);
    let test_groups: BTreeSet<usize> = perm[..n_test].iter().map(|&k| distinct[k]).collect();
    (0..groups.len()).partition(|&i| !test_groups.contains(&groups[i]))
}

pub fn majority_frequency(labels: &[usize]) -> f64 {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts.values().max().map_or(0.0, |&c| c as f64 / labels.len() as f64)
}

pub fn run_probe(data: &ProbeDataset, classifier: &ProbeClassifier, seed: u64) -> Result<ProbeResult> {
    let (train, test) = grouped_split(&data.groups, seed);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Input("probe split left one side empty".into()));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| data.labels[i]).collect::<Vec<_>>();
    let (train_y, test_y) = (pick(&train), pick(&test));
    let (train_x, test_x) = (data.features.select_rows(&train), data.features.select_rows(&test));
    let accuracy = match classifier {
        ProbeClassifier::Logreg(cfg) => logreg_cv_eval(&train_x, &train_y, &test_x, &test_y, cfg)?.test_accuracy,
        ProbeClassifier::Mlp(cfg) => mlp_eval(&train_x, &train_y, &test_x, &test_y, cfg)?.test_accuracy,
    };
    Ok(ProbeResult {
        kind: data.kind,
        classifier: classifier.name().into(),
        accuracy,
        baseline: majority_frequency(&test_y),
        train_size: train.len(),
        test_size: test.len(),
        bin_edges: data.bin_edges.clone(),
    })
}
