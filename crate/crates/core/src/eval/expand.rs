//! Vocabulary expansion: a linear map from pretrained word vectors into the
//! encoder's embedding space, fit on the words both tables share.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::corpus::vocab::SPECIAL_TOKENS;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct WordTable {
    pub tokens: Vec<String>,
    /// One row per token.
    pub values: Tensor,
}

impl WordTable {
    pub fn new(tokens: Vec<String>, values: Tensor) -> Result<Self> {
        if tokens.len() != values.rows() {
            return Err(Error::Input(format!("{} tokens for {} vectors", tokens.len(), values.rows())));
        }
        Ok(WordTable { tokens, values })
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Non-reserved rows of the encoder's embedding table.
    pub fn from_model(model: &Model) -> Self {
        let skip = SPECIAL_TOKENS.len();
        let tokens = model.source_vocab.words().to_vec();
        let idx: Vec<usize> = (skip..model.source_vocab.len()).collect();
        WordTable { tokens, values: model.params.encoder.embedding.select_rows(&idx) }
    }

    /// Whitespace-separated text, one `token v1 .. vd` line per word. The
    /// width comes from the first line.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (k, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: k + 1, msg };
            let vals = parts
                .map(|p| p.parse::<f64>().map_err(|_| parse_err(format!("'{p}' is not a number"))))
                .collect::<Result<Vec<f64>>>()?;
            match dim {
                None if vals.is_empty() => return Err(parse_err(format!("'{token}' has no vector"))),
                None => dim = Some(vals.len()),
                Some(d) if d != vals.len() => {
                    return Err(parse_err(format!("expected {d} values, found {}", vals.len())))
                }
                _ => {}
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite value".into()));
            }
            tokens.push(token.to_string());
            data.extend(vals);
        }
        let dim = dim.ok_or_else(|| Error::Format(format!("{} holds no vectors", path.display())))?;
        WordTable::new(tokens.clone(), Tensor::new(vec![tokens.len(), dim], data)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            for v in self.values.row(i) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    /// Model words first, in their original order, then the words only the
    /// pretrained table knows.
    pub table: WordTable,
    /// `(d_pre + 1)×d_model`; the last row is the bias.
    pub map: Tensor,
    pub shared: usize,
    pub added: usize,
    /// Root mean squared residual over the shared words.
    pub residual_rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionSummary {
    pub shared: usize,
    pub added: usize,
    pub vocab_size: usize,
    pub residual_rms: f64,
}

impl Expansion {
    pub fn summary(&self) -> ExpansionSummary {
        ExpansionSummary {
            shared: self.shared,
            added: self.added,
            vocab_size: self.table.tokens.len(),
            residual_rms: self.residual_rms,
        }
    }
}

/// Ridge regression (bias unpenalized) of model vectors on pretrained
/// vectors over the shared words. Shared words keep their model vectors.
pub fn expand_vocab(pretrained: &WordTable, model: &WordTable, lambda: f64) -> Result<Expansion> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("ridge strength must be non-negative, got {lambda}")));
    }
    let model_index: HashMap<&str, usize> = model.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let pairs: Vec<(usize, usize)> = pretrained
        .tokens
        .iter()
        .enumerate()
        .filter_map(|(p, t)| model_index.get(t.as_str()).map(|&m| (p, m)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Input("the two tables share no words".into()));
    }
    let (dp, dm) = (pretrained.dim(), model.dim());
    let s = pairs.len();
    let underdetermined = || {
        Error::DegenerateTask(format!(
            "{s} shared words cannot determine a {}-dimensional map; raise the ridge strength",
            dp + 1
        ))
    };
    if lambda == 0.0 && s < dp + 1 {
        return Err(underdetermined());
    }
    let x = DMatrix::from_fn(s, dp + 1, |r, c| if c == dp { 1.0 } else { pretrained.values.get2(pairs[r].0, c) });
    let y = DMatrix::from_fn(s, dm, |r, c| model.values.get2(pairs[r].1, c));
    let mut gram = x.transpose() * &x;
    for c in 0..dp {
        gram[(c, c)] += lambda;
    }
    let rhs = x.transpose() * &y;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).ok_or_else(underdetermined)?,
    };
    let resid = &x * &w - &y;
    let residual_rms = (resid.norm_squared() / (s * dm) as f64).sqrt();

    let mut tokens = model.tokens.clone();
    let mut data = model.values.data().to_vec();
    let mut added = 0;
    for (p, t) in pretrained.tokens.iter().enumerate() {
        if model_index.contains_key(t.as_str()) {
            continue;
        }
        let row = pretrained.values.row(p);
        for c in 0..dm {
            let mut v = w[(dp, c)];
            for (k, &r) in row.iter().enumerate() {
                v += r * w[(k, c)];
            }
            data.push(v);
        }
        tokens.push(t.clone());
        added += 1;
    }
    let n = tokens.len();
    Ok(Expansion {
        table: WordTable::new(tokens, Tensor::new(vec![n, dm], data)?)?,
        map: Tensor::new(vec![dp + 1, dm], (0..(dp + 1) * dm).map(|k| w[(k / dm, k % dm)]).collect())?,
        shared: s,
        added,
        residual_rms,
    })
}

/// Copy of `model` whose encoder vocabulary and embedding table include the
/// expanded words.
pub fn expanded_model(model: &Model, expansion: &Expansion) -> Result<Model> {
    let base = WordTable::from_model(model);
    if expansion.table.tokens[..base.tokens.len()] != base.tokens[..] {
        return Err(Error::Input("expansion was not built from this model".into()));
    }
    let vocab = Vocabulary::with_words(expansion.table.tokens.iter().cloned())?;
    let reserved: Vec<usize> = (0..SPECIAL_TOKENS.len()).collect();
    let head = model.params.encoder.embedding.select_rows(&reserved);
    let mut out = model.clone();
    out.params.encoder.embedding = head.vcat(&expansion.table.values)?;
    out.source_vocab = vocab;
    Ok(out)
}
