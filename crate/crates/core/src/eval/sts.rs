use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!("{} vs {} values", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("gold scores have zero variance".into()));
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("predicted similarities have zero variance".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Average ranks, 1-based.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StsResult {
    pub pearson: f64,
    pub spearman: f64,
    pub pairs: usize,
    /// Pairs scored 0 because one side had a zero vector.
    pub zero_vectors: usize,
}

/// Correlates cosine similarity of paired representations with gold scores.
pub fn cosine_sts(u: &Tensor, v: &Tensor, gold: &[f64]) -> Result<StsResult> {
    let n = gold.len();
    if u.rows() != n || v.rows() != n || u.cols() != v.cols() {
        return Err(Error::Input(format!(
            "{}x{} and {}x{} representations for {n} gold scores",
            u.rows(),
            u.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if n < 3 {
        return Err(Error::Input(format!("{n} pairs are too few for a correlation")));
    }
    let mut zero_vectors = 0;
    let sims: Vec<f64> = (0..n)
        .map(|i| {
            cosine(u.row(i), v.row(i)).unwrap_or_else(|| {
                zero_vectors += 1;
                0.0
            })
        })
        .collect();
    if zero_vectors > 0 {
        log::warn!("{zero_vectors} of {n} pairs contain a zero vector; scored as 0");
    }
    Ok(StsResult {
        pearson: pearson(&sims, gold)?,
        spearman: spearman(&sims, gold)?,
        pairs: n,
        zero_vectors,
    })
}
