//! Multinomial logistic regression with cross-validated L2 strength.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::tensor::{gemm_acc, gemm_tn_acc};
use crate::numcore::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogRegConfig {
    pub folds: usize,
    pub l2_grid: Vec<f64>,
    pub max_iter: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
    /// Seeds the fold shuffle.
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            folds: 10,
            l2_grid: vec![2f64.powi(-6), 2f64.powi(-4), 2f64.powi(-2), 1.0, 4.0, 16.0],
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Worker count for evaluation: `MTSE_THREADS` when set, else all cores.
pub fn eval_threads() -> usize {
    std::env::var("MTSE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub(crate) fn with_eval_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(eval_threads()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Fitted classifier. Inputs are standardized with training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LogReg {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `d×c`.
    w: Vec<f64>,
    b: Vec<f64>,
    classes: usize,
}

pub(crate) fn standardizer(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

pub(crate) fn standardize(x: &Tensor, mean: &[f64], scale: &[f64]) -> Vec<f64> {
    let d = x.cols();
    x.data()
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean[k % d]) / scale[k % d])
        .collect()
}

fn check_labels(y: &[usize], n: usize) -> Result<usize> {
    if y.len() != n {
        return Err(Error::Input(format!("{} labels for {n} rows", y.len())));
    }
    if n == 0 {
        return Err(Error::Input("no training rows".into()));
    }
    Ok(y.iter().max().copied().unwrap_or(0) + 1)
}

/// Softmax probabilities in place; returns the summed cross-entropy.
fn softmax_rows(logits: &mut [f64], y: &[usize], c: usize) -> f64 {
    let mut loss = 0.0;
    for (i, row) in logits.chunks_exact_mut(c).enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
        loss -= row[y[i]].max(1e-300).ln();
    }
    loss
}

impl LogReg {
    /// Minimizes `mean cross-entropy + l2/(2n)·‖W‖²` (bias unpenalized) by
    /// full-batch Nesterov-accelerated gradient descent with step `1/L`.
    pub fn fit(x: &Tensor, y: &[usize], classes: usize, l2: f64, max_iter: usize, tol: f64) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        let needed = check_labels(y, n)?;
        if classes < needed {
            return Err(Error::Input(format!("label {} outside {classes} classes", needed - 1)));
        }
        if !(l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be non-negative, got {l2}")));
        }
        let (mean, scale) = standardizer(x);
        let xs = standardize(x, &mean, &scale);
        let c = classes;
        let lip = 0.5 * (top_eigenvalue(&xs, n, d) + n as f64) / n as f64 * 1.05 + l2 / n as f64;
        let step = 1.0 / lip;

        let size = (d + 1) * c;
        let mut theta = vec![0.0; size];
        let mut prev = theta.clone();
        let mut look = theta.clone();
        let mut grad = vec![0.0; size];
        let mut logits = vec![0.0; n * c];
        for k in 0..max_iter {
            let mom = k as f64 / (k as f64 + 3.0);
            for j in 0..size {
                look[j] = theta[j] + mom * (theta[j] - prev[j]);
            }
            gradient(&xs, y, &look, l2, n, d, c, &mut logits, &mut grad);
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < tol {
                theta.copy_from_slice(&look);
                break;
            }
            prev.copy_from_slice(&theta);
            for j in 0..size {
                theta[j] = look[j] - step * grad[j];
            }
        }
        let b = theta.split_off(d * c);
        Ok(LogReg { mean, scale, w: theta, b, classes: c })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Weights in standardized feature space, `d×c` row-major.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let (n, d, c) = (x.rows(), x.cols(), self.classes);
        let xs = standardize(x, &self.mean, &self.scale);
        let mut logits = vec![0.0; n * c];
        for row in logits.chunks_exact_mut(c) {
            row.copy_from_slice(&self.b);
        }
        gemm_acc(&xs, &self.w, &mut logits, n, d, c);
        logits.chunks_exact(c).map(argmax).collect()
    }

    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> f64 {
        accuracy(&self.predict(x), y)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

#[allow(clippy::too_many_arguments)]
fn gradient(
    xs: &[f64],
    y: &[usize],
    theta: &[f64],
    l2: f64,
    n: usize,
    d: usize,
    c: usize,
    logits: &mut [f64],
    grad: &mut [f64],
) {
    let (w, b) = theta.split_at(d * c);
    for row in logits.chunks_exact_mut(c) {
        row.copy_from_slice(b);
    }
    gemm_acc(xs, w, logits, n, d, c);
    softmax_rows(logits, y, c);
    for (i, row) in logits.chunks_exact_mut(c).enumerate() {
        row[y[i]] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    logits.iter_mut().for_each(|v| *v *= inv);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let (gw, gb) = grad.split_at_mut(d * c);
    gemm_tn_acc(xs, logits, gw, n, d, c);
    for row in logits.chunks_exact(c) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    for (g, wv) in gw.iter_mut().zip(w) {
        *g += l2 * inv * wv;
    }
}

/// Largest eigenvalue of `XᵀX` by power iteration.
fn top_eigenvalue(x: &[f64], n: usize, d: usize) -> f64 {
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut xv = vec![0.0; n];
        gemm_acc(x, &v, &mut xv, n, d, 1);
        let mut w = vec![0.0; d];
        gemm_tn_acc(x, &xv, &mut w, n, d, 1);
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w.into_iter().map(|a| a / norm).collect();
        if (next - lambda).abs() <= 1e-6 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Contiguous folds over a seeded shuffle; the first `n mod k` folds get one
/// extra row.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let perm = Rng::new(seed).permutation(n);
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvResult {
    pub best_l2: f64,
    pub cv_accuracy: f64,
    pub test_accuracy: f64,
    /// Per grid value, the accuracy on each held-out fold.
    pub fold_accuracies: Vec<(f64, Vec<f64>)>,
}

fn take<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Mean k-fold accuracy per L2 value; returns the best value (ties go to
/// the smaller one), its accuracy and the full grid.
pub fn cross_validate(x: &Tensor, y: &[usize], classes: usize, cfg: &LogRegConfig) -> Result<(f64, f64, Vec<(f64, Vec<f64>)>)> {
    let n = x.rows();
    check_labels(y, n)?;
    if cfg.folds < 2 || n < cfg.folds {
        return Err(Error::Input(format!("{n} rows cannot form {} folds", cfg.folds)));
    }
    if cfg.l2_grid.is_empty() {
        return Err(Error::Config("l2_grid is empty".into()));
    }
    let folds = fold_indices(n, cfg.folds, cfg.seed);
    let mut grid = cfg.l2_grid.clone();
    grid.sort_by(f64::total_cmp);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds.len()).map(move |f| (g, f))).collect();
    let scores: Vec<Result<f64>> = with_eval_pool(|| {
        jobs.par_iter()
            .map(|&(g, f)| {
                let train: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != f)
                    .flat_map(|(_, idx)| idx.iter().copied())
                    .collect();
                let model = LogReg::fit(&x.select_rows(&train), &take(y, &train), classes, grid[g], cfg.max_iter, cfg.tol)?;
                Ok(model.accuracy(&x.select_rows(&folds[f]), &take(y, &folds[f])))
            })
            .collect()
    });
    let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let table: Vec<(f64, Vec<f64>)> = grid
        .iter()
        .enumerate()
        .map(|(g, &l2)| (l2, scores[g * folds.len()..(g + 1) * folds.len()].to_vec()))
        .collect();
    let mut best = (table[0].0, f64::NEG_INFINITY);
    for (l2, accs) in &table {
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        if mean > best.1 {
            best = (*l2, mean);
        }
    }
    Ok((best.0, best.1, table))
}

/// Cross-validates the L2 strength on the training split, refits on all of
/// it and reports accuracy on the test split.
pub fn logreg_cv_eval(
    train_x: &Tensor,
    train_y: &[usize],
    test_x: &Tensor,
    test_y: &[usize],
    cfg: &LogRegConfig,
) -> Result<CvResult> {
    let classes = check_labels(train_y, train_x.rows())?.max(test_y.iter().max().map_or(0, |m| m + 1));
    let distinct = train_y.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::DegenerateTask("training labels contain a single class".into()));
    }
    if test_x.cols() != train_x.cols() || test_y.len() != test_x.rows() {
        return Err(Error::Input("test split does not match the training features".into()));
    }
    let (best_l2, cv_accuracy, fold_accuracies) = cross_validate(train_x, train_y, classes, cfg)?;
    let model = LogReg::fit(train_x, train_y, classes, best_l2, cfg.max_iter, cfg.tol)?;
    Ok(CvResult {
        best_l2,
        cv_accuracy,
        test_accuracy: model.accuracy(test_x, test_y),
        fold_accuracies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two Gaussian blobs, `n` per class, separated along every axis.
    pub(crate) fn blobs(n: usize, d: usize, gap: f64, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..2 * n {
            let label = i % 2;
            for _ in 0..d {
                data.push(rng.uniform(-1.0, 1.0) + if label == 1 { gap } else { -gap });
            }
            y.push(label);
        }
        (Tensor::new(vec![2 * n, d], data).unwrap(), y)
    }

    #[test]
    fn separable_blobs_are_classified_perfectly() {
        let (x, y) = blobs(100, 5, 1.5, 1);
        let (tx, ty) = blobs(50, 5, 1.5, 2);
        let r = logreg_cv_eval(&x, &y, &tx, &ty, &LogRegConfig::default()).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert_eq!(r.cv_accuracy, 1.0);
        // every grid value is perfect, so the tie goes to the smallest
        assert_eq!(r.best_l2, 2f64.powi(-6));
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let (x, mut y) = blobs(250, 5, 1.5, 3);
        let (tx, mut ty) = blobs(250, 5, 1.5, 4);
        let mut rng = Rng::new(5);
        rng.shuffle(&mut y);
        rng.shuffle(&mut ty);
        let r = logreg_cv_eval(&x, &y, &tx, &ty, &LogRegConfig::default()).unwrap();
        assert!((0.4..=0.6).contains(&r.test_accuracy), "{}", r.test_accuracy);
    }

    #[test]
    fn huge_penalty_predicts_the_majority() {
        let (x, mut y) = blobs(30, 3, 1.0, 6);
        for v in y.iter_mut().take(20) {
            *v = 1;
        }
        let majority = y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64;
        let m = LogReg::fit(&x, &y, 2, 1e12, 2000, 1e-12).unwrap();
        assert!(m.weights().iter().all(|w| w.abs() < 1e-6));
        assert!((m.accuracy(&x, &y) - majority).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = blobs(5, 3, 0.5, 7);
        let (n, d, c) = (10, 3, 3);
        let y: Vec<usize> = y.iter().enumerate().map(|(i, v)| if i % 5 == 0 { 2 } else { *v }).collect();
        let theta: Vec<f64> = (0..(d + 1) * c).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut logits = vec![0.0; n * c];
        let mut g = vec![0.0; theta.len()];
        gradient(x.data(), &y, &theta, 0.7, n, d, c, &mut logits, &mut g);
        let f = |t: &[f64]| {
            let mut l = vec![0.0; n * c];
            for row in l.chunks_exact_mut(c) {
                row.copy_from_slice(&t[d * c..]);
            }
            gemm_acc(x.data(), &t[..d * c], &mut l, n, d, c);
            softmax_rows(&mut l, &y, c) / n as f64 + 0.7 / (2.0 * n as f64) * t[..d * c].iter().map(|w| w * w).sum::<f64>()
        };
        for j in 0..theta.len() {
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[j] += 1e-6;
            down[j] -= 1e-6;
            let num = (f(&up) - f(&down)) / 2e-6;
            assert!((num - g[j]).abs() < 1e-8, "{j}: {num} vs {}", g[j]);
        }
    }

    #[test]
    fn folds_partition_rows() {
        let folds = fold_indices(23, 10, 1);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_inputs() {
        let (x, _) = blobs(10, 2, 1.0, 1);
        let ones = vec![1; 20];
        assert!(matches!(
            logreg_cv_eval(&x, &ones, &x, &ones, &LogRegConfig::default()),
            Err(Error::DegenerateTask(_))
        ));
        let (small, y) = blobs(2, 2, 1.0, 1);
        assert!(cross_validate(&small, &y, 2, &LogRegConfig::default()).is_err());
    }
}
