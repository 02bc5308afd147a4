use crate::error::{Error, Result};
use crate::numcore::tensor::{canonical_sum, gemm_acc, Tensor};

/// `x · W + b` for `x[n×a]`, `W[a×b]`, `b[b]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || w.shape().len() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(Error::Dimension {
            op: "affine",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    if b.len() != w.shape()[1] {
        return Err(Error::Dimension {
            op: "affine bias",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (n, k, m) = (x.rows(), w.rows(), w.cols());
    let mut out = vec![0.0; n * m];
    affine_into(x.data(), w.data(), b.data(), &mut out, n, k, m);
    Tensor::new(vec![n, m], out)
}

/// Raw `out = x·W + b` (out is overwritten).
pub(crate) fn affine_into(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    out: &mut [f64],
    n: usize,
    k: usize,
    m: usize,
) {
    out.fill(0.0);
    gemm_acc(x, w, out, n, k, m);
    for row in out.chunks_exact_mut(m) {
        for (o, &bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in logits
        .data()
        .chunks_exact(c)
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        softmax_row(src, dst);
    }
    out
}

/// Mean over masked rows of `-log softmax(logits)[i, targets[i]]`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<f64> {
    cross_entropy_grad(logits, targets, mask).map(|(loss, _)| loss)
}

/// Masked mean cross-entropy and its gradient with respect to the logits.
///
/// Unmasked rows contribute nothing to either output. The loss sum uses
/// [`canonical_sum`], so reordering rows leaves it bit-identical.
pub fn cross_entropy_grad(
    logits: &Tensor,
    targets: &[usize],
    mask: &[bool],
) -> Result<(f64, Tensor)> {
    let (n, c) = (logits.rows(), logits.cols());
    if targets.len() != n || mask.len() != n {
        return Err(Error::Dimension {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![targets.len(), mask.len()],
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::DegenerateBatch(
            "cross_entropy mask selects no positions".into(),
        ));
    }
    let inv = 1.0 / count as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut terms = Vec::with_capacity(count);
    let mut probs = vec![0.0; c];
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let t = targets[i];
        if t >= c {
            return Err(Error::Input(format!("target {t} outside {c} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        terms.push(lse - row[t]);
        softmax_row(row, &mut probs);
        let g = grad.row_mut(i);
        for (gv, &p) in g.iter_mut().zip(&probs) {
            *gv = p * inv;
        }
        g[t] -= inv;
    }
    let loss = canonical_sum(&mut terms) * inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "cross_entropy".into(),
        });
    }
    Ok((loss, grad))
}
