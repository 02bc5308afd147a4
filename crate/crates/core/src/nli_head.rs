//! Pair-classification head: `[u; v; |u-v|; u⊙v]` features and a tanh MLP.

use crate::encoder::{encoder_backward, encoder_forward, BiEncoderParams, SentenceBatch};
use crate::error::{Error, Result};
use crate::gru::init_matrix;
use crate::numcore::ops::{affine_into, cross_entropy_grad};
use crate::numcore::params::ParamSet;
use crate::numcore::tensor::{col_sum_acc, gemm_acc, gemm_tn_acc, Tensor};
use crate::numcore::Rng;

/// Label order used in data files and logits.
pub const ENTAILMENT: usize = 0;
pub const CONTRADICTION: usize = 1;
pub const NEUTRAL: usize = 2;
pub const NLI_LABELS: [&str; 3] = ["entailment", "contradiction", "neutral"];

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

/// Feed-forward classifier with tanh hidden layers.
///
/// `dropout[l]` is the inverted-dropout rate applied to the input of layer
/// `l` in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    pub dropout: Vec<f64>,
}

impl MlpParams {
    /// `dims = [input, hidden.., classes]`.
    pub fn new(dims: &[usize], dropout: Vec<f64>, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("an MLP needs input and output widths".into()));
        }
        if dropout.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} dropout rates for {} layers",
                dropout.len(),
                dims.len() - 1
            )));
        }
        if dropout.iter().any(|&r| !(0.0..1.0).contains(&r)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                w: init_matrix(w[0], w[1], rng),
                b: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(MlpParams { layers, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("nonempty").w.cols()
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| [(format!("l{l}.w"), &layer.w), (format!("l{l}.b"), &layer.b)])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(l, layer)| [(format!("l{l}.w"), &mut layer.w), (format!("l{l}.b"), &mut layer.b)])
            .collect()
    }
}

/// `[u; v; |u-v|; u⊙v]`.
pub fn pair_features(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::Input(format!(
            "pair_features needs equal widths, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let mut out = Vec::with_capacity(4 * u.len());
    out.extend_from_slice(u);
    out.extend_from_slice(v);
    out.extend(u.iter().zip(v).map(|(a, b)| (a - b).abs()));
    out.extend(u.iter().zip(v).map(|(a, b)| a * b));
    Ok(out)
}

/// Row-wise [`pair_features`] of two aligned matrices.
pub fn pair_features_batch(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    if u.shape() != v.shape() {
        return Err(Error::Dimension {
            op: "pair_features",
            left: u.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    let mut data = Vec::with_capacity(u.len() * 4);
    for i in 0..u.rows() {
        data.extend(pair_features(u.row(i), v.row(i))?);
    }
    Tensor::new(vec![u.rows(), 4 * u.cols()], data)
}

/// Splits a feature gradient back onto `u` and `v`.
pub(crate) fn pair_features_backward(u: &Tensor, v: &Tensor, dfeat: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let d = u.cols();
    let mut du = vec![0.0; u.len()];
    let mut dv = vec![0.0; v.len()];
    for i in 0..u.rows() {
        let g = dfeat.row(i);
        let (ur, vr) = (u.row(i), v.row(i));
        for k in 0..d {
            let s = (ur[k] - vr[k]).signum() * ((ur[k] != vr[k]) as u8 as f64);
            du[i * d + k] = g[k] + s * g[2 * d + k] + vr[k] * g[3 * d + k];
            dv[i * d + k] = g[d + k] - s * g[2 * d + k] + ur[k] * g[3 * d + k];
        }
    }
    (du, dv)
}

pub(crate) struct MlpTrace {
    /// Input to each layer after dropout.
    inputs: Vec<Vec<f64>>,
    /// Dropout scale per input element (0 or 1/(1-rate)); empty when unused.
    masks: Vec<Vec<f64>>,
    /// Post-activation output of each hidden layer.
    hidden: Vec<Vec<f64>>,
    pub(crate) logits: Tensor,
}

pub(crate) fn mlp_forward_trace(features: &Tensor, params: &MlpParams, train: bool, rng: &mut Rng) -> Result<MlpTrace> {
    if features.cols() != params.input_dim() {
        return Err(Error::Dimension {
            op: "mlp_forward",
            left: features.shape().to_vec(),
            right: params.layers[0].w.shape().to_vec(),
        });
    }
    let n = features.rows();
    let mut x = features.data().to_vec();
    let mut inputs = Vec::new();
    let mut masks = Vec::new();
    let mut hidden = Vec::new();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let rate = params.dropout[l];
        if train && rate > 0.0 {
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
                .collect();
            x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            masks.push(mask);
        } else {
            masks.push(Vec::new());
        }
        let (k, m) = (layer.w.rows(), layer.w.cols());
        let mut out = vec![0.0; n * m];
        affine_into(&x, layer.w.data(), layer.b.data(), &mut out, n, k, m);
        inputs.push(x);
        if l < last {
            out.iter_mut().for_each(|v| *v = v.tanh());
            hidden.push(out.clone());
        }
        x = out;
    }
    let classes = params.num_classes();
    Ok(MlpTrace {
        inputs,
        masks,
        hidden,
        logits: Tensor::new(vec![n, classes], x)?,
    })
}

/// Backward through the MLP; returns the gradient with respect to its input.
pub(crate) fn mlp_backward(params: &MlpParams, trace: &MlpTrace, dlogits: &Tensor, grads: &mut MlpParams) -> Tensor {
    let n = dlogits.rows();
    let mut dout = dlogits.data().to_vec();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let (k, m) = (layer.w.rows(), layer.w.cols());
        if l < params.layers.len() - 1 {
            for (d, h) in dout.iter_mut().zip(&trace.hidden[l]) {
                *d *= 1.0 - h * h;
            }
        }
        gemm_tn_acc(&trace.inputs[l], &dout, grads.layers[l].w.data_mut(), n, k, m);
        col_sum_acc(&dout, grads.layers[l].b.data_mut(), n, m);
        let mut din = vec![0.0; n * k];
        gemm_acc(&dout, layer.w.transpose().data(), &mut din, n, m, k);
        if !trace.masks[l].is_empty() {
            din.iter_mut().zip(&trace.masks[l]).for_each(|(d, s)| *d *= s);
        }
        dout = din;
    }
    Tensor::new(vec![n, params.input_dim()], dout).expect("consistent shapes")
}

/// Logits of the MLP. Training mode applies inverted dropout drawn from `rng`.
pub fn mlp_forward(features: &Tensor, params: &MlpParams, train: bool, rng: &mut Rng) -> Result<Tensor> {
    mlp_forward_trace(features, params, train, rng).map(|t| t.logits)
}

fn check_pair_batch(premise: &SentenceBatch, hypothesis: &SentenceBatch, labels: &[usize], classes: usize) -> Result<()> {
    if premise.n() != hypothesis.n() || premise.n() != labels.len() {
        return Err(Error::Input(format!(
            "pair batch rows disagree: {} premises, {} hypotheses, {} labels",
            premise.n(),
            hypothesis.n(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside {classes} classes")));
    }
    Ok(())
}

/// Stacks premises over hypotheses into one batch so both sides share a pass.
fn stack_pair(premise: &SentenceBatch, hypothesis: &SentenceBatch) -> Result<SentenceBatch> {
    let mut rows = premise.rows();
    rows.extend(hypothesis.rows());
    SentenceBatch::from_rows(&rows)
}

fn split_rows(t: &Tensor, n: usize) -> (Tensor, Tensor) {
    let top: Vec<usize> = (0..n).collect();
    let bottom: Vec<usize> = (n..2 * n).collect();
    (t.select_rows(&top), t.select_rows(&bottom))
}

/// Mean cross-entropy of the head over encoded premise/hypothesis pairs.
pub fn nli_loss(
    premise: &SentenceBatch,
    hypothesis: &SentenceBatch,
    labels: &[usize],
    encoder: &BiEncoderParams,
    head: &MlpParams,
    train: bool,
    rng: &mut Rng,
) -> Result<f64> {
    check_pair_batch(premise, hypothesis, labels, head.num_classes())?;
    let both = stack_pair(premise, hypothesis)?;
    let h = encoder_forward(encoder, &both)?.h_x();
    let (u, v) = split_rows(&h, premise.n());
    let feats = pair_features_batch(&u, &v)?;
    let trace = mlp_forward_trace(&feats, head, train, rng)?;
    let mask = vec![true; labels.len()];
    cross_entropy_grad(&trace.logits, labels, &mask).map(|(l, _)| l)
}

/// [`nli_loss`] plus gradients accumulated into `enc_grads` and `head_grads`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn nli_loss_grad(
    premise: &SentenceBatch,
    hypothesis: &SentenceBatch,
    labels: &[usize],
    encoder: &BiEncoderParams,
    head: &MlpParams,
    train: bool,
    rng: &mut Rng,
    enc_grads: &mut BiEncoderParams,
    head_grads: &mut MlpParams,
) -> Result<f64> {
    check_pair_batch(premise, hypothesis, labels, head.num_classes())?;
    let n = premise.n();
    let both = stack_pair(premise, hypothesis)?;
    let enc_trace = encoder_forward(encoder, &both)?;
    let h = enc_trace.h_x();
    let (u, v) = split_rows(&h, n);
    let feats = pair_features_batch(&u, &v)?;
    let trace = mlp_forward_trace(&feats, head, train, rng)?;
    let mask = vec![true; n];
    let (loss, dlogits) = cross_entropy_grad(&trace.logits, labels, &mask).map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFinite {
            op: "nli cross_entropy".into(),
        },
        other => other,
    })?;
    let dfeat = mlp_backward(head, &trace, &dlogits, head_grads);
    let (du, dv) = pair_features_backward(&u, &v, &dfeat);
    let mut dh = du;
    dh.extend(dv);
    encoder_backward(encoder, &enc_trace, &dh, enc_grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_map_examples() {
        let f = pair_features(&[1.0, -2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(f, vec![1.0, -2.0, 3.0, 4.0, 2.0, 6.0, 3.0, -8.0]);
        let u = [0.5, -1.5, 2.0];
        let f = pair_features(&u, &u).unwrap();
        assert_eq!(&f[6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(&f[9..], &[0.25, 2.25, 4.0]);
        assert_eq!(f.len(), 12);
        assert!(pair_features(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn swap_symmetry() {
        let u = [0.3, -0.9, 1.7];
        let v = [-0.2, 0.4, 1.1];
        let a = pair_features(&u, &v).unwrap();
        let b = pair_features(&v, &u).unwrap();
        assert_eq!(&a[..3], &b[3..6]);
        assert_eq!(&a[3..6], &b[..3]);
        assert_eq!(&a[6..], &b[6..]);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = Rng::new(1);
        let feats = Tensor::uniform(&[3, 8], 1.0, &mut rng);
        let p0 = MlpParams::new(&[8, 5, 3], vec![0.0, 0.0], &mut rng).unwrap();
        let a = mlp_forward(&feats, &p0, true, &mut Rng::new(2)).unwrap();
        let b = mlp_forward(&feats, &p0, false, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        let p = MlpParams::new(&[8, 5, 3], vec![0.3, 0.0], &mut rng).unwrap();
        let e1 = mlp_forward(&feats, &p, false, &mut Rng::new(4)).unwrap();
        let e2 = mlp_forward(&feats, &p, false, &mut Rng::new(5)).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn single_layer_hand_logits() {
        let mut p = MlpParams::new(&[2, 2], vec![0.0], &mut Rng::new(0)).unwrap();
        p.layers[0].w = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        p.layers[0].b = Tensor::from_vec(vec![0.25, 0.0]).unwrap();
        let x = Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap();
        let out = mlp_forward(&x, &p, false, &mut Rng::new(0)).unwrap();
        assert_eq!(out.data(), &[4.25, 6.0]);
    }

    #[test]
    fn dropout_is_unbiased_in_expectation() {
        let mut rng = Rng::new(7);
        let mut p = MlpParams::new(&[6, 3], vec![0.3], &mut rng).unwrap();
        p.layers[0].b = Tensor::from_vec(vec![0.1, -0.2, 0.3]).unwrap();
        let x = Tensor::from_rows(&[vec![0.9, -0.4, 1.2, 0.7, -1.1, 0.5]]).unwrap();
        let eval = mlp_forward(&x, &p, false, &mut rng).unwrap();
        let mut mean = [0.0; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let out = mlp_forward(&x, &p, true, &mut rng).unwrap();
            for (m, v) in mean.iter_mut().zip(out.data()) {
                *m += v / draws as f64;
            }
        }
        for (m, e) in mean.iter().zip(eval.data()) {
            assert!((m - e).abs() / e.abs() < 0.02, "{m} vs {e}");
        }
    }

    #[test]
    fn zero_head_gives_ln3() {
        let mut rng = Rng::new(3);
        let enc = BiEncoderParams::new(10, 4, 3, 1, &mut rng);
        let mut head = MlpParams::new(&[24, 5, 3], vec![0.3, 0.0], &mut rng).unwrap();
        head.fill(0.0);
        let p = SentenceBatch::from_rows(&[vec![4, 5, 6], vec![7, 8]]).unwrap();
        let h = SentenceBatch::from_rows(&[vec![5, 6], vec![9]]).unwrap();
        let l = nli_loss(&p, &h, &[0, 2], &enc, &head, true, &mut rng).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-14);
    }
}
