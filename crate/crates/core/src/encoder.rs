//! Shared bidirectional GRU sentence encoder.
//!
//! The encoder runs a forward cell left to right from a zero state and a
//! backward cell right to left over the unpadded span of each row. The
//! sentence representation `h_x` is the final forward state concatenated
//! with the backward state at position 0. Stacked layers feed the per-step
//! concatenation of both directions to the next layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gru::{self, StepCache};
use crate::numcore::ops::affine_into;
use crate::numcore::params::{prefixed, prefixed_mut, ParamSet};
use crate::numcore::tensor::{col_sum_acc, gemm_acc, gemm_tn_acc, Tensor};
use crate::numcore::{affine, Rng};

pub use crate::gru::GruCellParams;

/// Padded matrix of token ids with per-row lengths. Pad id is 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceBatch {
    ids: Vec<u32>,
    n: usize,
    width: usize,
    lengths: Vec<usize>,
}

impl SentenceBatch {
    /// Pads `rows` to the longest row.
    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let width = rows.iter().map(Vec::len).max().unwrap_or(0);
        Self::with_width(rows, width)
    }

    /// Pads `rows` to an explicit width (at least the longest row).
    pub fn with_width(rows: &[Vec<u32>], width: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("batch has no rows".into()));
        }
        if let Some(i) = rows.iter().position(Vec::is_empty) {
            return Err(Error::Input(format!("row {i} is an empty sentence")));
        }
        if rows.iter().any(|r| r.len() > width) {
            return Err(Error::Input(format!("width {width} shorter than a row")));
        }
        if let Some(i) = rows.iter().position(|r| r.contains(&0)) {
            return Err(Error::Input(format!("row {i} contains the pad id")));
        }
        let mut ids = vec![0u32; rows.len() * width];
        for (i, r) in rows.iter().enumerate() {
            ids[i * width..i * width + r.len()].copy_from_slice(r);
        }
        Ok(SentenceBatch {
            ids,
            n: rows.len(),
            width,
            lengths: rows.iter().map(Vec::len).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn id(&self, row: usize, pos: usize) -> u32 {
        self.ids[row * self.width + pos]
    }

    /// Unpadded tokens of one row.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.width..i * self.width + self.lengths[i]]
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Same rows padded to a wider matrix.
    pub fn padded_to(&self, width: usize) -> Result<Self> {
        Self::with_width(&self.rows(), width)
    }

    pub fn max_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    pub(crate) fn check_vocab(&self, vocab_size: usize, what: &str) -> Result<()> {
        if self.max_id() as usize >= vocab_size {
            return Err(Error::Input(format!(
                "{what} id {} outside vocabulary of {vocab_size}",
                self.max_id()
            )));
        }
        Ok(())
    }
}

/// One bidirectional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLayerParams {
    pub fwd: GruCellParams,
    pub bwd: GruCellParams,
}

/// Encoder word embeddings plus one or more bidirectional GRU layers.
#[derive(Clone, Debug, PartialEq)]
pub struct BiEncoderParams {
    pub embedding: Tensor,
    pub layers: Vec<BiLayerParams>,
}

impl BiEncoderParams {
    pub fn new(vocab: usize, emb_dim: usize, hidden: usize, layers: usize, rng: &mut Rng) -> Self {
        assert!(layers >= 1, "encoder needs at least one layer");
        let embedding = gru::init_matrix(vocab, emb_dim, rng);
        let layers = (0..layers)
            .map(|l| {
                let input = if l == 0 { emb_dim } else { 2 * hidden };
                BiLayerParams {
                    fwd: GruCellParams::new(input, hidden, rng),
                    bwd: GruCellParams::new(input, hidden, rng),
                }
            })
            .collect();
        BiEncoderParams { embedding, layers }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn emb_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].fwd.hidden_size()
    }

    /// Width of `h_x`.
    pub fn repr_dim(&self) -> usize {
        2 * self.hidden_size()
    }
}

impl ParamSet for BiEncoderParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(prefixed(&format!("l{l}.fwd"), layer.fwd.tensors()));
            out.extend(prefixed(&format!("l{l}.bwd"), layer.bwd.tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("l{l}.fwd"), layer.fwd.tensors_mut()));
            out.extend(prefixed_mut(&format!("l{l}.bwd"), layer.bwd.tensors_mut()));
        }
        out
    }
}

/// One plain GRU step: `h = (1-z)⊙h_prev + z⊙tanh(W_d x + U_d(r⊙h_prev) + b_d)`.
pub fn gru_cell_step(x: &Tensor, h_prev: &Tensor, cell: &GruCellParams) -> Result<Tensor> {
    let n = x.rows();
    let hs = cell.hidden_size();
    if h_prev.rows() != n || h_prev.cols() != hs {
        return Err(Error::Dimension {
            op: "gru_cell_step",
            left: x.shape().to_vec(),
            right: h_prev.shape().to_vec(),
        });
    }
    let pre_r = affine(x, &cell.w_r, &cell.b_r)?;
    let pre_z = affine(x, &cell.w_z, &cell.b_z)?;
    let pre_d = affine(x, &cell.w_d, &cell.b_d)?;
    let (h, _) = gru::step_forward(
        cell,
        pre_r.data(),
        pre_z.data(),
        pre_d.data(),
        h_prev.data(),
        n,
    );
    Tensor::new(vec![n, hs], h)
}

/// Per-timestep states of both directions and the sentence representation.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    /// `n×T×H`, zero at padded positions.
    pub fwd: Tensor,
    /// `n×T×H`, zero at padded positions.
    pub bwd: Tensor,
    /// `n×2H`.
    pub h_x: Tensor,
}

impl EncodedBatch {
    /// Per-step concatenation `[fwd ‖ bwd]`, shape `n×T×2H`.
    pub fn concat_states(&self) -> Tensor {
        let (n, t, h) = (self.fwd.shape()[0], self.fwd.shape()[1], self.fwd.shape()[2]);
        let mut data = Vec::with_capacity(n * t * 2 * h);
        for k in 0..n * t {
            data.extend_from_slice(&self.fwd.data()[k * h..(k + 1) * h]);
            data.extend_from_slice(&self.bwd.data()[k * h..(k + 1) * h]);
        }
        Tensor::new(vec![n, t, 2 * h], data).expect("consistent shapes")
    }
}

/// Runs the encoder over a padded batch.
pub fn encode_batch(batch: &SentenceBatch, params: &BiEncoderParams) -> Result<EncodedBatch> {
    let trace = encoder_forward(params, batch)?;
    Ok(trace.to_encoded())
}

#[derive(Clone, Debug)]
struct DirTrace {
    /// Time-major `T·n × H`.
    states: Vec<f64>,
    caches: Vec<StepCache>,
}

#[derive(Clone, Debug)]
struct LayerTrace {
    /// Time-major `T·n × in`.
    input: Vec<f64>,
    in_dim: usize,
    fwd: DirTrace,
    bwd: DirTrace,
}

/// Everything the backward pass needs from one encoder forward pass.
#[derive(Clone, Debug)]
pub(crate) struct EncoderTrace {
    n: usize,
    t: usize,
    hidden: usize,
    lengths: Vec<usize>,
    ids_tm: Vec<u32>,
    layers: Vec<LayerTrace>,
}

fn run_direction(
    cell: &GruCellParams,
    input: &[f64],
    in_dim: usize,
    n: usize,
    t_len: usize,
    lengths: &[usize],
    reverse: bool,
) -> DirTrace {
    let hs = cell.hidden_size();
    let rows = n * t_len;
    let pre: Vec<Vec<f64>> = cell
        .input_weights()
        .iter()
        .zip(cell.biases())
        .map(|(w, b)| {
            let mut out = vec![0.0; rows * hs];
            affine_into(input, w.data(), b.data(), &mut out, rows, in_dim, hs);
            out
        })
        .collect();
    let mut states = vec![0.0; rows * hs];
    let mut caches: Vec<Option<StepCache>> = vec![None; t_len];
    let mut h = vec![0.0; n * hs];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let span = t * n * hs..(t + 1) * n * hs;
        let (mut h_new, cache) = gru::step_forward(
            cell,
            &pre[0][span.clone()],
            &pre[1][span.clone()],
            &pre[2][span.clone()],
            &h,
            n,
        );
        for (i, &len) in lengths.iter().enumerate() {
            if t >= len {
                h_new[i * hs..(i + 1) * hs].fill(0.0);
            }
        }
        states[span].copy_from_slice(&h_new);
        caches[t] = Some(cache);
        h = h_new;
    }
    DirTrace {
        states,
        caches: caches.into_iter().map(|c| c.expect("every step ran")).collect(),
    }
}

pub(crate) fn encoder_forward(params: &BiEncoderParams, batch: &SentenceBatch) -> Result<EncoderTrace> {
    batch.check_vocab(params.vocab_size(), "encoder token")?;
    let (n, t_len) = (batch.n(), batch.width());
    let emb = params.emb_dim();
    let hs = params.hidden_size();
    let mut ids_tm = vec![0u32; n * t_len];
    let mut input = vec![0.0; n * t_len * emb];
    for t in 0..t_len {
        for i in 0..n {
            let id = batch.id(i, t);
            ids_tm[t * n + i] = id;
            input[(t * n + i) * emb..(t * n + i + 1) * emb]
                .copy_from_slice(params.embedding.row(id as usize));
        }
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut in_dim = emb;
    for layer in &params.layers {
        let fwd = run_direction(&layer.fwd, &input, in_dim, n, t_len, batch.lengths(), false);
        let bwd = run_direction(&layer.bwd, &input, in_dim, n, t_len, batch.lengths(), true);
        let mut next = Vec::with_capacity(n * t_len * 2 * hs);
        for k in 0..n * t_len {
            next.extend_from_slice(&fwd.states[k * hs..(k + 1) * hs]);
            next.extend_from_slice(&bwd.states[k * hs..(k + 1) * hs]);
        }
        layers.push(LayerTrace {
            input: std::mem::replace(&mut input, next),
            in_dim,
            fwd,
            bwd,
        });
        in_dim = 2 * hs;
    }
    Ok(EncoderTrace {
        n,
        t: t_len,
        hidden: hs,
        lengths: batch.lengths().to_vec(),
        ids_tm,
        layers,
    })
}

impl EncoderTrace {
    pub(crate) fn h_x(&self) -> Tensor {
        let (n, hs) = (self.n, self.hidden);
        let top = self.layers.last().expect("at least one layer");
        let mut data = Vec::with_capacity(n * 2 * hs);
        for i in 0..n {
            let last = (self.lengths[i] - 1) * n + i;
            data.extend_from_slice(&top.fwd.states[last * hs..(last + 1) * hs]);
            data.extend_from_slice(&top.bwd.states[i * hs..(i + 1) * hs]);
        }
        Tensor::new(vec![n, 2 * hs], data).expect("consistent shapes")
    }

    fn batch_major(&self, tm: &[f64]) -> Tensor {
        let (n, t_len, hs) = (self.n, self.t, self.hidden);
        let mut data = vec![0.0; n * t_len * hs];
        for t in 0..t_len {
            for i in 0..n {
                data[(i * t_len + t) * hs..(i * t_len + t + 1) * hs]
                    .copy_from_slice(&tm[(t * n + i) * hs..(t * n + i + 1) * hs]);
            }
        }
        Tensor::new(vec![n, t_len, hs], data).expect("consistent shapes")
    }

    pub(crate) fn to_encoded(&self) -> EncodedBatch {
        let top = self.layers.last().expect("at least one layer");
        EncodedBatch {
            fwd: self.batch_major(&top.fwd.states),
            bwd: self.batch_major(&top.bwd.states),
            h_x: self.h_x(),
        }
    }
}

fn backward_direction(
    cell: &GruCellParams,
    grads: &mut GruCellParams,
    trace: &DirTrace,
    dstates: &[f64],
    layer_input: &[f64],
    in_dim: usize,
    d_input: &mut [f64],
    n: usize,
    t_len: usize,
    lengths: &[usize],
    reverse: bool,
) {
    let hs = cell.hidden_size();
    let rows = n * t_len;
    let u_t = cell.recurrent_transposed();
    let mut da = [vec![0.0; rows * hs], vec![0.0; rows * hs], vec![0.0; rows * hs]];
    let mut carry = vec![0.0; n * hs];
    // backward visits steps in the reverse of the forward order
    let order: Vec<usize> = if reverse {
        (0..t_len).collect()
    } else {
        (0..t_len).rev().collect()
    };
    for t in order {
        let span = t * n * hs..(t + 1) * n * hs;
        let mut dh: Vec<f64> = dstates[span.clone()]
            .iter()
            .zip(&carry)
            .map(|(a, b)| a + b)
            .collect();
        for (i, &len) in lengths.iter().enumerate() {
            if t >= len {
                dh[i * hs..(i + 1) * hs].fill(0.0);
            }
        }
        let g = gru::step_backward(cell, &u_t, &trace.caches[t], &dh, grads, n);
        da[0][span.clone()].copy_from_slice(&g.da_r);
        da[1][span.clone()].copy_from_slice(&g.da_z);
        da[2][span].copy_from_slice(&g.da_d);
        carry = g.dh_prev;
    }
    let input_grads = [&mut grads.w_r, &mut grads.w_z, &mut grads.w_d];
    for (gw, dag) in input_grads.into_iter().zip(&da) {
        gemm_tn_acc(layer_input, dag, gw.data_mut(), rows, in_dim, hs);
    }
    let bias_grads = [&mut grads.b_r, &mut grads.b_z, &mut grads.b_d];
    for (gb, dag) in bias_grads.into_iter().zip(&da) {
        col_sum_acc(dag, gb.data_mut(), rows, hs);
    }
    for (w, dag) in cell.input_weights().iter().zip(&da) {
        gemm_acc(dag, w.transpose().data(), d_input, rows, hs, in_dim);
    }
}

/// Backpropagates `dh_x` (`n×2H`) through the encoder into `grads`.
pub(crate) fn encoder_backward(
    params: &BiEncoderParams,
    trace: &EncoderTrace,
    dh_x: &[f64],
    grads: &mut BiEncoderParams,
) {
    let (n, t_len, hs) = (trace.n, trace.t, trace.hidden);
    let rows = n * t_len;
    let mut d_fwd = vec![0.0; rows * hs];
    let mut d_bwd = vec![0.0; rows * hs];
    for i in 0..n {
        let last = (trace.lengths[i] - 1) * n + i;
        for k in 0..hs {
            d_fwd[last * hs + k] += dh_x[i * 2 * hs + k];
            d_bwd[i * hs + k] += dh_x[i * 2 * hs + hs + k];
        }
    }
    for l in (0..params.layers.len()).rev() {
        let lt = &trace.layers[l];
        let lp = &params.layers[l];
        let mut d_input = vec![0.0; rows * lt.in_dim];
        let lg = &mut grads.layers[l];
        backward_direction(
            &lp.fwd, &mut lg.fwd, &lt.fwd, &d_fwd, &lt.input, lt.in_dim, &mut d_input, n, t_len,
            &trace.lengths, false,
        );
        backward_direction(
            &lp.bwd, &mut lg.bwd, &lt.bwd, &d_bwd, &lt.input, lt.in_dim, &mut d_input, n, t_len,
            &trace.lengths, true,
        );
        if l == 0 {
            let emb = lt.in_dim;
            for (k, &id) in trace.ids_tm.iter().enumerate() {
                let dst = grads.embedding.row_mut(id as usize);
                for (g, &v) in dst.iter_mut().zip(&d_input[k * emb..(k + 1) * emb]) {
                    *g += v;
                }
            }
        } else {
            d_fwd = vec![0.0; rows * hs];
            d_bwd = vec![0.0; rows * hs];
            for k in 0..rows {
                d_fwd[k * hs..(k + 1) * hs].copy_from_slice(&d_input[k * 2 * hs..k * 2 * hs + hs]);
                d_bwd[k * hs..(k + 1) * hs]
                    .copy_from_slice(&d_input[k * 2 * hs + hs..(k + 1) * 2 * hs]);
            }
        }
    }
}

/// How per-step states are reduced to one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingStrategy {
    Last,
    Max,
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingStrategy::Last => "last",
            PoolingStrategy::Max => "max",
        })
    }
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(PoolingStrategy::Last),
            "max" => Ok(PoolingStrategy::Max),
            other => Err(Error::Config(format!("unknown pooling strategy '{other}'"))),
        }
    }
}

/// Layout of the state tensor handed to [`pool`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateLayout {
    /// A single direction; `last` is the state at the final unpadded step.
    Sequential,
    /// `[fwd ‖ bwd]` halves; `last` is the final forward state joined with the
    /// backward state at position 0, i.e. `h_x`.
    Bidirectional,
}

/// Reduces `n×T×D` states over the unpadded positions of each row.
pub fn pool(
    states: &Tensor,
    lengths: &[usize],
    strategy: PoolingStrategy,
    layout: StateLayout,
) -> Result<Tensor> {
    if states.shape().len() != 3 || states.shape()[0] != lengths.len() {
        return Err(Error::Dimension {
            op: "pool",
            left: states.shape().to_vec(),
            right: vec![lengths.len()],
        });
    }
    let (n, t_len, dim) = (states.shape()[0], states.shape()[1], states.shape()[2]);
    if lengths.iter().any(|&l| l == 0 || l > t_len) {
        return Err(Error::Input("pool lengths must lie in 1..=T".into()));
    }
    if layout == StateLayout::Bidirectional && dim % 2 != 0 {
        return Err(Error::Input("bidirectional states need an even width".into()));
    }
    let at = |i: usize, t: usize| &states.data()[(i * t_len + t) * dim..(i * t_len + t + 1) * dim];
    let mut out = Vec::with_capacity(n * dim);
    for (i, &len) in lengths.iter().enumerate() {
        match strategy {
            PoolingStrategy::Last => match layout {
                StateLayout::Sequential => out.extend_from_slice(at(i, len - 1)),
                StateLayout::Bidirectional => {
                    let half = dim / 2;
                    out.extend_from_slice(&at(i, len - 1)[..half]);
                    out.extend_from_slice(&at(i, 0)[half..]);
                }
            },
            PoolingStrategy::Max => {
                let mut best = at(i, 0).to_vec();
                for t in 1..len {
                    for (b, &v) in best.iter_mut().zip(at(i, t)) {
                        if v > *b {
                            *b = v;
                        }
                    }
                }
                out.extend(best);
            }
        }
    }
    Tensor::new(vec![n, dim], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_gru(x: &[f64], h: &[f64], c: &GruCellParams) -> Vec<f64> {
        let hs = c.hidden_size();
        let lin = |w: &Tensor, u: &Tensor, b: &Tensor, hin: &[f64], j: usize| {
            let mut s = b.data()[j];
            for (k, xv) in x.iter().enumerate() {
                s += xv * w.get2(k, j);
            }
            for (k, hv) in hin.iter().enumerate() {
                s += hv * u.get2(k, j);
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let r: Vec<f64> = (0..hs).map(|j| sig(lin(&c.w_r, &c.u_r, &c.b_r, h, j))).collect();
        let z: Vec<f64> = (0..hs).map(|j| sig(lin(&c.w_z, &c.u_z, &c.b_z, h, j))).collect();
        let rh: Vec<f64> = (0..hs).map(|j| r[j] * h[j]).collect();
        (0..hs)
            .map(|j| {
                let d = lin(&c.w_d, &c.u_d, &c.b_d, &rh, j).tanh();
                (1.0 - z[j]) * h[j] + z[j] * d
            })
            .collect()
    }

    #[test]
    fn gru_step_matches_scalar_loop() {
        let mut rng = Rng::new(11);
        let cell = GruCellParams::new(2, 2, &mut rng);
        let mut cell = cell;
        cell.b_r = Tensor::from_vec(vec![0.1, -0.3]).unwrap();
        cell.b_z = Tensor::from_vec(vec![-0.2, 0.4]).unwrap();
        cell.b_d = Tensor::from_vec(vec![0.05, 0.0]).unwrap();
        let x = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let h = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let out = gru_cell_step(&x, &h, &cell).unwrap();
        for i in 0..3 {
            let want = scalar_gru(x.row(i), h.row(i), &cell);
            for j in 0..2 {
                assert!((out.get2(i, j) - want[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn update_gate_extremes() {
        let mut rng = Rng::new(5);
        let mut cell = GruCellParams::new(3, 4, &mut rng);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let h = Tensor::uniform(&[2, 4], 1.0, &mut rng);

        cell.b_z = Tensor::full(&[4], -1e6);
        assert_eq!(gru_cell_step(&x, &h, &cell).unwrap(), h);

        cell.b_z = Tensor::full(&[4], 1e6);
        let out = gru_cell_step(&x, &h, &cell).unwrap();
        // z = 1 gives the candidate state itself
        let pre_r = affine(&x, &cell.w_r, &cell.b_r).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mut a = cell.b_d.data()[j];
                for k in 0..3 {
                    a += x.get2(i, k) * cell.w_d.get2(k, j);
                }
                for k in 0..4 {
                    let mut r = pre_r.get2(i, k);
                    for q in 0..4 {
                        r += h.get2(i, q) * cell.u_r.get2(q, k);
                    }
                    a += crate::numcore::sigmoid(r) * h.get2(i, k) * cell.u_d.get2(k, j);
                }
                assert!((out.get2(i, j) - a.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_sentence_is_rejected() {
        assert!(SentenceBatch::from_rows(&[vec![4, 5], vec![]]).is_err());
    }

    #[test]
    fn length_one_sentence() {
        let mut rng = Rng::new(2);
        let p = BiEncoderParams::new(8, 3, 4, 1, &mut rng);
        let b = SentenceBatch::from_rows(&[vec![5]]).unwrap();
        let enc = encode_batch(&b, &p).unwrap();
        let x = Tensor::new(vec![1, 3], p.embedding.row(5).to_vec()).unwrap();
        let h0 = Tensor::zeros(&[1, 4]);
        let f = gru_cell_step(&x, &h0, &p.layers[0].fwd).unwrap();
        let bw = gru_cell_step(&x, &h0, &p.layers[0].bwd).unwrap();
        assert_eq!(enc.h_x, f.hcat(&bw).unwrap());
    }

    #[test]
    fn palindrome_with_tied_cells() {
        let mut rng = Rng::new(3);
        let mut p = BiEncoderParams::new(10, 3, 5, 1, &mut rng);
        p.layers[0].bwd = p.layers[0].fwd.clone();
        let b = SentenceBatch::from_rows(&[vec![4, 7, 9, 7, 4]]).unwrap();
        let enc = encode_batch(&b, &p).unwrap();
        assert_eq!(&enc.h_x.data()[..5], &enc.h_x.data()[5..]);
    }

    #[test]
    fn solo_equals_batched_and_padding_is_inert() {
        let mut rng = Rng::new(4);
        for layers in [1, 2] {
            let p = BiEncoderParams::new(12, 4, 3, layers, &mut rng);
            let rows = vec![vec![4, 5, 6], vec![7, 8, 9, 10, 11], vec![4]];
            let batch = SentenceBatch::from_rows(&rows).unwrap();
            let all = encode_batch(&batch, &p).unwrap();
            let wide = encode_batch(&batch.padded_to(9).unwrap(), &p).unwrap();
            assert_eq!(all.h_x, wide.h_x);
            for (i, r) in rows.iter().enumerate() {
                let solo = encode_batch(&SentenceBatch::from_rows(std::slice::from_ref(r)).unwrap(), &p).unwrap();
                assert_eq!(solo.h_x.row(0), all.h_x.row(i));
                let len = r.len();
                for t in 0..len {
                    let h = 3;
                    let s = &solo.fwd.data()[t * h..(t + 1) * h];
                    let a = &all.fwd.data()[(i * 5 + t) * h..(i * 5 + t + 1) * h];
                    assert_eq!(s, a);
                    let s = &solo.bwd.data()[t * h..(t + 1) * h];
                    let a = &all.bwd.data()[(i * 5 + t) * h..(i * 5 + t + 1) * h];
                    assert_eq!(s, a);
                }
                for t in len..5 {
                    assert!(all.fwd.data()[(i * 5 + t) * 3..(i * 5 + t + 1) * 3]
                        .iter()
                        .all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn pooling_examples() {
        let s = Tensor::new(vec![1, 2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let max = pool(&s, &[2], PoolingStrategy::Max, StateLayout::Sequential).unwrap();
        let last = pool(&s, &[2], PoolingStrategy::Last, StateLayout::Sequential).unwrap();
        assert_eq!(max.data(), &[3.0, 5.0]);
        assert_eq!(last.data(), &[3.0, 2.0]);

        let one = Tensor::new(vec![1, 1, 2], vec![0.5, -1.0]).unwrap();
        for layout in [StateLayout::Sequential, StateLayout::Bidirectional] {
            assert_eq!(
                pool(&one, &[1], PoolingStrategy::Max, layout).unwrap(),
                pool(&one, &[1], PoolingStrategy::Last, layout).unwrap()
            );
        }
        let constant = Tensor::new(vec![1, 3, 2], vec![0.2, 0.7, 0.2, 0.7, 0.2, 0.7]).unwrap();
        assert_eq!(
            pool(&constant, &[3], PoolingStrategy::Max, StateLayout::Bidirectional).unwrap(),
            pool(&constant, &[3], PoolingStrategy::Last, StateLayout::Bidirectional).unwrap()
        );
        assert!(matches!("mean".parse::<PoolingStrategy>(), Err(Error::Config(_))));
    }

    #[test]
    fn last_pooling_of_bidirectional_states_is_h_x() {
        let mut rng = Rng::new(8);
        let p = BiEncoderParams::new(12, 4, 3, 1, &mut rng);
        let batch = SentenceBatch::from_rows(&[vec![4, 5, 6], vec![7, 8]]).unwrap();
        let enc = encode_batch(&batch, &p).unwrap();
        let last = pool(
            &enc.concat_states(),
            batch.lengths(),
            PoolingStrategy::Last,
            StateLayout::Bidirectional,
        )
        .unwrap();
        assert_eq!(last, enc.h_x);
    }
}
