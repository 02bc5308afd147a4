//! Gated recurrent unit parameters and the recurrent half of the cell.
//!
//! Both the encoder cell and the conditional decoder cell split each gate
//! pre-activation into an input-side part (`x·W + b`, plus `h_x·C` for the
//! decoder) that is computed for all time steps at once, and the recurrent
//! part (`h·U`) handled here step by step.

use crate::numcore::ops::sigmoid;
use crate::numcore::params::ParamSet;
use crate::numcore::tensor::{gemm_acc, gemm_tn_acc, Tensor};
use crate::numcore::Rng;

/// Gate weights of a GRU cell: input matrices `W_*` (in×H), recurrent
/// matrices `U_*` (H×H) and biases `b_*` (H) for the reset (`r`), update
/// (`z`) and candidate (`d`) gates.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub w_r: Tensor,
    pub w_z: Tensor,
    pub w_d: Tensor,
    pub u_r: Tensor,
    pub u_z: Tensor,
    pub u_d: Tensor,
    pub b_r: Tensor,
    pub b_z: Tensor,
    pub b_d: Tensor,
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` with `fan_in` the row count.
pub(crate) fn init_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::uniform(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
}

impl GruCellParams {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        GruCellParams {
            w_r: init_matrix(input, hidden, rng),
            w_z: init_matrix(input, hidden, rng),
            w_d: init_matrix(input, hidden, rng),
            u_r: init_matrix(hidden, hidden, rng),
            u_z: init_matrix(hidden, hidden, rng),
            u_d: init_matrix(hidden, hidden, rng),
            b_r: Tensor::zeros(&[hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_d: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCellParams {
            w_r: Tensor::zeros(&[input, hidden]),
            w_z: Tensor::zeros(&[input, hidden]),
            w_d: Tensor::zeros(&[input, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_d: Tensor::zeros(&[hidden, hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_d: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_r.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.u_r.rows()
    }

    pub(crate) fn input_weights(&self) -> [&Tensor; 3] {
        [&self.w_r, &self.w_z, &self.w_d]
    }

    pub(crate) fn biases(&self) -> [&Tensor; 3] {
        [&self.b_r, &self.b_z, &self.b_d]
    }

    pub(crate) fn recurrent_transposed(&self) -> [Tensor; 3] {
        [
            self.u_r.transpose(),
            self.u_z.transpose(),
            self.u_d.transpose(),
        ]
    }
}

impl ParamSet for GruCellParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_r".into(), &self.w_r),
            ("w_z".into(), &self.w_z),
            ("w_d".into(), &self.w_d),
            ("u_r".into(), &self.u_r),
            ("u_z".into(), &self.u_z),
            ("u_d".into(), &self.u_d),
            ("b_r".into(), &self.b_r),
            ("b_z".into(), &self.b_z),
            ("b_d".into(), &self.b_d),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_r".into(), &mut self.w_r),
            ("w_z".into(), &mut self.w_z),
            ("w_d".into(), &mut self.w_d),
            ("u_r".into(), &mut self.u_r),
            ("u_z".into(), &mut self.u_z),
            ("u_d".into(), &mut self.u_d),
            ("b_r".into(), &mut self.b_r),
            ("b_z".into(), &mut self.b_z),
            ("b_d".into(), &mut self.b_d),
        ]
    }
}

/// Activations of one step, kept for the backward pass. All `n×H`.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    d: Vec<f64>,
    rh: Vec<f64>,
}

/// Recurrent half of a GRU step given the input-side pre-activations.
pub(crate) fn step_forward(
    cell: &GruCellParams,
    pre_r: &[f64],
    pre_z: &[f64],
    pre_d: &[f64],
    h_prev: &[f64],
    n: usize,
) -> (Vec<f64>, StepCache) {
    let hs = cell.hidden_size();
    let mut r = pre_r.to_vec();
    gemm_acc(h_prev, cell.u_r.data(), &mut r, n, hs, hs);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut z = pre_z.to_vec();
    gemm_acc(h_prev, cell.u_z.data(), &mut z, n, hs, hs);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut d = pre_d.to_vec();
    gemm_acc(&rh, cell.u_d.data(), &mut d, n, hs, hs);
    d.iter_mut().for_each(|v| *v = v.tanh());
    let h: Vec<f64> = (0..n * hs)
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * d[k])
        .collect();
    (
        h,
        StepCache {
            h_prev: h_prev.to_vec(),
            r,
            z,
            d,
            rh,
        },
    )
}

/// Gradients leaving one step: towards the previous state and the three
/// gate pre-activations.
pub(crate) struct StepGrads {
    pub dh_prev: Vec<f64>,
    pub da_r: Vec<f64>,
    pub da_z: Vec<f64>,
    pub da_d: Vec<f64>,
}

/// Backward through [`step_forward`]; accumulates into the `U_*` gradients.
pub(crate) fn step_backward(
    cell: &GruCellParams,
    u_t: &[Tensor; 3],
    cache: &StepCache,
    dh: &[f64],
    grads: &mut GruCellParams,
    n: usize,
) -> StepGrads {
    let hs = cell.hidden_size();
    let len = n * hs;
    let mut dh_prev = vec![0.0; len];
    let mut da_z = vec![0.0; len];
    let mut da_d = vec![0.0; len];
    for k in 0..len {
        let z = cache.z[k];
        let d = cache.d[k];
        dh_prev[k] = dh[k] * (1.0 - z);
        da_z[k] = dh[k] * (d - cache.h_prev[k]) * z * (1.0 - z);
        da_d[k] = dh[k] * z * (1.0 - d * d);
    }
    gemm_tn_acc(&cache.rh, &da_d, grads.u_d.data_mut(), n, hs, hs);
    let mut drh = vec![0.0; len];
    gemm_acc(&da_d, u_t[2].data(), &mut drh, n, hs, hs);
    let mut da_r = vec![0.0; len];
    for k in 0..len {
        let r = cache.r[k];
        dh_prev[k] += drh[k] * r;
        da_r[k] = drh[k] * cache.h_prev[k] * r * (1.0 - r);
    }
    gemm_tn_acc(&cache.h_prev, &da_z, grads.u_z.data_mut(), n, hs, hs);
    gemm_acc(&da_z, u_t[1].data(), &mut dh_prev, n, hs, hs);
    gemm_tn_acc(&cache.h_prev, &da_r, grads.u_r.data_mut(), n, hs, hs);
    gemm_acc(&da_r, u_t[0].data(), &mut dh_prev, n, hs, hs);
    StepGrads {
        dh_prev,
        da_r,
        da_z,
        da_d,
    }
}
