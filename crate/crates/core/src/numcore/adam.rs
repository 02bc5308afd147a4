use serde::{Deserialize, Serialize};

use crate::numcore::params::ParamSet;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub t: u64,
}

impl<P: ParamSet> AdamState<P> {
    pub fn new(params: &P) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamState<P>, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut ps = params.tensors_mut();
    let gs = grads.tensors();
    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    for i in 0..ps.len() {
        let p = ps[i].1.data_mut();
        let g = gs[i].1.data();
        let m = ms[i].1.data_mut();
        let v = vs[i].1.data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p[j] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::tensor::Tensor;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::from_vec(vec![1.0, -2.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &before.zeros_like(), &mut st, &AdamConfig::default());
        }
        assert_eq!(p, before);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = Tensor::from_vec(vec![0.3, -0.7, 1e-3]).unwrap();
        let before = p.clone();
        let g = Tensor::from_vec(vec![5.0, -1.0, 2.0]).unwrap();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.0, ..Default::default() };
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut st, &cfg);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::from_vec(vec![0.0, 0.0, 0.0]).unwrap();
        let g = Tensor::from_vec(vec![3.0, -0.01, 250.0]).unwrap();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { eps: 0.0, ..Default::default() };
        adam_step(&mut p, &g, &mut st, &cfg);
        // mhat = g, vhat = g² on the first step
        for (&pv, &gv) in p.data().iter().zip(g.data()) {
            assert!((pv + 0.002 * gv.signum()).abs() < 1e-15);
        }
    }

    #[test]
    fn three_step_scalar_trajectory() {
        // hand-executed: lr=0.1, b1=0.5, b2=0.75, eps=0, grads 1, -2, 0.5 at x0=1
        // t1: m=.5 v=.25 mh=1 vh=1 x=0.9
        // t2: m=-.75 v=1.1875 mh=-1 vh=2.714285714.. x=0.9+0.1/1.647508942..=0.96069770..
        // t3: m=-.125 v=.953125 mh=-1/7 vh=.953125/.578125=1.648648.. x+=0.1*(1/7)/1.28400...
        let cfg = AdamConfig { lr: 0.1, beta1: 0.5, beta2: 0.75, eps: 0.0 };
        let mut x = Tensor::from_vec(vec![1.0]).unwrap();
        let mut st = AdamState::new(&x);
        let mut xs = vec![];
        for g in [1.0, -2.0, 0.5] {
            adam_step(&mut x, &Tensor::from_vec(vec![g]).unwrap(), &mut st, &cfg);
            xs.push(x.data()[0]);
        }
        let x1 = 0.9;
        let x2 = x1 + 0.1 / (1.1875f64 / 0.4375).sqrt();
        let x3 = x2 + 0.1 * (0.125 / 0.875) / (0.953125f64 / 0.578125).sqrt();
        assert!((xs[0] - x1).abs() < 1e-15);
        assert!((xs[1] - x2).abs() < 1e-15);
        assert!((xs[2] - x3).abs() < 1e-15);
        assert!((x2 - 0.960_697_697_866_688_5).abs() < 1e-12);
    }
}
