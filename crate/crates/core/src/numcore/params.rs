use crate::error::Result;
use crate::numcore::tensor::Tensor;

/// A collection of named trainable tensors with a fixed traversal order.
///
/// Gradients, Adam moments and finite-difference estimates are all values of
/// the same type as the parameters they describe.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sq_norm()).sum()
    }

    fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(alpha);
        }
    }
}

impl ParamSet for Tensor {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("value".to_string(), self)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("value".to_string(), self)]
    }
}

/// Prefixes every name of a nested parameter listing.
pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Tensor)>,
) -> Vec<(String, &'a mut Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

/// A scalar loss over a parameter set with an analytic gradient.
pub trait Objective<P: ParamSet> {
    fn loss(&self, params: &P) -> Result<f64>;
    fn loss_and_grad(&self, params: &P) -> Result<(f64, P)>;
}

/// Analytic gradient of `objective` at `params`.
pub fn grad<P: ParamSet, O: Objective<P> + ?Sized>(objective: &O, params: &P) -> Result<P> {
    objective.loss_and_grad(params).map(|(_, g)| g)
}

/// Central-difference gradient estimate, one coordinate at a time.
pub fn finite_diff_grad<P: ParamSet, O: Objective<P> + ?Sized>(
    objective: &O,
    params: &P,
    eps: f64,
) -> Result<P> {
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = params.clone();
    let mut out = params.zeros_like();
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = probe.tensors()[ti].1.data()[j];
            set_coord(&mut probe, ti, j, orig + eps);
            let up = objective.loss(&probe)?;
            set_coord(&mut probe, ti, j, orig - eps);
            let down = objective.loss(&probe)?;
            set_coord(&mut probe, ti, j, orig);
            out.tensors_mut()[ti].1.data_mut()[j] = (up - down) / (2.0 * eps);
        }
    }
    Ok(out)
}

fn set_coord<P: ParamSet>(p: &mut P, tensor: usize, idx: usize, value: f64) {
    p.tensors_mut()[tensor].1.data_mut()[idx] = value;
}

/// Per-tensor maximum of `|a - f| / max(1, |a|, |f|)`.
pub fn max_relative_errors<P: ParamSet>(analytic: &P, numeric: &P) -> Vec<(String, f64)> {
    analytic
        .tensors()
        .into_iter()
        .zip(numeric.tensors())
        .map(|((name, a), (_, f))| {
            let err = a
                .data()
                .iter()
                .zip(f.data())
                .map(|(&x, &y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
                .fold(0.0, f64::max);
            (name, err)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square;
    impl Objective<Tensor> for Square {
        fn loss(&self, p: &Tensor) -> Result<f64> {
            Ok(p.data().iter().map(|v| v * v).sum())
        }
        fn loss_and_grad(&self, p: &Tensor) -> Result<(f64, Tensor)> {
            let mut g = p.clone();
            g.scale(2.0);
            Ok((self.loss(p)?, g))
        }
    }

    struct SumAll;
    impl Objective<Tensor> for SumAll {
        fn loss(&self, p: &Tensor) -> Result<f64> {
            Ok(p.sum())
        }
        fn loss_and_grad(&self, p: &Tensor) -> Result<(f64, Tensor)> {
            Ok((p.sum(), Tensor::full(p.shape(), 1.0)))
        }
    }

    struct Constant;
    impl Objective<Tensor> for Constant {
        fn loss(&self, _: &Tensor) -> Result<f64> {
            Ok(4.2)
        }
        fn loss_and_grad(&self, p: &Tensor) -> Result<(f64, Tensor)> {
            Ok((4.2, p.zeros_like()))
        }
    }

    #[test]
    fn finite_difference_of_square() {
        let x = Tensor::from_vec(vec![3.0]).unwrap();
        let g = finite_diff_grad(&Square, &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_and_linear_losses() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5]).unwrap();
        assert!(finite_diff_grad(&Constant, &x, 1e-5)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(grad(&Constant, &x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grad(&SumAll, &x).unwrap().data().iter().all(|&v| v == 1.0));
        let fd = finite_diff_grad(&SumAll, &x, 1e-5).unwrap();
        assert!(max_relative_errors(&grad(&SumAll, &x).unwrap(), &fd)[0].1 < 1e-9);
    }
}
