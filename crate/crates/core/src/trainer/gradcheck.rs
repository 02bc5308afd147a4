use serde::Serialize;

use crate::corpus::batch::TaskBatch;
use crate::error::Result;
use crate::model::{batch_loss, batch_loss_grad, Head, Model, ModelParams};
use crate::numcore::params::{finite_diff_grad, max_relative_errors, Objective, ParamSet};
use crate::numcore::Rng;

/// Per-tensor outcome of a gradient check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&str> {
        self.tensors.iter().filter(|t| !t.passed).map(|t| t.name.as_str()).collect()
    }

    pub fn max_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// Sum of every batch's training loss. Dropout masks come from a generator
/// reseeded per batch on every evaluation, so they are identical across the
/// analytic pass and all perturbed passes.
struct JointLoss<'a> {
    batches: &'a [(Head, TaskBatch)],
}

const MASK_SEED: u64 = 0x5eed;

impl Objective<ModelParams> for JointLoss<'_> {
    fn loss(&self, p: &ModelParams) -> Result<f64> {
        let mut total = 0.0;
        for (i, (head, batch)) in self.batches.iter().enumerate() {
            total += batch_loss(p, *head, batch, true, &mut Rng::new(MASK_SEED + i as u64))?;
        }
        Ok(total)
    }

    fn loss_and_grad(&self, p: &ModelParams) -> Result<(f64, ModelParams)> {
        let mut grads = p.zeros_like();
        let mut total = 0.0;
        for (i, (head, batch)) in self.batches.iter().enumerate() {
            total += batch_loss_grad(p, *head, batch, true, &mut Rng::new(MASK_SEED + i as u64), &mut grads)?;
        }
        Ok((total, grads))
    }
}

/// Compares analytic gradients of the summed task losses with central
/// differences, tensor by tensor.
pub fn grad_check_model(model: &Model, batches: &[(Head, TaskBatch)], eps: f64, tol: f64) -> Result<GradCheckReport> {
    grad_check_with_fault(model, batches, eps, tol, None)
}

/// As [`grad_check_model`], but first flips the sign of the largest
/// analytic gradient entry of tensor `corrupt`.
pub fn grad_check_with_fault(
    model: &Model,
    batches: &[(Head, TaskBatch)],
    eps: f64,
    tol: f64,
    corrupt: Option<&str>,
) -> Result<GradCheckReport> {
    let obj = JointLoss { batches };
    let (_, mut analytic) = obj.loss_and_grad(&model.params)?;
    if let Some(target) = corrupt {
        for (name, t) in analytic.tensors_mut() {
            if name == target {
                let data = t.data_mut();
                let (k, _) = data
                    .iter()
                    .enumerate()
                    .fold((0, 0.0), |best, (k, v)| if v.abs() > best.1 { (k, v.abs()) } else { best });
                data[k] = -data[k];
            }
        }
    }
    let numeric = finite_diff_grad(&obj, &model.params, eps)?;
    let tensors: Vec<TensorCheck> = max_relative_errors(&analytic, &numeric)
        .into_iter()
        .map(|(name, err)| TensorCheck { passed: err < tol, name, max_rel_error: err })
        .collect();
    let passed = tensors.iter().all(|t| t.passed);
    Ok(GradCheckReport { eps, tol, tensors, passed })
}
