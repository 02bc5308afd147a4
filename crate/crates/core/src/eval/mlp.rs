//! Small MLP classifier trained on frozen features, with early stopping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nli_head::{mlp_backward, mlp_forward, mlp_forward_trace, pair_features_batch, MlpParams};
use crate::numcore::{adam_step, cross_entropy_grad, AdamConfig, AdamState, ParamSet, Rng, Tensor};

use super::logreg::{accuracy, argmax, standardize, standardizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpClassifierConfig {
    pub hidden: Vec<usize>,
    /// Applied to the input of every layer after the first.
    pub dropout: f64,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Epochs without a validation gain before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpClassifierConfig {
    fn default() -> Self {
        MlpClassifierConfig {
            hidden: vec![64],
            dropout: 0.5,
            lr: 0.002,
            batch: 64,
            max_epochs: 60,
            patience: 6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MlpClassifier {
    params: MlpParams,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Best validation accuracy seen while training.
    pub val_accuracy: f64,
    pub epochs: usize,
}

impl MlpClassifier {
    pub fn fit(
        train_x: &Tensor,
        train_y: &[usize],
        val_x: &Tensor,
        val_y: &[usize],
        classes: usize,
        cfg: &MlpClassifierConfig,
    ) -> Result<Self> {
        let n = train_x.rows();
        if n == 0 || train_y.len() != n || val_y.len() != val_x.rows() || val_x.rows() == 0 {
            return Err(Error::Input("classifier splits are empty or mislabelled".into()));
        }
        if let Some(bad) = train_y.iter().chain(val_y).find(|&&y| y >= classes) {
            return Err(Error::Input(format!("label {bad} outside {classes} classes")));
        }
        if cfg.batch == 0 {
            return Err(Error::Config("classifier batch must be positive".into()));
        }
        let (mean, scale) = standardizer(train_x);
        let d = train_x.cols();
        let xs = Tensor::new(vec![n, d], standardize(train_x, &mean, &scale))?;
        let mut rng = Rng::new(cfg.seed);
        let mut dims = vec![d];
        dims.extend(&cfg.hidden);
        dims.push(classes);
        let mut rates = vec![cfg.dropout; dims.len() - 1];
        rates[0] = 0.0;
        let params = MlpParams::new(&dims, rates, &mut rng)?;
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        let mut state = AdamState::new(&params);
        let mut model = MlpClassifier { params, mean, scale, val_accuracy: f64::NEG_INFINITY, epochs: 0 };
        let mut best = model.params.clone();
        let mut stale = 0;
        for epoch in 1..=cfg.max_epochs {
            let order = rng.permutation(n);
            for chunk in order.chunks(cfg.batch) {
                let xb = xs.select_rows(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
                let trace = mlp_forward_trace(&xb, &model.params, true, &mut rng)?;
                let (_, dlogits) = cross_entropy_grad(&trace.logits, &yb, &vec![true; yb.len()])?;
                let mut grads = model.params.zeros_like();
                mlp_backward(&model.params, &trace, &dlogits, &mut grads);
                adam_step(&mut model.params, &grads, &mut state, &adam);
            }
            model.epochs = epoch;
            let acc = model.accuracy(val_x, val_y)?;
            if acc > model.val_accuracy {
                model.val_accuracy = acc;
                best = model.params.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        model.params = best;
        Ok(model)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let xs = Tensor::new(x.shape().to_vec(), standardize(x, &self.mean, &self.scale))?;
        let logits = mlp_forward(&xs, &self.params, false, &mut Rng::new(0))?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        Ok(accuracy(&self.predict(x)?, y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitEval {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

/// Seeded disjoint 80/10/10 split of `0..n`.
pub fn three_way_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let perm = Rng::new(seed).permutation(n);
    let n_test = n / 10;
    let n_val = n / 10;
    let test = perm[..n_test].to_vec();
    let val = perm[n_test..n_test + n_val].to_vec();
    let train = perm[n_test + n_val..].to_vec();
    (train, val, test)
}

fn labels_at(y: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| y[i]).collect()
}

/// Trains on a training split with a slice held out for early stopping and
/// scores the test split.
pub fn mlp_eval(
    train_x: &Tensor,
    train_y: &[usize],
    test_x: &Tensor,
    test_y: &[usize],
    cfg: &MlpClassifierConfig,
) -> Result<SplitEval> {
    let n = train_x.rows();
    if n < 10 {
        return Err(Error::Input(format!("{n} training rows are too few for a validation slice")));
    }
    let classes = train_y.iter().chain(test_y).max().map_or(0, |m| m + 1);
    let perm = Rng::new(cfg.seed ^ 0x9e37).permutation(n);
    let (val, train) = perm.split_at(n / 10);
    let model = MlpClassifier::fit(
        &train_x.select_rows(train),
        &labels_at(train_y, train),
        &train_x.select_rows(val),
        &labels_at(train_y, val),
        classes,
        cfg,
    )?;
    Ok(SplitEval {
        val_accuracy: model.val_accuracy,
        test_accuracy: model.accuracy(test_x, test_y)?,
        train_size: train.len(),
        val_size: val.len(),
        test_size: test_x.rows(),
    })
}

/// Pair classification on `[u; v; |u-v|; u*v]` with a seeded 80/10/10 split.
pub fn mlp_pair_eval(u: &Tensor, v: &Tensor, labels: &[usize], cfg: &MlpClassifierConfig) -> Result<SplitEval> {
    let n = labels.len();
    if u.rows() != n || v.rows() != n {
        return Err(Error::Input(format!("{} / {} representations for {n} labels", u.rows(), v.rows())));
    }
    if n < 10 {
        return Err(Error::Input(format!("{n} pairs are too few to split")));
    }
    let feats = pair_features_batch(u, v)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let (train, val, test) = three_way_split(n, cfg.seed);
    let model = MlpClassifier::fit(
        &feats.select_rows(&train),
        &labels_at(labels, &train),
        &feats.select_rows(&val),
        &labels_at(labels, &val),
        classes,
        cfg,
    )?;
    Ok(SplitEval {
        val_accuracy: model.val_accuracy,
        test_accuracy: model.accuracy(&feats.select_rows(&test), &labels_at(labels, &test))?,
        train_size: train.len(),
        val_size: val.len(),
        test_size: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_data(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a = rng.uniform(-1.0, 1.0);
            let b = rng.uniform(-1.0, 1.0);
            data.extend([a, b]);
            y.push(usize::from((a > 0.0) != (b > 0.0)));
        }
        (Tensor::new(vec![n, 2], data).unwrap(), y)
    }

    #[test]
    fn learns_a_nonlinear_boundary() {
        let (x, y) = xor_data(1000, 1);
        let (tx, ty) = xor_data(300, 2);
        let cfg = MlpClassifierConfig { dropout: 0.0, ..Default::default() };
        let r = mlp_eval(&x, &y, &tx, &ty, &cfg).unwrap();
        assert!(r.test_accuracy > 0.9, "{r:?}");
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (a, b, c) = three_way_split(105, 3);
        assert_eq!((a.len(), b.len(), c.len()), (85, 10, 10));
        let mut all = [a, b, c].concat();
        all.sort();
        assert_eq!(all, (0..105).collect::<Vec<_>>());
    }

    #[test]
    fn pair_eval_detects_equality() {
        let mut rng = Rng::new(4);
        let n = 400;
        let mut u = Vec::new();
        let mut v = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let same = i % 2 == 0;
            let b: Vec<f64> = if same { a.clone() } else { (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect() };
            u.extend(a);
            v.extend(b);
            y.push(usize::from(same));
        }
        let u = Tensor::new(vec![n, 4], u).unwrap();
        let v = Tensor::new(vec![n, 4], v).unwrap();
        let r = mlp_pair_eval(&u, &v, &y, &MlpClassifierConfig::default()).unwrap();
        assert!(r.test_accuracy >= 0.9, "{r:?}");
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, y) = xor_data(200, 5);
        let cfg = MlpClassifierConfig { max_epochs: 5, ..Default::default() };
        let a = mlp_eval(&x, &y, &x, &y, &cfg).unwrap();
        let b = mlp_eval(&x, &y, &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
