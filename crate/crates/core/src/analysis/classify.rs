//! Frozen-embedding classifiers: k-nearest neighbours and softmax regression.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::util;
use crate::{Error, Result};

pub const DEFAULT_K_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
}

/// Macro averages run over classes present in truth or prediction; a zero
/// denominator scores 0.
pub fn class_metrics(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ClassMetrics> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Contract(
            "truth and predictions must be nonempty and equal length".into(),
        ));
    }
    let mut cm = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Contract(format!(
                "class index out of range for {n_classes} classes"
            )));
        }
        cm[t][p] += 1;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut ps, mut rs, mut fs) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..n_classes {
        let tp = cm[c][c];
        let actual: usize = cm[c].iter().sum();
        let predicted: usize = cm.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        ps.push(p);
        rs.push(r);
        fs.push(if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        });
    }
    let correct: usize = (0..n_classes).map(|c| cm[c][c]).sum();
    Ok(ClassMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_precision: util::mean(&ps),
        macro_recall: util::mean(&rs),
        macro_f1: util::mean(&fs),
        confusion: cm,
    })
}

/// Majority vote among the `k` nearest training points (Euclidean). Ties in
/// the vote go to the tied class owning the nearest neighbour.
pub fn knn_classify(
    train_x: &Array2<f64>,
    train_y: &[usize],
    test_x: &Array2<f64>,
    k: usize,
) -> Result<Vec<usize>> {
    if train_x.nrows() == 0 || train_x.nrows() != train_y.len() {
        return Err(Error::Contract("empty or mislabeled training set".into()));
    }
    if k == 0 {
        return Err(Error::Parameter("k_neighbors must be >= 1".into()));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::Config("train and test dimensions differ".into()));
    }
    let k = k.min(train_x.nrows());
    let n_classes = train_y.iter().max().unwrap() + 1;
    let mut out = Vec::with_capacity(test_x.nrows());
    let mut d: Vec<(f64, usize)> = Vec::with_capacity(train_x.nrows());
    for q in test_x.rows() {
        d.clear();
        d.extend(
            train_x
                .rows()
                .into_iter()
                .enumerate()
                .map(|(i, r)| (util::sq_dist(r, q), i)),
        );
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &mut d[..k];
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; n_classes];
        for &(_, i) in near.iter() {
            votes[train_y[i]] += 1;
        }
        let top = *votes.iter().max().unwrap();
        let winner = near
            .iter()
            .map(|&(_, i)| train_y[i])
            .find(|&c| votes[c] == top)
            .unwrap();
        out.push(winner);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    pub l2_penalty: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2_penalty: 1e-4,
            epochs: 500,
            learning_rate: 0.5,
        }
    }
}

/// Multinomial model `softmax(W x + b)`; `weight` is classes × features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LogRegModel {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        LogRegModel {
            weight: Array2::zeros((n_classes, dim)),
            bias: Array1::zeros(n_classes),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, p: &[f64]) {
        let nw = self.weight.len();
        self.weight
            .iter_mut()
            .zip(&p[..nw])
            .for_each(|(w, v)| *w = *v);
        self.bias
            .iter_mut()
            .zip(&p[nw..])
            .for_each(|(b, v)| *b = *v);
    }

    fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut logits = x.dot(&self.weight.t()) + &self.bias;
        for mut row in logits.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        logits
    }

    /// Highest-probability class; lowest index on ties.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.weight.ncols() {
            return Err(Error::Config(
                "feature dimension differs from the model".into(),
            ));
        }
        let p = self.probabilities(x);
        Ok(p.rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}

/// Mean cross-entropy plus `l2/2 · ‖W‖²` (bias unpenalized) and its gradient
/// in `LogRegModel::flat` order.
pub fn logreg_loss_and_grad(
    model: &LogRegModel,
    x: &Array2<f64>,
    y: &[usize],
    l2: f64,
) -> (f64, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut p = model.probabilities(x);
    let mut loss = 0.0;
    for (i, &c) in y.iter().enumerate() {
        loss -= p[[i, c]].max(f64::MIN_POSITIVE).ln();
        p[[i, c]] -= 1.0;
    }
    loss = loss / n + 0.5 * l2 * model.weight.iter().map(|w| w * w).sum::<f64>();
    p /= n;
    let gw = p.t().dot(x) + &(&model.weight * l2);
    let gb = p.sum_axis(Axis(0));
    (loss, gw.iter().chain(gb.iter()).copied().collect())
}

pub fn logreg_train(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    config: &LogRegConfig,
) -> Result<LogRegModel> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::Contract("empty or mislabeled training set".into()));
    }
    if y.iter().any(|&c| c >= n_classes) {
        return Err(Error::Contract(format!(
            "label out of range for {n_classes} classes"
        )));
    }
    let first = y[0];
    if y.iter().all(|&c| c == first) {
        return Err(Error::Contract(
            "logistic regression needs at least two classes".into(),
        ));
    }
    let mut model = LogRegModel::zeros(n_classes, x.ncols());
    let mut params = model.flat();
    for _ in 0..config.epochs {
        let (_, g) = logreg_loss_and_grad(&model, x, y, config.l2_penalty);
        params
            .iter_mut()
            .zip(&g)
            .for_each(|(p, g)| *p -= config.learning_rate * g);
        model.set_flat(&params);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("logistic regression diverged".into()));
    }
    Ok(model)
}
