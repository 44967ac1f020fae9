use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{grand_loss_and_grad, mlp_forward, Mlp};
use super::ops::{drop_node_scales, propagate, scale_rows};
use super::{GrandHyper, GrandModel};
use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// Adam with decoupled weight decay on the weight matrices (biases are not
/// decayed).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Mlp,
    v: Mlp,
}

impl Adam {
    pub fn new(params: &Mlp, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Mlp, grad: &Mlp) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (lr, b1, b2, eps) = (self.learning_rate, self.beta1, self.beta2, self.eps);
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64, decay: f64| {
            *p *= 1.0 - lr * decay;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        let wd = self.weight_decay;
        Zip::from(&mut params.w1)
            .and(&grad.w1)
            .and(&mut self.m.w1)
            .and(&mut self.v.w1)
            .for_each(|p, g, m, v| update(p, g, m, v, wd));
        Zip::from(&mut params.b1)
            .and(&grad.b1)
            .and(&mut self.m.b1)
            .and(&mut self.v.b1)
            .for_each(|p, g, m, v| update(p, g, m, v, 0.0));
        Zip::from(&mut params.w2)
            .and(&grad.w2)
            .and(&mut self.m.w2)
            .and(&mut self.v.w2)
            .for_each(|p, g, m, v| update(p, g, m, v, wd));
        Zip::from(&mut params.b2)
            .and(&grad.b2)
            .and(&mut self.m.b2)
            .and(&mut self.v.b2)
            .for_each(|p, g, m, v| update(p, g, m, v, 0.0));
    }
}

/// Class probabilities and argmax labels (ties go to class 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Prediction {
    pub fn positive_scores(&self) -> Vec<f64> {
        self.probs.column(1).to_vec()
    }

    fn from_probs(probs: Array2<f64>) -> Self {
        let labels = probs
            .rows()
            .into_iter()
            .map(|r| u8::from(r[1] > r[0]))
            .collect();
        Self { probs, labels }
    }
}

/// Fraction of masked rows predicted correctly; NaN for an empty mask.
pub fn accuracy(predicted: &[u8], labels: &[u8], mask: &[bool]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for ((p, y), on) in predicted.iter().zip(labels).zip(mask) {
        if *on {
            total += 1;
            hit += usize::from(p == y);
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

fn check_inputs(
    op: &PropagationOperator,
    x: &Array2<f64>,
    labels: &[u8],
    train_mask: &[bool],
    val_mask: &[bool],
) -> Result<()> {
    let n = x.nrows();
    if op.n() != n || labels.len() != n || train_mask.len() != n || val_mask.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} nodes, features {n} rows, labels {}, masks {}/{}",
            op.n(),
            labels.len(),
            train_mask.len(),
            val_mask.len()
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidInput("feature matrix has no columns".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    let mut seen = [false; 2];
    for (&y, _) in labels.iter().zip(train_mask).filter(|(_, &on)| on) {
        seen[y as usize] = true;
    }
    if !(seen[0] && seen[1]) {
        return Err(Error::InvalidInput("training nodes must contain both classes".into()));
    }
    if !val_mask.iter().any(|&b| b) {
        return Err(Error::InvalidInput("no validation nodes".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    Ok(())
}

fn input_dropout(x: &mut Array2<f64>, rate: f64, rng: &mut impl Rng) {
    if rate == 0.0 {
        return;
    }
    let keep = 1.0 / (1.0 - rate);
    x.mapv_inplace(|v| if rng.random::<f64>() < rate { 0.0 } else { v * keep });
}

/// Trains on the nodes flagged in `train_mask`, early-stopping on accuracy
/// over `val_mask`. Returns the parameters of the best validation epoch.
pub fn train(
    op: &PropagationOperator,
    x: &Array2<f64>,
    labels: &[u8],
    train_mask: &[bool],
    val_mask: &[bool],
    hyper: &GrandHyper,
    seed: u64,
) -> Result<GrandModel> {
    hyper.validate()?;
    check_inputs(op, x, labels, train_mask, val_mask)?;
    let n = x.nrows();
    let smoothed = propagate(x, op, hyper.propagation_order);

    let mut params = Mlp::init(x.ncols(), hyper.hidden_width, &mut seeded(derive_seed(seed, 0)));
    let mut aug_rng = seeded(derive_seed(seed, 1));
    let mut adam = Adam::new(&params, hyper.learning_rate, hyper.weight_decay);

    let mut history = TrainHistory {
        best_val_accuracy: f64::NEG_INFINITY,
        ..TrainHistory::default()
    };
    let mut best = params.clone();

    for epoch in 0..hyper.max_epochs {
        let inputs: Vec<Array2<f64>> = (0..hyper.n_augmentations)
            .map(|_| {
                let scales = drop_node_scales(n, hyper.drop_rate, &mut aug_rng);
                let mut h = propagate(&scale_rows(x, &scales), op, hyper.propagation_order);
                input_dropout(&mut h, hyper.input_dropout, &mut aug_rng);
                h
            })
            .collect();
        let (loss, grad) = grand_loss_and_grad(
            &params,
            &inputs,
            labels,
            train_mask,
            hyper.consistency_weight,
            hyper.sharpen_temperature,
        );
        if !loss.is_finite() {
            return Err(Error::InvalidInput(format!("training diverged at epoch {epoch}")));
        }
        adam.step(&mut params, &grad);

        let pred = Prediction::from_probs(mlp_forward(&params, &smoothed).probs);
        let val = accuracy(&pred.labels, labels, val_mask);
        history.train_loss.push(loss);
        history.val_accuracy.push(val);
        if val > history.best_val_accuracy {
            history.best_val_accuracy = val;
            history.best_epoch = epoch;
            best = params.clone();
        } else if epoch - history.best_epoch >= hyper.patience {
            break;
        }
    }

    Ok(GrandModel {
        params: best,
        hyper: hyper.clone(),
        history,
    })
}

/// Deterministic inference: no DropNode, propagation of the full features.
pub fn predict(model: &GrandModel, op: &PropagationOperator, x: &Array2<f64>) -> Result<Prediction> {
    if x.ncols() != model.input_dim() || op.n() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features, got {}; graph has {} nodes, features {} rows",
            model.input_dim(),
            x.ncols(),
            op.n(),
            x.nrows()
        )));
    }
    let smoothed = propagate(x, op, model.hyper.propagation_order);
    Ok(Prediction::from_probs(mlp_forward(&model.params, &smoothed).probs))
}
