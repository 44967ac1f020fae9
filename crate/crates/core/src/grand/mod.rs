//! GRAND-style semi-supervised node classification.
//!
//! Each training epoch draws `S` DropNode augmentations of the node features,
//! smooths each by mixed-order propagation over the normalized adjacency, and
//! feeds them through a two-layer MLP. The loss is the supervised
//! cross-entropy on labelled nodes plus a consistency penalty pulling every
//! augmentation's prediction towards the sharpened mean prediction over all
//! nodes.

mod checkpoint;
mod mlp;
mod ops;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use mlp::{cross_entropy, grand_loss, grand_loss_and_grad, mlp_forward, ForwardCache, Mlp};
pub use ops::{drop_node, drop_node_scales, propagate, sharpen};
pub use train::{accuracy, predict, train, Adam, Prediction, TrainHistory};

pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrandHyper {
    pub drop_rate: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub propagation_order: usize,
    pub n_augmentations: usize,
    pub consistency_weight: f64,
    pub sharpen_temperature: f64,
    pub hidden_width: usize,
    pub input_dropout: f64,
    pub weight_decay: f64,
}

impl Default for GrandHyper {
    fn default() -> Self {
        Self {
            drop_rate: 0.45,
            learning_rate: 0.003,
            max_epochs: 2500,
            patience: 100,
            propagation_order: 4,
            n_augmentations: 2,
            consistency_weight: 1.0,
            sharpen_temperature: 0.5,
            hidden_width: 32,
            input_dropout: 0.0,
            weight_decay: 5e-4,
        }
    }
}

impl GrandHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad(format!("drop_rate {} outside [0, 1)", self.drop_rate));
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return bad(format!("input_dropout {} outside [0, 1)", self.input_dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.sharpen_temperature > 0.0 && self.sharpen_temperature <= 1.0) {
            return bad(format!("sharpen_temperature {} outside (0, 1]", self.sharpen_temperature));
        }
        if self.n_augmentations == 0 {
            return bad("n_augmentations must be at least 1".into());
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.consistency_weight >= 0.0 && self.weight_decay >= 0.0) {
            return bad("consistency_weight and weight_decay must be non-negative".into());
        }
        Ok(())
    }
}

/// Trained classifier: MLP parameters, the hyperparameters it was trained
/// with, and the per-epoch training history.
#[derive(Debug, Clone, PartialEq)]
pub struct GrandModel {
    pub params: Mlp,
    pub hyper: GrandHyper,
    pub history: TrainHistory,
}

impl GrandModel {
    pub fn input_dim(&self) -> usize {
        self.params.w1.nrows()
    }
}
