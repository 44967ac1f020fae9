use std::fs;
use std::path::Path;

use super::mlp::Mlp;
use super::train::TrainHistory;
use super::{GrandHyper, GrandModel, N_CLASSES};
use crate::error::{Error, Result};

const MAGIC: &str = "melc-grand-checkpoint 1";

/// Text header (`key value` lines up to `end_header`) followed by the
/// parameters W1, b1, W2, b2 as little-endian f64.
pub fn save_checkpoint(model: &GrandModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let h = &model.hyper;
    let mut header = format!("{MAGIC}\n");
    let fields: [(&str, String); 15] = [
        ("input_dim", model.input_dim().to_string()),
        ("hidden_width", model.params.hidden_width().to_string()),
        ("n_classes", N_CLASSES.to_string()),
        ("drop_rate", h.drop_rate.to_string()),
        ("learning_rate", h.learning_rate.to_string()),
        ("max_epochs", h.max_epochs.to_string()),
        ("patience", h.patience.to_string()),
        ("propagation_order", h.propagation_order.to_string()),
        ("n_augmentations", h.n_augmentations.to_string()),
        ("consistency_weight", h.consistency_weight.to_string()),
        ("sharpen_temperature", h.sharpen_temperature.to_string()),
        ("input_dropout", h.input_dropout.to_string()),
        ("weight_decay", h.weight_decay.to_string()),
        ("best_epoch", model.history.best_epoch.to_string()),
        ("best_val_accuracy", model.history.best_val_accuracy.to_string()),
    ];
    for (k, v) in fields {
        header.push_str(&format!("{k} {v}\n"));
    }
    header.push_str("end_header\n");
    let mut bytes = header.into_bytes();
    for v in model.params.to_flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GrandModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::parse(path, 0, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::parse(path, 0, "header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::parse(path, 1, "not a model checkpoint"));
    }
    let mut fields = std::collections::BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| Error::parse(path, i + 2, "expected `key value`"))?;
        fields.insert(k.to_string(), (i + 2, v.to_string()));
    }
    fn get<T: std::str::FromStr>(
        path: &Path,
        fields: &std::collections::BTreeMap<String, (usize, String)>,
        key: &str,
    ) -> Result<T> {
        let (line, v) = fields
            .get(key)
            .ok_or_else(|| Error::parse(path, 0, format!("missing header field {key}")))?;
        v.parse()
            .map_err(|_| Error::parse(path, *line, format!("bad value for {key}")))
    }
    let d: usize = get(path, &fields, "input_dim")?;
    let hidden: usize = get(path, &fields, "hidden_width")?;
    let classes: usize = get(path, &fields, "n_classes")?;
    if classes != N_CLASSES {
        return Err(Error::parse(path, 0, format!("unsupported class count {classes}")));
    }
    let hyper = GrandHyper {
        drop_rate: get(path, &fields, "drop_rate")?,
        learning_rate: get(path, &fields, "learning_rate")?,
        max_epochs: get(path, &fields, "max_epochs")?,
        patience: get(path, &fields, "patience")?,
        propagation_order: get(path, &fields, "propagation_order")?,
        n_augmentations: get(path, &fields, "n_augmentations")?,
        consistency_weight: get(path, &fields, "consistency_weight")?,
        sharpen_temperature: get(path, &fields, "sharpen_temperature")?,
        hidden_width: hidden,
        input_dropout: get(path, &fields, "input_dropout")?,
        weight_decay: get(path, &fields, "weight_decay")?,
    };
    let body = &bytes[end + marker.len()..];
    if body.len() % 8 != 0 {
        return Err(Error::parse(path, 0, "truncated parameter block"));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = Mlp::from_flat(d, hidden, &flat)
        .ok_or_else(|| Error::parse(path, 0, "parameter block size does not match header"))?;
    Ok(GrandModel {
        params,
        hyper,
        history: TrainHistory {
            best_epoch: get(path, &fields, "best_epoch")?,
            best_val_accuracy: get(path, &fields, "best_val_accuracy")?,
            ..TrainHistory::default()
        },
    })
}
