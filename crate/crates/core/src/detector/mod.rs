//! Fusion sarcasm detector: a text encoder's classification vector joined
//! with an embedding of the user's features, then one logistic head.

mod encoder;
mod fusion;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{BehaviorNorm, CommentRecord, BEHAVIOR_DIM};
use crate::error::{Error, Result};

pub use encoder::{encode_batch, encode_eval, init_encoder, token_count, tokenize, EncoderConfig};
pub use fusion::{bce_loss, combine, embed_user, fuse_and_classify, fuse_logits, init_head, init_user_mlp};
pub use train::{
    export_embeddings, predict, threshold, train_detector, DetectorModel, EpochRecord, History, Prediction,
};

/// Width of the user feature vector:
/// `[topic one-hot x5, hierarchy one-hot x2, count, topic distribution x5,
/// sarcasm rate, frequency, reply ratio]`.
pub const USER_DIM: usize = 16;
pub const TOPIC_COLS: std::ops::Range<usize> = 0..5;
pub const HIERARCHY_COLS: std::ops::Range<usize> = 5..7;
pub const COUNT_COL: usize = 7;
pub const TOPIC_DIST_COLS: std::ops::Range<usize> = 8..13;
pub const SARCASM_COL: usize = 13;
pub const FREQUENCY_COL: usize = 14;
pub const REPLY_COL: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Randomly initialized encoder built from the `det.*` width settings.
    SmallScratch,
    /// Encoder weights, vocabulary and shape taken from a saved detector.
    PretrainedCheckpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub encoder: EncoderMode,
    pub encoder_path: Option<PathBuf>,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; 0 means `4 * d`.
    pub d_ff: usize,
    pub max_len: usize,
    pub m: usize,
    pub user_layers: usize,
    pub lr: f64,
    /// Learning rate of the user network and head; `None` uses `lr`. The
    /// freshly initialized fusion layers need a faster rate than the encoder.
    pub fusion_lr: Option<f64>,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub min_freq: usize,
    /// User-feature columns forced to zero (ablation).
    pub zero_cols: Vec<usize>,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            encoder: EncoderMode::SmallScratch,
            encoder_path: None,
            d: 64,
            layers: 2,
            heads: 2,
            d_ff: 0,
            max_len: 64,
            m: 32,
            user_layers: 1,
            lr: 1e-4,
            fusion_lr: Some(1e-3),
            batch: 32,
            epochs: 20,
            patience: 3,
            min_freq: 1,
            zero_cols: Vec::new(),
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            d_ff: if self.d_ff == 0 { 4 * self.d } else { self.d_ff },
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate()?;
        if self.encoder == EncoderMode::PretrainedCheckpoint && self.encoder_path.is_none() {
            return Err(Error::config("det.encoder_path", "required with the pretrained_checkpoint encoder"));
        }
        if self.m == 0 || self.user_layers == 0 {
            return Err(Error::config("det.m", "user embedding width and depth must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("det.lr", "must be a positive number"));
        }
        if let Some(f) = self.fusion_lr {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::config("det.fusion_lr", "must be a positive number"));
            }
        }
        if self.batch == 0 {
            return Err(Error::config("det.batch", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("det.epochs", "must be positive"));
        }
        if let Some(&c) = self.zero_cols.iter().find(|&&c| c >= USER_DIM) {
            return Err(Error::config("det.zero_cols", format!("column {c} out of range 0..{USER_DIM}")));
        }
        Ok(())
    }
}

/// The user feature vector of a record. The label is never part of it.
pub fn user_features(r: &CommentRecord, norm: &BehaviorNorm) -> Result<[f64; USER_DIM]> {
    let b = r.behavior.as_ref().ok_or_else(|| {
        Error::data(format!(
            "record {} has no behavior block; fill missing behaviors with the behavior generator first",
            r.id
        ))
    })?;
    let mut x = [0.0; USER_DIM];
    x[r.topic.index()] = 1.0;
    x[HIERARCHY_COLS.start + r.hierarchy.index()] = 1.0;
    let unit: [f64; BEHAVIOR_DIM] = norm.to_unit(b);
    x[COUNT_COL..].copy_from_slice(&unit);
    Ok(x)
}
