//! Conditional GAN that maps basic comment features (content, topic,
//! hierarchy) to a user's historical behavior block.

mod loss;
mod model;
mod train;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommentRecord, Hierarchy, Topic};
use crate::error::{Error, Result};
use crate::rng;

pub use loss::{bce_with_logits, closeness_loss, derangement, discriminator_terms, generator_terms, DiscLoss, GenLoss};
pub use model::{discriminator_logits, generate_behavior, generator_forward, init_discriminator, init_generator, GenOutput};
pub use train::{behavior_source, synthesize_behaviors, BehaviorModel, BehaviorTrainer, EpochReport};

/// Width of the categorical part of [`BasicCommentFeatures`].
pub const CATEGORICAL_DIM: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorGanConfig {
    /// Weight of the adversarial term in the generator loss.
    pub lambda: f64,
    /// Content vector width.
    pub d_text: usize,
    /// Width of each per-modality block.
    pub block: usize,
    pub hidden: usize,
    pub disc_hidden: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BehaviorGanConfig {
    fn default() -> Self {
        BehaviorGanConfig {
            lambda: 0.5,
            d_text: 32,
            block: 32,
            hidden: 64,
            disc_hidden: 64,
            lr_g: 1e-3,
            lr_d: 1e-3,
            batch: 64,
            epochs: 30,
            seed: 0,
        }
    }
}

impl BehaviorGanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("behavior.lambda", "must lie in [0, 1]"));
        }
        for (key, v) in [
            ("behavior.d_text", self.d_text),
            ("behavior.block", self.block),
            ("behavior.hidden", self.hidden),
            ("behavior.disc_hidden", self.disc_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.batch < 2 {
            return Err(Error::config("behavior.batch", "must be at least 2"));
        }
        for (key, v) in [("behavior.lr_g", self.lr_g), ("behavior.lr_d", self.lr_d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a positive number"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.d_text + CATEGORICAL_DIM
    }
}

/// Produces one vector per character of a text.
pub trait ContentEncoder {
    fn dim(&self) -> usize;
    fn token_vectors(&self, text: &str) -> Array2<f64>;
}

/// Fixed random character embeddings: each character's vector is drawn from
/// a generator seeded by the character itself, so no vocabulary is needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashedCharEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl HashedCharEncoder {
    pub fn char_vector(&self, c: char) -> Array1<f64> {
        let mut r = rng::named_rng(self.seed, &format!("char:{c}"));
        let scale = 1.0 / (self.dim as f64).sqrt();
        Array1::from_shape_simple_fn(self.dim, || r.sample::<f64, _>(StandardNormal) * scale)
    }
}

impl ContentEncoder for HashedCharEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_vectors(&self, text: &str) -> Array2<f64> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Array2::zeros((chars.len(), self.dim));
        for (i, &c) in chars.iter().enumerate() {
            out.row_mut(i).assign(&self.char_vector(c));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasicCommentFeatures {
    pub content: Vec<f64>,
    pub topic: [f64; 5],
    pub hierarchy: [f64; 2],
}

impl BasicCommentFeatures {
    /// `[content; topic; hierarchy]`.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.content.clone();
        v.extend_from_slice(&self.topic);
        v.extend_from_slice(&self.hierarchy);
        v
    }
}

pub fn topic_one_hot(t: Topic) -> [f64; 5] {
    let mut v = [0.0; 5];
    v[t.index()] = 1.0;
    v
}

pub fn hierarchy_one_hot(h: Hierarchy) -> [f64; 2] {
    let mut v = [0.0; 2];
    v[h.index()] = 1.0;
    v
}

/// Mean of the encoder's per-position vectors (zeros for empty text) plus
/// the topic and hierarchy one-hots.
pub fn extract_basic_features(record: &CommentRecord, encoder: &dyn ContentEncoder) -> BasicCommentFeatures {
    let vecs = encoder.token_vectors(&record.text);
    let content = if vecs.nrows() == 0 {
        vec![0.0; encoder.dim()]
    } else {
        vecs.mean_axis(ndarray::Axis(0)).expect("non-empty").to_vec()
    };
    BasicCommentFeatures {
        content,
        topic: topic_one_hot(record.topic),
        hierarchy: hierarchy_one_hot(record.hierarchy),
    }
}

/// Stacks the concatenated features of `records`, one row each.
pub fn feature_matrix(records: &[&CommentRecord], encoder: &dyn ContentEncoder) -> Array2<f64> {
    let width = encoder.dim() + CATEGORICAL_DIM;
    let mut m = Array2::zeros((records.len(), width));
    for (i, r) in records.iter().enumerate() {
        m.row_mut(i).assign(&Array1::from(extract_basic_features(r, encoder).concat()));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_encoder_is_stable_per_character() {
        let e = HashedCharEncoder { dim: 8, seed: 1 };
        let v = e.token_vectors("好好");
        assert_eq!(v.row(0), v.row(1));
        assert_eq!(e.char_vector('好'), e.char_vector('好'));
        assert_ne!(e.char_vector('好'), e.char_vector('坏'));
    }

    #[test]
    fn lambda_outside_unit_interval_is_rejected() {
        for l in [-0.1, 1.5, f64::NAN] {
            let cfg = BehaviorGanConfig {
                lambda: l,
                ..Default::default()
            };
            assert!(cfg.validate().is_err());
        }
    }
}
