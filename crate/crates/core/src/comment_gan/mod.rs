//! Conditional comment GAN: a transformer-decoder generator conditioned on a
//! noise vector and the 9-dim condition, a multi-kernel convolutional
//! Wasserstein critic with gradient penalty, and an auxiliary label
//! classifier sharing the critic's architecture.

mod critic;
mod generator;
mod loss;
mod train;

pub use critic::{classifier_log_probs, critic_score, embed_hard, embed_soft, init_classifier, init_critic, with_condition};
pub use generator::{
    generate_batch, generate_sequence, init_generator, project_memory, soft_sequences, teacher_forced_logits,
    DecodeMode, Generated,
};
pub use loss::{
    classifier_nll, critic_objective, generator_objective, gradient_penalty, sequence_nll, GeneratorLoss,
};
pub use train::{generate_records, pretrain_loss, GanModel, GanTrainer, GenerateSpec, LossReport, Sample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the generator noise input.
pub const NOISE_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub z_dim: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; 0 means `4 * d_model`.
    pub d_ff: usize,
    pub t_max: usize,
    /// Token embedding width of the critic and classifier.
    pub emb_dim: usize,
    pub kernels: Vec<usize>,
    pub channels: usize,
    pub alpha: f64,
    pub lambda_gp: f64,
    pub n_critic: usize,
    pub batch: usize,
    pub lr_pretrain: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_c: f64,
    pub pretrain_epochs: usize,
    pub adv_steps: usize,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            z_dim: NOISE_DIM,
            d_model: 128,
            layers: 2,
            heads: 4,
            d_ff: 0,
            t_max: crate::corpus::DEFAULT_T_MAX,
            emb_dim: 64,
            kernels: vec![2, 3, 4, 5],
            channels: 64,
            alpha: 0.7,
            lambda_gp: 10.0,
            n_critic: 5,
            batch: 32,
            lr_pretrain: 1e-3,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lr_c: 1e-4,
            pretrain_epochs: 5,
            adv_steps: 200,
            min_freq: 1,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn ff_width(&self) -> usize {
        if self.d_ff == 0 {
            4 * self.d_model
        } else {
            self.d_ff
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(&format!("gan.{k}"), m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie strictly inside (0, 1)");
        }
        if !(self.lambda_gp > 0.0 && self.lambda_gp.is_finite()) {
            return bad("lambda_gp", "must be positive");
        }
        if self.n_critic == 0 {
            return bad("n_critic", "must be at least 1");
        }
        if self.z_dim == 0 || self.d_model == 0 || self.layers == 0 || self.emb_dim == 0 || self.channels == 0 {
            return bad("d_model", "model widths and depth must be positive");
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("heads", "must divide d_model");
        }
        if self.kernels.is_empty() || self.kernels.contains(&0) {
            return bad("kernels", "need at least one positive kernel size");
        }
        let widest = *self.kernels.iter().max().expect("non-empty");
        if self.t_max < 3 || self.t_max < widest {
            return bad("t_max", "must be at least 3 and at least the widest kernel");
        }
        if self.batch == 0 {
            return bad("batch", "must be at least 1");
        }
        for (k, lr) in [("lr_pretrain", self.lr_pretrain), ("lr_g", self.lr_g), ("lr_d", self.lr_d), ("lr_c", self.lr_c)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(k, "learning rate must be positive");
            }
        }
        if self.min_freq == 0 {
            return bad("min_freq", "must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        GanConfig::default().validate().unwrap();
        assert_eq!(GanConfig::default().ff_width(), 512);
    }

    #[test]
    fn alpha_bounds_are_open() {
        for a in [0.0, 1.0, 1.5, f64::NAN] {
            let cfg = GanConfig {
                alpha: a,
                ..GanConfig::default()
            };
            let err = cfg.validate().unwrap_err();
            assert!(err.to_string().contains("gan.alpha"), "{err}");
        }
    }
}
