//! Convolutional feature extractor shared (in shape, not weights) by the
//! Wasserstein critic and the label classifier.
//!
//! Input rows are `[token embedding ; condition]`, one per position. Each
//! kernel size `k` slides a `k`-row window, applies ReLU and max-pools over
//! time, giving `C` features per kernel.

use std::rc::Rc;

use rand::Rng;
use sarcgen_autograd::{init, ParamStore, Tensor, Vars};

use super::GanConfig;
use crate::corpus::COND_DIM;
use crate::nn;

fn init_extractor<R: Rng>(p: &mut ParamStore, cfg: &GanConfig, vocab_size: usize, rng: &mut R) {
    p.insert("emb", init::normal(vocab_size, cfg.emb_dim, 0.5, rng));
    for &k in &cfg.kernels {
        nn::init_linear(p, &format!("conv{k}"), k * (cfg.emb_dim + COND_DIM), cfg.channels, rng);
    }
}

pub fn init_critic<R: Rng>(cfg: &GanConfig, vocab_size: usize, rng: &mut R) -> ParamStore {
    let mut p = ParamStore::new();
    init_extractor(&mut p, cfg, vocab_size, rng);
    nn::init_linear(&mut p, "fc", cfg.kernels.len() * cfg.channels, 1, rng);
    p
}

pub fn init_classifier<R: Rng>(cfg: &GanConfig, vocab_size: usize, rng: &mut R) -> ParamStore {
    let mut p = ParamStore::new();
    init_extractor(&mut p, cfg, vocab_size, rng);
    nn::init_linear(&mut p, "fc", cfg.kernels.len() * cfg.channels, 2, rng);
    p
}

/// Embeds hard token ids (`batch * t_max` of them).
pub fn embed_hard(v: &Vars, ids: &[u32]) -> Tensor {
    let idx: Rc<Vec<usize>> = Rc::new(ids.iter().map(|&t| t as usize).collect());
    v.get("emb").index_rows(&idx)
}

/// Probability-weighted embedding average of distribution rows.
pub fn embed_soft(v: &Vars, probs: &Tensor) -> Tensor {
    probs.matmul(v.get("emb"))
}

/// Appends the condition of each sequence to every one of its rows.
pub fn with_condition(emb: &Tensor, f: &Tensor) -> Tensor {
    let batch = f.rows();
    assert_eq!(emb.rows() % batch, 0, "embedding rows vs batch");
    let len = emb.rows() / batch;
    Tensor::concat_cols(&[emb.clone(), f.index_rows(&nn::repeat_index(batch, len))])
}

/// Max-pooled multi-kernel features, `batch x (|K| * C)`.
fn features(cfg: &GanConfig, v: &Vars, x: &Tensor, batch: usize) -> Tensor {
    let len = x.rows() / batch;
    let pooled: Vec<Tensor> = cfg
        .kernels
        .iter()
        .map(|&k| {
            assert!(k <= len, "kernel {k} wider than sequence length {len}");
            let n = len - k + 1;
            let windows: Vec<Tensor> = (0..k)
                .map(|j| {
                    let idx: Vec<usize> = (0..batch).flat_map(|b| (0..n).map(move |t| b * len + t + j)).collect();
                    x.index_rows(&Rc::new(idx))
                })
                .collect();
            nn::linear(v, &format!("conv{k}"), &Tensor::concat_cols(&windows))
                .relu()
                .segment_max(n)
        })
        .collect();
    Tensor::concat_cols(&pooled)
}

/// Unbounded critic scores, `batch x 1`, for condition-augmented rows `x`.
pub fn critic_score(cfg: &GanConfig, v: &Vars, x: &Tensor, batch: usize) -> Tensor {
    nn::linear(v, "fc", &features(cfg, v, x, batch))
}

/// Label log-probabilities, `batch x 2` (column 0 sarcastic).
pub fn classifier_log_probs(cfg: &GanConfig, v: &Vars, x: &Tensor, batch: usize) -> Tensor {
    nn::linear(v, "fc", &features(cfg, v, x, batch)).log_softmax()
}
