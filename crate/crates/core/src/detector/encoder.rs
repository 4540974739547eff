//! Bidirectional transformer text encoder. The hidden state at position 0
//! (the SOS slot, used as the classification token) represents the comment.

use ndarray::Array2;
use rand::Rng;
use sarcgen_autograd::{init, ParamStore, Tensor, Vars};
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_with_context, CommentRecord, Vocab, PAD};
use crate::error::{Error, Result};
use crate::nn::{self, gelu, init_attention, init_layer_norm, init_linear, layer_norm, linear};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::config("det.d", "encoder width, layers and heads must be positive"));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::config("det.heads", format!("{} heads do not divide width {}", self.heads, self.d)));
        }
        if self.max_len < 4 {
            return Err(Error::config("det.max_len", "must be at least 4"));
        }
        Ok(())
    }
}

pub fn init_encoder<R: Rng>(cfg: &EncoderConfig, vocab_size: usize, rng: &mut R) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("tok", init::normal(vocab_size, cfg.d, 0.02, rng));
    s.insert("pos", init::normal(cfg.max_len, cfg.d, 0.02, rng));
    init_layer_norm(&mut s, "ln0", cfg.d);
    for l in 0..cfg.layers {
        init_attention(&mut s, &format!("l{l}.sa"), cfg.d, rng);
        init_layer_norm(&mut s, &format!("l{l}.ln1"), cfg.d);
        init_linear(&mut s, &format!("l{l}.ff1"), cfg.d, cfg.d_ff, rng);
        init_linear(&mut s, &format!("l{l}.ff2"), cfg.d_ff, cfg.d, rng);
        init_layer_norm(&mut s, &format!("l{l}.ln2"), cfg.d);
    }
    s
}

/// Untruncated length of [`tokenize`]'s output.
pub fn token_count(record: &CommentRecord) -> usize {
    let ctx = record.context.as_deref().filter(|c| !c.is_empty());
    2 + record.text.chars().count() + ctx.map(|c| c.chars().count() + 1).unwrap_or(0)
}

/// Token ids for a record: `[SOS, text, EOS(, context, EOS)]`, truncated to
/// `max_len`.
pub fn tokenize(record: &CommentRecord, vocab: &Vocab, max_len: usize) -> Vec<u32> {
    let ctx = record.context.as_deref().filter(|c| !c.is_empty());
    if token_count(record) > max_len {
        log::debug!("record {}: {} tokens truncated to {max_len}", record.id, token_count(record));
    }
    encode_with_context(&record.text, ctx, vocab, max_len).valid().to_vec()
}

/// Only the classification row of the last layer is ever read, so that layer
/// computes attention for position 0 alone.
fn last_layer(v: &Vars, l: usize, x: &Tensor, len: usize, heads: usize, masks: &[Tensor]) -> Tensor {
    let batch = masks.len();
    let d = x.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let name = format!("l{l}.sa");
    let cls_idx = std::rc::Rc::new((0..batch).map(|b| b * len).collect::<Vec<_>>());
    let x_cls = x.index_rows(&cls_idx);
    let q = linear(v, &format!("{name}.q"), &x_cls);
    let k = linear(v, &format!("{name}.k"), x);
    let val = linear(v, &format!("{name}.v"), x);
    let mut rows = Vec::with_capacity(batch);
    for (b, mask) in masks.iter().enumerate() {
        let (kb, vb) = (k.slice_rows(b * len, (b + 1) * len), val.slice_rows(b * len, (b + 1) * len));
        let qb = q.slice_rows(b, b + 1);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let scores = qb.slice_cols(c0, c1).matmul(&kb.slice_cols(c0, c1).t()).scale(scale).add(mask);
            outs.push(scores.softmax().matmul(&vb.slice_cols(c0, c1)));
        }
        rows.push(Tensor::concat_cols(&outs));
    }
    let attn = linear(v, &format!("{name}.o"), &Tensor::concat_rows(&rows));
    let h = layer_norm(v, &format!("l{l}.ln1"), &x_cls.add(&attn));
    let ff = linear(v, &format!("l{l}.ff2"), &gelu(&linear(v, &format!("l{l}.ff1"), &h)));
    layer_norm(v, &format!("l{l}.ln2"), &h.add(&ff))
}

/// Classification-position hidden states, `batch x d`. Sequences are padded
/// to the longest in the batch; PAD ids anywhere are masked out as keys.
pub fn encode_batch(cfg: &EncoderConfig, v: &Vars, seqs: &[Vec<u32>]) -> Tensor {
    assert!(!seqs.is_empty(), "empty batch");
    let len = seqs.iter().map(Vec::len).max().expect("non-empty").clamp(1, cfg.max_len);
    let mut ids = Vec::with_capacity(seqs.len() * len);
    let mut masks = Vec::with_capacity(seqs.len());
    for s in seqs {
        let row: Vec<u32> = (0..len).map(|i| s.get(i).copied().unwrap_or(PAD)).collect();
        let valid: Vec<bool> = row.iter().map(|&t| t != PAD).collect();
        masks.push(nn::key_padding_mask(&valid));
        ids.extend(row);
    }
    let idx = std::rc::Rc::new(ids.iter().map(|&t| t as usize).collect::<Vec<_>>());
    let pos_idx = std::rc::Rc::new((0..seqs.len() * len).map(|r| r % len).collect::<Vec<_>>());
    let pos = v.get("pos").index_rows(&pos_idx);
    let mut x = layer_norm(v, "ln0", &v.get("tok").index_rows(&idx).add(&pos));
    for l in 0..cfg.layers - 1 {
        let a = nn::self_attention(v, &format!("l{l}.sa"), &x, len, cfg.heads, &masks);
        x = layer_norm(v, &format!("l{l}.ln1"), &x.add(&a));
        let ff = linear(v, &format!("l{l}.ff2"), &gelu(&linear(v, &format!("l{l}.ff1"), &x)));
        x = layer_norm(v, &format!("l{l}.ln2"), &x.add(&ff));
    }
    last_layer(v, cfg.layers - 1, &x, len, cfg.heads, &masks)
}

/// Eval-mode classification vectors for `seqs`, one row each.
pub fn encode_eval(cfg: &EncoderConfig, enc: &ParamStore, seqs: &[Vec<u32>]) -> Array2<f64> {
    sarcgen_autograd::no_grad(|| encode_batch(cfg, &enc.bind(false), seqs).value().clone())
}
