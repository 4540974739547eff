//! The decoder-only generator. Each layer is post-LN: masked self-attention,
//! attention over the single projected memory slot, then a ReLU feed-forward
//! block. With one memory slot the attention weights are identically 1, so the
//! cross-attention reduces to its value and output projections.

use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use sarcgen_autograd::{init, ParamStore, Tensor, Vars};

use super::GanConfig;
use crate::corpus::{TokenSequence, COND_DIM, EOS, PAD, SOS, UNK};
use crate::error::{Error, Result};
use crate::nn::{self, eval};

pub fn init_generator<R: Rng>(cfg: &GanConfig, vocab_size: usize, rng: &mut R) -> ParamStore {
    let d = cfg.d_model;
    let mut p = ParamStore::new();
    p.insert("emb", init::normal(vocab_size, d, 1.0, rng));
    nn::init_linear(&mut p, "proj", cfg.z_dim + COND_DIM, d, rng);
    for l in 0..cfg.layers {
        nn::init_attention(&mut p, &format!("l{l}.sa"), d, rng);
        nn::init_linear(&mut p, &format!("l{l}.ca.v"), d, d, rng);
        nn::init_linear(&mut p, &format!("l{l}.ca.o"), d, d, rng);
        nn::init_linear(&mut p, &format!("l{l}.ff1"), d, cfg.ff_width(), rng);
        nn::init_linear(&mut p, &format!("l{l}.ff2"), cfg.ff_width(), d, rng);
        for ln in ["ln1", "ln2", "ln3"] {
            nn::init_layer_norm(&mut p, &format!("l{l}.{ln}"), d);
        }
    }
    nn::init_linear(&mut p, "out", d, vocab_size, rng);
    p
}

fn weight<'a>(p: &'a ParamStore, name: &str) -> &'a Array2<f64> {
    p.get(name).unwrap_or_else(|| panic!("generator parameter `{name}` missing"))
}

/// `ReLU(W_proj [z; f] + b_proj)` for one noise/condition pair.
pub fn project_memory(params: &ParamStore, z: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let w = weight(params, "proj.w");
    if f.len() != COND_DIM || z.len() + f.len() != w.nrows() {
        return Err(Error::Shape(format!(
            "memory projection expects z of width {} and f of width {COND_DIM}, got {} and {}",
            w.nrows().saturating_sub(COND_DIM),
            z.len(),
            f.len()
        )));
    }
    let zf: Vec<f64> = z.iter().chain(f).copied().collect();
    let x = Array2::from_shape_vec((1, zf.len()), zf).expect("row");
    let m = eval::relu(eval::linear(x.view(), w, weight(params, "proj.b")));
    Ok(m.into_raw_vec_and_offset().0)
}

fn memory(v: &Vars, z: &Tensor, f: &Tensor) -> Tensor {
    nn::linear(v, "proj", &Tensor::concat_cols(&[z.clone(), f.clone()])).relu()
}

/// Teacher-forced next-token logits. `inputs` holds `batch` sequences of equal
/// length `L` back to back; the result has `batch * L` rows, row `(b, t)`
/// scoring the token that follows `inputs[b][t]`.
pub fn teacher_forced_logits(cfg: &GanConfig, v: &Vars, inputs: &[u32], batch: usize, z: &Tensor, f: &Tensor) -> Tensor {
    assert!(batch > 0 && inputs.len().is_multiple_of(batch), "ragged teacher-forcing batch");
    let len = inputs.len() / batch;
    let ids: Rc<Vec<usize>> = Rc::new(inputs.iter().map(|&t| t as usize).collect());
    let pe = Tensor::constant(nn::tile_rows(nn::sinusoidal(len, cfg.d_model).view(), batch));
    let mut x = v.get("emb").index_rows(&ids).add(&pe);
    let mem = memory(v, z, f);
    let spread = nn::repeat_index(batch, len);
    let causal = nn::causal_mask(len);
    let masks = vec![causal; batch];
    for l in 0..cfg.layers {
        let sa = nn::self_attention(v, &format!("l{l}.sa"), &x, len, cfg.heads, &masks);
        x = nn::layer_norm(v, &format!("l{l}.ln1"), &x.add(&sa));
        let ca = nn::linear(v, &format!("l{l}.ca.o"), &nn::linear(v, &format!("l{l}.ca.v"), &mem));
        x = nn::layer_norm(v, &format!("l{l}.ln2"), &x.add(&ca.index_rows(&spread)));
        let ff = nn::linear(v, &format!("l{l}.ff2"), &nn::linear(v, &format!("l{l}.ff1"), &x).relu());
        x = nn::layer_norm(v, &format!("l{l}.ln3"), &x.add(&ff));
    }
    nn::linear(v, "out", &x)
}

/// Differentiable stand-ins for sampled sequences: row `(b, 0)` is one-hot
/// SOS, rows `1..len_b` are the generator's next-token distributions along the
/// sampled prefix, and rows past the sequence end are one-hot PAD.
/// Returns `batch * t_max` rows over the vocabulary.
pub fn soft_sequences(cfg: &GanConfig, v: &Vars, sampled: &[TokenSequence], z: &Tensor, f: &Tensor) -> Tensor {
    let t = cfg.t_max;
    let batch = sampled.len();
    let inputs: Vec<u32> = sampled.iter().flat_map(|s| s.ids[..t - 1].iter().copied()).collect();
    let probs = teacher_forced_logits(cfg, v, &inputs, batch, z, f).softmax();
    let vocab = probs.cols();
    let mut idx = Vec::with_capacity(batch * t);
    let mut keep = Array2::zeros((batch * t, 1));
    let mut fixed = Array2::zeros((batch * t, vocab));
    for (b, s) in sampled.iter().enumerate() {
        for pos in 0..t {
            let row = b * t + pos;
            if pos >= 1 && pos < s.length {
                idx.push(b * (t - 1) + pos - 1);
                keep[[row, 0]] = 1.0;
            } else {
                idx.push(0);
                fixed[[row, if pos == 0 { SOS } else { PAD } as usize]] = 1.0;
            }
        }
    }
    probs
        .index_rows(&Rc::new(idx))
        .mul(&Tensor::constant(keep))
        .add(&Tensor::constant(fixed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// One decoded sequence with the log-distribution used at every emitted
/// position (positions `1..length`).
#[derive(Clone, Debug)]
pub struct Generated {
    pub seq: TokenSequence,
    pub log_probs: Vec<Vec<f64>>,
}

/// Incremental decoder state: cached keys and values per layer and sequence.
struct Cache {
    k: Vec<Vec<Array2<f64>>>,
    v: Vec<Vec<Array2<f64>>>,
}

/// Decodes a batch with key/value caching. PAD, SOS and UNK are never
/// emitted; EOS is suppressed until the sequence reaches `min_len` tokens and
/// forced at the last position, so every output ends in exactly one EOS.
pub fn generate_batch<R: Rng>(
    params: &ParamStore,
    cfg: &GanConfig,
    z: &Array2<f64>,
    f: &Array2<f64>,
    mode: DecodeMode,
    min_len: usize,
    rng: &mut R,
) -> Vec<Generated> {
    let t_max = cfg.t_max;
    let batch = z.nrows();
    let d = cfg.d_model;
    let dh = d / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let w = |name: &str| weight(params, name);
    let pe = nn::sinusoidal(t_max, d);

    let zf = concatenate(Axis(1), &[z.view(), f.view()]).expect("same batch");
    let mem = eval::relu(eval::linear(zf.view(), w("proj.w"), w("proj.b")));
    let cross: Vec<Array2<f64>> = (0..cfg.layers)
        .map(|l| {
            let cv = eval::linear(mem.view(), w(&format!("l{l}.ca.v.w")), w(&format!("l{l}.ca.v.b")));
            eval::linear(cv.view(), w(&format!("l{l}.ca.o.w")), w(&format!("l{l}.ca.o.b")))
        })
        .collect();
    let mut cache = Cache {
        k: vec![vec![Array2::zeros((t_max, d)); batch]; cfg.layers],
        v: vec![vec![Array2::zeros((t_max, d)); batch]; cfg.layers],
    };

    let mut tokens: Vec<Vec<u32>> = vec![vec![SOS]; batch];
    let mut log_probs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); batch];
    let mut done = vec![false; batch];
    let emb = w("emb");

    for pos in 0..t_max - 1 {
        let active: Vec<usize> = (0..batch).filter(|&b| !done[b]).collect();
        if active.is_empty() {
            break;
        }
        let mut x = Array2::zeros((active.len(), d));
        for (i, &b) in active.iter().enumerate() {
            let tok = tokens[b][pos] as usize;
            x.row_mut(i).assign(&(&emb.row(tok) + &pe.row(pos)));
        }
        for l in 0..cfg.layers {
            let sa = |p: &str| format!("l{l}.sa.{p}");
            let q = eval::linear(x.view(), w(&sa("q.w")), w(&sa("q.b")));
            let k = eval::linear(x.view(), w(&sa("k.w")), w(&sa("k.b")));
            let v = eval::linear(x.view(), w(&sa("v.w")), w(&sa("v.b")));
            let mut att = Array2::zeros((active.len(), d));
            let mut scores = vec![0.0; pos + 1];
            for (i, &b) in active.iter().enumerate() {
                cache.k[l][b].row_mut(pos).assign(&k.row(i));
                cache.v[l][b].row_mut(pos).assign(&v.row(i));
                for h in 0..cfg.heads {
                    let hs = h * dh..(h + 1) * dh;
                    let qh = q.slice(s![i, hs.clone()]);
                    for (j, sc) in scores.iter_mut().enumerate() {
                        *sc = qh.dot(&cache.k[l][b].slice(s![j, hs.clone()])) * scale;
                    }
                    eval::softmax_row(&mut scores);
                    let mut out = att.slice_mut(s![i, hs.clone()]);
                    for (j, &a) in scores.iter().enumerate() {
                        out.scaled_add(a, &cache.v[l][b].slice(s![j, hs.clone()]));
                    }
                }
            }
            let o = eval::linear(att.view(), w(&sa("o.w")), w(&sa("o.b")));
            x = eval::layer_norm(&(&x + &o), w(&format!("l{l}.ln1.g")), w(&format!("l{l}.ln1.b")));
            let mut c = Array2::zeros((active.len(), d));
            for (i, &b) in active.iter().enumerate() {
                c.row_mut(i).assign(&cross[l].row(b));
            }
            x = eval::layer_norm(&(&x + &c), w(&format!("l{l}.ln2.g")), w(&format!("l{l}.ln2.b")));
            let h = eval::relu(eval::linear(x.view(), w(&format!("l{l}.ff1.w")), w(&format!("l{l}.ff1.b"))));
            let ff = eval::linear(h.view(), w(&format!("l{l}.ff2.w")), w(&format!("l{l}.ff2.b")));
            x = eval::layer_norm(&(&x + &ff), w(&format!("l{l}.ln3.g")), w(&format!("l{l}.ln3.b")));
        }
        let mut logits = eval::linear(x.view(), w("out.w"), w("out.b"));
        let emitted_len = pos + 2;
        for mut row in logits.rows_mut() {
            for banned in [PAD, SOS, UNK] {
                row[banned as usize] = f64::NEG_INFINITY;
            }
            if emitted_len < min_len {
                row[EOS as usize] = f64::NEG_INFINITY;
            }
        }
        let lp = eval::log_softmax(&logits);
        for (i, &b) in active.iter().enumerate() {
            let row = lp.row(i);
            let next = if pos + 1 == t_max - 1 {
                EOS
            } else {
                match mode {
                    DecodeMode::Greedy => argmax(row.as_slice().expect("contiguous")),
                    DecodeMode::Sample => sample(row.as_slice().expect("contiguous"), rng),
                }
            };
            tokens[b].push(next);
            log_probs[b].push(row.to_vec());
            if next == EOS {
                done[b] = true;
            }
        }
    }

    tokens
        .into_iter()
        .zip(log_probs)
        .map(|(t, lp)| Generated {
            seq: TokenSequence::from_prefix(&t, t_max),
            log_probs: lp,
        })
        .collect()
}

fn argmax(lp: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in lp.iter().enumerate() {
        if x > lp[best] {
            best = i;
        }
    }
    best as u32
}

fn sample<R: Rng>(lp: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in lp.iter().enumerate() {
        if x == f64::NEG_INFINITY {
            continue;
        }
        acc += x.exp();
        last = i;
        if u < acc {
            return i as u32;
        }
    }
    last as u32
}

/// Decodes one sequence; see [`generate_batch`].
pub fn generate_sequence<R: Rng>(
    params: &ParamStore,
    cfg: &GanConfig,
    z: &[f64],
    f: &[f64],
    mode: DecodeMode,
    rng: &mut R,
) -> Result<Generated> {
    if z.len() != cfg.z_dim || f.len() != COND_DIM {
        return Err(Error::Shape(format!("expected z of width {} and f of width {COND_DIM}", cfg.z_dim)));
    }
    let z = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row");
    let f = Array2::from_shape_vec((1, f.len()), f.to_vec()).expect("row");
    Ok(generate_batch(params, cfg, &z, &f, mode, 0, rng).pop().expect("one sequence"))
}
