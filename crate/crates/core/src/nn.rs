//! Layers shared by the generators, critics and the detector encoder.
//!
//! Every layer reads its weights from bound [`Vars`] by name, so a model is
//! just a naming scheme over one [`ParamStore`]. Batches of sequences are
//! stacked row-wise: `batch * seq_len` rows, one per position.

use std::rc::Rc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use sarcgen_autograd::{init, ParamStore, Tensor, Vars};

pub const LN_EPS: f64 = 1e-5;
/// Additive attention bias for masked keys.
pub const MASKED: f64 = -1e9;

pub fn init_linear<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    store.insert(format!("{name}.w"), init::xavier_uniform(fan_in, fan_out, rng));
    store.insert(format!("{name}.b"), init::zeros(1, fan_out));
}

/// `x W + b` with `W` stored as `fan_in x fan_out`.
pub fn linear(v: &Vars, name: &str, x: &Tensor) -> Tensor {
    x.matmul(v.get(&format!("{name}.w"))).add(v.get(&format!("{name}.b")))
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, d: usize) {
    store.insert(format!("{name}.g"), init::ones(1, d));
    store.insert(format!("{name}.b"), init::zeros(1, d));
}

/// Row-wise layer normalization.
pub fn layer_norm(v: &Vars, name: &str, x: &Tensor) -> Tensor {
    let d = x.cols() as f64;
    let mean = x.sum_cols().scale(1.0 / d);
    let centered = x.sub(&mean);
    let var = centered.square().sum_cols().scale(1.0 / d);
    centered
        .div(&var.add_scalar(LN_EPS).sqrt())
        .mul(v.get(&format!("{name}.g")))
        .add(v.get(&format!("{name}.b")))
}

/// Tanh approximation of GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = x.add(&x.powf(3.0).scale(0.044715)).scale(c);
    x.mul(&inner.tanh().add_scalar(1.0)).scale(0.5)
}

/// Sinusoidal position table, `len x d`.
pub fn sinusoidal(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Repeats a `len x d` table once per sequence in the batch.
pub fn tile_rows(table: ArrayView2<f64>, batch: usize) -> Array2<f64> {
    let views: Vec<_> = (0..batch).map(|_| table).collect();
    ndarray::concatenate(Axis(0), &views).expect("same widths")
}

/// `len x len` additive mask hiding future positions.
pub fn causal_mask(len: usize) -> Tensor {
    Tensor::constant(Array2::from_shape_fn((len, len), |(i, j)| if j > i { MASKED } else { 0.0 }))
}

/// `1 x len` additive mask hiding padded keys.
pub fn key_padding_mask(valid: &[bool]) -> Tensor {
    let row: Vec<f64> = valid.iter().map(|&m| if m { 0.0 } else { MASKED }).collect();
    Tensor::constant(Array2::from_shape_vec((1, row.len()), row).expect("row"))
}

/// Row indices that repeat each of `batch` rows `times` times.
pub fn repeat_index(batch: usize, times: usize) -> Rc<Vec<usize>> {
    Rc::new((0..batch).flat_map(|b| std::iter::repeat_n(b, times)).collect())
}

/// `batch x (batch * len)` matrix summing each sequence's rows.
pub fn segment_sum_matrix(batch: usize, len: usize) -> Tensor {
    Tensor::constant(Array2::from_shape_fn((batch, batch * len), |(b, r)| {
        if r / len == b {
            1.0
        } else {
            0.0
        }
    }))
}

pub fn init_attention<R: Rng>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) {
    for p in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{name}.{p}"), d, d, rng);
    }
}

/// Multi-head self-attention over each sequence of a stacked batch.
///
/// `masks[b]` is an additive bias broadcastable to `len x len` (a causal
/// mask, a `1 x len` key-padding row, or both combined).
pub fn self_attention(v: &Vars, name: &str, x: &Tensor, len: usize, heads: usize, masks: &[Tensor]) -> Tensor {
    let d = x.cols();
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    assert_eq!(x.rows(), masks.len() * len, "mask count vs batch");
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(v, &format!("{name}.q"), x);
    let k = linear(v, &format!("{name}.k"), x);
    let val = linear(v, &format!("{name}.v"), x);
    let mut seqs = Vec::with_capacity(masks.len());
    for (b, mask) in masks.iter().enumerate() {
        let (lo, hi) = (b * len, (b + 1) * len);
        let (qb, kb, vb) = (q.slice_rows(lo, hi), k.slice_rows(lo, hi), val.slice_rows(lo, hi));
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let scores = qb.slice_cols(c0, c1).matmul(&kb.slice_cols(c0, c1).t()).scale(scale).add(mask);
            outs.push(scores.softmax().matmul(&vb.slice_cols(c0, c1)));
        }
        seqs.push(Tensor::concat_cols(&outs));
    }
    linear(v, &format!("{name}.o"), &Tensor::concat_rows(&seqs))
}

/// Plain-array helpers for inference loops that never need gradients.
pub mod eval {
    use ndarray::{Array2, ArrayView2, Axis};

    use super::LN_EPS;

    pub fn linear(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        x.dot(w) + b
    }

    pub fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)).insert_axis(Axis(1)) / d;
        let centered = x - &mean;
        let var = centered.mapv(|c| c * c).sum_axis(Axis(1)).insert_axis(Axis(1)) / d;
        centered / var.mapv(|v| (v + LN_EPS).sqrt()) * g + b
    }

    pub fn relu(x: Array2<f64>) -> Array2<f64> {
        x.mapv(|v| v.max(0.0))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        out
    }

    pub fn softmax_row(scores: &mut [f64]) {
        let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for v in scores.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in scores.iter_mut() {
            *v /= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use sarcgen_autograd::no_grad;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut store = ParamStore::new();
        init_layer_norm(&mut store, "ln", 4);
        let v = store.bind(false);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-3.0, 0.0, 0.5, 9.0]]);
        let y = layer_norm(&v, "ln", &x);
        for row in y.value().rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let e = eval::layer_norm(x.value(), store.get("ln.g").unwrap(), store.get("ln.b").unwrap());
        assert!((&e - y.value()).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn gelu_reference_points() {
        let y = gelu(&Tensor::from_rows(&[vec![0.0, 1.0, -1.0]]));
        let v = y.value();
        assert_eq!(v[[0, 0]], 0.0);
        assert!((v[[0, 1]] - 0.841192).abs() < 1e-5);
        assert!((v[[0, 2]] + 0.158808).abs() < 1e-5);
    }

    #[test]
    fn causal_attention_ignores_future_rows() {
        let mut r = rng::rng(3);
        let mut store = ParamStore::new();
        init_attention(&mut store, "a", 4, &mut r);
        let v = store.bind(false);
        let x = Tensor::constant(init::normal(3, 4, 1.0, &mut r));
        let mut x2 = x.value().clone();
        x2.row_mut(2).fill(7.0);
        let mask = causal_mask(3);
        let (y1, y2) = no_grad(|| {
            (
                self_attention(&v, "a", &x, 3, 2, std::slice::from_ref(&mask)),
                self_attention(&v, "a", &Tensor::constant(x2), 3, 2, std::slice::from_ref(&mask)),
            )
        });
        for i in 0..2 {
            for j in 0..4 {
                assert!((y1.value()[[i, j]] - y2.value()[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn segment_sum_matches_loop() {
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let s = segment_sum_matrix(2, 2).matmul(&x);
        assert_eq!(s.value().as_slice().unwrap(), &[3.0, 7.0]);
    }
}
