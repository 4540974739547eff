use ndarray::Array2;
use rand::Rng;
use sarcgen_autograd::{ParamStore, Tensor, Vars};

use super::{BehaviorGanConfig, CATEGORICAL_DIM};
use crate::corpus::BEHAVIOR_DIM;
use crate::nn::{init_linear, linear};

/// Scalar outputs in behavior-column order: count, sarcasm rate, frequency,
/// reply ratio.
const SCALAR_COLS: [usize; 4] = [0, 6, 7, 8];

pub fn init_generator<R: Rng>(cfg: &BehaviorGanConfig, rng: &mut R) -> ParamStore {
    let mut s = ParamStore::new();
    init_linear(&mut s, "content", cfg.d_text, cfg.block, rng);
    init_linear(&mut s, "topic", 5, cfg.block, rng);
    init_linear(&mut s, "hier", 2, cfg.block, rng);
    init_linear(&mut s, "fuse", 3 * cfg.block, cfg.hidden, rng);
    init_linear(&mut s, "scalars", cfg.hidden, SCALAR_COLS.len(), rng);
    init_linear(&mut s, "topics", cfg.hidden, 5, rng);
    s
}

pub fn init_discriminator<R: Rng>(cfg: &BehaviorGanConfig, rng: &mut R) -> ParamStore {
    let mut s = ParamStore::new();
    init_linear(&mut s, "h1", cfg.input_dim() + BEHAVIOR_DIM, cfg.disc_hidden, rng);
    init_linear(&mut s, "h2", cfg.disc_hidden, cfg.disc_hidden, rng);
    init_linear(&mut s, "out", cfg.disc_hidden, 1, rng);
    s
}

/// Generator output for a batch. `probs` is the behavior block in unit
/// coordinates; the log terms are exact (no clamping on the sigmoid side) and
/// feed the closeness loss.
pub struct GenOutput {
    pub probs: Tensor,
    pub log_p: Tensor,
    pub log_1mp: Tensor,
}

/// Reorders `[scalar0, topics x5, scalar1..3]` into behavior columns.
fn arrange(scalars: &Tensor, topics: &Tensor) -> Tensor {
    Tensor::concat_cols(&[scalars.slice_cols(0, 1), topics.clone(), scalars.slice_cols(1, 4)])
}

pub fn generator_forward(cfg: &BehaviorGanConfig, v: &Vars, x: &Tensor) -> GenOutput {
    let d = cfg.d_text;
    assert_eq!(x.cols(), d + CATEGORICAL_DIM, "feature width");
    let hc = linear(v, "content", &x.slice_cols(0, d)).relu();
    let ht = linear(v, "topic", &x.slice_cols(d, d + 5)).relu();
    let hh = linear(v, "hier", &x.slice_cols(d + 5, d + 7)).relu();
    let h = linear(v, "fuse", &Tensor::concat_cols(&[hc, ht, hh])).relu();
    let s = linear(v, "scalars", &h);
    let t = linear(v, "topics", &h);
    let tp = t.softmax();
    GenOutput {
        probs: arrange(&s.sigmoid(), &tp),
        log_p: arrange(&s.neg().softplus().neg(), &t.log_softmax()),
        log_1mp: arrange(&s.softplus().neg(), &tp.rsub_scalar(1.0).add_scalar(1e-12).ln()),
    }
}

/// Generated behavior blocks (unit coordinates), one row per feature row.
pub fn generate_behavior(cfg: &BehaviorGanConfig, gen: &ParamStore, features: &Array2<f64>) -> Array2<f64> {
    sarcgen_autograd::no_grad(|| {
        generator_forward(cfg, &gen.bind(false), &Tensor::constant(features.clone()))
            .probs
            .value()
            .clone()
    })
}

/// Logit of the discriminator for each `(features, behavior)` row pair.
pub fn discriminator_logits(v: &Vars, features: &Tensor, behavior: &Tensor) -> Tensor {
    let x = Tensor::concat_cols(&[features.clone(), behavior.clone()]);
    let h = linear(v, "h1", &x).relu();
    let h = linear(v, "h2", &h).relu();
    linear(v, "out", &h)
}
