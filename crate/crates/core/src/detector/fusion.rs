use rand::Rng;
use sarcgen_autograd::{init, ParamStore, Tensor, Vars};

use super::USER_DIM;
use crate::error::{Error, Result};
use crate::nn::{init_linear, linear};

/// `layers` dense ReLU layers `USER_DIM -> m -> ... -> m`.
pub fn init_user_mlp<R: Rng>(store: &mut ParamStore, m: usize, layers: usize, rng: &mut R) {
    for l in 0..layers {
        let fan_in = if l == 0 { USER_DIM } else { m };
        init_linear(store, &format!("user{l}"), fan_in, m, rng);
    }
}

/// Small normal weights and a zero bias, so initial predictions sit near 0.5
/// instead of inheriting an arbitrary offset from the random encoder.
pub fn init_head<R: Rng>(store: &mut ParamStore, width: usize, rng: &mut R) {
    store.insert("head.w", init::normal(width, 1, 0.02, rng));
    store.insert("head.b", init::zeros(1, 1));
}

/// `u = ReLU(x W + b)`, stacked `layers` times.
pub fn embed_user(v: &Vars, x: &Tensor, layers: usize) -> Result<Tensor> {
    let want = v.get("user0.w").rows();
    if x.cols() != want {
        return Err(Error::Shape(format!("user features have width {}, expected {want}", x.cols())));
    }
    let mut u = x.clone();
    for l in 0..layers {
        u = linear(v, &format!("user{l}"), &u).relu();
    }
    Ok(u)
}

/// `[H, u]`, the vector the head classifies.
pub fn combine(h: &Tensor, u: &Tensor) -> Tensor {
    Tensor::concat_cols(&[h.clone(), u.clone()])
}

/// Logit `z = [H, u] W_cls + b_cls`, one row per sample.
pub fn fuse_logits(v: &Vars, h: &Tensor, u: &Tensor) -> Tensor {
    linear(v, "head", &combine(h, u))
}

/// `sigmoid(z)`: probability that the comment is sarcastic.
pub fn fuse_and_classify(v: &Vars, h: &Tensor, u: &Tensor) -> Tensor {
    fuse_logits(v, h, u).sigmoid()
}

/// Mean binary cross-entropy of sigmoid(`logits`) against `targets`
/// (1 = sarcastic): `softplus(z) - y z`.
pub fn bce_loss(logits: &Tensor, targets: &Tensor) -> Tensor {
    logits.softplus().sub(&logits.mul(targets)).mean()
}
