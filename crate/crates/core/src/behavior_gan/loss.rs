use rand::Rng;
use sarcgen_autograd::Tensor;

use super::model::GenOutput;
use crate::error::{Error, Result};

/// Mean binary cross-entropy of sigmoid(`logits`) against a constant 0/1
/// target, via softplus so saturated logits stay finite.
pub fn bce_with_logits(logits: &Tensor, target: bool) -> Tensor {
    if target {
        logits.neg().softplus().mean()
    } else {
        logits.softplus().mean()
    }
}

/// Elementwise cross-entropy with `real` as soft targets, averaged over all
/// entries. Minimized (at the entropy of `real`) when generated equals real.
pub fn closeness_loss(gen: &GenOutput, real: &Tensor) -> Tensor {
    let pos = real.mul(&gen.log_p);
    let neg = real.rsub_scalar(1.0).mul(&gen.log_1mp);
    pos.add(&neg).mean().neg()
}

pub struct GenLoss {
    pub l_t: Tensor,
    pub l_c: Tensor,
    pub l_g: Tensor,
}

/// `L_t` pushes D(PE, GB) toward 1, `L_c` pulls GB toward RB, and
/// `L_G = lambda L_t + (1 - lambda) L_c`.
pub fn generator_terms(d_fake: &Tensor, gen: &GenOutput, real: &Tensor, lambda: f64) -> GenLoss {
    let l_t = bce_with_logits(d_fake, true);
    let l_c = closeness_loss(gen, real);
    let l_g = l_t.scale(lambda).add(&l_c.scale(1.0 - lambda));
    GenLoss { l_t, l_c, l_g }
}

pub struct DiscLoss {
    pub l_r: Tensor,
    pub l_f: Tensor,
    pub l_h: Tensor,
    pub l_d: Tensor,
}

/// Real pairs toward 1, generated and mismatched pairs toward 0, with
/// `L_D = L_r + L_f / 2 + L_h / 2`.
pub fn discriminator_terms(d_real: &Tensor, d_fake: &Tensor, d_neg: &Tensor) -> DiscLoss {
    let l_r = bce_with_logits(d_real, true);
    let l_f = bce_with_logits(d_fake, false);
    let l_h = bce_with_logits(d_neg, false);
    let l_d = l_r.add(&l_f.scale(0.5)).add(&l_h.scale(0.5));
    DiscLoss { l_r, l_f, l_h, l_d }
}

/// A random single-cycle permutation (Sattolo), so no index maps to itself.
pub fn derangement<R: Rng>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::data("need ≥2 samples for negative pairing"));
    }
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    Ok(p)
}
