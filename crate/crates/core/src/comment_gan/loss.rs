//! Loss terms, written against plain tensors so they can be checked in
//! isolation against hand-computed values and finite differences.

use ndarray::Array2;
use sarcgen_autograd::{grad, Tensor};

use crate::corpus::{Label, PAD};
use crate::error::{Error, Result};
use crate::nn;

/// Masked next-token negative log-likelihood, summed over positions and
/// averaged over the `batch` sequences. Rows whose target is PAD contribute
/// nothing.
pub fn sequence_nll(logits: &Tensor, targets: &[u32], batch: usize) -> Result<Tensor> {
    assert_eq!(logits.rows(), targets.len(), "one target per logit row");
    let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] != PAD).collect();
    if rows.is_empty() {
        return Err(Error::data("no valid tokens"));
    }
    let picked_targets: Vec<usize> = rows.iter().map(|&i| targets[i] as usize).collect();
    let lp = logits.index_rows(&std::rc::Rc::new(rows)).log_softmax();
    Ok(lp.pick(&picked_targets).sum().scale(-1.0 / batch as f64))
}

/// Mean over samples of `(||grad_x D(x_hat)|| - 1)^2`, where
/// `x_hat = eps * real + (1 - eps) * fake` per sample.
///
/// `real` and `fake` stack `eps.len()` samples of equal row count. The
/// interpolates are graph leaves, so the penalty reaches the critic's
/// parameters (through the double-backward graph) but not the inputs.
pub fn gradient_penalty(critic: &dyn Fn(&Tensor) -> Tensor, real: &Tensor, fake: &Tensor, eps: &[f64]) -> Tensor {
    let batch = eps.len();
    assert_eq!(real.shape(), fake.shape(), "real and fake batches differ in shape");
    assert!(batch > 0 && real.rows().is_multiple_of(batch), "rows not divisible by batch");
    let len = real.rows() / batch;
    let e = Array2::from_shape_fn((real.rows(), 1), |(r, _)| eps[r / len]);
    let mix = real.value() * &e + fake.value() * &(1.0 - &e);
    let x_hat = Tensor::variable(mix);
    let score = critic(&x_hat);
    let g = grad(&score.sum(), &[&x_hat], true).pop().expect("one gradient");
    let sq = nn::segment_sum_matrix(batch, len).matmul(&g.square().sum_cols());
    sq.add_scalar(1e-16).sqrt().add_scalar(-1.0).square().mean()
}

/// Critic objective `E_fake[D] - E_real[D] + lambda * GP` (minimized).
pub fn critic_objective(d_real: &Tensor, d_fake: &Tensor, gp: &Tensor, lambda_gp: f64) -> Result<Tensor> {
    let finite = |t: &Tensor| t.value().iter().all(|x| x.is_finite());
    if !finite(d_real) || !finite(d_fake) || !finite(gp) {
        return Err(Error::diverged("discriminator", "non-finite critic score"));
    }
    Ok(d_fake.mean().sub(&d_real.mean()).add(&gp.scale(lambda_gp)))
}

fn label_index(l: Label) -> usize {
    match l {
        Label::Sarcastic => 0,
        Label::NonSarcastic => 1,
        Label::Ambiguous => panic!("classifier targets must be binary"),
    }
}

/// Mean negative log-probability of the given labels, `log_probs` being
/// `batch x 2`.
pub fn classifier_nll(log_probs: &Tensor, labels: &[Label]) -> Tensor {
    let idx: Vec<usize> = labels.iter().map(|&l| label_index(l)).collect();
    log_probs.pick(&idx).mean().neg()
}

pub struct GeneratorLoss {
    pub adv: Tensor,
    pub cls: Tensor,
    pub total: Tensor,
}

/// `alpha * (-E[D(fake)]) + (1 - alpha) * NLL(C(fake), intended labels)`.
pub fn generator_objective(d_fake: &Tensor, cls_log_probs: &Tensor, labels: &[Label], alpha: f64) -> GeneratorLoss {
    let adv = d_fake.mean().neg();
    let cls = classifier_nll(cls_log_probs, labels);
    let total = adv.scale(alpha).add(&cls.scale(1.0 - alpha));
    GeneratorLoss { adv, cls, total }
}
