use rand::Rng;

use crate::corpus::{CommentRecord, Label};
use crate::error::{Error, Result};
use crate::rng;

/// Flips each label to the other class independently with probability `p`.
/// Returns the noisy labels and the flip mask.
pub fn inject_label_noise(labels: &[Label], p: f64, seed: u64) -> Result<(Vec<Label>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config("noise.p", format!("{p} is outside [0, 1]")));
    }
    let mut r = rng::named_rng(seed, "noise.flip");
    let mut out = Vec::with_capacity(labels.len());
    let mut mask = Vec::with_capacity(labels.len());
    for &l in labels {
        // Draw for every label so the mask at one index never depends on
        // which labels came before it.
        let flip = r.random_bool(p);
        out.push(if flip { l.flipped()? } else { l });
        mask.push(flip);
    }
    Ok((out, mask))
}

/// `records` with noisy labels; everything else is untouched.
pub fn noisy_records(records: &[CommentRecord], p: f64, seed: u64) -> Result<(Vec<CommentRecord>, usize)> {
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let (noisy, mask) = inject_label_noise(&labels, p, seed)?;
    let out = records
        .iter()
        .zip(noisy)
        .map(|(r, l)| CommentRecord { label: l, ..r.clone() })
        .collect();
    Ok((out, mask.iter().filter(|&&m| m).count()))
}
