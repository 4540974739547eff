use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::detector::{COUNT_COL, FREQUENCY_COL, REPLY_COL, SARCASM_COL, TOPIC_DIST_COLS, USER_DIM};
use crate::error::{Error, Result};

/// The five behavior features that can be ablated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    /// Comment count.
    CC,
    /// Topic distribution.
    TD,
    /// Sarcasm rate.
    SR,
    /// Comment frequency.
    CF,
    /// Reply ratio.
    RR,
}

impl Feature {
    pub const ALL: [Feature; 5] = [Feature::CC, Feature::TD, Feature::SR, Feature::CF, Feature::RR];

    pub fn name(self) -> &'static str {
        match self {
            Feature::CC => "CC",
            Feature::TD => "TD",
            Feature::SR => "SR",
            Feature::CF => "CF",
            Feature::RR => "RR",
        }
    }

    pub fn parse(s: &str) -> Result<Feature> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config("sweep.grid", format!("unknown feature {s:?}; expected one of CC, TD, SR, CF, RR")))
    }

    /// User-feature columns holding this feature.
    pub fn columns(self) -> Range<usize> {
        match self {
            Feature::CC => COUNT_COL..COUNT_COL + 1,
            Feature::TD => TOPIC_DIST_COLS,
            Feature::SR => SARCASM_COL..SARCASM_COL + 1,
            Feature::CF => FREQUENCY_COL..FREQUENCY_COL + 1,
            Feature::RR => REPLY_COL..REPLY_COL + 1,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Column mask over the user feature vector; `true` keeps the column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColumnMask(pub [bool; USER_DIM]);

impl ColumnMask {
    pub fn all_pass() -> ColumnMask {
        ColumnMask([true; USER_DIM])
    }

    pub fn zeroed(&self) -> Vec<usize> {
        (0..USER_DIM).filter(|&c| !self.0[c]).collect()
    }

    pub fn apply(&self, x: &mut [f64; USER_DIM]) {
        for (v, keep) in x.iter_mut().zip(self.0) {
            if !keep {
                *v = 0.0;
            }
        }
    }
}

/// `F \ drop` and the mask zeroing every behavior column outside it. Topic and
/// hierarchy one-hots always pass.
pub fn ablate_features(set: &[Feature], drop: &[Feature]) -> Result<(Vec<Feature>, ColumnMask)> {
    if let Some(f) = drop.iter().find(|f| !set.contains(f)) {
        return Err(Error::config("sweep.grid", format!("cannot drop {f}: not in the feature set")));
    }
    let mut kept: Vec<Feature> = set.iter().copied().filter(|f| !drop.contains(f)).collect();
    kept.sort();
    kept.dedup();
    let mut mask = ColumnMask::all_pass();
    for f in Feature::ALL.into_iter().filter(|f| !kept.contains(f)) {
        for c in f.columns() {
            mask.0[c] = false;
        }
    }
    Ok((kept, mask))
}

/// Parses an ablation point: `F` (nothing dropped) or names joined by `+`.
pub fn parse_drop(point: &str) -> Result<Vec<Feature>> {
    let p = point.trim();
    if p.eq_ignore_ascii_case("F") || p.is_empty() {
        return Ok(Vec::new());
    }
    p.split('+').map(Feature::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_ranges_cover_the_behavior_block_once() {
        let mut seen = [0; USER_DIM];
        for f in Feature::ALL {
            for c in f.columns() {
                seen[c] += 1;
            }
        }
        assert_eq!(&seen[..COUNT_COL], &[0; COUNT_COL]);
        assert!(seen[COUNT_COL..].iter().all(|&n| n == 1));
    }

    #[test]
    fn drop_parsing() {
        assert_eq!(parse_drop("F").unwrap(), vec![]);
        assert_eq!(parse_drop("sr+CF").unwrap(), vec![Feature::SR, Feature::CF]);
        assert!(parse_drop("XY").is_err());
    }
}
