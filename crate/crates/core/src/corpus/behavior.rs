use serde::{Deserialize, Serialize};

use crate::corpus::{CommentRecord, UserBehavior};

/// Width of a behavior block in unit coordinates:
/// `[count, topic x5, sarcasm rate, frequency, reply ratio]`.
pub const BEHAVIOR_DIM: usize = 9;

pub const COUNT_COL: usize = 0;
pub const TOPIC_COLS: std::ops::Range<usize> = 1..6;
pub const SARCASM_COL: usize = 6;
pub const FREQUENCY_COL: usize = 7;
pub const REPLY_COL: usize = 8;

/// Maps unbounded counts and rates into `[0, 1]`: `log1p`, then min-max
/// scaling with constants fitted on a reference corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorNorm {
    pub count_lo: f64,
    pub count_hi: f64,
    pub freq_lo: f64,
    pub freq_hi: f64,
}

impl Default for BehaviorNorm {
    fn default() -> Self {
        // log1p(0) .. log1p(10_000) comments, 0 .. log1p(100) per day
        BehaviorNorm {
            count_lo: 0.0,
            count_hi: 10_000f64.ln_1p(),
            freq_lo: 0.0,
            freq_hi: 100f64.ln_1p(),
        }
    }
}

fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    ((x.ln_1p() - lo) / (hi - lo)).clamp(0.0, 1.0)
}

fn unscale(u: f64, lo: f64, hi: f64) -> f64 {
    (lo + u.clamp(0.0, 1.0) * (hi - lo)).exp_m1().max(0.0)
}

impl BehaviorNorm {
    /// Fits on every record that carries a behavior block; falls back to the
    /// defaults when none do.
    pub fn fit(records: &[CommentRecord]) -> BehaviorNorm {
        let bs: Vec<&UserBehavior> = records.iter().filter_map(|r| r.behavior.as_ref()).collect();
        if bs.is_empty() {
            return BehaviorNorm::default();
        }
        let fold = |f: &dyn Fn(&UserBehavior) -> f64| {
            bs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| {
                let v = f(b);
                (lo.min(v), hi.max(v))
            })
        };
        let (count_lo, count_hi) = fold(&|b| (b.comment_count as f64).ln_1p());
        let (freq_lo, freq_hi) = fold(&|b| b.comment_frequency.ln_1p());
        BehaviorNorm {
            count_lo,
            count_hi,
            freq_lo,
            freq_hi,
        }
    }

    pub fn to_unit(&self, b: &UserBehavior) -> [f64; BEHAVIOR_DIM] {
        let mut v = [0.0; BEHAVIOR_DIM];
        v[COUNT_COL] = scale(b.comment_count as f64, self.count_lo, self.count_hi);
        v[TOPIC_COLS].copy_from_slice(&b.topic_distribution);
        v[SARCASM_COL] = b.sarcasm_rate;
        v[FREQUENCY_COL] = scale(b.comment_frequency, self.freq_lo, self.freq_hi);
        v[REPLY_COL] = b.reply_ratio;
        v
    }

    /// Back to natural units. The topic block is renormalized so it sums to 1
    /// in floating point, and the count is rounded.
    pub fn from_unit(&self, v: &[f64; BEHAVIOR_DIM]) -> UserBehavior {
        let mut td = [0.0; 5];
        td.copy_from_slice(&v[TOPIC_COLS]);
        let s: f64 = td.iter().sum();
        if s > 0.0 {
            td.iter_mut().for_each(|x| *x /= s);
        } else {
            td = [0.2; 5];
        }
        UserBehavior {
            comment_count: unscale(v[COUNT_COL], self.count_lo, self.count_hi).round() as u64,
            topic_distribution: td,
            sarcasm_rate: v[SARCASM_COL].clamp(0.0, 1.0),
            comment_frequency: unscale(v[FREQUENCY_COL], self.freq_lo, self.freq_hi),
            reply_ratio: v[REPLY_COL].clamp(0.0, 1.0),
        }
    }
}
