use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::corpus::{CommentRecord, Label};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<CommentRecord>,
    pub val: Vec<CommentRecord>,
    pub test: Vec<CommentRecord>,
}

fn floor_count(n: usize, ratio: f64) -> usize {
    // tolerate representation error such as 20000 * 0.2 = 4000.0000000000005
    ((n as f64) * ratio + 1e-9).floor() as usize
}

/// Splits target counts for one partition across classes so each class gets
/// its proportional floor share and the leftover goes to the classes with the
/// largest fractional remainders.
fn per_class_counts(class_sizes: &[usize], total: usize, ratio: f64, target: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = class_sizes.iter().map(|&n| floor_count(n, ratio)).collect();
    let mut short = target.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    let frac = |i: usize| (class_sizes[i] as f64) * ratio - counts[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(order.len() * 2) {
        if short == 0 {
            break;
        }
        if counts[i] < class_sizes[i] {
            counts[i] += 1;
            short -= 1;
        }
    }
    debug_assert!(total >= target);
    counts
}

/// Label-stratified train/val/test split.
///
/// Split sizes are `floor(n * ratio)` for val and test with the remainder in
/// train. Each class is shuffled independently, dealt out to the partitions,
/// and each partition is shuffled again so classes interleave.
pub fn split_dataset(records: &[CommentRecord], ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (tr, va, te) = ratios;
    if tr < 0.0 || va < 0.0 || te < 0.0 {
        return Err(Error::config("corpus.split", "split ratios must be non-negative"));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::config("corpus.split", "split ratios must sum to 1"));
    }
    if records.is_empty() {
        return Err(Error::data("empty corpus"));
    }
    let n = records.len();
    let n_val = floor_count(n, va);
    let n_test = floor_count(n, te);

    let mut by_class: BTreeMap<Label, Vec<&CommentRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.label).or_default().push(r);
    }
    let mut rng = rng::rng(seed);
    for group in by_class.values_mut() {
        group.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let val_counts = per_class_counts(&sizes, n, va, n_val);
    let remaining: Vec<usize> = sizes.iter().zip(&val_counts).map(|(s, v)| s - v).collect();
    // test shares are computed on the full class sizes, capped by what is left
    let mut test_counts = per_class_counts(&sizes, n, te, n_test);
    for (t, r) in test_counts.iter_mut().zip(&remaining) {
        *t = (*t).min(*r);
    }

    let mut split = Split::default();
    for (ci, group) in by_class.values().enumerate() {
        let (v, t) = (val_counts[ci], test_counts[ci]);
        split.val.extend(group[..v].iter().map(|r| (*r).clone()));
        split.test.extend(group[v..v + t].iter().map(|r| (*r).clone()));
        split.train.extend(group[v + t..].iter().map(|r| (*r).clone()));
    }
    split.train.shuffle(&mut rng);
    split.val.shuffle(&mut rng);
    split.test.shuffle(&mut rng);
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Hierarchy, Topic};
    use std::collections::HashSet;

    fn records(n_s: usize, n_n: usize) -> Vec<CommentRecord> {
        (0..n_s + n_n)
            .map(|i| {
                let label = if i < n_s { Label::Sarcastic } else { Label::NonSarcastic };
                CommentRecord::new(format!("r{i}"), "x", label, Topic::Politics, Hierarchy::Nested)
            })
            .collect()
    }

    fn count(rs: &[CommentRecord], l: Label) -> usize {
        rs.iter().filter(|r| r.label == l).count()
    }

    #[test]
    fn six_two_two_on_twenty_thousand() {
        let s = split_dataset(&records(10_000, 10_000), (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (12_000, 4_000, 4_000));
        assert_eq!(count(&s.val, Label::Sarcastic), 2_000);
    }

    #[test]
    fn degenerate_ratio_puts_all_in_train() {
        let s = split_dataset(&records(5, 5), (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 0, 0));
    }

    #[test]
    fn deterministic_for_seed_and_varies_across_seeds() {
        let rs = records(30, 20);
        let a = split_dataset(&rs, (0.6, 0.2, 0.2), 5).unwrap();
        let b = split_dataset(&rs, (0.6, 0.2, 0.2), 5).unwrap();
        let c = split_dataset(&rs, (0.6, 0.2, 0.2), 6).unwrap();
        assert_eq!(a, b);
        let ids = |s: &Split| s.train.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_ne!(ids(&a), ids(&c));
    }

    #[test]
    fn negative_ratio_rejected() {
        assert!(split_dataset(&records(2, 2), (1.2, -0.2, 0.0), 1).is_err());
        assert!(split_dataset(&records(2, 2), (0.5, 0.2, 0.2), 1).is_err());
    }

    #[test]
    fn partition_and_stratification_hold_for_odd_sizes() {
        for (ns, nn) in [(7, 3), (13, 29), (1, 1), (50, 0), (33, 34)] {
            let rs = records(ns, nn);
            let s = split_dataset(&rs, (0.6, 0.2, 0.2), 3).unwrap();
            let n = rs.len();
            assert_eq!(s.val.len(), floor_count(n, 0.2));
            assert_eq!(s.test.len(), floor_count(n, 0.2));
            let all: Vec<&str> = s.train.iter().chain(&s.val).chain(&s.test).map(|r| r.id.as_str()).collect();
            assert_eq!(all.len(), n);
            assert_eq!(all.iter().collect::<HashSet<_>>().len(), n);
            for part in [&s.train, &s.val, &s.test] {
                for (l, total) in [(Label::Sarcastic, ns), (Label::NonSarcastic, nn)] {
                    let expect = part.len() as f64 * total as f64 / n as f64;
                    let got = count(part, l) as f64;
                    assert!((got - expect).abs() <= 1.0 + 1e-9, "{ns}/{nn}: {got} vs {expect}");
                }
            }
        }
    }
}
