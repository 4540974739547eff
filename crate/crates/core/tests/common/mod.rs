#![allow(dead_code)]

use ndarray::Array2;
use sarcgen_autograd::{ParamStore, Tensor, Vars};
use sarcgen_core::corpus::{build_vocab, CommentRecord, Hierarchy, Label, Topic, Vocab};

/// Central-difference check of every scalar parameter in `store`.
///
/// Returns the worst relative error; panics listing offending entries when
/// any exceeds `tol`. Relative error uses `max(|a|, |n|, 1e-3)` as the
/// denominator so that exactly-zero gradients compare absolutely.
pub fn check_gradients(store: &ParamStore, tol: f64, loss: impl Fn(&Vars) -> Tensor) -> f64 {
    assert!(store.num_scalars() <= 1000, "gradient check limited to 1k parameters, got {}", store.num_scalars());
    let vars = store.bind(true);
    let analytic = vars.grads(&loss(&vars), &[]);
    let h = 1e-5;
    let eval = |s: &ParamStore| loss(&s.bind(false)).item();
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let shape = store.get(&name).unwrap().dim();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let mut plus = store.clone();
                plus.get_mut(&name).unwrap()[[i, j]] += h;
                let mut minus = store.clone();
                minus.get_mut(&name).unwrap()[[i, j]] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[&name][[i, j]];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
                if rel > tol {
                    bad.push(format!("{name}[{i},{j}]: analytic {a:e} numeric {numeric:e}"));
                }
            }
        }
    }
    assert!(bad.is_empty(), "gradient mismatches:\n{}", bad.join("\n"));
    worst
}

pub fn record(id: &str, text: &str, label: Label) -> CommentRecord {
    CommentRecord::new(id, text, label, Topic::Lifestyle, Hierarchy::TopLevel)
}

/// Vocabulary over `a..d` (8 entries with the reserved ones).
pub fn abcd_vocab() -> Vocab {
    build_vocab(&[record("v", "abcd", Label::Sarcastic)], 1).unwrap()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
