//! Exact t-SNE over exported embeddings, for 2-D scatter plots.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MIN_ROWS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 750,
            learning_rate: None,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity >= 1.0) {
            return Err(Error::config("project.perplexity", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("project.iterations", "must be positive"));
        }
        if self.learning_rate.is_some_and(|lr| !(lr > 0.0)) {
            return Err(Error::config("project.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// Rows of an embedding export.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
    pub vectors: Array2<f64>,
}

pub fn read_embeddings(path: &Path) -> Result<Embeddings> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(|e| Error::data(format!("{}: line 1: {e}", path.display())))?.clone();
    let width = header.len().saturating_sub(3);
    if header.iter().take(3).collect::<Vec<_>>() != ["id", "label", "prob"] || width == 0 {
        return Err(Error::data(format!("{}: line 1: expected header id,label,prob,e0,...", path.display())));
    }
    let (mut ids, mut labels, mut probs, mut flat) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::data(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| Error::data(format!("{}: line {line}: {what}", path.display()));
        if rec.len() != width + 3 {
            return Err(bad(&format!("expected {} fields, found {}", width + 3, rec.len())));
        }
        ids.push(rec[0].to_string());
        labels.push(rec[1].to_string());
        probs.push(rec[2].parse::<f64>().map_err(|_| bad("probability is not a number"))?);
        for v in rec.iter().skip(3) {
            let x: f64 = v.parse().map_err(|_| bad(&format!("{v:?} is not a number")))?;
            if !x.is_finite() {
                return Err(bad("non-finite embedding value"));
            }
            flat.push(x);
        }
    }
    let vectors = Array2::from_shape_vec((ids.len(), width), flat).expect("row widths checked");
    Ok(Embeddings { ids, labels, probs, vectors })
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let flat: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = x.row(i);
            (0..n).map(move |j| xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum())
        })
        .collect();
    Array2::from_shape_vec((n, n), flat).expect("n x n")
}

/// Conditional affinities of row `i` whose entropy matches `ln(perplexity)`,
/// by bisection on the Gaussian precision.
fn row_affinities(d: ndarray::ArrayView1<f64>, i: usize, perplexity: f64) -> Vec<f64> {
    let n = d.len();
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    let min_d = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
    let mut p = vec![0.0; n];
    for _ in 0..100 {
        let mut sum = 0.0;
        for j in 0..n {
            // Shifting by the nearest distance keeps exp() from underflowing.
            p[j] = if j == i { 0.0 } else { (-(d[j] - min_d) * beta).exp() };
            sum += p[j];
        }
        let mut h = 0.0;
        for pj in p.iter_mut() {
            *pj /= sum;
            if *pj > 1e-300 {
                h -= *pj * pj.ln();
            }
        }
        if (h - target).abs() < 1e-5 {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    p
}

fn joint_affinities(x: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let d = squared_distances(x);
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| row_affinities(d.row(i), i, perplexity)).collect();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            p[[i, j]] = ((rows[i][j] + rows[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    p
}

/// Top two principal directions by power iteration with deflation.
fn pca_init(x: &Array2<f64>, seed: u64) -> Array2<f64> {
    let n = x.nrows();
    let centered = x - &x.mean_axis(Axis(0)).expect("non-empty");
    let cov = centered.t().dot(&centered);
    let dim = cov.nrows();
    let mut r = rng::named_rng(seed, "project.init");
    let mut y = Array2::zeros((n, 2));
    let mut found: Vec<Array1<f64>> = Vec::new();
    for c in 0..2 {
        let mut v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        for _ in 0..200 {
            let mut w = cov.dot(&v);
            for u in &found {
                w = &w - &(u * u.dot(&w));
            }
            let norm = w.dot(&w).sqrt();
            if norm < 1e-300 {
                break;
            }
            v = w / norm;
        }
        let proj = centered.dot(&v);
        y.column_mut(c).assign(&proj);
        found.push(v);
    }
    let std = {
        let col = y.column(0);
        (col.dot(&col) / n as f64).sqrt()
    };
    if std > 1e-12 {
        y.mapv_inplace(|v| v / std * 1e-4);
    } else {
        y.mapv_inplace(|_| StandardNormal.sample(&mut r));
        y.mapv_inplace(|v: f64| v * 1e-4);
    }
    y
}

/// Exact t-SNE (O(n^2) per iteration) from a PCA start; deterministic for a
/// given seed.
pub fn tsne(x: &Array2<f64>, cfg: &TsneConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = x.nrows();
    if n < MIN_ROWS {
        return Err(Error::data(format!("projection needs at least {MIN_ROWS} rows, got {n}")));
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = joint_affinities(x, perplexity);
    let lr = cfg.learning_rate.unwrap_or((n as f64 / cfg.exaggeration / 4.0).max(50.0));
    let mut y = pca_init(x, cfg.seed);
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let num: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            let (dx, dy) = (y[[i, 0]] - y[[j, 0]], y[[i, 1]] - y[[j, 1]]);
                            1.0 / (1.0 + dx * dx + dy * dy)
                        }
                    })
                    .collect()
            })
            .collect();
        let z: f64 = num.iter().map(|r| r.iter().sum::<f64>()).sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = (exag * p[[i, j]] - num[i][j] / z) * num[i][j];
                    g[0] += 4.0 * w * (y[[i, 0]] - y[[j, 0]]);
                    g[1] += 4.0 * w * (y[[i, 1]] - y[[j, 1]]);
                }
                g
            })
            .collect();
        for i in 0..n {
            for k in 0..2 {
                let g = grad[i][k];
                let gain = &mut gains[[i, k]];
                *gain = if (g > 0.0) != (update[[i, k]] > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
                update[[i, k]] = momentum * update[[i, k]] - lr * *gain * g;
                y[[i, k]] += update[[i, k]];
            }
        }
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        y -= &mean;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::diverged("project", "t-SNE produced non-finite coordinates"));
    }
    Ok(y)
}

/// Mean silhouette coefficient of `points` under `labels`; points alone in
/// their cluster score 0.
pub fn silhouette_score<L: PartialEq>(points: &Array2<f64>, labels: &[L]) -> f64 {
    let n = points.nrows();
    assert_eq!(n, labels.len());
    let dist = |i: usize, j: usize| {
        points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut groups: Vec<(usize, f64, usize)> = Vec::new();
        for j in (0..n).filter(|&j| j != i) {
            let g = (0..j).find(|&k| labels[k] == labels[j]).unwrap_or(j);
            match groups.iter_mut().find(|(k, _, _)| *k == g) {
                Some(e) => {
                    e.1 += dist(i, j);
                    e.2 += 1;
                }
                None => groups.push((g, dist(i, j), 1)),
            }
        }
        let own = (0..n).find(|&k| labels[k] == labels[i]).expect("i itself");
        let a = groups.iter().find(|(k, _, _)| *k == own).map(|(_, s, c)| s / *c as f64);
        let b = groups
            .iter()
            .filter(|(k, _, _)| *k != own)
            .map(|(_, s, c)| s / *c as f64)
            .fold(f64::INFINITY, f64::min);
        if let Some(a) = a {
            if b.is_finite() && a.max(b) > 0.0 {
                total += (b - a) / a.max(b);
            }
        }
    }
    total / n as f64
}

/// Projects an embedding export to `id,label,x,y`. Returns the row count.
pub fn project_2d(input: &Path, output: &Path, cfg: &TsneConfig) -> Result<usize> {
    let emb = read_embeddings(input)?;
    let y = tsne(&emb.vectors, cfg)?;
    let mut w = csv::Writer::from_path(output).map_err(|e| Error::data(format!("{}: {e}", output.display())))?;
    let io = |e: csv::Error| Error::data(format!("{}: {e}", output.display()));
    w.write_record(["id", "label", "x", "y"]).map_err(io)?;
    for (i, id) in emb.ids.iter().enumerate() {
        w.write_record([id.as_str(), emb.labels[i].as_str(), &y[[i, 0]].to_string(), &y[[i, 1]].to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(emb.ids.len())
}
