use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sarcgen_core::corpus::synthetic::separable_corpus;
use sarcgen_core::corpus::{split_dataset, Label};
use sarcgen_core::detector::{DetectorConfig, SARCASM_COL, TOPIC_DIST_COLS, USER_DIM};
use sarcgen_core::expharness::*;
use sarcgen_core::{rng, Error};

use Label::{NonSarcastic as N, Sarcastic as S};

fn brute_force(preds: &[Label], golds: &[Label]) -> MetricsReport {
    let count = |p: Label, g: Label| preds.iter().zip(golds).filter(|(&a, &b)| a == p && b == g).count();
    let (tp, fp, tn, fn_) = (count(S, S), count(S, N), count(N, N), count(N, S));
    let class = |hit: usize, false_pos: usize, miss: usize| {
        let precision = if hit + false_pos == 0 { 0.0 } else { hit as f64 / (hit + false_pos) as f64 };
        let recall = if hit + miss == 0 { 0.0 } else { hit as f64 / (hit + miss) as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassMetrics { precision, recall, f1 }
    };
    MetricsReport {
        accuracy: (tp + tn) as f64 / golds.len() as f64,
        non_sarcastic: class(tn, fn_, fp),
        sarcastic: class(tp, fp, fn_),
        tp,
        fp,
        tn,
        fn_,
    }
}

#[test]
fn metrics_match_brute_force_on_random_cases() {
    let mut r = rng::named_rng(0, "test.metrics");
    for _ in 0..1000 {
        let n = r.random_range(1..60);
        let bias = r.random::<f64>();
        let golds: Vec<Label> = (0..n).map(|_| if r.random_bool(0.5) { S } else { N }).collect();
        let preds: Vec<Label> = (0..n).map(|_| if r.random_bool(bias) { S } else { N }).collect();
        let got = compute_metrics(&preds, &golds).unwrap();
        assert_eq!(got, brute_force(&preds, &golds));
        assert_eq!(got.total(), n);
    }
}

#[test]
fn metrics_hand_case() {
    let m = compute_metrics(&[S, N, N, N], &[S, S, N, N]).unwrap();
    assert_eq!(m.sarcastic.precision, 1.0);
    assert_eq!(m.sarcastic.recall, 0.5);
    assert!((m.sarcastic.f1 - 0.6667).abs() < 1e-4);
    assert_eq!(m.accuracy, 0.75);
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 0, 2, 1));

    let perfect = compute_metrics(&[S, N, S], &[S, N, S]).unwrap();
    assert_eq!(perfect.accuracy, 1.0);
    assert_eq!(perfect.sarcastic.f1, 1.0);
    assert_eq!(perfect.non_sarcastic.f1, 1.0);

    assert!(compute_metrics(&[S], &[S, N]).is_err());
    assert!(compute_metrics(&[], &[]).is_err());
    assert!(compute_metrics(&[Label::Ambiguous], &[S]).is_err());
}

#[test]
fn metrics_table_layout() {
    let m = compute_metrics(&[S, N, N, N], &[S, S, N, N]).unwrap();
    let t = metrics_table(&[TableRow {
        model: "fusion".into(),
        text: true,
        context: true,
        user: true,
        report: m,
    }]);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("| Model | T | C | U | Acc. | Non-sarcastic Pre."));
    assert_eq!(lines[2], "| fusion | x | x | x | 0.7500 | 0.6667 | 1.0000 | 0.8000 | 1.0000 | 0.5000 | 0.6667 |");
}

proptest! {
    #[test]
    fn metrics_stay_in_range(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..80)) {
        let preds: Vec<Label> = pairs.iter().map(|p| if p.0 { S } else { N }).collect();
        let golds: Vec<Label> = pairs.iter().map(|p| if p.1 { S } else { N }).collect();
        let m = compute_metrics(&preds, &golds).unwrap();
        for v in [m.accuracy, m.sarcastic.precision, m.sarcastic.recall, m.sarcastic.f1,
                  m.non_sarcastic.precision, m.non_sarcastic.recall, m.non_sarcastic.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(m.total(), pairs.len());
    }

    #[test]
    fn ablation_mask_leaves_other_columns_alone(
        x in prop::array::uniform16(-5.0f64..5.0),
        drop_bits in 0u8..32,
        delta in -3.0f64..3.0,
    ) {
        let drop: Vec<Feature> = Feature::ALL.into_iter().enumerate()
            .filter(|(i, _)| drop_bits & (1 << i) != 0).map(|(_, f)| f).collect();
        let (_, mask) = ablate_features(&Feature::ALL, &drop).unwrap();
        let mut a = x;
        mask.apply(&mut a);
        for c in 0..USER_DIM {
            if mask.0[c] {
                prop_assert_eq!(a[c], x[c]);
                // Perturbing a kept column moves only that column.
                let mut y = x;
                y[c] += delta;
                mask.apply(&mut y);
                for k in (0..USER_DIM).filter(|&k| k != c) {
                    prop_assert_eq!(y[k], a[k]);
                }
            } else {
                prop_assert_eq!(a[c], 0.0);
            }
        }
    }
}

#[test]
fn noise_identity_total_flip_and_reproducibility() {
    let labels: Vec<Label> = (0..500).map(|i| if i % 3 == 0 { S } else { N }).collect();
    let (same, mask) = inject_label_noise(&labels, 0.0, 4).unwrap();
    assert_eq!(same, labels);
    assert!(mask.iter().all(|&m| !m));

    let (flipped, mask) = inject_label_noise(&labels, 1.0, 4).unwrap();
    assert!(mask.iter().all(|&m| m));
    assert!(flipped.iter().zip(&labels).all(|(a, b)| a != b));

    let a = inject_label_noise(&labels, 0.3, 11).unwrap();
    assert_eq!(a, inject_label_noise(&labels, 0.3, 11).unwrap());
    assert_ne!(a.1, inject_label_noise(&labels, 0.3, 12).unwrap().1);
    assert_eq!(a.1.len(), labels.len());
    for ((l, m), orig) in a.0.iter().zip(&a.1).zip(&labels) {
        assert_eq!(*m, l != orig);
    }
}

#[test]
fn noise_flip_count_within_four_sigma() {
    let labels = vec![S; 20_000];
    let sigma = (20_000.0f64 * 0.25 * 0.75).sqrt();
    for seed in 0..5 {
        let (_, mask) = inject_label_noise(&labels, 0.25, seed).unwrap();
        let flips = mask.iter().filter(|&&m| m).count() as f64;
        assert!((flips - 5000.0).abs() <= 4.0 * sigma, "seed {seed}: {flips} flips");
    }
}

#[test]
fn noise_flips_are_independent() {
    // Chi-square test of independence on the 2x2 table of adjacent flips.
    let n = 100_000;
    let (_, mask) = inject_label_noise(&vec![N; n], 0.3, 99).unwrap();
    let mut table = [[0.0f64; 2]; 2];
    for w in mask.windows(2) {
        table[w[0] as usize][w[1] as usize] += 1.0;
    }
    let total: f64 = table.iter().flatten().sum();
    let mut chi2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let row: f64 = table[i].iter().sum();
            let col = table[0][j] + table[1][j];
            let expected = row * col / total;
            chi2 += (table[i][j] - expected).powi(2) / expected;
        }
    }
    // One degree of freedom: chi2 = z^2, so 4 sigma is chi2 < 16.
    assert!(chi2 < 16.0, "chi2 {chi2}");
}

#[test]
fn ablation_column_arithmetic() {
    let (kept, mask) = ablate_features(&Feature::ALL, &[]).unwrap();
    assert_eq!(kept, Feature::ALL.to_vec());
    assert_eq!(mask, ColumnMask::all_pass());

    let (kept, mask) = ablate_features(&Feature::ALL, &[Feature::SR]).unwrap();
    assert_eq!(kept.len(), 4);
    assert_eq!(mask.zeroed(), vec![SARCASM_COL]);

    let (_, mask) = ablate_features(&Feature::ALL, &[Feature::TD]).unwrap();
    assert_eq!(mask.zeroed(), TOPIC_DIST_COLS.collect::<Vec<_>>());

    let err = ablate_features(&[Feature::CC, Feature::SR], &[Feature::RR]).unwrap_err();
    assert!(matches!(err, Error::Config { .. }));
}

#[test]
fn noise_grid_has_nine_points() {
    let spec = SweepSpec::default();
    let labels: Vec<String> = spec.points().unwrap().iter().map(Point::label).collect();
    assert_eq!(labels, ["0.05", "0.1", "0.15", "0.2", "0.25", "0.3", "0.35", "0.4", "0.45"]);
    assert_eq!(SweepSpec { seeds: 3, ..spec }.seed_values(), vec![0, 1, 2]);
}

#[test]
fn robustness_resampling_hits_exact_counts() {
    let data = separable_corpus(400, 0.3, 1);
    for prop in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let out = resample_proportion(&data, prop, 200, false, 5).unwrap();
        assert_eq!(out.len(), 200);
        let s = out.iter().filter(|r| r.label == S).count();
        assert_eq!(s, (prop * 200.0f64).round() as usize);
        // Without replacement: no duplicates.
        let mut ids: Vec<&str> = out.iter().map(|r| r.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 200);
    }
    assert_eq!(resample_proportion(&data, 0.3, 200, false, 5).unwrap(), resample_proportion(&data, 0.3, 200, false, 5).unwrap());
}

#[test]
fn infeasible_resampling_names_the_shortfall() {
    let data = separable_corpus(100, 0.3, 1);
    let err = resample_proportion(&data, 0.9, 100, false, 0).unwrap_err().to_string();
    assert!(err.contains("90 sarcastic") && err.contains("short by 40"), "{err}");

    let topped = resample_proportion(&data, 0.9, 100, true, 0).unwrap();
    assert_eq!(topped.iter().filter(|r| r.label == S).count(), 90);

    let only_plain: Vec<_> = data.iter().filter(|r| r.label == N).cloned().collect();
    assert!(resample_proportion(&only_plain, 0.1, 20, true, 0).is_err());

    let err = subsample(&data, 150, 0).unwrap_err().to_string();
    assert!(err.contains("short by 50"), "{err}");
    assert_eq!(subsample(&data, 30, 0).unwrap().len(), 30);
}

#[test]
fn ablation_jobs_zero_the_dropped_columns() {
    let data = separable_corpus(20, 0.3, 1);
    let spec = SweepSpec {
        kind: SweepKind::Ablation,
        ..Default::default()
    };
    let base = DetectorConfig::default();
    let (train, cfg) = prepare_job(&spec, &Point::Drop(vec![Feature::TD, Feature::SR]), 7, &base, &data).unwrap();
    assert_eq!(train, data);
    assert_eq!(cfg.seed, 7);
    let mut want: Vec<usize> = TOPIC_DIST_COLS.collect();
    want.push(SARCASM_COL);
    assert_eq!(cfg.zero_cols, want);

    let noise = SweepSpec::default();
    let (noisy, _) = prepare_job(&noise, &Point::Noise(0.45), 7, &base, &data).unwrap();
    assert_ne!(noisy, data);
    assert!(noisy.iter().zip(&data).all(|(a, b)| a.id == b.id && a.text == b.text));
}

fn tiny_detector() -> DetectorConfig {
    DetectorConfig {
        d: 8,
        layers: 1,
        heads: 2,
        d_ff: 16,
        m: 4,
        batch: 16,
        epochs: 2,
        ..Default::default()
    }
}

#[test]
fn sweep_appends_rows_and_resumes() {
    let data = separable_corpus(100, 0.3, 2);
    let split = split_dataset(&data, (0.6, 0.2, 0.2), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        kind: SweepKind::Noise,
        grid: vec![GridValue::Number(0.05), GridValue::Number(0.45)],
        seeds: 2,
        concurrency: 2,
        ..Default::default()
    };
    let rows = run_sweep(&spec, &tiny_detector(), &split, dir.path()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(
        rows.iter().map(|r| (r.point.as_str(), r.seed)).collect::<Vec<_>>(),
        [("0.05", 0), ("0.05", 1), ("0.45", 0), ("0.45", 1)]
    );
    let csv = dir.path().join(RESULTS_FILE);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER);
    assert_eq!(text.lines().count(), 5);
    let svg = std::fs::read_to_string(dir.path().join("noise.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));

    // Completed points are not re-run.
    let again = run_sweep(&spec, &tiny_detector(), &split, dir.path()).unwrap();
    assert_eq!(again, rows);
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), text);

    // A deleted row is recomputed bit for bit.
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("noise,0.45,1,")).collect();
    std::fs::write(&csv, kept.join("\n") + "\n").unwrap();
    let redone = run_sweep(&spec, &tiny_detector(), &split, dir.path()).unwrap();
    assert_eq!(redone, rows);
    let row = rows.iter().find(|r| r.point == "0.45" && r.seed == 1).unwrap();
    assert!(std::fs::read_to_string(&csv).unwrap().lines().any(|l| l == row.to_csv()));
}

#[test]
fn sweep_rejects_invalid_specs_before_training() {
    let data = separable_corpus(40, 0.3, 2);
    let split = split_dataset(&data, (0.6, 0.2, 0.2), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        kind: SweepKind::Noise,
        grid: vec![GridValue::Number(0.6)],
        ..Default::default()
    };
    assert!(matches!(run_sweep(&spec, &tiny_detector(), &split, dir.path()), Err(Error::Config { .. })));
    assert!(!dir.path().join(RESULTS_FILE).exists());
}

fn write_embeddings(path: &std::path::Path, rows: &[(String, u8, Vec<f64>)]) {
    let width = rows[0].2.len();
    let mut s = String::from("id,label,prob");
    for i in 0..width {
        s.push_str(&format!(",e{i}"));
    }
    s.push('\n');
    for (id, label, v) in rows {
        s.push_str(&format!("{id},{label},0.5"));
        for x in v {
            s.push_str(&format!(",{x}"));
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

fn two_clusters(n_each: usize, dim: usize, seed: u64) -> Vec<(String, u8, Vec<f64>)> {
    let mut r = rng::named_rng(seed, "test.clusters");
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..2 * n_each)
        .map(|i| {
            let c = (i % 2) as u8;
            let center = if c == 0 { -5.0 } else { 5.0 };
            let v = (0..dim).map(|_| center + noise.sample(&mut r)).collect();
            (format!("r{i}"), c, v)
        })
        .collect()
}

#[test]
fn projection_preserves_separated_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("emb.csv"), dir.path().join("xy.csv"));
    let rows = two_clusters(60, 10, 1);
    write_embeddings(&input, &rows);
    let cfg = TsneConfig { iterations: 400, ..Default::default() };
    assert_eq!(project_2d(&input, &output, &cfg).unwrap(), 120);

    let mut rdr = csv::Reader::from_path(&output).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (rec, (id, label, _)) in rdr.records().zip(&rows) {
        let rec = rec.unwrap();
        assert_eq!(&rec[0], id);
        assert_eq!(rec[1].parse::<u8>().unwrap(), *label);
        pts.push(rec[2].parse::<f64>().unwrap());
        pts.push(rec[3].parse::<f64>().unwrap());
        labels.push(*label);
    }
    let pts = Array2::from_shape_vec((labels.len(), 2), pts).unwrap();
    let s = silhouette_score(&pts, &labels);
    assert!(s >= 0.5, "silhouette {s}");

    // Deterministic under seed.
    let again = dir.path().join("xy2.csv");
    project_2d(&input, &again, &cfg).unwrap();
    assert_eq!(std::fs::read(&output).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn duplicate_vectors_land_together() {
    let mut rows = two_clusters(10, 4, 3);
    rows[5].2 = rows[2].2.clone();
    let x = Array2::from_shape_fn((rows.len(), 4), |(i, j)| rows[i].2[j]);
    let y = tsne(&x, &TsneConfig { iterations: 300, ..Default::default() }).unwrap();
    let d = ((y[[5, 0]] - y[[2, 0]]).powi(2) + (y[[5, 1]] - y[[2, 1]]).powi(2)).sqrt();
    let spread = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(d < 1e-6 * spread.max(1.0), "distance {d}");
}

#[test]
fn malformed_embedding_files_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut rows = two_clusters(6, 3, 0);
    write_embeddings(&path, &rows);
    let text = std::fs::read_to_string(&path).unwrap().replace("r4,0,0.5,", "r4,0,0.5,oops");
    std::fs::write(&path, text).unwrap();
    let err = read_embeddings(&path).unwrap_err().to_string();
    assert!(err.contains("line 6"), "{err}");

    rows.truncate(5);
    write_embeddings(&path, &rows);
    let out = dir.path().join("o.csv");
    assert!(project_2d(&path, &out, &TsneConfig::default()).is_err());

    std::fs::write(&path, "id,label\nx,0\n").unwrap();
    assert!(read_embeddings(&path).unwrap_err().to_string().contains("line 1"));
}
