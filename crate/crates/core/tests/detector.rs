mod common;

use ndarray::{array, Array2};
use sarcgen_autograd::{ParamStore, Tensor};
use sarcgen_core::corpus::synthetic::separable_corpus;
use sarcgen_core::corpus::{split_dataset, CommentRecord, Label, PAD};
use sarcgen_core::detector::*;
use sarcgen_core::expharness::compute_metrics;
use sarcgen_core::{rng, Error};

use common::{check_gradients, max_abs_diff};

fn tiny() -> DetectorConfig {
    DetectorConfig {
        d: 8,
        layers: 2,
        heads: 2,
        d_ff: 16,
        max_len: 40,
        m: 4,
        batch: 8,
        epochs: 3,
        ..Default::default()
    }
}

fn small() -> DetectorConfig {
    DetectorConfig {
        d: 16,
        layers: 1,
        heads: 2,
        m: 16,
        batch: 16,
        epochs: 20,
        ..Default::default()
    }
}

fn f1_on(model: &DetectorModel, records: &[CommentRecord]) -> f64 {
    let preds: Vec<Label> = predict(model, records).unwrap().iter().map(|p| p.label).collect();
    let golds: Vec<Label> = records.iter().map(|r| r.label).collect();
    compute_metrics(&preds, &golds).unwrap().sarcastic.f1
}

fn probs(model: &DetectorModel, records: &[CommentRecord]) -> Vec<f64> {
    predict(model, records).unwrap().iter().map(|p| p.prob).collect()
}

fn encoder_fixture() -> (EncoderConfig, ParamStore) {
    let cfg = tiny().encoder_config();
    let store = init_encoder(&cfg, 12, &mut rng::named_rng(3, "test.encoder"));
    (cfg, store)
}

#[test]
fn encoding_is_deterministic() {
    let (cfg, enc) = encoder_fixture();
    let seqs = vec![vec![1, 5, 6, 7, 2], vec![1, 5, 6, 7, 2]];
    let h = encode_eval(&cfg, &enc, &seqs);
    assert_eq!(h.dim(), (2, cfg.d));
    assert_eq!(h.row(0), h.row(1));
    assert_eq!(h, encode_eval(&cfg, &enc, &seqs));
}

#[test]
fn trailing_padding_leaves_encoding_unchanged() {
    let (cfg, enc) = encoder_fixture();
    let short = vec![1, 4, 9, 10, 2];
    let alone = encode_eval(&cfg, &enc, std::slice::from_ref(&short));
    let mut padded = short.clone();
    padded.extend([PAD; 6]);
    let explicit = encode_eval(&cfg, &enc, &[padded]);
    // Padded implicitly by a longer neighbour in the batch.
    let batched = encode_eval(&cfg, &enc, &[short, vec![1, 4, 5, 6, 7, 8, 9, 10, 11, 2]]);
    assert!(max_abs_diff(&alone, &explicit) < 1e-5);
    assert!(max_abs_diff(&alone, &batched.slice(ndarray::s![0..1, ..]).to_owned()) < 1e-5);
}

#[test]
fn long_text_is_truncated_not_rejected() {
    let data = separable_corpus(20, 0.3, 1);
    let cfg = DetectorConfig { max_len: 6, ..tiny() };
    let model = DetectorModel::new(cfg, &data).unwrap();
    let mut long = data[0].clone();
    long.text = "好".repeat(200);
    let p = predict(&model, &[long]).unwrap();
    assert!(p[0].prob > 0.0 && p[0].prob < 1.0);
}

#[test]
fn user_embedding_oracles() {
    let x = Tensor::constant(Array2::from_shape_fn((3, USER_DIM), |(i, j)| (i * USER_DIM + j) as f64 / 10.0 - 2.0));
    let mut s = ParamStore::new();
    s.insert("user0.w", Array2::zeros((USER_DIM, 4)));
    s.insert("user0.b", Array2::zeros((1, 4)));
    assert!(embed_user(&s.bind(false), &x, 1).unwrap().value().iter().all(|&u| u == 0.0));

    s.insert("user0.b", array![[-1.0, -0.5, -3.0, -0.1]]);
    assert!(embed_user(&s.bind(false), &x, 1).unwrap().value().iter().all(|&u| u == 0.0));

    let mut r = rng::named_rng(0, "test.user");
    let w = sarcgen_autograd::init::normal(USER_DIM, 4, 1.0, &mut r);
    let b = array![[0.3, -0.2, 0.0, 0.1]];
    s.insert("user0.w", w.clone());
    s.insert("user0.b", b.clone());
    let got = embed_user(&s.bind(false), &x, 1).unwrap().value().clone();
    let xv = x.value().clone();
    for i in 0..3 {
        for k in 0..4 {
            let mut acc = b[[0, k]];
            for j in 0..USER_DIM {
                acc += xv[[i, j]] * w[[j, k]];
            }
            assert!((got[[i, k]] - acc.max(0.0)).abs() < 1e-6);
        }
    }

    let narrow = Tensor::constant(Array2::zeros((1, USER_DIM - 1)));
    assert!(matches!(embed_user(&s.bind(false), &narrow, 1), Err(Error::Shape(_))));
}

#[test]
fn fusion_head_oracles() {
    let h = Tensor::constant(array![[0.5, -1.0], [2.0, 0.25]]);
    let u = Tensor::constant(array![[1.5, 0.0], [0.75, 3.0]]);
    let mut s = ParamStore::new();
    s.insert("head.w", Array2::zeros((4, 1)));
    s.insert("head.b", array![[0.0]]);
    assert!(fuse_and_classify(&s.bind(false), &h, &u).value().iter().all(|&y| y == 0.5));

    s.insert("head.b", array![[20.0]]);
    assert!(fuse_and_classify(&s.bind(false), &h, &u).value().iter().all(|&y| y > 0.9999 && y < 1.0));

    s.insert("head.w", array![[0.2], [-0.4], [1.0], [0.5]]);
    s.insert("head.b", array![[-0.3]]);
    let z = fuse_logits(&s.bind(false), &h, &u).value().clone();
    let hand = [
        0.5 * 0.2 + -1.0 * -0.4 + 1.5 * 1.0 + 0.0 * 0.5 - 0.3,
        2.0 * 0.2 + 0.25 * -0.4 + 0.75 * 1.0 + 3.0 * 0.5 - 0.3,
    ];
    for (i, want) in hand.iter().enumerate() {
        assert!((z[[i, 0]] - want).abs() < 1e-6);
    }
    assert_eq!(combine(&h, &u).value().row(1).to_vec(), vec![2.0, 0.25, 0.75, 3.0]);
}

#[test]
fn bce_loss_gradients_match_finite_differences() {
    let data = separable_corpus(6, 0.3, 4);
    let mut recs: Vec<CommentRecord> = data.into_iter().take(4).collect();
    for (r, t) in recs.iter_mut().zip(["你好", "真棒啊", "好", "笑死"]) {
        r.text = t.to_string();
    }
    recs[1].context = Some("你".into());
    let cfg = DetectorConfig {
        d: 4,
        layers: 1,
        heads: 2,
        d_ff: 8,
        max_len: 6,
        m: 3,
        ..Default::default()
    };
    let mut model = DetectorModel::new(cfg, &recs).unwrap();
    // Push the head off its near-zero start so every path carries gradient.
    let mut r = rng::named_rng(9, "test.fd");
    model.params.insert("head.w", sarcgen_autograd::init::normal(7, 1, 0.5, &mut r));
    assert!(model.params.num_scalars() <= 1000);
    let worst = check_gradients(&model.params, 1e-3, |v| model.loss(v, &recs).unwrap());
    assert!(worst < 1e-3);
}

#[test]
fn missing_behavior_is_reported() {
    let mut data = separable_corpus(20, 0.3, 1);
    data[3].behavior = None;
    let err = train_detector(&data[..10], &data[10..], &tiny()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("behavior"), "{err}");
    assert!(err.to_string().contains(&data[3].id));
}

#[test]
fn ties_classify_as_sarcastic() {
    assert_eq!(threshold(0.5), Label::Sarcastic);
    assert_eq!(threshold(0.5 - 1e-12), Label::NonSarcastic);
    assert_eq!(threshold(1.0), Label::Sarcastic);
}

#[test]
fn patience_zero_stops_one_epoch_after_best() {
    let data = separable_corpus(120, 0.3, 2);
    let s = split_dataset(&data, (0.6, 0.2, 0.2), 2).unwrap();
    let cfg = DetectorConfig { patience: 0, epochs: 30, ..small() };
    let (_, h) = train_detector(&s.train, &s.val, &cfg).unwrap();
    assert!(h.stopped_early, "expected early stop within 30 epochs");
    assert_eq!(h.epochs.len(), h.best_epoch + 1);
    let best_f1 = h.epochs[h.best_epoch - 1].val.sarcastic.f1;
    assert!(h.epochs.last().unwrap().val.sarcastic.f1 <= best_f1);
}

#[test]
fn training_is_deterministic_under_seed() {
    let data = separable_corpus(60, 0.3, 3);
    let (a, ha) = train_detector(&data[..40], &data[40..], &tiny()).unwrap();
    let (b, hb) = train_detector(&data[..40], &data[40..], &tiny()).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.params, b.params);
    assert_eq!(probs(&a, &data), probs(&b, &data));
    let (c, _) = train_detector(&data[..40], &data[40..], &DetectorConfig { seed: 1, ..tiny() }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn predictions_do_not_depend_on_batching() {
    let data = separable_corpus(40, 0.3, 5);
    let (mut model, _) = train_detector(&data[..30], &data[30..], &tiny()).unwrap();
    model.cfg.batch = 32;
    let batched = probs(&model, &data[..32]);
    model.cfg.batch = 1;
    let single = probs(&model, &data[..32]);
    for (a, b) in batched.iter().zip(&single) {
        assert!((a - b).abs() < 1e-6);
        assert!(*a > 0.0 && *a < 1.0);
    }
    let ids: Vec<String> = predict(&model, &data[..32]).unwrap().into_iter().map(|p| p.id).collect();
    let want: Vec<String> = data[..32].iter().map(|r| r.id.clone()).collect();
    assert_eq!(ids, want);
}

#[test]
fn embedding_export_shape_and_determinism() {
    let data = separable_corpus(30, 0.3, 6);
    let (model, _) = train_detector(&data[..20], &data[20..], &tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(export_embeddings(&model, &data[..10], &p1).unwrap(), 10);
    export_embeddings(&model, &data[..10], &p2).unwrap();
    let text = std::fs::read_to_string(&p1).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    let width = tiny().d + tiny().m;
    assert_eq!(lines[0].split(',').count(), 3 + width);
    assert_eq!(lines[0].split(',').next_back().unwrap(), format!("e{}", width - 1));
    for (line, r) in lines[1..].iter().zip(&data) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 3 + width);
        assert_eq!(cols[0], r.id);
        assert_eq!(cols[1], r.label.code().to_string());
    }
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert!(export_embeddings(&model, &data[..10], &dir.path().join("missing/x.csv")).is_err());
}

#[test]
fn zeroed_column_acts_only_through_that_column() {
    let data = separable_corpus(30, 0.3, 7);
    let (model, _) = train_detector(&data[..20], &data[20..], &tiny()).unwrap();
    let mut ablated = model.clone();
    ablated.cfg.zero_cols = vec![SARCASM_COL];

    // Zeroing the column matches feeding a sarcasm rate of 0 (its unit value).
    let zeroed: Vec<CommentRecord> = data
        .iter()
        .cloned()
        .map(|mut r| {
            r.behavior.as_mut().unwrap().sarcasm_rate = 0.0;
            r
        })
        .collect();
    assert_eq!(probs(&ablated, &data), probs(&model, &zeroed));

    // With the column masked, changing it has no effect; other columns still do.
    let mut shifted = data.clone();
    for r in &mut shifted {
        let b = r.behavior.as_mut().unwrap();
        b.sarcasm_rate = 1.0 - b.sarcasm_rate;
    }
    assert_eq!(probs(&ablated, &data), probs(&ablated, &shifted));
    let mut other = data.clone();
    for r in &mut other {
        let b = r.behavior.as_mut().unwrap();
        b.reply_ratio = 1.0 - b.reply_ratio;
    }
    assert_ne!(probs(&ablated, &data), probs(&ablated, &other));
}

#[test]
fn label_inversion_gives_the_same_f1() {
    let data = separable_corpus(1200, 0.3, 8);
    let inverted: Vec<CommentRecord> = data
        .iter()
        .cloned()
        .map(|mut r| {
            r.label = r.label.flipped().unwrap();
            r
        })
        .collect();
    let mut f1 = Vec::new();
    for set in [&data, &inverted] {
        let s = split_dataset(set, (0.6, 0.2, 0.2), 8).unwrap();
        let (model, _) = train_detector(&s.train, &s.val, &small()).unwrap();
        f1.push(f1_on(&model, &s.test));
    }
    assert!(f1[0] >= 0.95 && f1[1] >= 0.95, "{f1:?}");
    assert!((f1[0] - f1[1]).abs() <= 0.03, "{f1:?}");
}

#[test]
fn checkpoint_round_trip_and_pretrained_encoder() {
    let data = separable_corpus(30, 0.3, 9);
    let (model, _) = train_detector(&data[..20], &data[20..], &tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = DetectorModel::load(dir.path()).unwrap();
    assert!(back.trained);
    assert_eq!(probs(&back, &data), probs(&model, &data));

    // Width settings in the new config are ignored: the checkpoint decides.
    let cfg = DetectorConfig {
        encoder: EncoderMode::PretrainedCheckpoint,
        encoder_path: Some(dir.path().to_path_buf()),
        d: 32,
        m: 6,
        ..tiny()
    };
    let fresh = DetectorModel::new(cfg.clone(), &data).unwrap();
    assert_eq!(fresh.enc_cfg, model.enc_cfg);
    assert_eq!(fresh.params.get("tok"), model.params.get("tok"));
    assert_eq!(fresh.params.get("head.w").unwrap().dim(), (tiny().d + 6, 1));
    let (tuned, _) = train_detector(&data[..20], &data[20..], &cfg).unwrap();
    let out = tempfile::tempdir().unwrap();
    export_embeddings(&tuned, &data[..3], &out.path().join("e.csv")).unwrap();
    let header = std::fs::read_to_string(out.path().join("e.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 3 + tiny().d + 6);
}

#[test]
fn config_validation() {
    assert!(DetectorConfig::default().validate().is_ok());
    let bad = [
        DetectorConfig { fusion_lr: Some(-1.0), ..tiny() },
        DetectorConfig { zero_cols: vec![USER_DIM], ..tiny() },
        DetectorConfig { heads: 3, ..tiny() },
        DetectorConfig { encoder: EncoderMode::PretrainedCheckpoint, ..tiny() },
        DetectorConfig { batch: 0, ..tiny() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })), "{cfg:?}");
    }
}

#[test]
fn user_features_exclude_the_label() {
    let data = separable_corpus(4, 0.3, 10);
    let norm = sarcgen_core::corpus::BehaviorNorm::fit(&data);
    let mut flipped = data[0].clone();
    flipped.label = flipped.label.flipped().unwrap();
    assert_eq!(user_features(&data[0], &norm).unwrap(), user_features(&flipped, &norm).unwrap());
    let x = user_features(&data[0], &norm).unwrap();
    assert_eq!(x[TOPIC_COLS].iter().sum::<f64>(), 1.0);
    assert_eq!(x[HIERARCHY_COLS].iter().sum::<f64>(), 1.0);
    assert!((x[TOPIC_DIST_COLS].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(x[SARCASM_COL], data[0].behavior.as_ref().unwrap().sarcasm_rate);
}
