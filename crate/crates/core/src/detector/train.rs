use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use sarcgen_autograd::{no_grad, Adam, ParamStore, Tensor, Vars};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::encoder::{encode_batch, init_encoder, token_count, tokenize, EncoderConfig};
use super::fusion::{bce_loss, combine, embed_user, fuse_logits, init_head, init_user_mlp};
use super::{user_features, DetectorConfig, EncoderMode, USER_DIM};
use crate::checkpoint;
use crate::corpus::{build_vocab, BehaviorNorm, CommentRecord, Label, Vocab};
use crate::error::{Error, Result};
use crate::expharness::{compute_metrics, MetricsReport};
use crate::rng;

const KIND: &str = "detector";

fn is_fusion_param(name: &str) -> bool {
    name.starts_with("user") || name.starts_with("head")
}

/// Encoder, user network and head in one store (their names do not overlap),
/// plus the vocabulary and behavior scaling they were trained with.
#[derive(Clone, Debug)]
pub struct DetectorModel {
    pub cfg: DetectorConfig,
    pub enc_cfg: EncoderConfig,
    pub vocab: Vocab,
    pub norm: BehaviorNorm,
    pub params: ParamStore,
    pub trained: bool,
}

struct Example {
    ids: Vec<u32>,
    x: [f64; USER_DIM],
    y: f64,
}

impl DetectorModel {
    /// Fresh model for `train`: vocabulary and behavior scaling are fitted on
    /// it, or the encoder is loaded from `cfg.encoder_path`.
    pub fn new(cfg: DetectorConfig, train: &[CommentRecord]) -> Result<DetectorModel> {
        cfg.validate()?;
        let mut r = rng::named_rng(cfg.seed, "det.init");
        let (enc_cfg, vocab, mut params) = match cfg.encoder {
            EncoderMode::SmallScratch => {
                let enc_cfg = cfg.encoder_config();
                let vocab = build_vocab(train, cfg.min_freq)?;
                let params = init_encoder(&enc_cfg, vocab.len(), &mut r);
                (enc_cfg, vocab, params)
            }
            EncoderMode::PretrainedCheckpoint => {
                let dir = cfg.encoder_path.as_deref().expect("validated");
                let src = DetectorModel::load(dir)?;
                let mut enc = ParamStore::new();
                for (name, value) in src.params.iter().filter(|(n, _)| !is_fusion_param(n)) {
                    enc.insert(name, value.clone());
                }
                (src.enc_cfg, src.vocab, enc)
            }
        };
        init_user_mlp(&mut params, cfg.m, cfg.user_layers, &mut r);
        init_head(&mut params, enc_cfg.d + cfg.m, &mut r);
        Ok(DetectorModel {
            norm: BehaviorNorm::fit(train),
            cfg,
            enc_cfg,
            vocab,
            params,
            trained: false,
        })
    }

    fn features(&self, r: &CommentRecord) -> Result<[f64; USER_DIM]> {
        let mut x = user_features(r, &self.norm)?;
        for &c in &self.cfg.zero_cols {
            x[c] = 0.0;
        }
        Ok(x)
    }

    fn examples(&self, records: &[CommentRecord], need_labels: bool) -> Result<Vec<Example>> {
        let max_len = self.enc_cfg.max_len;
        let long = records.iter().filter(|r| token_count(r) > max_len).count();
        if long > 0 {
            log::warn!("{long} of {} records exceed {max_len} tokens and were truncated", records.len());
        }
        records
            .iter()
            .map(|r| {
                let y = match r.label {
                    Label::Sarcastic => 1.0,
                    Label::NonSarcastic => 0.0,
                    Label::Ambiguous if !need_labels => f64::NAN,
                    Label::Ambiguous => return Err(Error::data(format!("record {}: label must be binary", r.id))),
                };
                Ok(Example {
                    ids: tokenize(r, &self.vocab, self.enc_cfg.max_len),
                    x: self.features(r)?,
                    y,
                })
            })
            .collect()
    }

    /// Logits and fused vectors for a batch.
    fn forward(&self, v: &Vars, batch: &[&Example]) -> (Tensor, Tensor) {
        let seqs: Vec<Vec<u32>> = batch.iter().map(|e| e.ids.clone()).collect();
        let h = encode_batch(&self.enc_cfg, v, &seqs);
        let x = Array2::from_shape_fn((batch.len(), USER_DIM), |(i, j)| batch[i].x[j]);
        let u = embed_user(v, &Tensor::constant(x), self.cfg.user_layers).expect("width fixed by USER_DIM");
        (fuse_logits(v, &h, &u), combine(&h, &u))
    }

    /// Training loss on `records` under bound parameters `v`.
    pub fn loss(&self, v: &Vars, records: &[CommentRecord]) -> Result<Tensor> {
        let ex = self.examples(records, true)?;
        let refs: Vec<&Example> = ex.iter().collect();
        let (z, _) = self.forward(v, &refs);
        let y = Array2::from_shape_fn((refs.len(), 1), |(i, _)| refs[i].y);
        Ok(bce_loss(&z, &Tensor::constant(y)))
    }

    /// Probabilities and fused vectors, batched by `cfg.batch`.
    fn infer(&self, ex: &[Example]) -> (Vec<f64>, Array2<f64>) {
        let v = self.params.bind(false);
        let width = self.enc_cfg.d + self.cfg.m;
        let mut probs = Vec::with_capacity(ex.len());
        let mut fused = Array2::zeros((ex.len(), width));
        no_grad(|| {
            let mut at = 0;
            for chunk in ex.chunks(self.cfg.batch) {
                let refs: Vec<&Example> = chunk.iter().collect();
                let (z, c) = self.forward(&v, &refs);
                probs.extend(z.sigmoid().value().iter().copied());
                fused.slice_mut(ndarray::s![at..at + chunk.len(), ..]).assign(c.value());
                at += chunk.len();
            }
        });
        (probs, fused)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut vocab = Vec::new();
        self.vocab.write_to(&mut vocab)?;
        checkpoint::save(
            dir,
            KIND,
            serde_json::to_value(&self.cfg)?,
            json!({ "trained": self.trained, "norm": self.norm, "encoder": self.enc_cfg }),
            &self.params,
            &[("vocab.txt", vocab)],
        )
    }

    pub fn load(dir: &Path) -> Result<DetectorModel> {
        let (m, params) = checkpoint::load(dir, KIND)?;
        let bad = |what: &str, e: serde_json::Error| Error::data(format!("{}: bad {what}: {e}", dir.display()));
        Ok(DetectorModel {
            cfg: serde_json::from_value(m.config).map_err(|e| bad("model config", e))?,
            enc_cfg: serde_json::from_value(m.extras["encoder"].clone()).map_err(|e| bad("encoder config", e))?,
            norm: serde_json::from_value(m.extras["norm"].clone()).map_err(|e| bad("normalization constants", e))?,
            trained: m.extras["trained"].as_bool().unwrap_or(false),
            vocab: Vocab::load(&dir.join("vocab.txt"))?,
            params,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prob: f64,
    pub label: Label,
}

/// `y >= 0.5` counts as sarcastic, so the rule is total.
pub fn threshold(prob: f64) -> Label {
    if prob >= 0.5 {
        Label::Sarcastic
    } else {
        Label::NonSarcastic
    }
}

fn all_finite(grads: &std::collections::BTreeMap<String, Array2<f64>>) -> bool {
    grads.values().all(|g| g.iter().all(|x| x.is_finite()))
}

/// Minimizes binary cross-entropy with Adam, evaluating sarcastic-class F1
/// on `val` after each epoch. Training stops once `patience + 1` epochs pass
/// without improvement, and the best epoch's parameters are returned.
pub fn train_detector(
    train: &[CommentRecord],
    val: &[CommentRecord],
    cfg: &DetectorConfig,
) -> Result<(DetectorModel, History)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("training and validation splits must be non-empty"));
    }
    let mut model = DetectorModel::new(cfg.clone(), train)?;
    let train_ex = model.examples(train, true)?;
    let val_ex = model.examples(val, true)?;
    let golds: Vec<Label> = val.iter().map(|r| r.label).collect();
    let mut opt = Adam::new(cfg.lr);
    let mut opt_fusion = Adam::new(cfg.fusion_lr.unwrap_or(cfg.lr));
    let mut r = rng::named_rng(cfg.seed, "det.train");
    let mut history = History::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_ex[i]).collect();
            let v = model.params.bind(true);
            let (z, _) = model.forward(&v, &batch);
            let y = Array2::from_shape_fn((batch.len(), 1), |(i, _)| batch[i].y);
            let loss = bce_loss(&z, &Tensor::constant(y));
            let grads = v.grads(&loss, &[]);
            if !loss.item().is_finite() || !all_finite(&grads) {
                return Err(Error::diverged("detector", format!("non-finite loss in epoch {epoch}")));
            }
            total += loss.item() * batch.len() as f64;
            let (fusion, enc): (std::collections::BTreeMap<_, _>, std::collections::BTreeMap<_, _>) =
                grads.into_iter().partition(|(k, _)| is_fusion_param(k));
            opt.step(&mut model.params, &enc);
            opt_fusion.step(&mut model.params, &fusion);
        }
        let (probs, _) = model.infer(&val_ex);
        let preds: Vec<Label> = probs.iter().map(|&p| threshold(p)).collect();
        let metrics = compute_metrics(&preds, &golds)?;
        let f1 = metrics.sarcastic.f1;
        log::info!(
            "detector epoch {epoch}: loss {:.4} val acc {:.4} f1(s) {:.4}",
            total / train_ex.len() as f64,
            metrics.accuracy,
            f1
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train_ex.len() as f64,
            val: metrics,
        });
        if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            best = Some((f1, model.params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                history.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    model.params = best.expect("at least one epoch").1;
    model.trained = true;
    Ok((model, history))
}

/// Per-record probability and thresholded label, in input order.
pub fn predict(model: &DetectorModel, records: &[CommentRecord]) -> Result<Vec<Prediction>> {
    let ex = model.examples(records, false)?;
    let (probs, _) = model.infer(&ex);
    Ok(records
        .iter()
        .zip(probs)
        .map(|(r, prob)| Prediction {
            id: r.id.clone(),
            prob,
            label: threshold(prob),
        })
        .collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `id,label,prob,e0..` with one row per record, `e` being the fused
/// `[H, u]` vector. Returns the number of rows written.
pub fn export_embeddings(model: &DetectorModel, records: &[CommentRecord], path: &Path) -> Result<usize> {
    let ex = model.examples(records, false)?;
    let (probs, fused) = model.infer(&ex);
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?,
    );
    let mut header = vec!["id".to_string(), "label".into(), "prob".into()];
    header.extend((0..fused.ncols()).map(|i| format!("e{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![csv_field(&r.id), r.label.code().to_string(), probs[i].to_string()];
        row.extend(fused.row(i).iter().map(|v| v.to_string()));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(records.len())
}
