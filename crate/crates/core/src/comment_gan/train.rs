use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use sarcgen_autograd::{no_grad, Adam, ParamStore, Tensor, Vars};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::critic::{classifier_log_probs, critic_score, embed_hard, embed_soft, init_classifier, init_critic, with_condition};
use super::generator::{generate_batch, init_generator, soft_sequences, teacher_forced_logits, DecodeMode};
use super::loss::{classifier_nll, critic_objective, generator_objective, gradient_penalty, sequence_nll};
use super::GanConfig;
use crate::checkpoint;
use crate::corpus::{
    decode, encode_condition, encode_text, CommentRecord, ConditionalFeature, Hierarchy, Label, Provenance,
    TokenSequence, Topic, Vocab, COND_DIM,
};
use crate::error::{Error, Result};
use crate::rng;

const KIND: &str = "comment_gan";

/// One encoded training sequence with its condition.
#[derive(Clone, Debug)]
pub struct Sample {
    pub seq: TokenSequence,
    pub cond: ConditionalFeature,
}

/// Generator, critic and classifier parameters plus the vocabulary they were
/// built for.
#[derive(Clone, Debug)]
pub struct GanModel {
    pub cfg: GanConfig,
    pub vocab: Vocab,
    pub gen: ParamStore,
    pub critic: ParamStore,
    pub cls: ParamStore,
    pub pretrained: bool,
}

impl GanModel {
    pub fn new(cfg: GanConfig, vocab: Vocab) -> Result<GanModel> {
        cfg.validate()?;
        let mut r = rng::named_rng(cfg.seed, "gan.init");
        let v = vocab.len();
        Ok(GanModel {
            gen: init_generator(&cfg, v, &mut r),
            critic: init_critic(&cfg, v, &mut r),
            cls: init_classifier(&cfg, v, &mut r),
            cfg,
            vocab,
            pretrained: false,
        })
    }

    /// Encodes records for training. Labels must be binary.
    pub fn encode(&self, records: &[CommentRecord]) -> Result<Vec<Sample>> {
        records
            .iter()
            .map(|r| {
                Ok(Sample {
                    seq: encode_text(&r.text, &self.vocab, self.cfg.t_max),
                    cond: encode_condition(r.label, r.topic, r.hierarchy)
                        .map_err(|e| Error::data(format!("record {}: {e}", r.id)))?,
                })
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.gen.num_scalars() + self.critic.num_scalars() + self.cls.num_scalars()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut all = ParamStore::new();
        all.merge_prefixed("gen.", &self.gen);
        all.merge_prefixed("critic.", &self.critic);
        all.merge_prefixed("cls.", &self.cls);
        let mut vocab = Vec::new();
        self.vocab.write_to(&mut vocab)?;
        checkpoint::save(
            dir,
            KIND,
            serde_json::to_value(&self.cfg)?,
            json!({ "pretrained": self.pretrained }),
            &all,
            &[("vocab.txt", vocab)],
        )
    }

    pub fn load(dir: &Path) -> Result<GanModel> {
        let (m, all) = checkpoint::load(dir, KIND)?;
        let cfg: GanConfig = serde_json::from_value(m.config)
            .map_err(|e| Error::data(format!("{}: bad model config: {e}", dir.display())))?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        Ok(GanModel {
            cfg,
            vocab,
            gen: all.extract_prefixed("gen."),
            critic: all.extract_prefixed("critic."),
            cls: all.extract_prefixed("cls."),
            pretrained: m.extras["pretrained"].as_bool().unwrap_or(false),
        })
    }
}

fn noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn conditions(batch: &[Sample], drop_label: bool) -> Array2<f64> {
    Array2::from_shape_fn((batch.len(), COND_DIM), |(i, j)| {
        let c = if drop_label { batch[i].cond.without_label() } else { batch[i].cond };
        c.values[j]
    })
}

/// Teacher-forced pretraining loss for `batch` under noise `z` (one row per
/// sample).
pub fn pretrain_loss(cfg: &GanConfig, gen: &Vars, batch: &[Sample], z: &Array2<f64>) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let t = cfg.t_max;
    let inputs: Vec<u32> = batch.iter().flat_map(|s| s.seq.ids[..t - 1].iter().copied()).collect();
    let targets: Vec<u32> = batch.iter().flat_map(|s| s.seq.ids[1..].iter().copied()).collect();
    let f = Tensor::constant(conditions(batch, false));
    let logits = teacher_forced_logits(cfg, gen, &inputs, batch.len(), &Tensor::constant(z.clone()), &f);
    sequence_nll(&logits, &targets, batch.len())
}

/// Loss values from one adversarial step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Critic objective at the last critic iteration.
    pub l_d: f64,
    pub gp: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub l_g_adv: f64,
    pub l_g_cls: f64,
    pub l_g: f64,
    pub l_c: f64,
}

fn all_finite(grads: &std::collections::BTreeMap<String, Array2<f64>>) -> bool {
    grads.values().all(|g| g.iter().all(|x| x.is_finite()))
}

/// Owns a model plus optimizer and RNG state for both training stages.
pub struct GanTrainer {
    pub model: GanModel,
    opt_pre: Adam,
    opt_g: Adam,
    opt_d: Adam,
    opt_c: Adam,
    rng: rng::Rng,
}

impl GanTrainer {
    pub fn new(model: GanModel) -> GanTrainer {
        let cfg = &model.cfg;
        GanTrainer {
            opt_pre: Adam::new(cfg.lr_pretrain).with_clip_norm(5.0),
            opt_g: Adam::new(cfg.lr_g).with_betas(0.5, 0.9),
            opt_d: Adam::new(cfg.lr_d).with_betas(0.5, 0.9),
            opt_c: Adam::new(cfg.lr_c).with_betas(0.5, 0.9),
            rng: rng::named_rng(cfg.seed, "gan.train"),
            model,
        }
    }

    /// One pass of teacher-forced pretraining; returns the mean batch loss.
    pub fn pretrain_epoch(&mut self, data: &[Sample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::data("empty training corpus"));
        }
        let cfg = self.model.cfg.clone();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let z = noise(batch.len(), cfg.z_dim, &mut self.rng);
            let vars = self.model.gen.bind(true);
            let loss = pretrain_loss(&cfg, &vars, &batch, &z)?;
            let value = loss.item();
            let grads = vars.grads(&loss, &[]);
            if !value.is_finite() || !all_finite(&grads) {
                return Err(Error::diverged("generator pretraining", "non-finite loss"));
            }
            self.opt_pre.step(&mut self.model.gen, &grads);
            total += value;
            batches += 1;
        }
        self.model.pretrained = true;
        Ok(total / batches as f64)
    }

    /// `n_critic` critic updates, one generator update and one classifier
    /// update against `real`. Parameters are only committed when every loss
    /// and gradient is finite, so a diverging step leaves the model as it was.
    pub fn adversarial_step(&mut self, real: &[Sample]) -> Result<LossReport> {
        if !self.model.pretrained {
            return Err(Error::data("generator must be pretrained before adversarial training"));
        }
        if real.is_empty() {
            return Err(Error::data("empty batch"));
        }
        let cfg = self.model.cfg.clone();
        let batch = real.len();
        let f_arr = conditions(real, false);
        let f = Tensor::constant(f_arr.clone());
        let f_cls = Tensor::constant(conditions(real, true));
        let labels: Vec<Label> = real.iter().map(|s| s.cond.label()).collect();
        let real_ids: Vec<u32> = real.iter().flat_map(|s| s.seq.ids.iter().copied()).collect();

        let mut critic = self.model.critic.clone();
        let mut gen = self.model.gen.clone();
        let mut cls = self.model.cls.clone();
        let mut opt_d = self.opt_d.clone();
        let mut opt_g = self.opt_g.clone();
        let mut opt_c = self.opt_c.clone();

        let mut last = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..cfg.n_critic {
            let z = noise(batch, cfg.z_dim, &mut self.rng);
            let fake: Vec<TokenSequence> = generate_batch(&gen, &cfg, &z, &f_arr, DecodeMode::Sample, 2, &mut self.rng)
                .into_iter()
                .map(|g| g.seq)
                .collect();
            let soft = no_grad(|| soft_sequences(&cfg, &gen.bind(false), &fake, &Tensor::constant(z), &f));
            let eps: Vec<f64> = (0..batch).map(|_| self.rng.random()).collect();

            let dv = critic.bind(true);
            let e_real = embed_hard(&dv, &real_ids);
            let e_fake = embed_soft(&dv, &soft);
            let d_real = critic_score(&cfg, &dv, &with_condition(&e_real, &f), batch);
            let d_fake = critic_score(&cfg, &dv, &with_condition(&e_fake, &f), batch);
            let score = |x: &Tensor| critic_score(&cfg, &dv, &with_condition(x, &f), batch);
            let gp = gradient_penalty(&score, &e_real, &e_fake, &eps);
            let l_d = critic_objective(&d_real, &d_fake, &gp, cfg.lambda_gp)?;
            let grads = dv.grads(&l_d, &[]);
            if !l_d.item().is_finite() || !all_finite(&grads) {
                return Err(Error::diverged("discriminator", "non-finite gradient"));
            }
            opt_d.step(&mut critic, &grads);
            last = (l_d.item(), gp.item(), d_real.mean().item(), d_fake.mean().item());
        }

        let z = noise(batch, cfg.z_dim, &mut self.rng);
        let fake: Vec<TokenSequence> = generate_batch(&gen, &cfg, &z, &f_arr, DecodeMode::Sample, 2, &mut self.rng)
            .into_iter()
            .map(|g| g.seq)
            .collect();
        let gv = gen.bind(true);
        let soft = soft_sequences(&cfg, &gv, &fake, &Tensor::constant(z), &f);
        let dv = critic.bind(false);
        let cv = cls.bind(false);
        let d_fake = critic_score(&cfg, &dv, &with_condition(&embed_soft(&dv, &soft), &f), batch);
        let c_fake = classifier_log_probs(&cfg, &cv, &with_condition(&embed_soft(&cv, &soft), &f_cls), batch);
        let gl = generator_objective(&d_fake, &c_fake, &labels, cfg.alpha);
        let g_grads = gv.grads(&gl.total, &[]);
        if !gl.total.item().is_finite() || !all_finite(&g_grads) {
            return Err(Error::diverged("generator", "non-finite loss"));
        }

        let cv = cls.bind(true);
        let soft = soft.detach();
        let lp_real = classifier_log_probs(&cfg, &cv, &with_condition(&embed_hard(&cv, &real_ids), &f_cls), batch);
        let lp_fake = classifier_log_probs(&cfg, &cv, &with_condition(&embed_soft(&cv, &soft), &f_cls), batch);
        let l_c = classifier_nll(&lp_real, &labels).add(&classifier_nll(&lp_fake, &labels)).scale(0.5);
        let c_grads = cv.grads(&l_c, &[]);
        if !l_c.item().is_finite() || !all_finite(&c_grads) {
            return Err(Error::diverged("classifier", "non-finite loss"));
        }
        opt_g.step(&mut gen, &g_grads);
        opt_c.step(&mut cls, &c_grads);

        self.model.critic = critic;
        self.model.gen = gen;
        self.model.cls = cls;
        self.opt_d = opt_d;
        self.opt_g = opt_g;
        self.opt_c = opt_c;
        Ok(LossReport {
            l_d: last.0,
            gp: last.1,
            d_real: last.2,
            d_fake: last.3,
            l_g_adv: gl.adv.item(),
            l_g_cls: gl.cls.item(),
            l_g: gl.total.item(),
            l_c: l_c.item(),
        })
    }

    /// Draws a random real batch of the configured size.
    pub fn sample_batch(&mut self, data: &[Sample]) -> Vec<Sample> {
        let n = self.model.cfg.batch.min(data.len());
        data.choose_multiple(&mut self.rng, n).cloned().collect()
    }
}

/// What to generate: `None` fields are drawn per record (labels alternate so
/// the output is balanced, topic and hierarchy are uniform).
#[derive(Clone, Debug, Default)]
pub struct GenerateSpec {
    pub n: usize,
    pub label: Option<Label>,
    pub topic: Option<Topic>,
    pub hierarchy: Option<Hierarchy>,
    pub id_prefix: String,
}

const MAX_ROUNDS: usize = 20;

/// Samples `spec.n` comment records. Sequences that decode to blank text are
/// resampled.
pub fn generate_records(model: &GanModel, spec: &GenerateSpec, seed: u64) -> Result<Vec<CommentRecord>> {
    if spec.n == 0 {
        return Err(Error::data("n must be positive"));
    }
    if spec.label == Some(Label::Ambiguous) {
        return Err(Error::data("condition requires binary label"));
    }
    let mut r = rng::named_rng(seed, "gan.generate");
    let conds: Vec<(Label, Topic, Hierarchy)> = (0..spec.n)
        .map(|i| {
            let label = spec
                .label
                .unwrap_or(if i % 2 == 0 { Label::Sarcastic } else { Label::NonSarcastic });
            let topic = spec.topic.unwrap_or_else(|| Topic::ALL[r.random_range(0..5)]);
            let hierarchy = spec.hierarchy.unwrap_or_else(|| Hierarchy::ALL[r.random_range(0..2)]);
            (label, topic, hierarchy)
        })
        .collect();
    let mut texts: Vec<Option<String>> = vec![None; spec.n];
    for _ in 0..MAX_ROUNDS {
        let pending: Vec<usize> = (0..spec.n).filter(|&i| texts[i].is_none()).collect();
        if pending.is_empty() {
            break;
        }
        for chunk in pending.chunks(64) {
            let mut f = Array2::zeros((chunk.len(), COND_DIM));
            for (row, &i) in chunk.iter().enumerate() {
                let (l, t, h) = conds[i];
                let c = encode_condition(l, t, h)?;
                f.row_mut(row).assign(&ndarray::ArrayView1::from(&c.values[..]));
            }
            let z = noise(chunk.len(), model.cfg.z_dim, &mut r);
            let out = generate_batch(&model.gen, &model.cfg, &z, &f, DecodeMode::Sample, 3, &mut r);
            for (g, &i) in out.iter().zip(chunk) {
                let text = decode(&g.seq, &model.vocab);
                if !text.trim().is_empty() {
                    texts[i] = Some(text);
                }
            }
        }
    }
    texts
        .into_iter()
        .zip(conds)
        .enumerate()
        .map(|(i, (text, (label, topic, hierarchy)))| {
            let text = text.ok_or_else(|| Error::diverged("generator", "keeps producing blank comments"))?;
            let mut rec = CommentRecord::new(format!("{}{i:06}", spec.id_prefix), text, label, topic, hierarchy);
            rec.provenance = Some(Provenance::Gan);
            Ok(rec)
        })
        .collect()
}
