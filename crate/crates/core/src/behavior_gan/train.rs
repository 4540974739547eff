use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use sarcgen_autograd::{Adam, ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::loss::{derangement, discriminator_terms, generator_terms};
use super::model::{discriminator_logits, generate_behavior, generator_forward, init_discriminator, init_generator};
use super::{feature_matrix, BehaviorGanConfig, HashedCharEncoder};
use crate::checkpoint;
use crate::corpus::{BehaviorNorm, BehaviorSource, CommentRecord, BEHAVIOR_DIM};
use crate::error::{Error, Result};
use crate::rng;

const KIND: &str = "behavior_gan";

#[derive(Clone, Debug)]
pub struct BehaviorModel {
    pub cfg: BehaviorGanConfig,
    pub norm: BehaviorNorm,
    pub gen: ParamStore,
    pub disc: ParamStore,
    pub trained: bool,
}

impl BehaviorModel {
    pub fn new(cfg: BehaviorGanConfig, norm: BehaviorNorm) -> Result<BehaviorModel> {
        cfg.validate()?;
        let mut r = rng::named_rng(cfg.seed, "behavior.init");
        Ok(BehaviorModel {
            gen: init_generator(&cfg, &mut r),
            disc: init_discriminator(&cfg, &mut r),
            cfg,
            norm,
            trained: false,
        })
    }

    pub fn encoder(&self) -> HashedCharEncoder {
        HashedCharEncoder {
            dim: self.cfg.d_text,
            seed: self.cfg.seed,
        }
    }

    pub fn features(&self, records: &[&CommentRecord]) -> Array2<f64> {
        feature_matrix(records, &self.encoder())
    }

    /// Generated behavior blocks in unit coordinates.
    pub fn generate_unit(&self, records: &[&CommentRecord]) -> Array2<f64> {
        generate_behavior(&self.cfg, &self.gen, &self.features(records))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut all = ParamStore::new();
        all.merge_prefixed("gen.", &self.gen);
        all.merge_prefixed("disc.", &self.disc);
        checkpoint::save(
            dir,
            KIND,
            serde_json::to_value(&self.cfg)?,
            json!({ "trained": self.trained, "norm": self.norm }),
            &all,
            &[],
        )
    }

    pub fn load(dir: &Path) -> Result<BehaviorModel> {
        let (m, all) = checkpoint::load(dir, KIND)?;
        let cfg: BehaviorGanConfig = serde_json::from_value(m.config)
            .map_err(|e| Error::data(format!("{}: bad model config: {e}", dir.display())))?;
        let norm: BehaviorNorm = serde_json::from_value(m.extras["norm"].clone())
            .map_err(|e| Error::data(format!("{}: bad normalization constants: {e}", dir.display())))?;
        Ok(BehaviorModel {
            cfg,
            norm,
            gen: all.extract_prefixed("gen."),
            disc: all.extract_prefixed("disc."),
            trained: m.extras["trained"].as_bool().unwrap_or(false),
        })
    }
}

/// Mean loss terms over one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub l_r: f64,
    pub l_f: f64,
    pub l_h: f64,
    pub l_d: f64,
    pub l_t: f64,
    pub l_c: f64,
    pub l_g: f64,
}

fn all_finite(grads: &BTreeMap<String, Array2<f64>>) -> bool {
    grads.values().all(|g| g.iter().all(|x| x.is_finite()))
}

pub struct BehaviorTrainer {
    pub model: BehaviorModel,
    opt_g: Adam,
    opt_d: Adam,
    rng: rng::Rng,
}

impl BehaviorTrainer {
    pub fn new(model: BehaviorModel) -> BehaviorTrainer {
        BehaviorTrainer {
            opt_g: Adam::new(model.cfg.lr_g).with_betas(0.5, 0.999),
            opt_d: Adam::new(model.cfg.lr_d).with_betas(0.5, 0.999),
            rng: rng::named_rng(model.cfg.seed, "behavior.train"),
            model,
        }
    }

    /// Features and unit-coordinate behavior of every record that has one.
    pub fn prepare(&self, records: &[CommentRecord]) -> Result<(Array2<f64>, Array2<f64>)> {
        let real: Vec<&CommentRecord> = records.iter().filter(|r| r.behavior.is_some()).collect();
        if real.len() < 2 {
            return Err(Error::data("need ≥2 samples for negative pairing"));
        }
        let mut rb = Array2::zeros((real.len(), BEHAVIOR_DIM));
        for (i, r) in real.iter().enumerate() {
            let u = self.model.norm.to_unit(r.behavior.as_ref().expect("filtered"));
            rb.row_mut(i).assign(&ndarray::ArrayView1::from(&u));
        }
        Ok((self.model.features(&real), rb))
    }

    /// One discriminator update then one generator update on a batch.
    /// Nothing is committed unless both steps are finite.
    pub fn step(&mut self, pe: &Array2<f64>, rb: &Array2<f64>) -> Result<EpochReport> {
        let cfg = self.model.cfg.clone();
        let perm = derangement(pe.nrows(), &mut self.rng)?;
        let ne = pe.select(Axis(0), &perm);
        let (pe_t, rb_t, ne_t) = (
            Tensor::constant(pe.clone()),
            Tensor::constant(rb.clone()),
            Tensor::constant(ne),
        );
        let mut disc = self.model.disc.clone();
        let mut gen = self.model.gen.clone();
        let mut opt_d = self.opt_d.clone();
        let mut opt_g = self.opt_g.clone();

        let gb = Tensor::constant(generate_behavior(&cfg, &gen, pe));
        let dv = disc.bind(true);
        let dl = discriminator_terms(
            &discriminator_logits(&dv, &pe_t, &rb_t),
            &discriminator_logits(&dv, &pe_t, &gb),
            &discriminator_logits(&dv, &ne_t, &rb_t),
        );
        let d_grads = dv.grads(&dl.l_d, &[]);
        if !dl.l_d.item().is_finite() || !all_finite(&d_grads) {
            return Err(Error::diverged("behavior discriminator", "non-finite loss"));
        }
        opt_d.step(&mut disc, &d_grads);

        let gv = gen.bind(true);
        let out = generator_forward(&cfg, &gv, &pe_t);
        let d_fake = discriminator_logits(&disc.bind(false), &pe_t, &out.probs);
        let gl = generator_terms(&d_fake, &out, &rb_t, cfg.lambda);
        let g_grads = gv.grads(&gl.l_g, &[]);
        if !gl.l_g.item().is_finite() || !all_finite(&g_grads) {
            return Err(Error::diverged("behavior generator", "non-finite loss"));
        }
        opt_g.step(&mut gen, &g_grads);

        self.model.disc = disc;
        self.model.gen = gen;
        self.opt_d = opt_d;
        self.opt_g = opt_g;
        Ok(EpochReport {
            l_r: dl.l_r.item(),
            l_f: dl.l_f.item(),
            l_h: dl.l_h.item(),
            l_d: dl.l_d.item(),
            l_t: gl.l_t.item(),
            l_c: gl.l_c.item(),
            l_g: gl.l_g.item(),
        })
    }

    /// One shuffled pass over prepared data. A trailing batch of one is
    /// dropped since it cannot form a negative pair.
    pub fn epoch(&mut self, pe: &Array2<f64>, rb: &Array2<f64>) -> Result<EpochReport> {
        let mut order: Vec<usize> = (0..pe.nrows()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = EpochReport::default();
        let mut n = 0.0;
        for chunk in order.chunks(self.model.cfg.batch).filter(|c| c.len() >= 2) {
            let r = self.step(&pe.select(Axis(0), chunk), &rb.select(Axis(0), chunk))?;
            sum.l_r += r.l_r;
            sum.l_f += r.l_f;
            sum.l_h += r.l_h;
            sum.l_d += r.l_d;
            sum.l_t += r.l_t;
            sum.l_c += r.l_c;
            sum.l_g += r.l_g;
            n += 1.0;
        }
        for v in [
            &mut sum.l_r,
            &mut sum.l_f,
            &mut sum.l_h,
            &mut sum.l_d,
            &mut sum.l_t,
            &mut sum.l_c,
            &mut sum.l_g,
        ] {
            *v /= n;
        }
        Ok(sum)
    }

    /// Trains for the configured number of epochs on records with real
    /// behavior and marks the model trained.
    pub fn fit(&mut self, records: &[CommentRecord]) -> Result<Vec<EpochReport>> {
        let (pe, rb) = self.prepare(records)?;
        let mut reports = Vec::with_capacity(self.model.cfg.epochs);
        for e in 0..self.model.cfg.epochs {
            let r = self.epoch(&pe, &rb)?;
            log::info!("behavior epoch {}: L_D {:.4} L_G {:.4} (L_c {:.4})", e + 1, r.l_d, r.l_g, r.l_c);
            reports.push(r);
        }
        self.model.trained = true;
        Ok(reports)
    }
}

/// Where a record's behavior block came from. Records without the flag but
/// with a behavior block count as real.
pub fn behavior_source(r: &CommentRecord) -> Option<BehaviorSource> {
    r.behavior_source.or(r.behavior.as_ref().map(|_| BehaviorSource::Real))
}

/// Fills every missing behavior block from the generator, converted back to
/// natural units and flagged as generated. Records that already have a
/// behavior block are returned unchanged.
pub fn synthesize_behaviors(records: &[CommentRecord], model: &BehaviorModel) -> Result<Vec<CommentRecord>> {
    if !model.trained {
        return Err(Error::data("behavior generator has not been trained"));
    }
    let missing: Vec<&CommentRecord> = records.iter().filter(|r| r.behavior.is_none()).collect();
    let mut out = records.to_vec();
    if missing.is_empty() {
        return Ok(out);
    }
    let gb = model.generate_unit(&missing);
    let mut rows = gb.rows().into_iter();
    for r in out.iter_mut().filter(|r| r.behavior.is_none()) {
        let row = rows.next().expect("one generated row per missing record");
        let mut u = [0.0; BEHAVIOR_DIM];
        u.iter_mut().zip(row.iter()).for_each(|(a, b)| *a = *b);
        r.behavior = Some(model.norm.from_unit(&u));
        r.behavior_source = Some(BehaviorSource::Generated);
    }
    Ok(out)
}
