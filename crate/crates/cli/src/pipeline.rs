//! The six-stage end-to-end run. Each stage records the hash of its config
//! slice, inputs and outputs in `manifest.json`; a stage whose recorded
//! hashes still match is skipped, so an interrupted run resumes where it
//! stopped and a changed setting only reruns what depends on it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use sarcgen_core::comment_gan::{generate_records, GanModel, GenerateSpec};
use sarcgen_core::corpus::{read_dataset, write_dataset, FileKind};
use sarcgen_core::detector::DetectorModel;
use sarcgen_core::expharness::MetricsReport;
use sarcgen_core::{rng, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::commands;
use crate::config::PipelineConfig;
use crate::rundir::{sha256_bytes, sha256_path, write_atomic, RunDir};

pub const STAGES: [&str; 6] = ["generate", "augment", "behavior", "split", "train", "evaluate"];
pub const MANIFEST: &str = "manifest.json";

const GEN_CORPUS: &str = "stages/generate/corpus.jsonl";
const GAN_CKPT: &str = "stages/generate/gan";
const AUG_CORPUS: &str = "stages/augment/corpus.jsonl";
const BEH_CKPT: &str = "stages/behavior/model";
const BEH_CORPUS: &str = "stages/behavior/corpus.jsonl";
const TRAIN: &str = "stages/split/train.jsonl";
const VAL: &str = "stages/split/val.jsonl";
const TEST: &str = "stages/split/test.jsonl";
const DET_CKPT: &str = "stages/train/detector";
const EVAL_DIR: &str = "stages/evaluate";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub completed_at: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: Value,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageOutcome {
    pub name: &'static str,
    pub skipped: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub stages: Vec<StageOutcome>,
    /// Test metrics, once the evaluate stage has completed.
    pub metrics: Option<MetricsReport>,
}

/// A stage failure, carrying the stage's name.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

struct StageSpec {
    name: &'static str,
    config: Value,
    /// Inputs as (manifest key, path on disk).
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<&'static str>,
}

fn stage_specs(cfg: &PipelineConfig, root: &Path, seed_path: &Path) -> Vec<StageSpec> {
    let rel = |p: &str| (p.to_string(), root.join(p));
    vec![
        StageSpec {
            name: "generate",
            config: json!({ "gan": cfg.gan, "generate_n": cfg.corpus.generate_n }),
            inputs: vec![(seed_path.display().to_string(), seed_path.to_path_buf())],
            outputs: vec![GAN_CKPT, GEN_CORPUS],
        },
        StageSpec {
            name: "augment",
            config: json!({ "augment": cfg.augment }),
            inputs: vec![rel(GEN_CORPUS)],
            outputs: vec![AUG_CORPUS],
        },
        StageSpec {
            name: "behavior",
            config: json!({ "behavior": cfg.behavior }),
            inputs: vec![rel(AUG_CORPUS)],
            outputs: vec![BEH_CKPT, BEH_CORPUS],
        },
        StageSpec {
            name: "split",
            config: json!({ "split": cfg.corpus.split, "seed": cfg.seed }),
            inputs: vec![rel(BEH_CORPUS)],
            outputs: vec![TRAIN, VAL, TEST],
        },
        StageSpec {
            name: "train",
            config: json!({ "det": cfg.det }),
            inputs: vec![rel(TRAIN), rel(VAL)],
            outputs: vec![DET_CKPT],
        },
        StageSpec {
            name: "evaluate",
            config: json!({}),
            inputs: vec![rel(DET_CKPT), rel(TEST)],
            outputs: vec![EVAL_DIR],
        },
    ]
}

fn hash_inputs(inputs: &[(String, PathBuf)]) -> Result<BTreeMap<String, String>> {
    inputs.iter().map(|(k, p)| Ok((k.clone(), sha256_path(p)?))).collect()
}

fn hash_outputs(run: &RunDir, outputs: &[&str]) -> Result<BTreeMap<String, String>> {
    outputs
        .iter()
        .map(|o| Ok((o.to_string(), sha256_path(&run.root().join(o))?)))
        .collect()
}

fn up_to_date(run: &RunDir, rec: &StageRecord, spec: &StageSpec, config_hash: &str, inputs: &BTreeMap<String, String>) -> bool {
    rec.name == spec.name
        && rec.config_hash == config_hash
        && &rec.inputs == inputs
        && spec.outputs.iter().all(|o| {
            let p = run.root().join(o);
            p.exists() && sha256_path(&p).ok().as_ref() == rec.outputs.get(*o)
        })
}

fn execute(name: &str, cfg: &PipelineConfig, run: &RunDir, seed_path: &Path) -> Result<()> {
    match name {
        "generate" => {
            let seed = read_dataset(seed_path, FileKind::Training)?;
            commands::train_gan(cfg, run, &seed, Path::new(GAN_CKPT))?;
            let model = GanModel::load(&run.root().join(GAN_CKPT))?;
            let spec = GenerateSpec {
                n: cfg.corpus.generate_n,
                id_prefix: "gen".to_string(),
                ..GenerateSpec::default()
            };
            let generated = generate_records(&model, &spec, rng::substream(cfg.gan.seed, "generate"))?;
            let mut all = seed;
            all.extend(generated);
            write_dataset(&run.out(GEN_CORPUS)?, &all)
        }
        "augment" => commands::augment(cfg, run, Path::new(GEN_CORPUS), Path::new(AUG_CORPUS)).map(|_| ()),
        "behavior" => {
            commands::behavior_train(cfg, run, Path::new(AUG_CORPUS), Path::new(BEH_CKPT))?;
            commands::behavior_fill(run, Path::new(AUG_CORPUS), Path::new(BEH_CKPT), Path::new(BEH_CORPUS)).map(|_| ())
        }
        "split" => {
            let records = read_dataset(&run.root().join(BEH_CORPUS), FileKind::Training)?;
            let split = commands::split_records(cfg, &records)?;
            write_dataset(&run.out(TRAIN)?, &split.train)?;
            write_dataset(&run.out(VAL)?, &split.val)?;
            write_dataset(&run.out(TEST)?, &split.test)
        }
        "train" => commands::detect_train(cfg, run, Path::new(TRAIN), Path::new(VAL), Path::new(DET_CKPT)).map(|_| ()),
        "evaluate" => {
            let model = DetectorModel::load(&run.root().join(DET_CKPT))?;
            let test = read_dataset(&run.root().join(TEST), FileKind::Training)?;
            commands::evaluate_records(run, &model, &test, Path::new(EVAL_DIR)).map(|_| ())
        }
        other => unreachable!("unknown stage {other}"),
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn save_manifest(run: &RunDir, m: &Manifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(m)?;
    bytes.push(b'\n');
    write_atomic(&run.root().join(MANIFEST), &bytes)
}

/// Runs (or resumes) the pipeline in `run`.
pub fn run_pipeline(cfg: &PipelineConfig, run: &RunDir) -> std::result::Result<PipelineReport, StageError> {
    let fail = |stage: &'static str| move |source: Error| StageError { stage, source };
    let seed_path = cfg
        .corpus
        .seed_path
        .clone()
        .ok_or_else(|| Error::config("corpus.seed_path", "the pipeline needs a seed corpus"))
        .map_err(fail("generate"))?;
    if !seed_path.exists() {
        return Err(fail("generate")(Error::data(format!("seed corpus {} not found", seed_path.display()))));
    }
    let manifest_path = run.root().join(MANIFEST);
    let mut manifest = Manifest::load(&manifest_path).map_err(fail("generate"))?;
    manifest.seed = cfg.seed;
    manifest.config = serde_json::to_value(cfg).map_err(|e| fail("generate")(e.into()))?;

    let mut report = PipelineReport {
        stages: Vec::new(),
        metrics: None,
    };
    for (i, spec) in stage_specs(cfg, run.root(), &seed_path).into_iter().enumerate() {
        let name = spec.name;
        let started = Instant::now();
        let config_hash = sha256_bytes(spec.config.to_string().as_bytes());
        let inputs = hash_inputs(&spec.inputs).map_err(fail(name))?;
        let fresh = manifest
            .stages
            .get(i)
            .is_some_and(|rec| up_to_date(run, rec, &spec, &config_hash, &inputs));
        if fresh {
            log::info!("stage {name}: up to date, skipped");
            println!("[{}/{}] {name}: skipped (up to date)", i + 1, STAGES.len());
        } else {
            log::info!("stage {name}: running");
            manifest.stages.truncate(i);
            save_manifest(run, &manifest).map_err(fail(name))?;
            execute(name, cfg, run, &seed_path).map_err(fail(name))?;
            let outputs = hash_outputs(run, &spec.outputs).map_err(fail(name))?;
            manifest.stages.push(StageRecord {
                name: name.to_string(),
                config_hash,
                inputs,
                outputs,
                completed_at: now(),
            });
            save_manifest(run, &manifest).map_err(fail(name))?;
            println!(
                "[{}/{}] {name}: done in {:.1}s",
                i + 1,
                STAGES.len(),
                started.elapsed().as_secs_f64()
            );
        }
        report.stages.push(StageOutcome {
            name,
            skipped: fresh,
            seconds: started.elapsed().as_secs_f64(),
        });
        if cfg.pipeline.stop_after.as_deref() == Some(name) {
            break;
        }
    }
    save_manifest(run, &manifest).map_err(fail("evaluate"))?;
    let metrics_path = run.root().join(EVAL_DIR).join("metrics.json");
    if report.stages.len() == STAGES.len() && metrics_path.exists() {
        let bytes = std::fs::read(&metrics_path).map_err(|e| fail("evaluate")(e.into()))?;
        report.metrics = Some(serde_json::from_slice(&bytes).map_err(|e| fail("evaluate")(e.into()))?);
    }
    Ok(report)
}
