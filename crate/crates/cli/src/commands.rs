//! One function per subcommand. Each takes the resolved configuration and the
//! locked run directory; output paths are relative to the run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sarcgen_core::augment::augment_dataset;
use sarcgen_core::behavior_gan::{synthesize_behaviors, BehaviorModel, BehaviorTrainer, EpochReport};
use sarcgen_core::comment_gan::{generate_records, GanModel, GanTrainer, GenerateSpec, LossReport};
use sarcgen_core::corpus::{
    build_vocab, read_dataset, split_dataset, synthetic, write_dataset, BehaviorNorm, CommentRecord, FileKind,
    Hierarchy, Label, Split, Topic,
};
use sarcgen_core::detector::{export_embeddings, predict, train_detector, DetectorModel, EncoderMode, History};
use sarcgen_core::expharness::{
    compute_metrics, metrics_table, project_2d, run_sweep, summarize, MetricsReport, SweepRow, TableRow,
};
use sarcgen_core::{rng, Error, Result};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::rundir::{write_atomic, RunDir};

/// Input lookup: relative paths are tried inside the run directory first,
/// then against the working directory.
pub fn input_path(run: &RunDir, p: &Path) -> PathBuf {
    if p.is_relative() {
        let inside = run.root().join(p);
        if inside.exists() {
            return inside;
        }
    }
    p.to_path_buf()
}

fn read_training(run: &RunDir, p: &Path) -> Result<Vec<CommentRecord>> {
    read_dataset(&input_path(run, p), FileKind::Training)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn parse_label(s: &str) -> Result<Label> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "0" | "sarcastic" => Ok(Label::Sarcastic),
        "1" | "non_sarcastic" | "nonsarcastic" => Ok(Label::NonSarcastic),
        _ => Err(Error::config("label", format!("{s:?} is not sarcastic or non_sarcastic"))),
    }
}

pub fn parse_topic(s: &str) -> Result<Topic> {
    Topic::parse(&s.to_ascii_lowercase()).ok_or_else(|| Error::config("topic", format!("unknown topic {s:?}")))
}

pub fn parse_hierarchy(s: &str) -> Result<Hierarchy> {
    Hierarchy::parse(&s.to_ascii_lowercase())
        .ok_or_else(|| Error::config("hierarchy", format!("unknown hierarchy {s:?}")))
}

const ADV_HEADER: &str = "step,l_d,gp,d_real,d_fake,l_g_adv,l_g_cls,l_g,l_c";

fn adv_row(step: usize, r: &LossReport) -> String {
    format!(
        "{step},{},{},{},{},{},{},{},{}",
        r.l_d, r.gp, r.d_real, r.d_fake, r.l_g_adv, r.l_g_cls, r.l_g, r.l_c
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct GanTrainSummary {
    pub checkpoint: PathBuf,
    pub pretrain: Vec<f64>,
    pub adversarial: Vec<LossReport>,
}

/// Trains a GAN on `records` and saves it to `out`, with loss curves
/// `pretrain_loss.csv` and `adversarial_loss.csv` beside the weights.
pub fn train_gan(cfg: &PipelineConfig, run: &RunDir, records: &[CommentRecord], out: &Path) -> Result<GanTrainSummary> {
    let vocab = build_vocab(records, cfg.gan.min_freq)?;
    let model = GanModel::new(cfg.gan.clone(), vocab)?;
    let data = model.encode(records)?;
    let mut trainer = GanTrainer::new(model);
    let mut pretrain = Vec::with_capacity(cfg.gan.pretrain_epochs);
    for epoch in 1..=cfg.gan.pretrain_epochs {
        let loss = trainer.pretrain_epoch(&data)?;
        log::info!("gan pretrain epoch {epoch}: nll {loss:.4}");
        pretrain.push(loss);
    }
    let mut adversarial = Vec::with_capacity(cfg.gan.adv_steps);
    for step in 1..=cfg.gan.adv_steps {
        let batch = trainer.sample_batch(&data);
        let report = trainer.adversarial_step(&batch)?;
        if step % 10 == 0 || step == cfg.gan.adv_steps {
            log::info!("gan step {step}: l_d {:.4} l_g {:.4} l_c {:.4}", report.l_d, report.l_g, report.l_c);
        }
        adversarial.push(report);
    }

    let dir = run.out(out)?;
    trainer.model.save(&dir)?;
    let mut pre = String::from("epoch,nll\n");
    for (i, l) in pretrain.iter().enumerate() {
        writeln!(pre, "{},{l}", i + 1).expect("string write");
    }
    write_atomic(&dir.join("pretrain_loss.csv"), pre.as_bytes())?;
    let mut adv = format!("{ADV_HEADER}\n");
    for (i, r) in adversarial.iter().enumerate() {
        writeln!(adv, "{}", adv_row(i + 1, r)).expect("string write");
    }
    write_atomic(&dir.join("adversarial_loss.csv"), adv.as_bytes())?;
    Ok(GanTrainSummary {
        checkpoint: dir,
        pretrain,
        adversarial,
    })
}

pub fn gan_train(cfg: &PipelineConfig, run: &RunDir, corpus: &Path, out: &Path) -> Result<GanTrainSummary> {
    let records = read_training(run, corpus)?;
    train_gan(cfg, run, &records, out)
}

#[derive(Clone, Debug, Default)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub n: i64,
    pub label: Option<String>,
    pub topic: Option<String>,
    pub hierarchy: Option<String>,
    pub out: PathBuf,
}

pub fn generate(cfg: &PipelineConfig, run: &RunDir, args: &GenerateArgs) -> Result<Vec<CommentRecord>> {
    if args.n <= 0 {
        return Err(Error::config("n", format!("must be positive, got {}", args.n)));
    }
    let spec = GenerateSpec {
        n: args.n as usize,
        label: args.label.as_deref().map(parse_label).transpose()?,
        topic: args.topic.as_deref().map(parse_topic).transpose()?,
        hierarchy: args.hierarchy.as_deref().map(parse_hierarchy).transpose()?,
        id_prefix: "gen".to_string(),
    };
    let model = GanModel::load(&input_path(run, &args.checkpoint))?;
    let records = generate_records(&model, &spec, rng::substream(cfg.gan.seed, "generate"))?;
    write_dataset(&run.out(&args.out)?, &records)?;
    Ok(records)
}

/// Augments `input` into `out`; the skip report goes to `<out>.skips.json`.
pub fn augment(cfg: &PipelineConfig, run: &RunDir, input: &Path, out: &Path) -> Result<usize> {
    let records = read_training(run, input)?;
    let (client, lexicon) = cfg.augment.build_client()?;
    let result = augment_dataset(&records, client.as_ref(), &lexicon, &cfg.augment)?;
    if !result.skipped.is_empty() {
        log::warn!(
            "augmentation fell short for {} records (shortfall {})",
            result.skipped.entries.len(),
            result.skipped.shortfall
        );
    }
    let path = run.out(out)?;
    write_dataset(&path, &result.records)?;
    let mut skips = path.clone().into_os_string();
    skips.push(".skips.json");
    write_json(Path::new(&skips), &result.skipped)?;
    Ok(result.added)
}

fn behavior_loss_csv(reports: &[EpochReport]) -> String {
    let mut s = String::from("epoch,l_r,l_f,l_h,l_d,l_t,l_c,l_g\n");
    for (i, r) in reports.iter().enumerate() {
        writeln!(s, "{},{},{},{},{},{},{},{}", i + 1, r.l_r, r.l_f, r.l_h, r.l_d, r.l_t, r.l_c, r.l_g)
            .expect("string write");
    }
    s
}

/// Trains the behavior generator on the records that carry real behavior.
pub fn train_behavior(cfg: &PipelineConfig, run: &RunDir, records: &[CommentRecord], out: &Path) -> Result<Vec<EpochReport>> {
    let model = BehaviorModel::new(cfg.behavior.clone(), BehaviorNorm::fit(records))?;
    let mut trainer = BehaviorTrainer::new(model);
    let reports = trainer.fit(records)?;
    let dir = run.out(out)?;
    trainer.model.save(&dir)?;
    write_atomic(&dir.join("loss.csv"), behavior_loss_csv(&reports).as_bytes())?;
    Ok(reports)
}

pub fn behavior_train(cfg: &PipelineConfig, run: &RunDir, input: &Path, out: &Path) -> Result<Vec<EpochReport>> {
    let records = read_training(run, input)?;
    train_behavior(cfg, run, &records, out)
}

/// Gives every record without behavior a generated one.
pub fn behavior_fill(run: &RunDir, input: &Path, checkpoint: &Path, out: &Path) -> Result<usize> {
    let records = read_training(run, input)?;
    let model = BehaviorModel::load(&input_path(run, checkpoint))?;
    let missing = records.iter().filter(|r| r.behavior.is_none()).count();
    let filled = synthesize_behaviors(&records, &model)?;
    write_dataset(&run.out(out)?, &filled)?;
    Ok(missing)
}

/// Trains the detector and saves it with `history.json` beside the weights.
pub fn train_det(
    cfg: &PipelineConfig,
    run: &RunDir,
    train: &[CommentRecord],
    val: &[CommentRecord],
    out: &Path,
) -> Result<History> {
    let (model, history) = train_detector(train, val, &cfg.det)?;
    let dir = run.out(out)?;
    model.save(&dir)?;
    write_json(&dir.join("history.json"), &history)?;
    Ok(history)
}

pub fn detect_train(cfg: &PipelineConfig, run: &RunDir, train: &Path, val: &Path, out: &Path) -> Result<History> {
    let train = read_training(run, train)?;
    let val = read_training(run, val)?;
    train_det(cfg, run, &train, &val, out)
}

fn model_name(model: &DetectorModel) -> String {
    match model.cfg.encoder {
        EncoderMode::SmallScratch => "Fusion detector (scratch encoder)".to_string(),
        EncoderMode::PretrainedCheckpoint => "Fusion detector (pretrained encoder)".to_string(),
    }
}

/// Scores `records` and writes `predictions.jsonl`, `metrics.json` and a
/// Markdown `report.md` into `out`.
pub fn evaluate_records(run: &RunDir, model: &DetectorModel, records: &[CommentRecord], out: &Path) -> Result<MetricsReport> {
    let preds = predict(model, records)?;
    let golds: Vec<Label> = records.iter().map(|r| r.label).collect();
    let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
    let report = compute_metrics(&labels, &golds)?;

    let dir = run.out(out)?;
    std::fs::create_dir_all(&dir)?;
    let mut lines = Vec::new();
    for p in &preds {
        serde_json::to_writer(&mut lines, p)?;
        lines.push(b'\n');
    }
    write_atomic(&dir.join("predictions.jsonl"), &lines)?;
    write_json(&dir.join("metrics.json"), &report)?;
    let row = TableRow {
        model: model_name(model),
        text: true,
        context: records.iter().any(|r| r.context.as_deref().is_some_and(|c| !c.is_empty())),
        user: true,
        report,
    };
    let md = format!(
        "# Evaluation\n\n{} test records.\n\n{}",
        records.len(),
        metrics_table(std::slice::from_ref(&row))
    );
    write_atomic(&dir.join("report.md"), md.as_bytes())?;
    Ok(report)
}

pub fn evaluate(run: &RunDir, checkpoint: &Path, input: &Path, out: &Path) -> Result<MetricsReport> {
    let model = DetectorModel::load(&input_path(run, checkpoint))?;
    let records = read_training(run, input)?;
    evaluate_records(run, &model, &records, out)
}

/// The 6:2:2 (or configured) split used by `sweep` and `pipeline`.
pub fn split_records(cfg: &PipelineConfig, records: &[CommentRecord]) -> Result<Split> {
    let [a, b, c] = cfg.corpus.split;
    split_dataset(records, (a, b, c), rng::substream(cfg.seed, "split"))
}

/// Runs the configured sweep on a split of `input`; results and the plot go
/// to `out/<kind>/`.
pub fn sweep(cfg: &PipelineConfig, run: &RunDir, input: &Path, out: &Path) -> Result<Vec<SweepRow>> {
    let records = read_training(run, input)?;
    let split = split_records(cfg, &records)?;
    let dir = run.out(out.join(cfg.sweep.kind.name()))?;
    let rows = run_sweep(&cfg.sweep, &cfg.det, &split, &dir)?;
    for (point, m) in summarize(&rows) {
        println!(
            "{point}: acc {:.4} f1(non-sarcastic) {:.4} f1(sarcastic) {:.4}",
            m.accuracy, m.non_sarcastic.f1, m.sarcastic.f1
        );
    }
    Ok(rows)
}

pub fn export(run: &RunDir, checkpoint: &Path, input: &Path, out: &Path) -> Result<usize> {
    let model = DetectorModel::load(&input_path(run, checkpoint))?;
    let records = read_training(run, input)?;
    export_embeddings(&model, &records, &run.out(out)?)
}

pub fn project(cfg: &PipelineConfig, run: &RunDir, input: &Path, out: &Path) -> Result<usize> {
    project_2d(&input_path(run, input), &run.out(out)?, &cfg.project)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    /// Text, behavior and label correlated, with class overlap.
    Seed,
    /// Label decided by the sarcasm rate alone.
    Separable,
}

/// Writes a synthetic corpus for trying the tools without collected data.
pub fn synth_corpus(cfg: &PipelineConfig, run: &RunDir, kind: SynthKind, n: usize, margin: f64, out: &Path) -> Result<usize> {
    if n == 0 {
        return Err(Error::config("n", "must be positive"));
    }
    let seed = rng::substream(cfg.seed, "synth");
    let records = match kind {
        SynthKind::Seed => synthetic::seed_corpus(n, seed),
        SynthKind::Separable => {
            if !(0.0..0.5).contains(&margin) {
                return Err(Error::config("margin", "must lie in [0, 0.5)"));
            }
            synthetic::separable_corpus(n, margin, seed)
        }
    };
    write_dataset(&run.out(out)?, &records)?;
    Ok(records.len())
}
