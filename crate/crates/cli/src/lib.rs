//! The `sarcgen` command suite.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sarcgen_core::Error;

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod rundir;

use commands::{GenerateArgs, SynthKind};
use config::PipelineConfig;
use rundir::RunDir;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// 2 for configuration problems, 4 for training divergence, 3 for anything
/// wrong with the data or the files.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

fn keys_help() -> String {
    let mut s = String::from(
        "Configuration is layered: built-in defaults, then --config FILE (TOML), then --set KEY=VALUE flags, \
         then SARCGEN_SECTION__KEY environment variables (e.g. SARCGEN_DET__LR=0.001).\n\
         Relative input paths are looked up in the run directory first. Outputs are written inside it.\n\n\
         Keys and defaults:\n",
    );
    for line in config::flat_keys() {
        s.push_str("  ");
        s.push_str(&line);
        s.push('\n');
    }
    s
}

#[derive(Debug, Parser)]
#[command(name = "sarcgen", version, about = "Sarcastic comment generation, augmentation and detection", after_long_help = keys_help())]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true, env = "SARCGEN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set gan.alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Run directory (same as `--set run_dir=DIR`).
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain and adversarially train the comment generator.
    GanTrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "gan")]
        out: PathBuf,
    },
    /// Sample comments from a trained generator.
    Generate {
        #[arg(long, default_value = "gan")]
        checkpoint: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        n: i64,
        /// sarcastic (0) or non_sarcastic (1); balanced when omitted.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        topic: Option<String>,
        /// top_level or nested.
        #[arg(long)]
        hierarchy: Option<String>,
        #[arg(long, default_value = "generated.jsonl")]
        out: PathBuf,
    },
    /// Word-replacement augmentation.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "augmented.jsonl")]
        out: PathBuf,
    },
    /// Train the behavior generator on records with real behavior.
    BehaviorTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "behavior")]
        out: PathBuf,
    },
    /// Give records without behavior a generated one.
    BehaviorFill {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "behavior")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "filled.jsonl")]
        out: PathBuf,
    },
    /// Train the fusion detector.
    DetectTrain {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long, default_value = "detector")]
        out: PathBuf,
    },
    /// Score a labeled file: predictions, metrics and a Markdown report.
    Evaluate {
        #[arg(long, default_value = "detector")]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Noise, robustness, size or ablation sweep over a split of the input.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        /// Same as `--set sweep.kind=KIND`.
        #[arg(long, value_parser = ["noise", "robustness", "size", "ablation"])]
        kind: Option<String>,
        #[arg(long, default_value = "sweeps")]
        out: PathBuf,
    },
    /// Write fused detector embeddings as CSV.
    ExportEmbeddings {
        #[arg(long, default_value = "detector")]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "embeddings.csv")]
        out: PathBuf,
    },
    /// t-SNE projection of exported embeddings.
    #[command(name = "project-2d")]
    Project2d {
        #[arg(long, default_value = "embeddings.csv")]
        input: PathBuf,
        #[arg(long, default_value = "projection.csv")]
        out: PathBuf,
    },
    /// Generate, augment, fill behavior, split, train and evaluate.
    Pipeline,
    /// Write a synthetic labeled corpus.
    SynthCorpus {
        #[arg(long, value_enum, default_value = "seed")]
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        /// Distance of sarcasm rates from 0.5 (separable kind only).
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
        #[arg(long, default_value = "corpus.jsonl")]
        out: PathBuf,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Resolves the configuration for `cli`, taking environment overrides from
/// the process environment.
pub fn resolve_config(cli: &Cli) -> sarcgen_core::Result<PipelineConfig> {
    let mut sets = cli.sets.clone();
    if let Some(dir) = &cli.run_dir {
        sets.push(format!("run_dir={}", quoted(&dir.to_string_lossy())));
    }
    if let Command::Sweep { kind: Some(k), .. } = &cli.command {
        sets.push(format!("sweep.kind={}", quoted(k)));
    }
    config::load(cli.config.as_deref(), &sets, std::env::vars())
}

fn dispatch(cfg: &PipelineConfig, run: &RunDir, command: &Command) -> Result<(), Box<dyn HasExit>> {
    match command {
        Command::GanTrain { corpus, out } => {
            let s = commands::gan_train(cfg, run, corpus, out)?;
            let last = s.adversarial.last();
            println!(
                "checkpoint {} ({} pretrain epochs, {} adversarial steps{})",
                s.checkpoint.display(),
                s.pretrain.len(),
                s.adversarial.len(),
                last.map(|r| format!(", final l_g {:.4}", r.l_g)).unwrap_or_default()
            );
        }
        Command::Generate {
            checkpoint,
            n,
            label,
            topic,
            hierarchy,
            out,
        } => {
            let args = GenerateArgs {
                checkpoint: checkpoint.clone(),
                n: *n,
                label: label.clone(),
                topic: topic.clone(),
                hierarchy: hierarchy.clone(),
                out: out.clone(),
            };
            let records = commands::generate(cfg, run, &args)?;
            println!("wrote {} records to {}", records.len(), run.root().join(out).display());
        }
        Command::Augment { input, out } => {
            let added = commands::augment(cfg, run, input, out)?;
            println!("added {added} records; wrote {}", run.root().join(out).display());
        }
        Command::BehaviorTrain { input, out } => {
            let reports = commands::behavior_train(cfg, run, input, out)?;
            if let Some(r) = reports.last() {
                println!("trained {} epochs, final l_g {:.4} l_d {:.4}", reports.len(), r.l_g, r.l_d);
            }
        }
        Command::BehaviorFill { input, checkpoint, out } => {
            let n = commands::behavior_fill(run, input, checkpoint, out)?;
            println!("generated behavior for {n} records; wrote {}", run.root().join(out).display());
        }
        Command::DetectTrain { train, val, out } => {
            let h = commands::detect_train(cfg, run, train, val, out)?;
            let best = &h.epochs[h.best_epoch - 1];
            println!(
                "best epoch {} of {}: val acc {:.4} f1(sarcastic) {:.4}",
                h.best_epoch,
                h.epochs.len(),
                best.val.accuracy,
                best.val.sarcastic.f1
            );
        }
        Command::Evaluate { checkpoint, input, out } => {
            let m = commands::evaluate(run, checkpoint, input, out)?;
            println!(
                "acc {:.4} f1(non-sarcastic) {:.4} f1(sarcastic) {:.4}",
                m.accuracy, m.non_sarcastic.f1, m.sarcastic.f1
            );
        }
        Command::Sweep { input, out, .. } => {
            commands::sweep(cfg, run, input, out)?;
        }
        Command::ExportEmbeddings { checkpoint, input, out } => {
            let n = commands::export(run, checkpoint, input, out)?;
            println!("wrote {n} rows to {}", run.root().join(out).display());
        }
        Command::Project2d { input, out } => {
            let n = commands::project(cfg, run, input, out)?;
            println!("wrote {n} rows to {}", run.root().join(out).display());
        }
        Command::Pipeline => {
            let report = pipeline::run_pipeline(cfg, run)?;
            if let Some(m) = report.metrics {
                println!(
                    "test acc {:.4} f1(non-sarcastic) {:.4} f1(sarcastic) {:.4}",
                    m.accuracy, m.non_sarcastic.f1, m.sarcastic.f1
                );
            }
        }
        Command::SynthCorpus { kind, n, margin, out } => {
            let n = commands::synth_corpus(cfg, run, *kind, *n, *margin, out)?;
            println!("wrote {n} records to {}", run.root().join(out).display());
        }
        Command::ShowConfig => unreachable!("handled before the run directory is opened"),
    }
    Ok(())
}

/// An error that knows its exit status.
trait HasExit: std::fmt::Display {
    fn code(&self) -> i32;
}

impl HasExit for Error {
    fn code(&self) -> i32 {
        exit_code(self)
    }
}

impl HasExit for pipeline::StageError {
    fn code(&self) -> i32 {
        exit_code(&self.source)
    }
}

impl From<Error> for Box<dyn HasExit> {
    fn from(e: Error) -> Self {
        Box::new(e)
    }
}

impl From<pipeline::StageError> for Box<dyn HasExit> {
    fn from(e: pipeline::StageError) -> Self {
        Box::new(e)
    }
}

/// Runs one parsed invocation and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if let Command::ShowConfig = cli.command {
        match toml::to_string(&cfg) {
            Ok(s) => print!("{s}"),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_DATA;
            }
        }
        return 0;
    }
    let run = match RunDir::open(&cfg.run_dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match dispatch(&cfg, &run, &cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
