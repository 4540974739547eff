//! Layered run configuration: built-in defaults, then a TOML file, then
//! `--set key=value` flags, then `SARCGEN_*` environment variables.

use std::path::{Path, PathBuf};

use sarcgen_core::augment::AugmentConfig;
use sarcgen_core::behavior_gan::BehaviorGanConfig;
use sarcgen_core::comment_gan::GanConfig;
use sarcgen_core::detector::DetectorConfig;
use sarcgen_core::expharness::{SweepSpec, TsneConfig};
use sarcgen_core::{rng, Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "SARCGEN_";

/// Sections whose `seed` is derived from the global seed unless set.
const SEEDED: [&str; 6] = ["gan", "augment", "behavior", "det", "sweep", "project"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Seed corpus read by `pipeline`.
    pub seed_path: Option<PathBuf>,
    /// Comments the generator adds in `pipeline` (balanced by label).
    pub generate_n: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            seed_path: None,
            generate_n: 1000,
            split: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Stop after this stage (one of the stage names).
    pub stop_after: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub corpus: CorpusSection,
    pub gan: GanConfig,
    pub augment: AugmentConfig,
    pub behavior: BehaviorGanConfig,
    pub det: DetectorConfig,
    pub sweep: SweepSpec,
    pub project: TsneConfig,
    pub pipeline: PipelineSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            run_dir: PathBuf::from("runs/default"),
            corpus: CorpusSection::default(),
            gan: GanConfig::default(),
            augment: AugmentConfig::default(),
            behavior: BehaviorGanConfig::default(),
            det: DetectorConfig::default(),
            sweep: SweepSpec::default(),
            project: TsneConfig::default(),
            pipeline: PipelineSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Every section's own rules, checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        self.augment.validate()?;
        self.behavior.validate()?;
        self.det.validate()?;
        self.sweep.validate()?;
        self.project.validate()?;
        let [a, b, c] = self.corpus.split;
        if [a, b, c].iter().any(|x| !(*x > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::config("corpus.split", "fractions must be positive and sum to 1"));
        }
        if self.corpus.generate_n == 0 {
            return Err(Error::config("corpus.generate_n", "must be positive"));
        }
        if let Some(s) = &self.pipeline.stop_after {
            if !crate::pipeline::STAGES.contains(&s.as_str()) {
                return Err(Error::config(
                    "pipeline.stop_after",
                    format!("unknown stage {s:?}; expected one of {}", crate::pipeline::STAGES.join(", ")),
                ));
            }
        }
        Ok(())
    }
}

fn defaults_table() -> Table {
    match Value::try_from(PipelineConfig::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!("config is a table"),
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A bare value as TOML (number, bool, array, quoted string); anything that
/// does not parse is taken as a plain string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key"));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = match entry {
            Value::Table(inner) => inner,
            _ => return Err(Error::config(key, format!("`{p}` is not a section"))),
        };
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn has_path(table: &Table, key: &str) -> bool {
    let mut t = table;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        match t.get(*p) {
            Some(Value::Table(inner)) => t = inner,
            _ => return false,
        }
    }
    t.contains_key(parts[parts.len() - 1])
}

/// Names the offending key when serde reports one.
fn decode_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let key = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("unknown field"))
        .unwrap_or("config")
        .to_string();
    Error::config(&key, msg.trim().to_string())
}

/// Overrides from the file, flags and environment, without defaults.
pub fn override_table(
    file: Option<&Path>,
    sets: &[String],
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<Table> {
    let mut over = Table::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        let t: Table = toml::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        merge(&mut over, t);
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::config(s, "expected key=value"))?;
        set_path(&mut over, k.trim(), parse_value(v.trim()))?;
    }
    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != "SARCGEN_CONFIG")
        .collect();
    env.sort();
    for (k, v) in env {
        let key = k[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
        set_path(&mut over, &key, parse_value(&v))?;
    }
    Ok(over)
}

pub fn derived_seed(global: u64, section: &str) -> u64 {
    rng::substream(global, section) >> 1
}

/// Resolves the full configuration and validates every section.
pub fn load(
    file: Option<&Path>,
    sets: &[String],
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<PipelineConfig> {
    let over = override_table(file, sets, env)?;
    let mut merged = defaults_table();
    merge(&mut merged, over.clone());
    let mut cfg: PipelineConfig = Value::Table(merged).try_into().map_err(decode_error)?;
    for section in SEEDED {
        if !has_path(&over, &format!("{section}.seed")) {
            // TOML integers are signed 64-bit, so derived seeds keep 63 bits
            // to stay printable and settable.
            let s = derived_seed(cfg.seed, section);
            match section {
                "gan" => cfg.gan.seed = s,
                "augment" => cfg.augment.seed = s,
                "behavior" => cfg.behavior.seed = s,
                "det" => cfg.det.seed = s,
                "sweep" => cfg.sweep.seed = s,
                "project" => cfg.project.seed = s,
                _ => unreachable!(),
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Every settable key with its default, one `key = value` per line.
pub fn flat_keys() -> Vec<String> {
    fn walk(prefix: &str, t: &Table, out: &mut Vec<String>) {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                Value::Table(inner) => walk(&key, inner, out),
                other => out.push(format!("{key} = {other}")),
            }
        }
    }
    let mut out = Vec::new();
    walk("", &defaults_table(), &mut out);
    // Optional keys have no default and so are absent from the table.
    for extra in [
        "corpus.seed_path",
        "augment.lexicon",
        "augment.target_total",
        "det.encoder_path",
        "det.fusion_lr",
        "project.learning_rate",
        "pipeline.stop_after",
    ] {
        if !out.iter().any(|l| l.starts_with(&format!("{extra} "))) {
            out.push(format!("{extra} = (unset)"));
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "seed = 3\n[det]\nlr = 0.01\nbatch = 8\n").unwrap();
        let sets = vec!["det.batch=16".to_string(), "det.m = 12".to_string()];
        let env = vec![("SARCGEN_DET__M".to_string(), "20".to_string())];
        let cfg = load(Some(&file), &sets, env).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.det.lr, 0.01);
        assert_eq!(cfg.det.batch, 16);
        assert_eq!(cfg.det.m, 20);
        assert_eq!(cfg.gan, GanConfig { seed: derived_seed(3, "gan"), ..GanConfig::default() });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load(None, &["det.learning_rate=1".to_string()], none()).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "learning_rate"),
            other => panic!("{other}"),
        }
        assert!(load(None, &["nosuch.x=1".to_string()], none()).is_err());
        assert!(load(None, &["det.lr".to_string()], none()).is_err());
    }

    #[test]
    fn module_rules_run_at_load() {
        match load(None, &["gan.alpha=1.5".to_string()], none()).unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "gan.alpha"),
            other => panic!("{other}"),
        }
        assert!(load(None, &["corpus.split=[0.5,0.5,0.5]".to_string()], none()).is_err());
        assert!(load(None, &["pipeline.stop_after=\"nope\"".to_string()], none()).is_err());
    }

    #[test]
    fn explicit_section_seed_wins() {
        let cfg = load(None, &["det.seed=5".to_string(), "seed=9".to_string()], none()).unwrap();
        assert_eq!(cfg.det.seed, 5);
        assert_eq!(cfg.behavior.seed, derived_seed(9, "behavior"));
    }

    #[test]
    fn resolved_config_prints_as_valid_toml() {
        for seed in [0, 1, 99, u32::MAX as u64] {
            let cfg = load(None, &[format!("seed={seed}")], none()).unwrap();
            let text = toml::to_string(&cfg).unwrap();
            let back: PipelineConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn bare_strings_and_paths() {
        let cfg = load(None, &["run_dir=out/x".to_string(), "augment.client=mock".to_string()], none()).unwrap();
        assert_eq!(cfg.run_dir, PathBuf::from("out/x"));
        assert!(flat_keys().iter().any(|l| l.starts_with("det.lr = ")));
    }
}
