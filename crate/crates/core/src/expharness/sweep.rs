use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use plotters::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ablation::{ablate_features, parse_drop, Feature};
use super::metrics::{compute_metrics, ClassMetrics, MetricsReport};
use super::noise::noisy_records;
use crate::corpus::{CommentRecord, Label, Split};
use crate::detector::{predict, train_detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::rng;

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str = "sweep,point,seed,acc,pre_ns,rec_ns,f1_ns,pre_s,rec_s,f1_s";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Flip training labels with probability p.
    Noise,
    /// Resample training data to a sarcastic proportion at fixed size.
    Robustness,
    /// Subsample the training split.
    Size,
    /// Zero user-feature columns.
    Ablation,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Noise => "noise",
            SweepKind::Robustness => "robustness",
            SweepKind::Size => "size",
            SweepKind::Ablation => "ablation",
        }
    }

    pub fn default_grid(self) -> Vec<GridValue> {
        match self {
            SweepKind::Noise => (1..=9).map(|i| GridValue::Number(i as f64 * 0.05)).collect(),
            SweepKind::Robustness => (1..=9).map(|i| GridValue::Number(i as f64 / 10.0)).collect(),
            SweepKind::Size => [5000, 10000, 15000, 20000].map(|n| GridValue::Number(n as f64)).to_vec(),
            SweepKind::Ablation => ["F", "CC", "TD", "SR", "CF", "RR"].map(|s| GridValue::Name(s.into())).to_vec(),
        }
    }
}

/// A grid entry as written in a config file: a number or a feature-drop name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Number(f64),
    Name(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Point {
    Noise(f64),
    Proportion(f64),
    Size(usize),
    Drop(Vec<Feature>),
}

impl Point {
    /// The `point` column of the result table.
    pub fn label(&self) -> String {
        match self {
            Point::Noise(p) | Point::Proportion(p) => format!("{}", (p * 1e6).round() / 1e6),
            Point::Size(n) => n.to_string(),
            Point::Drop(d) if d.is_empty() => "F".into(),
            Point::Drop(d) => d.iter().map(|f| f.name()).collect::<Vec<_>>().join("+"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// Empty selects the kind's default grid.
    pub grid: Vec<GridValue>,
    /// Seeds per grid point: `seed, seed + 1, ...`.
    pub seeds: usize,
    pub seed: u64,
    /// Training-set size for robustness points; 0 keeps the split's size.
    pub total: usize,
    /// Robustness only: top up an exhausted class by sampling with
    /// replacement instead of failing.
    pub allow_replacement: bool,
    pub concurrency: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            kind: SweepKind::Noise,
            grid: Vec::new(),
            seeds: 3,
            seed: 0,
            total: 0,
            allow_replacement: true,
            concurrency: 4,
        }
    }
}

fn grid_error(msg: String) -> Error {
    Error::config("sweep.grid", msg)
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("sweep.seeds", "must be positive"));
        }
        if self.concurrency == 0 {
            return Err(Error::config("sweep.concurrency", "must be positive"));
        }
        self.points().map(|_| ())
    }

    pub fn points(&self) -> Result<Vec<Point>> {
        let grid = if self.grid.is_empty() { self.kind.default_grid() } else { self.grid.clone() };
        let number = |g: &GridValue| match g {
            GridValue::Number(x) => Ok(*x),
            GridValue::Name(s) => s.trim().parse::<f64>().map_err(|_| grid_error(format!("{s:?} is not a number"))),
        };
        grid.iter()
            .map(|g| match self.kind {
                SweepKind::Noise => {
                    let p = number(g)?;
                    if !(0.05 - 1e-9..=0.45 + 1e-9).contains(&p) {
                        return Err(grid_error(format!("noise level {p} outside [0.05, 0.45]")));
                    }
                    Ok(Point::Noise(p))
                }
                SweepKind::Robustness => {
                    let p = number(g)?;
                    let tenths = (p * 10.0).round();
                    if (p * 10.0 - tenths).abs() > 1e-9 || !(1.0..=9.0).contains(&tenths) {
                        return Err(grid_error(format!("proportion {p} is not one of 0.1, 0.2, ..., 0.9")));
                    }
                    Ok(Point::Proportion(tenths / 10.0))
                }
                SweepKind::Size => {
                    let n = number(g)?;
                    if n < 1.0 || n.fract() != 0.0 {
                        return Err(grid_error(format!("size {n} is not a positive integer")));
                    }
                    Ok(Point::Size(n as usize))
                }
                SweepKind::Ablation => match g {
                    GridValue::Name(s) => {
                        let drop = parse_drop(s)?;
                        ablate_features(&Feature::ALL, &drop)?;
                        Ok(Point::Drop(drop))
                    }
                    GridValue::Number(x) => Err(grid_error(format!("{x} is not a feature name"))),
                },
            })
            .collect()
    }

    pub fn seed_values(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub point: String,
    pub seed: u64,
    pub metrics: MetricsReport,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.sweep,
            self.point,
            self.seed,
            m.accuracy,
            m.non_sarcastic.precision,
            m.non_sarcastic.recall,
            m.non_sarcastic.f1,
            m.sarcastic.precision,
            m.sarcastic.recall,
            m.sarcastic.f1
        )
    }

    /// Inverse of `to_csv`. Confusion counts are not stored and come back 0.
    pub fn parse(line: &str) -> Option<SweepRow> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return None;
        }
        let n: Vec<f64> = f[3..].iter().map(|s| s.parse().ok()).collect::<Option<_>>()?;
        let cm = |i: usize| ClassMetrics {
            precision: n[i],
            recall: n[i + 1],
            f1: n[i + 2],
        };
        Some(SweepRow {
            sweep: f[0].to_string(),
            point: f[1].to_string(),
            seed: f[2].parse().ok()?,
            metrics: MetricsReport {
                accuracy: n[0],
                non_sarcastic: cm(1),
                sarcastic: cm(4),
                ..Default::default()
            },
        })
    }
}

/// Draws `need` records from `pool`: without replacement when it has enough,
/// otherwise (if allowed) all of it plus a with-replacement top-up.
fn draw(
    pool: &[&CommentRecord],
    need: usize,
    class: &str,
    allow_replacement: bool,
    r: &mut rng::Rng,
) -> Result<Vec<CommentRecord>> {
    if need <= pool.len() {
        return Ok(pool.choose_multiple(r, need).map(|&c| c.clone()).collect());
    }
    let short = need - pool.len();
    if pool.is_empty() || !allow_replacement {
        return Err(Error::data(format!(
            "resampling needs {need} {class} records but only {} exist (short by {short})",
            pool.len()
        )));
    }
    log::warn!("{class} class exhausted: sampling {short} extra records with replacement");
    let mut out: Vec<CommentRecord> = pool.iter().map(|&c| c.clone()).collect();
    out.extend((0..short).map(|_| pool.choose(r).expect("non-empty").to_owned().clone()));
    Ok(out)
}

/// A training set of `total` records with exactly `round(prop * total)`
/// sarcastic ones.
pub fn resample_proportion(
    train: &[CommentRecord],
    prop: f64,
    total: usize,
    allow_replacement: bool,
    seed: u64,
) -> Result<Vec<CommentRecord>> {
    let mut r = rng::named_rng(seed, "sweep.resample");
    let n_s = (prop * total as f64).round() as usize;
    let sarcastic: Vec<&CommentRecord> = train.iter().filter(|r| r.label == Label::Sarcastic).collect();
    let plain: Vec<&CommentRecord> = train.iter().filter(|r| r.label == Label::NonSarcastic).collect();
    let mut out = draw(&sarcastic, n_s, "sarcastic", allow_replacement, &mut r)?;
    out.extend(draw(&plain, total - n_s, "non-sarcastic", allow_replacement, &mut r)?);
    out.shuffle(&mut r);
    Ok(out)
}

/// `n` training records drawn without replacement.
pub fn subsample(train: &[CommentRecord], n: usize, seed: u64) -> Result<Vec<CommentRecord>> {
    if n > train.len() {
        return Err(Error::data(format!(
            "size point {n} exceeds the {} available training records (short by {})",
            train.len(),
            n - train.len()
        )));
    }
    let mut r = rng::named_rng(seed, "sweep.subsample");
    Ok(train.choose_multiple(&mut r, n).cloned().collect())
}

/// Training set and detector config for one grid point and seed.
pub fn prepare_job(
    spec: &SweepSpec,
    point: &Point,
    seed: u64,
    base: &DetectorConfig,
    train: &[CommentRecord],
) -> Result<(Vec<CommentRecord>, DetectorConfig)> {
    let mut cfg = DetectorConfig { seed, ..base.clone() };
    let data = match point {
        Point::Noise(p) => noisy_records(train, *p, seed)?.0,
        Point::Proportion(p) => {
            let total = if spec.total == 0 { train.len() } else { spec.total };
            resample_proportion(train, *p, total, spec.allow_replacement, seed)?
        }
        Point::Size(n) => subsample(train, *n, seed)?,
        Point::Drop(drop) => {
            let (_, mask) = ablate_features(&Feature::ALL, drop)?;
            cfg.zero_cols.extend(mask.zeroed());
            cfg.zero_cols.sort_unstable();
            cfg.zero_cols.dedup();
            train.to_vec()
        }
    };
    Ok((data, cfg))
}

/// Trains on the modified training set and scores the untouched test split.
pub fn run_point(
    spec: &SweepSpec,
    point: &Point,
    seed: u64,
    base: &DetectorConfig,
    split: &Split,
) -> Result<SweepRow> {
    let (train, cfg) = prepare_job(spec, point, seed, base, &split.train)?;
    let (model, _) = train_detector(&train, &split.val, &cfg)?;
    let preds: Vec<Label> = predict(&model, &split.test)?.into_iter().map(|p| p.label).collect();
    let golds: Vec<Label> = split.test.iter().map(|r| r.label).collect();
    Ok(SweepRow {
        sweep: spec.kind.name().to_string(),
        point: point.label(),
        seed,
        metrics: compute_metrics(&preds, &golds)?,
    })
}

pub fn read_results(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != RESULTS_HEADER {
                return Err(Error::data(format!("{}: unexpected header {line:?}", path.display())));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        rows.push(
            SweepRow::parse(&line)
                .ok_or_else(|| Error::data(format!("{}: line {}: malformed result row", path.display(), i + 1)))?,
        );
    }
    Ok(rows)
}

/// Runs every (point, seed) job not already present in `out_dir/results.csv`,
/// appending each row as it finishes, then redraws `out_dir/<kind>.svg`.
/// Returns this spec's rows in grid order.
pub fn run_sweep(spec: &SweepSpec, base: &DetectorConfig, split: &Split, out_dir: &Path) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    base.validate()?;
    let points = spec.points()?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(RESULTS_FILE);
    let existing = read_results(&path)?;
    let kind = spec.kind.name();
    let done: HashSet<(String, u64)> = existing
        .iter()
        .filter(|r| r.sweep == kind)
        .map(|r| (r.point.clone(), r.seed))
        .collect();
    let jobs: Vec<(&Point, u64)> = points
        .iter()
        .flat_map(|p| spec.seed_values().into_iter().map(move |s| (p, s)))
        .filter(|(p, s)| !done.contains(&(p.label(), *s)))
        .collect();
    log::info!("{kind} sweep: {} jobs to run, {} already recorded", jobs.len(), done.len());

    let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
    if existing.is_empty() && file.metadata()?.len() == 0 {
        writeln!(file, "{RESULTS_HEADER}")?;
    }
    let writer = Mutex::new(file);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.concurrency)
        .build()
        .map_err(|e| Error::data(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<()>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, s)| {
                let row = run_point(spec, p, s, base, split)?;
                let mut f = writer.lock().expect("result writer poisoned");
                writeln!(f, "{}", row.to_csv())?;
                f.flush()?;
                Ok(())
            })
            .collect()
    });
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;

    let all = read_results(&path)?;
    let mut rows = Vec::new();
    for p in &points {
        for s in spec.seed_values() {
            let label = p.label();
            if let Some(r) = all.iter().find(|r| r.sweep == kind && r.point == label && r.seed == s) {
                rows.push(r.clone());
            }
        }
    }
    plot_sweep(kind, &rows, &out_dir.join(format!("{kind}.svg")))?;
    Ok(rows)
}

/// Mean accuracy and per-class F1 per point, in first-seen order.
pub fn summarize(rows: &[SweepRow]) -> Vec<(String, MetricsReport)> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.point) {
            order.push(r.point.clone());
        }
    }
    order
        .into_iter()
        .map(|p| {
            let group: Vec<&MetricsReport> = rows.iter().filter(|r| r.point == p).map(|r| &r.metrics).collect();
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&MetricsReport) -> f64| group.iter().map(|m| f(m)).sum::<f64>() / n;
            let class = |sel: &dyn Fn(&MetricsReport) -> ClassMetrics| ClassMetrics {
                precision: mean(&|m| sel(m).precision),
                recall: mean(&|m| sel(m).recall),
                f1: mean(&|m| sel(m).f1),
            };
            let report = MetricsReport {
                accuracy: mean(&|m| m.accuracy),
                non_sarcastic: class(&|m| m.non_sarcastic),
                sarcastic: class(&|m| m.sarcastic),
                ..Default::default()
            };
            (p, report)
        })
        .collect()
}

fn plot_error<E: std::fmt::Display>(e: E) -> Error {
    Error::data(format!("plotting failed: {e}"))
}

/// Line plot of mean accuracy and per-class F1 against the grid, with one
/// marker per seed for sarcastic F1.
pub fn plot_sweep(kind: &str, rows: &[SweepRow], path: &Path) -> Result<()> {
    let summary = summarize(rows);
    let labels: Vec<String> = summary.iter().map(|(p, _)| p.clone()).collect();
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let xmax = labels.len().max(2) as f64 - 0.5;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{kind} sweep"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(-0.5..xmax, 0.0..1.0)
        .map_err(plot_error)?;
    let tick = |x: &f64| {
        let i = x.round();
        if (x - i).abs() < 1e-6 && i >= 0.0 {
            labels.get(i as usize).cloned().unwrap_or_default()
        } else {
            String::new()
        }
    };
    chart
        .configure_mesh()
        .x_labels(labels.len().max(2) * 2 + 1)
        .x_label_formatter(&tick)
        .x_desc(kind)
        .y_desc("score")
        .draw()
        .map_err(plot_error)?;
    let series: [(&str, RGBColor, fn(&MetricsReport) -> f64); 3] = [
        ("accuracy", BLACK, |m| m.accuracy),
        ("F1 sarcastic", RED, |m| m.sarcastic.f1),
        ("F1 non-sarcastic", BLUE, |m| m.non_sarcastic.f1),
    ];
    for (name, color, f) in series {
        chart
            .draw_series(LineSeries::new(summary.iter().enumerate().map(|(i, (_, m))| (i as f64, f(m))), color))
            .map_err(plot_error)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    let dots = rows.iter().filter_map(|r| {
        let i = labels.iter().position(|l| *l == r.point)?;
        Some(Circle::new((i as f64, r.metrics.sarcastic.f1), 3, RED.filled()))
    });
    chart.draw_series(dots).map_err(plot_error)?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids_validate() {
        for kind in [SweepKind::Noise, SweepKind::Robustness, SweepKind::Size, SweepKind::Ablation] {
            let spec = SweepSpec { kind, ..Default::default() };
            spec.validate().unwrap();
        }
        let noise = SweepSpec::default().points().unwrap();
        assert_eq!(noise.len(), 9);
        assert_eq!(noise[8].label(), "0.45");
    }

    #[test]
    fn grid_bounds() {
        let bad = [
            (SweepKind::Noise, GridValue::Number(0.5)),
            (SweepKind::Robustness, GridValue::Number(0.15)),
            (SweepKind::Robustness, GridValue::Number(1.0)),
            (SweepKind::Size, GridValue::Number(2.5)),
            (SweepKind::Ablation, GridValue::Name("XX".into())),
        ];
        for (kind, g) in bad {
            let spec = SweepSpec { kind, grid: vec![g], ..Default::default() };
            assert!(matches!(spec.validate(), Err(Error::Config { .. })));
        }
    }

    #[test]
    fn csv_rows_round_trip() {
        let row = SweepRow {
            sweep: "noise".into(),
            point: "0.05".into(),
            seed: 2,
            metrics: MetricsReport {
                accuracy: 0.1 + 0.2,
                sarcastic: ClassMetrics { precision: 1.0 / 3.0, recall: 0.5, f1: 0.4 },
                ..Default::default()
            },
        };
        assert_eq!(SweepRow::parse(&row.to_csv()).unwrap(), row);
    }
}
