//! Replication harness: every (dataset, method, seed) cell is one training
//! run; accuracies are aggregated per (dataset, method) and compared with
//! one-tailed paired t-tests, pairing replicates by seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::stats::{compare, mean, std_error, TestResult, Verdict};
use crate::error::{Error, Result};
use crate::manifest::{write_atomic, DataSource, KvMap, Precision, RunManifest, RunSpec};
use crate::trainer::{train, ModelSpec, RunRecord, TrainConfig, TrainMode};

/// Which accuracy of a run is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMetric {
    /// Test accuracy after the last epoch.
    #[default]
    FinalTestAcc,
    /// Best test accuracy over all epochs.
    BestTestAcc,
}

impl BenchMetric {
    pub fn name(self) -> &'static str {
        match self {
            BenchMetric::FinalTestAcc => "final_test_acc",
            BenchMetric::BestTestAcc => "best_test_acc",
        }
    }

    pub fn of(self, rec: &RunRecord) -> f64 {
        match self {
            BenchMetric::FinalTestAcc => rec.summary.final_test_acc,
            BenchMetric::BestTestAcc => rec.summary.best_test_acc,
        }
    }
}

impl FromStr for BenchMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final_test_acc" | "final" => Ok(BenchMetric::FinalTestAcc),
            "best_test_acc" | "best" => Ok(BenchMetric::BestTestAcc),
            _ => Err(Error::Config(format!("unknown metric `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub datasets: Vec<DataSource>,
    pub methods: Vec<TrainMode>,
    pub seeds: Vec<u64>,
    pub model: ModelSpec,
    /// Shared training settings; mode and seed are set per cell.
    pub base: TrainConfig,
    pub precision: Precision,
    pub metric: BenchMetric,
    pub jobs: usize,
}

/// `a-b` ranges and comma lists, e.g. `0-4,10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("invalid seed list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

impl BenchConfig {
    /// Reads `datasets`, `methods`, `seeds`, `metric` and `jobs`; every other
    /// key is a shared run setting as in [`RunSpec::from_kv`].
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let mut shared = kv.clone();
        let take = |shared: &mut KvMap, key: &str| {
            shared
                .remove(key)
                .ok_or_else(|| Error::Config(format!("benchmark config needs `{key}`")))
        };
        let dataset_names = take(&mut shared, "datasets")?;
        let methods = take(&mut shared, "methods")?
            .split(',')
            .map(|m| m.trim().parse::<TrainMode>())
            .collect::<Result<Vec<_>>>()?;
        let seeds = parse_seeds(&take(&mut shared, "seeds")?)?;
        let metric = shared.remove("metric").map_or(Ok(BenchMetric::default()), |m| m.parse())?;
        let jobs = match shared.remove("jobs") {
            Some(j) => j.parse().map_err(|_| Error::Config(format!("invalid jobs `{j}`")))?,
            None => 1,
        };
        shared.remove("mode");
        shared.remove("seed");
        let mut datasets = Vec::new();
        let mut first = None;
        for name in dataset_names.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let mut one = shared.clone();
            one.set("data", name);
            let spec = RunSpec::from_kv(&one)?;
            datasets.push(spec.data.clone());
            first.get_or_insert(spec);
        }
        let spec = first.ok_or_else(|| Error::Config("benchmark lists no datasets".into()))?;
        let cfg = Self {
            datasets,
            methods,
            seeds,
            model: spec.model,
            base: spec.train,
            precision: spec.precision,
            metric,
            jobs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("benchmark needs datasets, methods and seeds".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        let mut ids: Vec<String> = self.datasets.iter().map(DataSource::id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.datasets.len() {
            return Err(Error::Config("dataset identifiers must be distinct".into()));
        }
        Ok(())
    }

    /// All cells, ordered by dataset, method and seed as listed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (di, d) in self.datasets.iter().enumerate() {
            for (mi, m) in self.methods.iter().enumerate() {
                for &seed in &self.seeds {
                    out.push(Cell {
                        dataset_index: di,
                        method_index: mi,
                        dataset: d.id(),
                        method: m.clone(),
                        seed,
                    });
                }
            }
        }
        out
    }

    /// The fully resolved run of one cell.
    pub fn run_spec(&self, cell: &Cell) -> RunSpec {
        let mut train = self.base.clone();
        train.mode = cell.method.clone();
        train.seed = cell.seed;
        RunSpec {
            data: self.datasets[cell.dataset_index].clone(),
            model: self.model.clone(),
            train,
            precision: self.precision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub dataset_index: usize,
    pub method_index: usize,
    pub dataset: String,
    pub method: TrainMode,
    pub seed: u64,
}

impl Cell {
    /// Directory name of the cell's outputs.
    pub fn dir_name(&self) -> String {
        format!("{}__{}__seed{}", self.dataset, self.method.to_string().replace(':', "-"), self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
    pub resumed: bool,
}

impl CellOutcome {
    pub fn failed(&self) -> bool {
        self.record.as_ref().is_none_or(RunRecord::diverged)
    }
}

/// Runs one cell and, with an output directory, stores its record and manifest.
pub fn run_cell(cfg: &BenchConfig, cell: &Cell, out: Option<&Path>) -> Result<RunRecord> {
    let spec = cfg.run_spec(cell);
    let record = match spec.precision {
        Precision::F64 => {
            let data = spec.data.load::<f64>(cell.seed)?;
            train(&data, &spec.model, &spec.train)?.1
        }
        Precision::F32 => {
            let data = spec.data.load::<f32>(cell.seed)?;
            train(&data, &spec.model, &spec.train)?.1
        }
    };
    if let Some(out) = out {
        let dir = out.join("runs").join(cell.dir_name());
        let jsonl = record.to_jsonl();
        let curves = record.curves_csv();
        let full = serde_json::to_string_pretty(&record)?;
        write_atomic(&dir.join("runrecord.jsonl"), jsonl.as_bytes())?;
        write_atomic(&dir.join("curves.csv"), curves.as_bytes())?;
        write_atomic(&dir.join("record.json"), full.as_bytes())?;
        let mut manifest = RunManifest::new(spec, None, dir.clone());
        manifest.add_artifact("runrecord.jsonl", jsonl.as_bytes());
        manifest.add_artifact("curves.csv", curves.as_bytes());
        manifest.add_artifact("record.json", full.as_bytes());
        // the manifest goes last so that its presence marks a finished cell
        write_atomic(&dir.join("manifest.txt"), manifest.render().as_bytes())?;
    }
    Ok(record)
}

/// A previously finished cell whose manifest matches the current config and
/// whose record still hashes to the recorded digest.
fn resume_cell(cfg: &BenchConfig, cell: &Cell, out: &Path) -> Option<RunRecord> {
    let dir = out.join("runs").join(cell.dir_name());
    let manifest = KvMap::load(&dir.join("manifest.txt")).ok()?;
    if RunSpec::from_kv(&manifest).ok()? != cfg.run_spec(cell) {
        return None;
    }
    let full = fs::read(dir.join("record.json")).ok()?;
    if manifest.get("artifact.record.json.sha256")? != crate::manifest::sha256_hex(&full) {
        return None;
    }
    serde_json::from_slice(&full).ok()
}

/// Mean and standard error of one (dataset, method) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub dataset: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub replicates: Vec<f64>,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
    pub failed_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTests {
    pub dataset: String,
    /// One test per unordered method pair, in method order.
    pub tests: Vec<TestResult>,
    /// Method significantly better than every competitor.
    pub dominant: Option<String>,
}

/// `(better, no_diff, worse)` counts of `method` against `competitor` over datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub method: String,
    pub competitor: String,
    pub better: usize,
    pub no_diff: usize,
    pub worse: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub metric: BenchMetric,
    pub cells: Vec<ComparisonCell>,
    /// Empty when fewer than two seeds were run.
    pub tests: Vec<DatasetTests>,
    pub summary: Vec<PairSummary>,
    pub failed_cells: Vec<String>,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn any_failed(&self) -> bool {
        !self.failed_cells.is_empty()
    }

    pub fn cell(&self, dataset: &str, method: &str) -> Option<&ComparisonCell> {
        self.cells.iter().find(|c| c.dataset == dataset && c.method == method)
    }

    /// Verdict of `a` against `b` on `dataset`, in either stored orientation.
    pub fn verdict(&self, dataset: &str, a: &str, b: &str) -> Option<Verdict> {
        let tests = &self.tests.iter().find(|t| t.dataset == dataset)?.tests;
        tests.iter().find_map(|t| {
            if t.method_a == a && t.method_b == b {
                Some(t.verdict)
            } else if t.method_a == b && t.method_b == a {
                Some(flip(t.verdict))
            } else {
                None
            }
        })
    }

    pub fn comparison_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("dataset,method,n,mean,std_error,failed\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.dataset,
                c.method,
                c.replicates.len(),
                opt(c.mean),
                opt(c.std_error),
                c.failed_seeds.len()
            );
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric: {}", self.metric.name());
        let datasets: Vec<&str> = {
            let mut v: Vec<&str> = Vec::new();
            for c in &self.cells {
                if !v.contains(&c.dataset.as_str()) {
                    v.push(&c.dataset);
                }
            }
            v
        };
        for d in &datasets {
            let dominant = self.tests.iter().find(|t| t.dataset == *d).and_then(|t| t.dominant.as_deref());
            let _ = writeln!(out, "\n{d}");
            for c in self.cells.iter().filter(|c| c.dataset == *d) {
                let mark = if dominant == Some(c.method.as_str()) { "  [dominant]" } else { "" };
                match (c.mean, c.std_error) {
                    (Some(m), Some(se)) => {
                        let _ = writeln!(out, "  {:<28} {m:.4} ± {se:.4} (n={}){mark}", c.method, c.replicates.len());
                    }
                    (Some(m), None) => {
                        let _ = writeln!(out, "  {:<28} {m:.4} (n={}){mark}", c.method, c.replicates.len());
                    }
                    _ => {
                        let _ = writeln!(out, "  {:<28} failed", c.method);
                    }
                }
            }
        }
        if self.summary.is_empty() {
            let _ = writeln!(out, "\nno significance tests (fewer than two seeds)");
        } else {
            let _ = writeln!(
                out,
                "\n(better, no_diff, worse) over {} dataset(s), one-tailed paired t-test at p <= 0.05",
                datasets.len()
            );
            for s in &self.summary {
                let _ = writeln!(
                    out,
                    "  {:<28} vs {:<28} ({}, {}, {})",
                    s.method, s.competitor, s.better, s.no_diff, s.worse
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    /// Writes `comparison.csv`, `tests.json` and `summary.txt` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            ("comparison.csv", self.comparison_csv()),
            ("tests.json", serde_json::to_string_pretty(self)?),
            ("summary.txt", self.summary_text()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            write_atomic(&p, body.as_bytes())?;
            written.push(p);
        }
        Ok(written)
    }
}

fn flip(v: Verdict) -> Verdict {
    match v {
        Verdict::Better => Verdict::Worse,
        Verdict::Worse => Verdict::Better,
        Verdict::NoDiff => Verdict::NoDiff,
    }
}

/// Executes every cell on a pool of `cfg.jobs` threads, resuming finished
/// cells found under `out`, then aggregates.
pub fn run_benchmark(cfg: &BenchConfig, out: Option<&Path>) -> Result<BenchReport> {
    cfg.validate()?;
    let cells = cfg.cells();
    let slots: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let workers = cfg.jobs.min(cells.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let outcome = match out.and_then(|o| resume_cell(cfg, cell, o)) {
                    Some(record) => CellOutcome {
                        cell: cell.clone(),
                        record: Some(record),
                        error: None,
                        resumed: true,
                    },
                    None => {
                        info!("running {}", cell.dir_name());
                        match run_cell(cfg, cell, out) {
                            Ok(record) => CellOutcome {
                                cell: cell.clone(),
                                record: Some(record),
                                error: None,
                                resumed: false,
                            },
                            Err(e) => CellOutcome {
                                cell: cell.clone(),
                                record: None,
                                error: Some(e.to_string()),
                                resumed: false,
                            },
                        }
                    }
                };
                if let Ok(mut v) = slots.lock() {
                    v[i] = Some(outcome);
                }
            });
        }
    });
    let outcomes: Vec<CellOutcome> = slots
        .into_inner()
        .map_err(|_| Error::Internal("benchmark worker panicked".into()))?
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Internal("benchmark cell without outcome".into()))?;
    aggregate(cfg, &outcomes)
}

/// Reduces finished cells to means, standard errors and pairwise tests.
pub fn aggregate(cfg: &BenchConfig, outcomes: &[CellOutcome]) -> Result<BenchReport> {
    let mut warnings = Vec::new();
    let mut failed_cells = Vec::new();
    // (dataset, method) -> seed -> accuracy
    let mut acc: BTreeMap<(usize, usize), BTreeMap<u64, f64>> = BTreeMap::new();
    let mut failed: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    for o in outcomes {
        let key = (o.cell.dataset_index, o.cell.method_index);
        match &o.record {
            Some(r) if !r.diverged() => {
                acc.entry(key).or_default().insert(o.cell.seed, cfg.metric.of(r));
            }
            _ => {
                let why = match (&o.error, &o.record) {
                    (Some(e), _) => e.clone(),
                    (None, Some(r)) => format!("diverged in epoch {}", r.summary.diverged_at.unwrap_or(0)),
                    _ => "no result".into(),
                };
                warn!("cell {} failed: {why}", o.cell.dir_name());
                warnings.push(format!("cell {} failed and is excluded: {why}", o.cell.dir_name()));
                failed_cells.push(o.cell.dir_name());
                failed.entry(key).or_default().push(o.cell.seed);
            }
        }
    }

    let method_names: Vec<String> = cfg.methods.iter().map(ToString::to_string).collect();
    let mut cells = Vec::new();
    for (di, d) in cfg.datasets.iter().enumerate() {
        for (mi, m) in method_names.iter().enumerate() {
            let per_seed = acc.get(&(di, mi)).cloned().unwrap_or_default();
            let replicates: Vec<f64> = per_seed.values().copied().collect();
            let mut failed_seeds = failed.get(&(di, mi)).cloned().unwrap_or_default();
            failed_seeds.sort_unstable();
            cells.push(ComparisonCell {
                dataset: d.id(),
                method: m.clone(),
                seeds: per_seed.keys().copied().collect(),
                mean: (!replicates.is_empty()).then(|| mean(&replicates)),
                std_error: (replicates.len() >= 2).then(|| std_error(&replicates)),
                replicates,
                failed_seeds,
            });
        }
    }

    let mut tests = Vec::new();
    let mut summary = Vec::new();
    if cfg.seeds.len() < 2 {
        warnings.push("a single seed gives means only; t-tests need at least two replicates".into());
    } else {
        let nm = method_names.len();
        let mut counts = vec![[0usize; 3]; nm * nm];
        for (di, d) in cfg.datasets.iter().enumerate() {
            let mut ds_tests = Vec::new();
            let mut verdicts: BTreeMap<(usize, usize), Verdict> = BTreeMap::new();
            for a in 0..nm {
                for b in (a + 1)..nm {
                    let (ra, rb) = (acc.get(&(di, a)), acc.get(&(di, b)));
                    let (Some(ra), Some(rb)) = (ra, rb) else {
                        warnings.push(format!("{}: no results for {} vs {}", d.id(), method_names[a], method_names[b]));
                        continue;
                    };
                    let common: Vec<u64> = ra.keys().filter(|s| rb.contains_key(s)).copied().collect();
                    if common.len() < 2 {
                        warnings.push(format!(
                            "{}: fewer than two paired seeds for {} vs {}",
                            d.id(),
                            method_names[a],
                            method_names[b]
                        ));
                        continue;
                    }
                    let xa: Vec<f64> = common.iter().map(|s| ra[s]).collect();
                    let xb: Vec<f64> = common.iter().map(|s| rb[s]).collect();
                    let t = compare(&method_names[a], &xa, &method_names[b], &xb)?;
                    verdicts.insert((a, b), t.verdict);
                    verdicts.insert((b, a), flip(t.verdict));
                    ds_tests.push(t);
                }
            }
            for ((a, b), v) in &verdicts {
                let slot = match v {
                    Verdict::Better => 0,
                    Verdict::NoDiff => 1,
                    Verdict::Worse => 2,
                };
                counts[a * nm + b][slot] += 1;
            }
            let dominant = (0..nm)
                .find(|&a| nm > 1 && (0..nm).filter(|&b| b != a).all(|b| verdicts.get(&(a, b)) == Some(&Verdict::Better)))
                .map(|a| method_names[a].clone());
            tests.push(DatasetTests {
                dataset: d.id(),
                tests: ds_tests,
                dominant,
            });
        }
        for a in 0..nm {
            for b in 0..nm {
                if a == b {
                    continue;
                }
                let [better, no_diff, worse] = counts[a * nm + b];
                summary.push(PairSummary {
                    method: method_names[a].clone(),
                    competitor: method_names[b].clone(),
                    better,
                    no_diff,
                    worse,
                });
            }
        }
    }

    Ok(BenchReport {
        metric: cfg.metric,
        cells,
        tests,
        summary,
        failed_cells,
        warnings,
    })
}
