//! Resumable datasets × K × methods × seeds experiment runner.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{curve_report, flatness_drop, mean_curve, render_curves_png, EvalError, PlotSeries, ResultCell};
use crate::backbone::{EncoderBackbone, ToyBackbone, Vocab};
use crate::checkpoint::load_backbone;
use crate::config::{merge_toml, PipelineConfig};
use crate::contextgen::{GenerativeLmClient, HttpClient, MarkovClient, StubClient};
use crate::corpus::{load_dataset, sample_episode, DataFormat, IntentDataset, Split};
use crate::provenance::{hash_json, hash_tensors, write_atomic};
use crate::synthetic::toy_intent_dataset;
use crate::trainer::{run_pipeline, LearningCurve, PipelineInputs, StagePlan, SynonymLexicon, TrainMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub labels: usize,
    pub train_per_label: usize,
    pub eval_per_label: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            labels: 4,
            train_per_label: 10,
            eval_per_label: 10,
            seed: 0,
        }
    }
}

fn csv_format() -> DataFormat {
    DataFormat::Csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    /// Relative paths resolve against the grid file's directory.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "csv_format")]
    pub format: DataFormat,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetSpec {
    pub fn load(&self, base_dir: &Path) -> Result<IntentDataset, EvalError> {
        match (&self.path, &self.synthetic) {
            (Some(p), None) => {
                let p = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                load_dataset(&p, self.format).map_err(|e| EvalError::Grid(format!("dataset `{}`: {e}", self.name)))
            }
            (None, Some(s)) => {
                if !(2..=6).contains(&s.labels) {
                    return Err(EvalError::Grid(format!("synthetic dataset `{}` needs 2 to 6 labels", self.name)));
                }
                Ok(toy_intent_dataset(s.labels, s.train_per_label, s.eval_per_label, s.seed))
            }
            _ => Err(EvalError::Grid(format!(
                "dataset `{}` needs exactly one of `path` or `synthetic`",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    None,
    Stub,
    #[default]
    Markov,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Completions cycled by the stub generator.
    pub stub_completions: Vec<String>,
}

impl GeneratorSpec {
    pub fn build(&self, config: &PipelineConfig) -> Option<Box<dyn GenerativeLmClient>> {
        match self.kind {
            GeneratorKind::None => None,
            GeneratorKind::Stub => Some(Box::new(StubClient::new(self.stub_completions.clone()))),
            GeneratorKind::Markov => Some(Box::new(MarkovClient::new(config.augment.template.clone()))),
            GeneratorKind::Http => Some(Box::new(HttpClient::new(config.http.clone()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub use_ca: bool,
    #[serde(default)]
    pub use_ssd: bool,
    #[serde(default = "dft_mode")]
    pub mode: TrainMode,
    /// Partial run configuration layered over the grid's `config`.
    #[serde(default)]
    pub overrides: Option<toml::Value>,
}

fn dft_mode() -> TrainMode {
    TrainMode::Dft
}

impl MethodSpec {
    pub fn plan(&self) -> StagePlan {
        StagePlan {
            use_ca: self.use_ca,
            use_ssd: self.use_ssd,
            mode: self.mode,
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.plan().name())
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    #[serde(default)]
    pub name: String,
    pub datasets: Vec<DatasetSpec>,
    #[serde(alias = "K_values")]
    pub k_values: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Concurrent runs.
    #[serde(default = "one")]
    pub workers: usize,
    /// Saved encoder shared by every run; a fresh toy encoder per dataset when absent.
    #[serde(default)]
    pub backbone_dir: Option<PathBuf>,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub external_corpus: Option<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub config: PipelineConfig,
}

impl ExperimentGrid {
    pub fn from_toml_str(raw: &str) -> Result<Self, EvalError> {
        let grid: Self = toml::from_str(raw).map_err(|e| EvalError::Grid(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let raw = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&raw)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let err = |m: String| Err(EvalError::Grid(m));
        if self.datasets.is_empty() || self.k_values.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return err("the grid needs at least one dataset, K, method and seed".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return err("seeds must be distinct".into());
        }
        if self.k_values.contains(&0) {
            return err("K must be positive".into());
        }
        let names: BTreeSet<_> = self.datasets.iter().map(|d| &d.name).collect();
        if names.len() != self.datasets.len() {
            return err("dataset names must be distinct".into());
        }
        let methods: BTreeSet<_> = self.methods.iter().map(MethodSpec::display_name).collect();
        if methods.len() != self.methods.len() {
            return err("method names must be distinct".into());
        }
        for m in &self.methods {
            m.plan().validate().map_err(|e| EvalError::Grid(e.to_string()))?;
            self.resolved_config(m, self.seeds[0])?;
        }
        Ok(())
    }

    /// Base config overlaid with the method's overrides, seeded for one run.
    pub fn resolved_config(&self, method: &MethodSpec, seed: u64) -> Result<PipelineConfig, EvalError> {
        let mut cfg = match &method.overrides {
            None => self.config.clone(),
            Some(over) => {
                let mut base = toml::Value::try_from(&self.config).expect("config serializes");
                merge_toml(&mut base, over.clone());
                base.try_into()
                    .map_err(|e: toml::de::Error| EvalError::Grid(format!("method `{}`: {e}", method.display_name())))?
            }
        };
        cfg.train.seed = seed;
        cfg.augment.seed = seed;
        cfg.validate()
            .map_err(|e| EvalError::Grid(format!("method `{}`: {e}", method.display_name())))?;
        Ok(cfg)
    }

    pub fn jobs(&self) -> Result<Vec<CellJob>, EvalError> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for &k in &self.k_values {
                for m in &self.methods {
                    for &seed in &self.seeds {
                        out.push(CellJob {
                            dataset: d.name.clone(),
                            k,
                            method: m.display_name(),
                            plan: m.plan(),
                            seed,
                            config: self.resolved_config(m, seed)?,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One (dataset, K, method, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellJob {
    pub dataset: String,
    pub k: usize,
    pub method: String,
    pub plan: StagePlan,
    pub seed: u64,
    pub config: PipelineConfig,
}

fn slug(s: &str) -> String {
    let mut out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    while out.contains("__") {
        out = out.replace("__", "_");
    }
    out.trim_matches('_').to_string()
}

impl CellJob {
    pub fn group_slug(&self) -> String {
        format!("{}_K{}_{}", slug(&self.dataset), self.k, slug(&self.method))
    }

    pub fn file_name(&self) -> String {
        format!("{}_seed{}.json", self.group_slug(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub accuracy: f64,
    pub curve: Option<LearningCurve>,
    pub provenance: serde_json::Value,
}

/// Executes grid runs; implementations must be shareable across worker threads.
pub trait CellRunner: Sync {
    /// Identity of everything besides the job itself that determines a run's result.
    fn fingerprint(&self, dataset: &str) -> String;
    fn run(&self, job: &CellJob) -> Result<RunOutput, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Contents of `cells/<job>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub k: usize,
    pub method: String,
    pub seed: u64,
    pub key: String,
    pub status: RunStatus,
    pub accuracy: Option<f64>,
    pub runtime_secs: f64,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub curve: Option<LearningCurve>,
    #[serde(default)]
    pub provenance: Option<serde_json::Value>,
}

/// Trains through the full pipeline on the toy encoder (or a saved one).
pub struct PipelineRunner {
    datasets: BTreeMap<String, IntentDataset>,
    backbones: BTreeMap<String, ToyBackbone>,
    generator: Option<Box<dyn GenerativeLmClient>>,
    generator_desc: String,
    external_corpus: Option<PathBuf>,
    lexicon: Option<SynonymLexicon>,
}

/// The shared starting encoder for a dataset: a vocabulary over its train split and seeded weights.
pub fn toy_backbone_for(ds: &IntentDataset, config: &PipelineConfig) -> ToyBackbone {
    let texts = ds.split(Split::Train).iter().map(|u| u.text.as_str());
    ToyBackbone::new(config.backbone.clone(), Vocab::build(texts, config.backbone.max_vocab))
}

impl PipelineRunner {
    pub fn new(grid: &ExperimentGrid, base_dir: &Path) -> Result<Self, EvalError> {
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base_dir.join(p) };
        let mut datasets = BTreeMap::new();
        let mut backbones = BTreeMap::new();
        let shared = match &grid.backbone_dir {
            Some(dir) => Some(
                load_backbone::<ToyBackbone>(&resolve(dir)).map_err(|e| EvalError::Grid(format!("backbone: {e}")))?,
            ),
            None => None,
        };
        for d in &grid.datasets {
            let ds = d.load(base_dir)?;
            let bb = shared.clone().unwrap_or_else(|| toy_backbone_for(&ds, &grid.config));
            backbones.insert(d.name.clone(), bb);
            datasets.insert(d.name.clone(), ds);
        }
        let generator = grid.generator.build(&grid.config);
        let generator_desc = generator.as_ref().map(|g| g.describe()).unwrap_or_else(|| "none".into());
        let lexicon = match &grid.lexicon {
            Some(p) => Some(SynonymLexicon::load(&resolve(p)).map_err(|e| EvalError::Grid(e.to_string()))?),
            None => None,
        };
        Ok(Self {
            datasets,
            backbones,
            generator,
            generator_desc,
            external_corpus: grid.external_corpus.as_ref().map(resolve),
            lexicon,
        })
    }
}

impl CellRunner for PipelineRunner {
    fn fingerprint(&self, dataset: &str) -> String {
        let ds = self.datasets.get(dataset).map(IntentDataset::content_hash);
        let bb = self.backbones.get(dataset).map(|b| hash_tensors(b.tensors()));
        hash_json(&serde_json::json!({
            "dataset": ds,
            "backbone": bb,
            "generator": self.generator_desc,
            "external_corpus": self.external_corpus,
            "lexicon": self.lexicon.as_ref().map(|l| l.len()),
        }))
    }

    fn run(&self, job: &CellJob) -> Result<RunOutput, String> {
        let ds = self.datasets.get(&job.dataset).ok_or("unknown dataset")?;
        let bb = self.backbones.get(&job.dataset).ok_or("unknown dataset")?;
        let episode = sample_episode(ds, job.k, job.seed).map_err(|e| e.to_string())?;
        let out = run_pipeline(PipelineInputs {
            episode: &episode,
            pretrained: bb,
            config: &job.config,
            plan: job.plan,
            client: self.generator.as_deref(),
            corpus: None,
            external_corpus: self.external_corpus.as_deref(),
            lexicon: self.lexicon.as_ref(),
        })
        .map_err(|e| e.to_string())?;
        let accuracy = match out.accuracy {
            Some(a) => a,
            None => super::evaluate(&out.model, &episode.eval_pool).map_err(|e| e.to_string())?,
        };
        Ok(RunOutput {
            accuracy,
            curve: Some(out.curve),
            provenance: serde_json::to_value(&out.provenance).map_err(|e| e.to_string())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub cells: Vec<ResultCell>,
    pub records: Vec<RunRecord>,
    pub executed: usize,
    pub skipped: usize,
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let mut body = serde_json::to_string_pretty(value).expect("results serialize");
    body.push('\n');
    write_atomic(path, body.as_bytes()).map_err(io_at(path))
}

fn read_record(path: &Path) -> Option<RunRecord> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

/// Runs every job whose completed record is missing or stale, then aggregates.
pub fn run_grid(grid: &ExperimentGrid, out_dir: &Path, runner: &dyn CellRunner, force: bool) -> Result<GridOutcome, EvalError> {
    grid.validate()?;
    let cells_dir = out_dir.join("cells");
    fs::create_dir_all(&cells_dir).map_err(io_at(&cells_dir))?;
    write_json(&out_dir.join("grid.json"), grid)?;

    let jobs = grid.jobs()?;
    let keyed: Vec<(CellJob, String)> = jobs
        .into_iter()
        .map(|j| {
            let key = hash_json(&serde_json::json!({ "job": j, "runner": runner.fingerprint(&j.dataset) }));
            (j, key)
        })
        .collect();
    let pending: Vec<&(CellJob, String)> = keyed
        .iter()
        .filter(|(job, key)| {
            force
                || !read_record(&cells_dir.join(job.file_name()))
                    .is_some_and(|r| r.status == RunStatus::Ok && &r.key == key)
        })
        .collect();
    let skipped = keyed.len() - pending.len();
    log::info!("grid `{}`: {} runs, {} already complete", grid.name, keyed.len(), skipped);

    let execute = |(job, key): &&(CellJob, String)| -> Result<(), EvalError> {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| runner.run(job)))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "run panicked".into());
                Err(msg)
            });
        let runtime_secs = start.elapsed().as_secs_f64();
        let record = match result {
            Ok(o) => RunRecord {
                dataset: job.dataset.clone(),
                k: job.k,
                method: job.method.clone(),
                seed: job.seed,
                key: key.clone(),
                status: RunStatus::Ok,
                accuracy: Some(o.accuracy),
                runtime_secs,
                error: None,
                curve: o.curve,
                provenance: Some(o.provenance),
            },
            Err(e) => {
                log::error!("{} seed {} failed: {e}", job.group_slug(), job.seed);
                RunRecord {
                    dataset: job.dataset.clone(),
                    k: job.k,
                    method: job.method.clone(),
                    seed: job.seed,
                    key: key.clone(),
                    status: RunStatus::Failed,
                    accuracy: None,
                    runtime_secs,
                    error: Some(e),
                    curve: None,
                    provenance: None,
                }
            }
        };
        write_json(&cells_dir.join(job.file_name()), &record)
    };
    if grid.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(grid.workers)
            .build()
            .map_err(|e| EvalError::Grid(format!("cannot start workers: {e}")))?;
        pool.install(|| pending.par_iter().try_for_each(execute))?;
    } else {
        pending.iter().try_for_each(execute)?;
    }
    let mut outcome = aggregate(grid, out_dir)?;
    outcome.executed = pending.len();
    outcome.skipped = skipped;
    Ok(outcome)
}

/// Rebuilds `report.md` and the curve files from the per-run records on disk.
pub fn aggregate(grid: &ExperimentGrid, out_dir: &Path) -> Result<GridOutcome, EvalError> {
    let cells_dir = out_dir.join("cells");
    let curves_dir = out_dir.join("curves");
    fs::create_dir_all(&curves_dir).map_err(io_at(&curves_dir))?;
    let jobs = grid.jobs()?;
    let mut groups: BTreeMap<(usize, usize, usize), Vec<(CellJob, Option<RunRecord>)>> = BTreeMap::new();
    for job in jobs {
        let di = grid.datasets.iter().position(|d| d.name == job.dataset).expect("dataset of job");
        let ki = grid.k_values.iter().position(|k| *k == job.k).expect("K of job");
        let mi = grid.methods.iter().position(|m| m.display_name() == job.method).expect("method of job");
        let rec = read_record(&cells_dir.join(job.file_name()));
        groups.entry((di, ki, mi)).or_default().push((job, rec));
    }
    let mut cells = Vec::new();
    let mut records = Vec::new();
    let mut flatness = BTreeMap::new();
    for runs in groups.values() {
        let first = &runs[0].0;
        let triples: Vec<(u64, Option<f64>, f64)> = runs
            .iter()
            .map(|(j, r)| match r {
                Some(r) if r.status == RunStatus::Ok => (j.seed, r.accuracy, r.runtime_secs),
                Some(r) => (j.seed, None, r.runtime_secs),
                None => (j.seed, None, 0.0),
            })
            .collect();
        cells.push(ResultCell::from_runs(&first.dataset, first.k, &first.method, &triples));
        let curves: Vec<&LearningCurve> = runs
            .iter()
            .filter_map(|(_, r)| r.as_ref().and_then(|r| r.curve.as_ref()))
            .collect();
        if let Some(mean) = mean_curve(&curves) {
            let series = &curve_report(&[(first.group_slug(), mean)])[0];
            let csv = curves_dir.join(format!("{}.csv", first.group_slug()));
            write_atomic(&csv, series.to_csv().as_bytes()).map_err(io_at(&csv))?;
            let xs = series.epochs.iter().map(|e| *e as f64);
            let plot = [
                PlotSeries {
                    color: [31, 119, 180],
                    points: xs.clone().zip(series.train_acc.iter().copied()).collect(),
                },
                PlotSeries {
                    color: [214, 39, 40],
                    points: xs.zip(series.eval_acc.iter().map(|v| v.unwrap_or(f64::NAN))).collect(),
                },
            ];
            render_curves_png(&curves_dir.join(format!("{}.png", first.group_slug())), &plot)?;
            if let Some(f) = series.flatness_drop {
                flatness.insert((first.dataset.clone(), first.k, first.method.clone()), f);
            }
        }
        records.extend(runs.iter().filter_map(|(_, r)| r.clone()));
    }
    let report = render_report(grid, &cells, &flatness);
    let path = out_dir.join("report.md");
    write_atomic(&path, report.as_bytes()).map_err(io_at(&path))?;
    Ok(GridOutcome {
        cells,
        records,
        executed: 0,
        skipped: 0,
    })
}

/// Markdown tables: methods × (dataset, K) as `mean(std)` accuracy, then per-seed values.
pub fn render_report(
    grid: &ExperimentGrid,
    cells: &[ResultCell],
    flatness: &BTreeMap<(String, usize, String), f64>,
) -> String {
    let find = |d: &str, k: usize, m: &str| cells.iter().find(|c| c.dataset == d && c.k == k && c.method == m);
    let columns: Vec<(String, usize)> = grid
        .datasets
        .iter()
        .flat_map(|d| grid.k_values.iter().map(move |k| (d.name.clone(), *k)))
        .collect();
    let mut out = String::new();
    let title = if grid.name.is_empty() { "experiment grid" } else { grid.name.as_str() };
    out.push_str(&format!("# Results: {title}\n\n"));
    out.push_str(&format!(
        "Accuracy (%) on the merged dev+test pool, mean(std) over {} seeds. `*` marks cells with failed seeds.\n\n",
        grid.seeds.len()
    ));
    out.push_str("| Method |");
    for (d, k) in &columns {
        out.push_str(&format!(" {d} K={k} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(columns.len()));
    out.push('\n');
    for m in &grid.methods {
        let name = m.display_name();
        out.push_str(&format!("| {name} |"));
        for (d, k) in &columns {
            let v = find(d, *k, &name).map(ResultCell::render).unwrap_or_else(|| "-".into());
            out.push_str(&format!(" {v} |"));
        }
        out.push('\n');
    }
    out.push_str("\n## Per-seed accuracy\n\n| Dataset | K | Method | Seed | Accuracy |\n|---|---|---|---|---|\n");
    for c in cells {
        for (s, a) in c.seeds.iter().zip(&c.per_seed) {
            out.push_str(&format!("| {} | {} | {} | {s} | {a:.6} |\n", c.dataset, c.k, c.method));
        }
        for s in &c.failed_seeds {
            out.push_str(&format!("| {} | {} | {} | {s} | failed |\n", c.dataset, c.k, c.method));
        }
    }
    if !flatness.is_empty() {
        out.push_str("\n## Learning-curve flatness\n\nLargest eval-accuracy drop (points) below the running peak over the final half of epochs, seed-averaged curve.\n\n| Dataset | K | Method | Drop |\n|---|---|---|---|\n");
        for ((d, k, m), f) in flatness {
            out.push_str(&format!("| {d} | {k} | {m} | {:.2} |\n", 100.0 * f));
        }
    }
    out
}

/// Re-derives the flatness statistics from records, for callers outside [`aggregate`].
pub fn record_flatness(record: &RunRecord) -> Option<f64> {
    let eval = record.curve.as_ref()?.eval_series();
    (!eval.is_empty()).then(|| flatness_drop(&eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Accuracy is a fixed function of (method, seed); seed 13 always fails.
    struct Stub {
        calls: AtomicUsize,
    }

    impl CellRunner for Stub {
        fn fingerprint(&self, _: &str) -> String {
            "stub".into()
        }
        fn run(&self, job: &CellJob) -> Result<RunOutput, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if job.seed == 13 {
                return Err("boom".into());
            }
            let base = if job.method == "DFT" { 0.5 } else { 0.6 };
            Ok(RunOutput {
                accuracy: base + 0.1 * job.seed as f64,
                curve: None,
                provenance: serde_json::json!({}),
            })
        }
    }

    const GRID: &str = r#"
name = "stub"
seeds = [0, 1]
k_values = [5]
[[datasets]]
name = "toy"
synthetic = { labels = 2 }
[[methods]]
name = "DFT"
[[methods]]
use_ca = true
use_ssd = true
[methods.overrides.distill]
generations = 2
"#;

    #[test]
    fn table_matches_hand_computed_means_and_resumes() {
        let grid = ExperimentGrid::from_toml_str(GRID).unwrap();
        assert_eq!(grid.methods[1].display_name(), "DFT++(CA,SSD)");
        assert_eq!(grid.resolved_config(&grid.methods[1], 1).unwrap().distill.generations, 2);
        let dir = tempfile::tempdir().unwrap();
        let runner = Stub { calls: AtomicUsize::new(0) };
        let out = run_grid(&grid, dir.path(), &runner, false).unwrap();
        assert_eq!((out.executed, out.skipped), (4, 0));
        let dft = out.cells.iter().find(|c| c.method == "DFT").unwrap();
        assert!((dft.mean_acc - 0.55).abs() < 1e-12 && (dft.std_acc - 0.05).abs() < 1e-12);
        let report = fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(report.contains("| DFT | 55.00(5.00) |"), "{report}");
        assert!(report.contains("| DFT++(CA,SSD) | 65.00(5.00) |"));
        assert!(dir.path().join("grid.json").exists());
        assert_eq!(fs::read_dir(dir.path().join("cells")).unwrap().count(), 4);

        let again = run_grid(&grid, dir.path(), &runner, false).unwrap();
        assert_eq!((again.executed, again.skipped), (0, 4));
        assert_eq!(runner.calls.load(Ordering::SeqCst), 4);
        assert_eq!(fs::read_to_string(dir.path().join("report.md")).unwrap(), report);
        run_grid(&grid, dir.path(), &runner, true).unwrap();
        assert_eq!(runner.calls.load(Ordering::SeqCst), 8);
    }

    #[test]
    fn failures_mark_cells_and_do_not_stop_the_grid() {
        let mut grid = ExperimentGrid::from_toml_str(GRID).unwrap();
        grid.seeds = vec![0, 13];
        grid.workers = 2;
        let dir = tempfile::tempdir().unwrap();
        let runner = Stub { calls: AtomicUsize::new(0) };
        let out = run_grid(&grid, dir.path(), &runner, false).unwrap();
        assert!(out.cells.iter().all(|c| c.failed_seeds == vec![13] && c.per_seed.len() == 1));
        let again = run_grid(&grid, dir.path(), &runner, false).unwrap();
        assert_eq!(again.executed, 2, "failed runs are retried");
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(ExperimentGrid::from_toml_str(&GRID.replace("seeds = [0, 1]", "seeds = [1, 1]")).is_err());
        assert!(ExperimentGrid::from_toml_str(&GRID.replace("k_values = [5]", "k_values = []")).is_err());
        assert!(ExperimentGrid::from_toml_str(&GRID.replace("generations = 2", "generations = 0")).is_err());
        let default_seeds = ExperimentGrid::from_toml_str(&GRID.replace("seeds = [0, 1]\n", "")).unwrap();
        assert_eq!(default_seeds.seeds, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn seed_order_does_not_change_statistics() {
        let runs = [(0, Some(0.31), 1.0), (1, Some(0.77), 1.0), (2, Some(0.12), 1.0), (3, Some(0.5), 1.0)];
        let mut rev = runs;
        rev.reverse();
        let a = ResultCell::from_runs("d", 1, "m", &runs);
        let b = ResultCell::from_runs("d", 1, "m", &rev);
        assert_eq!(a, b);
    }
}
