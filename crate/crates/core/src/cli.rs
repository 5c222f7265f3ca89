//! Command-line entry points, one subcommand per pipeline stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backbone::{EncoderBackbone, ToyBackbone};
use crate::checkpoint::{load_backbone, load_model, save_model, CONFIG_FILE};
use crate::config::PipelineConfig;
use crate::contextgen::{
    assemble_daug, augment_episode, ApiFlavor, GeneratedCorpus, GenerativeLmClient, HttpClient, MarkovClient,
    StubClient,
};
use crate::corpus::{dataset_stats, load_dataset, read_episode_file, sample_episode, write_dataset, DataFormat, Episode, IntentDataset};
use crate::distillation::distill_sequence;
use crate::evalharness::{
    aggregate, curve_report, render_curves_png, run_grid, summarize, toy_backbone_for, ExperimentGrid, PipelineRunner,
    PlotSeries,
};
use crate::provenance::{hash_file, hash_json, hash_tensors, write_atomic, ExitStatus, RunManifest, MANIFEST_FILE};
use crate::synthetic::toy_intent_dataset;
use crate::trainer::{eda_corpus_entries, run_pipeline, LearningCurve, PipelineInputs, StagePlan, SynonymLexicon, TrainError, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "fewshot", version, about = "Few-shot intent detection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset (or generate a synthetic one) and print split statistics.
    Prepare(PrepareArgs),
    /// Draw a K-shot episode from the train split.
    Sample(SampleArgs),
    /// Build the unlabeled context corpus for an episode.
    Augment(AugmentArgs),
    /// Fine-tune a fresh head and encoder on an episode.
    Train(TrainArgs),
    /// Run sequential self-distillation from a trained model.
    Distill(DistillArgs),
    /// Run a datasets × K × methods × seeds grid.
    Grid(GridArgs),
    /// Render report.md from a grid directory or from train/distill run directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset directory (train/dev/test files) or single file.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "csv")]
    pub format: DataFormat,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration file; repeat to layer several.
    #[arg(long = "config")]
    pub configs: Vec<PathBuf>,
    /// Re-run even when a matching manifest says the output is current.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Dataset to validate; omit with --synthetic.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub format: DataFormat,
    /// Generate a toy dataset with this many intents instead of reading one.
    #[arg(long, value_name = "LABELS")]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub train_per_label: usize,
    #[arg(long, default_value_t = 10)]
    pub eval_per_label: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the validated dataset here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Episode JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorChoice {
    Stub,
    Markov,
    Http,
    Eda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApiChoice {
    Openai,
    Tgi,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Episode produced by `sample`.
    #[arg(long)]
    pub episode: PathBuf,
    /// Generations requested per intent.
    #[arg(long)]
    pub per_label: Option<usize>,
    /// Sampling temperature of the generator.
    #[arg(long = "gen-temperature", visible_alias = "temperature")]
    pub gen_temperature: Option<f64>,
    #[arg(long, value_enum, default_value = "markov")]
    pub generator: GeneratorChoice,
    /// Completion returned by the stub generator; repeat for several.
    #[arg(long = "stub-completion")]
    pub stub_completions: Vec<String>,
    /// Completion endpoint for the http generator.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, value_enum)]
    pub api: Option<ApiChoice>,
    /// Model name sent to the http generator.
    #[arg(long)]
    pub gen_model: Option<String>,
    /// Synonym lexicon (`word<TAB>syn,syn`) for the eda generator.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Extra unlabeled lines appended to the corpus.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainKnobs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_plm: Option<f64>,
    #[arg(long)]
    pub lr_cls: Option<f64>,
    /// Weight of the masked-LM term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Saved encoder to start from; a seeded toy encoder over the train split otherwise.
    #[arg(long)]
    pub backbone: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub knobs: TrainKnobs,
    #[arg(long)]
    pub episode: PathBuf,
    /// dft, dft_ca, eda_da or gptj_da.
    #[arg(long)]
    pub mode: Option<TrainMode>,
    /// Context corpus produced by `augment` (dft_ca, gptj_da).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Synonym lexicon for eda_da.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Run directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub knobs: TrainKnobs,
    #[arg(long)]
    pub episode: PathBuf,
    /// Trained model: a `train` run directory or its `model/` checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Distillation temperature.
    #[arg(long = "distill-t")]
    pub distill_t: Option<f64>,
    #[arg(long)]
    pub generations: Option<usize>,
    /// Drop the masked-LM term while distilling.
    #[arg(long)]
    pub no_mlm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Grid TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Results directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the grid's worker count.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Grid results directory (holding grid.json).
    #[arg(long, conflicts_with = "runs")]
    pub results: Option<PathBuf>,
    /// Train or distill run directories.
    #[arg(long = "run")]
    pub runs: Vec<PathBuf>,
    /// Where to write the report; defaults to <results>/report.md.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Train(a) => cmd_train(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn require(path: &Path, what: &str, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} {} not found; produce it with `fewshot {producer}`", path.display());
    }
    Ok(())
}

fn load_data(d: &DatasetArgs) -> Result<IntentDataset> {
    require(&d.dataset, "dataset", "prepare")?;
    load_dataset(&d.dataset, d.format).with_context(|| format!("loading dataset {}", d.dataset.display()))
}

fn load_episode(path: &Path, ds: &IntentDataset) -> Result<Episode> {
    require(path, "episode", "sample")?;
    let file = read_episode_file(path)?;
    Ok(Episode::from_file(file, ds)?)
}

fn load_corpus(path: &Path) -> Result<GeneratedCorpus> {
    require(path, "corpus", "augment")?;
    Ok(GeneratedCorpus::read_jsonl(path)?)
}

fn sidecar_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{MANIFEST_FILE}"))
}

fn load_config(paths: &[PathBuf]) -> Result<PipelineConfig> {
    for p in paths {
        require(p, "config file", "grid --help")?;
    }
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    Ok(PipelineConfig::load(&refs)?)
}

fn apply_knobs(cfg: &mut PipelineConfig, k: &TrainKnobs) {
    if let Some(s) = k.seed {
        cfg.train.seed = s;
        cfg.augment.seed = s;
    }
    if let Some(e) = k.epochs {
        cfg.train.epochs = e;
    }
    if let Some(v) = k.lr_plm {
        cfg.train.lr_plm = v;
    }
    if let Some(v) = k.lr_cls {
        cfg.train.lr_cls = v;
    }
    if let Some(v) = k.lambda {
        cfg.objective.lambda = v;
    }
}

fn pretrained(path: Option<&Path>, ds: &IntentDataset, cfg: &PipelineConfig) -> Result<ToyBackbone> {
    match path {
        Some(p) => {
            require(p, "backbone checkpoint", "train")?;
            Ok(load_backbone(p)?)
        }
        None => Ok(toy_backbone_for(ds, cfg)),
    }
}

/// Skips when an equivalent successful run is on record.
struct Tracker {
    command: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    key: String,
    manifest: PathBuf,
    start: Instant,
}

impl Tracker {
    fn new(command: &str, config: serde_json::Value, inputs: BTreeMap<String, String>, manifest: PathBuf) -> Self {
        let key = RunManifest::run_key(command, &config, &inputs);
        Self {
            command: command.into(),
            config,
            inputs,
            key,
            manifest,
            start: Instant::now(),
        }
    }

    fn up_to_date(&self, force: bool) -> bool {
        if !force && RunManifest::is_complete(&self.manifest, &self.key) {
            println!("{}: outputs are current ({}), skipping; pass --force to re-run", self.command, self.manifest.display());
            return true;
        }
        false
    }

    fn finish(self, outputs: Vec<PathBuf>) -> Result<()> {
        RunManifest {
            command: self.command,
            config: self.config,
            run_key: self.key,
            inputs: self.inputs,
            outputs,
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
            status: ExitStatus::Success,
            error: None,
        }
        .write(&self.manifest)
        .with_context(|| format!("writing {}", self.manifest.display()))
    }
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let ds = match (&a.dataset, a.synthetic) {
        (Some(_), Some(_)) => bail!("pass either --dataset or --synthetic, not both"),
        (None, None) => bail!("pass --dataset PATH or --synthetic LABELS"),
        (None, Some(n)) => {
            if !(2..=6).contains(&n) {
                bail!("--synthetic supports 2 to 6 intents");
            }
            toy_intent_dataset(n, a.train_per_label, a.eval_per_label, a.seed)
        }
        (Some(p), None) => {
            require(p, "dataset", "prepare --synthetic")?;
            load_dataset(p, a.format).with_context(|| format!("validating {}", p.display()))?
        }
    };
    print!("{}", dataset_stats(&ds));
    if let Some(out) = &a.out {
        let tracker = Tracker::new(
            "prepare",
            serde_json::json!({ "format": a.format }),
            BTreeMap::from([("dataset".to_string(), ds.content_hash())]),
            out.join(MANIFEST_FILE),
        );
        if tracker.up_to_date(a.force) {
            return Ok(());
        }
        write_dataset(&ds, out, a.format)?;
        let mut outputs: Vec<PathBuf> = fs::read_dir(out)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE))
            .collect();
        outputs.sort();
        tracker.finish(outputs)?;
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let tracker = Tracker::new(
        "sample",
        serde_json::json!({ "k": a.k, "seed": a.seed }),
        BTreeMap::from([("dataset".to_string(), ds.content_hash())]),
        sidecar_manifest(&a.out),
    );
    if tracker.up_to_date(a.force) {
        return Ok(());
    }
    let ep = sample_episode(&ds, a.k, a.seed)?;
    write_atomic(&a.out, ep.to_json().as_bytes()).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "episode: {} items ({} labels × K={}), eval pool {} rows -> {}",
        ep.items.len(),
        ep.num_labels(),
        ep.k,
        ep.eval_pool.len(),
        a.out.display()
    );
    tracker.finish(vec![a.out.clone()])
}

fn build_client(a: &AugmentArgs, cfg: &PipelineConfig) -> Result<Box<dyn GenerativeLmClient>> {
    Ok(match a.generator {
        GeneratorChoice::Stub => {
            if a.stub_completions.is_empty() {
                bail!("the stub generator needs at least one --stub-completion");
            }
            Box::new(StubClient::new(a.stub_completions.clone()))
        }
        GeneratorChoice::Markov => Box::new(MarkovClient::new(cfg.augment.template.clone())),
        GeneratorChoice::Http => Box::new(HttpClient::new(cfg.http.clone())),
        GeneratorChoice::Eda => unreachable!("eda is handled without a client"),
    })
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let ep = load_episode(&a.episode, &ds)?;
    let mut cfg = load_config(&a.common.configs)?;
    if let Some(n) = a.per_label {
        cfg.augment.per_label = n;
    }
    if let Some(t) = a.gen_temperature {
        cfg.augment.temperature = t;
    }
    if let Some(s) = a.seed {
        cfg.augment.seed = s;
    }
    if let Some(e) = &a.endpoint {
        cfg.http.endpoint = e.clone();
    }
    if let Some(api) = a.api {
        cfg.http.api = match api {
            ApiChoice::Openai => ApiFlavor::OpenaiCompletions,
            ApiChoice::Tgi => ApiFlavor::Tgi,
        };
    }
    if let Some(m) = &a.gen_model {
        cfg.http.model = Some(m.clone());
    }
    let mut inputs = BTreeMap::from([("episode".to_string(), ep.content_hash())]);
    if let Some(p) = &a.external {
        require(p, "external corpus", "augment")?;
        inputs.insert("external".into(), hash_file(p)?);
    }
    if let Some(p) = &a.lexicon {
        inputs.insert("lexicon".into(), hash_file(p)?);
    }
    let snapshot = serde_json::json!({
        "generator": format!("{:?}", a.generator),
        "stub_completions": a.stub_completions,
        "augment": cfg.augment,
        "http": if a.generator == GeneratorChoice::Http { serde_json::to_value(&cfg.http)? } else { serde_json::Value::Null },
    });
    let tracker = Tracker::new("augment", snapshot, inputs, sidecar_manifest(&a.out));
    if tracker.up_to_date(a.common.force) {
        return Ok(());
    }
    let generated = if a.generator == GeneratorChoice::Eda {
        let lex = match &a.lexicon {
            Some(p) => Some(SynonymLexicon::load(p)?),
            None => None,
        };
        eda_corpus_entries(&ep, cfg.augment.per_label.div_ceil(ep.k.max(1)), lex.as_ref(), cfg.augment.seed)?
    } else {
        let client = build_client(&a, &cfg)?;
        log::info!("generating with {}", client.describe());
        augment_episode(client.as_ref(), &ep, &cfg.augment)?.entries
    };
    let corpus = assemble_daug(&ep, generated, a.external.as_deref())?;
    corpus.write_jsonl(&a.out)?;
    let counts: Vec<String> = corpus
        .count_by_origin()
        .iter()
        .map(|(o, n)| format!("{o:?}={n}"))
        .collect();
    println!("corpus: {} entries ({}) -> {}", corpus.len(), counts.join(", "), a.out.display());
    tracker.finish(vec![a.out.clone()])
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
struct RunMetrics {
    method: String,
    dataset: String,
    k: usize,
    seed: u64,
    accuracy: f64,
    final_train_acc: Option<f64>,
    flatness_drop: Option<f64>,
}

const METRICS_FILE: &str = "metrics.json";

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(v)?;
    body.push('\n');
    write_atomic(path, body.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn write_curve(dir: &Path, stem: &str, curve: &LearningCurve) -> Result<Vec<PathBuf>> {
    let csv = dir.join(format!("{stem}.csv"));
    write_atomic(&csv, curve.to_csv().as_bytes())?;
    let png = dir.join(format!("{stem}.png"));
    let xs = curve.epochs.iter().map(|e| e.epoch as f64);
    render_curves_png(
        &png,
        &[
            PlotSeries {
                color: [31, 119, 180],
                points: xs.clone().zip(curve.epochs.iter().map(|e| e.train_acc)).collect(),
            },
            PlotSeries {
                color: [214, 39, 40],
                points: xs.zip(curve.epochs.iter().map(|e| e.eval_acc.unwrap_or(f64::NAN))).collect(),
            },
        ],
    )?;
    Ok(vec![csv, png])
}

fn describe_failure(e: &anyhow::Error, out: &Path) {
    for cause in e.chain() {
        if let Some(TrainError::Diverged(report)) = cause.downcast_ref::<TrainError>() {
            let path = out.join("divergence.json");
            if write_json(&path, report).is_ok() {
                eprintln!("diagnostic state written to {}", path.display());
            }
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let ep = load_episode(&a.episode, &ds)?;
    let mut cfg = load_config(&a.common.configs)?;
    apply_knobs(&mut cfg, &a.knobs);
    if let Some(m) = a.mode {
        cfg.train.mode = m;
    }
    cfg.validate()?;
    let bb = pretrained(a.knobs.backbone.as_deref(), &ds, &cfg)?;
    let corpus = a.corpus.as_deref().map(load_corpus).transpose()?;
    let lexicon = a.lexicon.as_deref().map(SynonymLexicon::load).transpose()?;
    let mut inputs = BTreeMap::from([
        ("episode".to_string(), ep.content_hash()),
        ("backbone".to_string(), hash_tensors(bb.tensors())),
    ]);
    if let Some(c) = &corpus {
        inputs.insert("corpus".into(), c.content_hash());
    }
    if let Some(p) = &a.lexicon {
        inputs.insert("lexicon".into(), hash_file(p)?);
    }
    let snapshot = serde_json::json!({ "train": cfg.train, "objective": cfg.objective, "backbone": bb.config_json() });
    let tracker = Tracker::new("train", snapshot, inputs, a.out.join(MANIFEST_FILE));
    if tracker.up_to_date(a.common.force) {
        return Ok(());
    }
    fs::create_dir_all(&a.out)?;
    let plan = StagePlan {
        use_ca: false,
        use_ssd: false,
        mode: cfg.train.mode,
    };
    let out = run_pipeline(PipelineInputs {
        episode: &ep,
        pretrained: &bb,
        config: &cfg,
        plan,
        client: None,
        corpus: corpus.as_ref(),
        external_corpus: None,
        lexicon: lexicon.as_ref(),
    })
    .map_err(anyhow::Error::from)
    .inspect_err(|e| describe_failure(e, &a.out))?;
    let model_dir = a.out.join("model");
    save_model(&out.model, &model_dir)?;
    let accuracy = out.accuracy.ok_or_else(|| anyhow!("training produced no eval accuracy"))?;
    let series = &curve_report(&[("train".into(), out.curve.clone())])[0];
    let metrics = RunMetrics {
        method: plan.name(),
        dataset: ep.dataset_name.clone(),
        k: ep.k,
        seed: cfg.train.seed,
        accuracy,
        final_train_acc: out.curve.final_train_acc(),
        flatness_drop: series.flatness_drop,
    };
    let mut outputs = vec![model_dir.join(CONFIG_FILE), a.out.join(METRICS_FILE), a.out.join("provenance.json")];
    write_json(&outputs[1], &metrics)?;
    write_json(&outputs[2], &out.provenance)?;
    outputs.extend(write_curve(&a.out, "curve", &out.curve)?);
    println!(
        "{}: eval accuracy {:.2}% (train {:.2}%) -> {}",
        metrics.method,
        100.0 * accuracy,
        100.0 * metrics.final_train_acc.unwrap_or(f64::NAN),
        a.out.display()
    );
    tracker.finish(outputs)
}

fn resolve_model_dir(p: &Path) -> Result<PathBuf> {
    if p.join(CONFIG_FILE).exists() {
        Ok(p.to_path_buf())
    } else if p.join("model").join(CONFIG_FILE).exists() {
        Ok(p.join("model"))
    } else {
        bail!("no model checkpoint at {}; produce it with `fewshot train`", p.display())
    }
}

fn cmd_distill(a: DistillArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let ep = load_episode(&a.episode, &ds)?;
    let mut cfg = load_config(&a.common.configs)?;
    apply_knobs(&mut cfg, &a.knobs);
    if let Some(e) = a.knobs.epochs {
        cfg.distill.per_generation_epochs = e;
    }
    if let Some(t) = a.distill_t {
        cfg.distill.temperature = t;
    }
    if let Some(g) = a.generations {
        cfg.distill.generations = g;
    }
    if a.no_mlm {
        cfg.distill.include_mlm = false;
    }
    cfg.validate()?;
    let model_dir = resolve_model_dir(&a.model)?;
    let base = load_model::<ToyBackbone>(&model_dir)?;
    let bb = pretrained(a.knobs.backbone.as_deref(), &ds, &cfg)?;
    let corpus = a.corpus.as_deref().map(load_corpus).transpose()?;
    let mut inputs = BTreeMap::from([
        ("episode".to_string(), ep.content_hash()),
        ("teacher".to_string(), base.param_hash()),
        ("backbone".to_string(), hash_tensors(bb.tensors())),
    ]);
    if let Some(c) = &corpus {
        inputs.insert("corpus".into(), c.content_hash());
    }
    let snapshot = serde_json::json!({ "train": cfg.train, "objective": cfg.objective, "distill": cfg.distill });
    let tracker = Tracker::new("distill", snapshot, inputs, a.out.join(MANIFEST_FILE));
    if tracker.up_to_date(a.common.force) {
        return Ok(());
    }
    fs::create_dir_all(&a.out)?;
    let outcome = distill_sequence(&base, &bb, &ep, &cfg.distill, &cfg.train, &cfg.objective, corpus.as_ref())
        .map_err(anyhow::Error::from)
        .inspect_err(|e| describe_failure(e, &a.out))?;
    let mut outputs = Vec::new();
    for ((student, record), curve) in outcome.students.iter().zip(&outcome.records).zip(&outcome.curves) {
        let dir = a.out.join(format!("gen_{}", record.k));
        save_model(student, &dir)?;
        outputs.push(dir.join(CONFIG_FILE));
        outputs.extend(write_curve(&a.out, &format!("curve_gen_{}", record.k), curve)?);
        println!(
            "generation {}: KL {:.3e} -> {:.3e}, eval accuracy {:.2}%",
            record.k,
            record.kl_trace.first().copied().unwrap_or(f64::NAN),
            record.kl_trace.last().copied().unwrap_or(f64::NAN),
            100.0 * record.accuracy.unwrap_or(f64::NAN)
        );
    }
    let records = a.out.join("records.json");
    write_json(&records, &outcome.records)?;
    outputs.push(records);
    let base_metrics: Option<RunMetrics> = model_dir
        .parent()
        .map(|d| d.join(METRICS_FILE))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|s| serde_json::from_str(&s).ok());
    let method = match base_metrics.as_ref().map(|m| m.method.as_str()) {
        Some("DFT++(CA)") => "DFT++(CA,SSD)".to_string(),
        Some("DFT") | None => "DFT++(SSD)".to_string(),
        Some(other) => format!("{other}+SSD"),
    };
    let last = outcome.records.last().expect("at least one generation");
    let series = &curve_report(&[("last".into(), outcome.curves.last().cloned().unwrap_or_default())])[0];
    let metrics = RunMetrics {
        method,
        dataset: ep.dataset_name.clone(),
        k: ep.k,
        seed: cfg.train.seed,
        accuracy: last
            .accuracy
            .ok_or_else(|| anyhow!("distillation produced no eval accuracy"))?,
        final_train_acc: outcome.curves.last().and_then(LearningCurve::final_train_acc),
        flatness_drop: series.flatness_drop,
    };
    let mpath = a.out.join(METRICS_FILE);
    write_json(&mpath, &metrics)?;
    outputs.push(mpath);
    println!("{}: eval accuracy {:.2}% -> {}", metrics.method, 100.0 * metrics.accuracy, a.out.display());
    tracker.finish(outputs)
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    require(&a.config, "grid config", "grid")?;
    let mut grid = ExperimentGrid::load(&a.config)?;
    if let Some(w) = a.workers {
        grid.workers = w.max(1);
    }
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let runner = PipelineRunner::new(&grid, &base)?;
    let out = run_grid(&grid, &a.out, &runner, a.force)?;
    for c in &out.cells {
        println!("{} K={} {}: {}", c.dataset, c.k, c.method, c.render());
    }
    println!(
        "{} runs executed, {} reused -> {}",
        out.executed,
        out.skipped,
        a.out.join("report.md").display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    if let Some(dir) = &a.results {
        let grid_file = dir.join("grid.json");
        require(&grid_file, "grid results", "grid")?;
        let grid: ExperimentGrid = serde_json::from_str(&fs::read_to_string(&grid_file)?)?;
        let outcome = aggregate(&grid, dir)?;
        let report = dir.join("report.md");
        if let Some(out) = &a.out {
            fs::copy(&report, out)?;
        }
        println!("{} cells -> {}", outcome.cells.len(), a.out.as_ref().unwrap_or(&report).display());
        return Ok(());
    }
    if a.runs.is_empty() {
        bail!("pass --results DIR or one or more --run DIR");
    }
    let mut groups: BTreeMap<(String, usize, String), Vec<(u64, f64)>> = BTreeMap::new();
    let mut method_order: Vec<String> = Vec::new();
    for r in &a.runs {
        let p = r.join(METRICS_FILE);
        require(&p, "run metrics", "train` or `fewshot distill")?;
        let m: RunMetrics = serde_json::from_str(&fs::read_to_string(&p)?)?;
        if !method_order.contains(&m.method) {
            method_order.push(m.method.clone());
        }
        groups.entry((m.dataset, m.k, m.method)).or_default().push((m.seed, m.accuracy));
    }
    let mut out = String::from("# Results\n\nAccuracy (%) on the merged dev+test pool, mean(std) over runs.\n\n");
    out.push_str("| Dataset | K | Method | Runs | Accuracy | Per-run |\n|---|---|---|---|---|---|\n");
    for m in &method_order {
        for ((d, k, method), runs) in groups.iter().filter(|((_, _, x), _)| x == m) {
            let mut runs = runs.clone();
            runs.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
            let accs: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let (mean, std) = summarize(&accs);
            let per: Vec<String> = runs.iter().map(|(s, a)| format!("seed {s}: {a:.6}")).collect();
            out.push_str(&format!(
                "| {d} | {k} | {method} | {} | {:.2}({:.2}) | {} |\n",
                runs.len(),
                100.0 * mean,
                100.0 * std,
                per.join("; ")
            ));
        }
    }
    let path = a.out.clone().unwrap_or_else(|| PathBuf::from("report.md"));
    write_atomic(&path, out.as_bytes())?;
    println!("{} methods -> {}", method_order.len(), path.display());
    let _ = hash_json(&method_order);
    Ok(())
}
