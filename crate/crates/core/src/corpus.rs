//! Intent datasets: loading, validation, statistics and K-shot episode sampling.
//!
//! A dataset lives either in a directory holding `train`, `dev` and `test`
//! files (`.csv` or `.jsonl`, dev and test optional) or in a single file,
//! which is then treated as the train split. An optional `manifest.json`
//! next to the split files pins the expected split sizes and label order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("dataset validation failed: {0}")]
    Validation(String),
    #[error("label `{label}` has {available} train utterances, {requested} requested")]
    InsufficientData {
        label: String,
        available: usize,
        requested: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub text: String,
    pub label: String,
}

impl LabeledUtterance {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::Jsonl => "jsonl",
        }
    }

    fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DataFormat::Csv),
            "jsonl" | "json" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for DataFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(CorpusError::InvalidArgument(format!(
                "unknown dataset format `{other}` (expected csv or jsonl)"
            ))),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Optional `manifest.json` declaring what a dataset directory must contain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub splits: BTreeMap<Split, usize>,
    /// Overrides the default lexicographic class-index assignment.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentDataset {
    pub name: String,
    pub splits: BTreeMap<Split, Vec<LabeledUtterance>>,
    pub label_set: Vec<String>,
}

impl IntentDataset {
    /// Builds a dataset from in-memory splits, validating it the same way
    /// [`load_dataset`] does.
    pub fn from_splits(
        name: impl Into<String>,
        splits: BTreeMap<Split, Vec<LabeledUtterance>>,
        label_order: Option<Vec<String>>,
    ) -> Result<Self, CorpusError> {
        let observed: BTreeSet<&str> = splits
            .values()
            .flatten()
            .map(|u| u.label.as_str())
            .collect();
        let label_set = match label_order {
            Some(order) => {
                let declared: BTreeSet<&str> = order.iter().map(String::as_str).collect();
                if declared.len() != order.len() {
                    return Err(CorpusError::Validation(
                        "manifest label list contains duplicates".into(),
                    ));
                }
                if let Some(extra) = observed.iter().find(|l| !declared.contains(*l)) {
                    return Err(CorpusError::Validation(format!(
                        "label `{extra}` is not declared in the manifest"
                    )));
                }
                order
            }
            None => observed.iter().map(|s| s.to_string()).collect(),
        };
        if label_set.len() < 2 {
            return Err(CorpusError::Validation(format!(
                "at least 2 labels are required, found {}",
                label_set.len()
            )));
        }
        for (split, items) in &splits {
            if items.is_empty() {
                return Err(CorpusError::Validation(format!(
                    "split `{}` is empty",
                    split.as_str()
                )));
            }
            if let Some(bad) = items.iter().find(|u| u.text.trim().is_empty()) {
                return Err(CorpusError::Validation(format!(
                    "blank utterance in split `{}` (label `{}`)",
                    split.as_str(),
                    bad.label
                )));
            }
        }
        if !splits.contains_key(&Split::Train) {
            return Err(CorpusError::Validation("train split is missing".into()));
        }
        Ok(Self {
            name: name.into(),
            splits,
            label_set,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn split(&self, split: Split) -> &[LabeledUtterance] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    /// Validation-and-test pool used for reporting; test only when there is no dev split.
    pub fn eval_pool(&self) -> Vec<LabeledUtterance> {
        let mut pool = self.split(Split::Dev).to_vec();
        pool.extend_from_slice(self.split(Split::Test));
        pool
    }

    /// SHA-256 over the canonical content (name excluded) so renamed copies hash equal.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for label in &self.label_set {
            hasher.update(label.as_bytes());
            hasher.update([0u8]);
        }
        for (split, items) in &self.splits {
            hasher.update(split.as_str().as_bytes());
            hasher.update([1u8]);
            for item in items {
                hasher.update(item.text.as_bytes());
                hasher.update([0u8]);
                hasher.update(item.label.as_bytes());
                hasher.update([2u8]);
            }
        }
        hex::encode(hasher.finalize())
    }
}

fn read_records(path: &Path, format: DataFormat) -> Result<Vec<LabeledUtterance>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let format_err = |line: u64, message: String| CorpusError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    match format {
        DataFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(raw.as_bytes());
            for (idx, record) in reader.records().enumerate() {
                let record = record.map_err(|e| {
                    let line = e.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
                    format_err(line, e.to_string())
                })?;
                let line = record.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
                if idx == 0 && record.get(0) == Some("text") && record.get(1) == Some("label") {
                    continue;
                }
                if record.len() < 2 {
                    return Err(format_err(line, "expected two columns: text,label".into()));
                }
                let text = record[0].trim();
                let label = record[1].trim();
                if text.is_empty() {
                    return Err(format_err(line, "empty text field".into()));
                }
                if label.is_empty() {
                    return Err(format_err(line, "empty label field".into()));
                }
                out.push(LabeledUtterance::new(text, label));
            }
        }
        DataFormat::Jsonl => {
            #[derive(Deserialize)]
            struct Row {
                text: Option<String>,
                label: Option<serde_json::Value>,
            }
            for (idx, line) in raw.lines().enumerate() {
                let lineno = idx as u64 + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let row: Row = serde_json::from_str(line)
                    .map_err(|e| format_err(lineno, format!("invalid json: {e}")))?;
                let text = row
                    .text
                    .ok_or_else(|| format_err(lineno, "missing field `text`".into()))?;
                let label = match row.label {
                    Some(serde_json::Value::String(s)) => s,
                    Some(serde_json::Value::Number(n)) => n.to_string(),
                    Some(_) => return Err(format_err(lineno, "field `label` must be a string".into())),
                    None => return Err(format_err(lineno, "missing field `label`".into())),
                };
                let text = text.trim();
                if text.is_empty() {
                    return Err(format_err(lineno, "empty text field".into()));
                }
                if label.trim().is_empty() {
                    return Err(format_err(lineno, "empty label field".into()));
                }
                out.push(LabeledUtterance::new(text, label.trim()));
            }
        }
    }
    Ok(out)
}

/// Loads a dataset from a split directory or a single train file.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<IntentDataset, CorpusError> {
    let meta = fs::metadata(path).map_err(io_err(path))?;
    let mut splits = BTreeMap::new();
    let mut manifest = None;
    let name;
    if meta.is_dir() {
        for split in Split::ALL {
            let file = path.join(format!("{}.{}", split.as_str(), format.extension()));
            if file.exists() {
                splits.insert(split, read_records(&file, format)?);
            }
        }
        let manifest_path = path.join("manifest.json");
        if manifest_path.exists() {
            let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
            manifest = Some(serde_json::from_str::<DatasetManifest>(&raw)?);
        }
        name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("dataset")
            .to_string();
    } else {
        if let Some(detected) = DataFormat::from_path(path) {
            if detected != format {
                log::warn!(
                    "{} looks like {detected} but is being read as {format}",
                    path.display()
                );
            }
        }
        splits.insert(Split::Train, read_records(path, format)?);
        name = path
            .file_stem()
            .and_then(|n| n.to_str())
            .unwrap_or("dataset")
            .to_string();
    }
    if splits.is_empty() {
        return Err(CorpusError::Validation(format!(
            "no {} split files found in {}",
            format.extension(),
            path.display()
        )));
    }
    let (name, order) = match &manifest {
        Some(m) => (m.name.clone().unwrap_or(name), m.labels.clone()),
        None => (name, None),
    };
    let ds = IntentDataset::from_splits(name, splits, order)?;
    if let Some(m) = &manifest {
        for (split, expected) in &m.splits {
            let actual = ds.split(*split).len();
            if actual != *expected {
                return Err(CorpusError::Validation(format!(
                    "split `{}` has {actual} utterances, manifest declares {expected}",
                    split.as_str()
                )));
            }
        }
    }
    Ok(ds)
}

/// Writes a dataset back out as split files in `dir`.
pub fn write_dataset(ds: &IntentDataset, dir: &Path, format: DataFormat) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (split, items) in &ds.splits {
        let file = dir.join(format!("{}.{}", split.as_str(), format.extension()));
        let mut buf = Vec::new();
        match format {
            DataFormat::Csv => {
                let mut w = csv::Writer::from_writer(&mut buf);
                w.write_record(["text", "label"])
                    .and_then(|_| {
                        items
                            .iter()
                            .try_for_each(|u| w.write_record([&u.text, &u.label]))
                    })
                    .map_err(|e| CorpusError::Validation(e.to_string()))?;
                w.flush().map_err(io_err(&file))?;
            }
            DataFormat::Jsonl => {
                for u in items {
                    serde_json::to_writer(&mut buf, u)?;
                    buf.push(b'\n');
                }
            }
        }
        fs::write(&file, buf).map_err(io_err(&file))?;
    }
    let manifest = DatasetManifest {
        name: Some(ds.name.clone()),
        splits: ds.splits.iter().map(|(s, v)| (*s, v.len())).collect(),
        labels: Some(ds.label_set.clone()),
    };
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&mpath))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub name: String,
    pub num_labels: usize,
    pub split_counts: BTreeMap<Split, usize>,
    pub label_counts: BTreeMap<Split, BTreeMap<String, usize>>,
}

impl StatsReport {
    pub fn count(&self, split: Split) -> usize {
        self.split_counts.get(&split).copied().unwrap_or(0)
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset: {}", self.name)?;
        writeln!(f, "intents: {}", self.num_labels)?;
        for split in Split::ALL {
            writeln!(f, "{}: {}", split.as_str(), self.count(split))?;
        }
        Ok(())
    }
}

pub fn dataset_stats(ds: &IntentDataset) -> StatsReport {
    let mut split_counts = BTreeMap::new();
    let mut label_counts = BTreeMap::new();
    for (split, items) in &ds.splits {
        split_counts.insert(*split, items.len());
        let mut per_label: BTreeMap<String, usize> =
            ds.label_set.iter().map(|l| (l.clone(), 0)).collect();
        for u in items {
            *per_label.entry(u.label.clone()).or_default() += 1;
        }
        label_counts.insert(*split, per_label);
    }
    StatsReport {
        name: ds.name.clone(),
        num_labels: ds.num_labels(),
        split_counts,
        label_counts,
    }
}

/// A seeded K-shot sample of the train split plus the pool the resulting model is scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub dataset_name: String,
    pub k: usize,
    pub seed: u64,
    pub items: Vec<LabeledUtterance>,
    pub eval_pool: Vec<LabeledUtterance>,
    pub label_set: Vec<String>,
}

/// On-disk form of an [`Episode`]; the eval pool is re-derived from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFile {
    pub dataset_name: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub items: Vec<LabeledUtterance>,
}

impl Episode {
    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.items
            .iter()
            .map(|u| self.label_index(&u.label).expect("episode label outside label set"))
            .collect()
    }

    /// Items of one class, in episode order.
    pub fn items_for(&self, label: &str) -> Vec<&LabeledUtterance> {
        self.items.iter().filter(|u| u.label == label).collect()
    }

    pub fn to_file(&self) -> EpisodeFile {
        EpisodeFile {
            dataset_name: self.dataset_name.clone(),
            k: self.k,
            seed: self.seed,
            items: self.items.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        episode_file_to_json(&self.to_file())
    }

    /// Reattaches an episode file to the dataset it was drawn from.
    pub fn from_file(file: EpisodeFile, ds: &IntentDataset) -> Result<Self, CorpusError> {
        for item in &file.items {
            if ds.label_index(&item.label).is_none() {
                return Err(CorpusError::Validation(format!(
                    "episode label `{}` is not in dataset `{}`",
                    item.label, ds.name
                )));
            }
        }
        Ok(Self {
            dataset_name: file.dataset_name,
            k: file.k,
            seed: file.seed,
            items: file.items,
            eval_pool: ds.eval_pool(),
            label_set: ds.label_set.clone(),
        })
    }

    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        hex::encode(hasher.finalize())
    }
}

pub fn episode_file_to_json(file: &EpisodeFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("episode serialization is infallible");
    s.push('\n');
    s
}

pub fn read_episode_file(path: &Path) -> Result<EpisodeFile, CorpusError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&raw)?)
}

/// Mixes the episode seed with a label index into an independent per-label stream seed.
fn label_stream_seed(seed: u64, label_index: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((label_index as u64).wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws exactly `k` train utterances per label without replacement.
///
/// Each label gets its own ChaCha8 stream seeded from `(seed, label index)`,
/// so the draw for one label does not depend on how many labels precede it.
pub fn sample_episode(ds: &IntentDataset, k: usize, seed: u64) -> Result<Episode, CorpusError> {
    if k == 0 {
        return Err(CorpusError::InvalidArgument("K must be positive".into()));
    }
    let train = ds.split(Split::Train);
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); ds.num_labels()];
    for (idx, u) in train.iter().enumerate() {
        let li = ds
            .label_index(&u.label)
            .ok_or_else(|| CorpusError::Validation(format!("unknown label `{}`", u.label)))?;
        by_label[li].push(idx);
    }
    let mut items = Vec::with_capacity(k * ds.num_labels());
    for (li, pool) in by_label.iter().enumerate() {
        if pool.len() < k {
            return Err(CorpusError::InsufficientData {
                label: ds.label_set[li].clone(),
                available: pool.len(),
                requested: k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(label_stream_seed(seed, li));
        for pick in rand::seq::index::sample(&mut rng, pool.len(), k) {
            items.push(train[pool[pick]].clone());
        }
    }
    Ok(Episode {
        dataset_name: ds.name.clone(),
        k,
        seed,
        items,
        eval_pool: ds.eval_pool(),
        label_set: ds.label_set.clone(),
    })
}
