//! Context augmentation: per-class prompts from the few labeled utterances,
//! a generative LM client, and assembly of the unlabeled masked-LM corpus.
//!
//! Generated utterances keep the class they were prompted from only as
//! provenance. The masked-LM path sees them through [`GeneratedCorpus::mlm_texts`],
//! which carries no labels.

mod client;
mod http;

pub use client::{GenerativeLmClient, MarkovClient, StubClient};
pub use http::{ApiFlavor, HttpClient, HttpClientConfig};

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Episode, LabeledUtterance};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("generation endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response from generation endpoint: {0}")]
    Protocol(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus file {path}:{line}: {message}")]
    CorpusFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Numbered-list prompt layout. `{n}` in `item_prefix` and
/// `continuation_slot` expands to the 1-based line index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub header: Option<String>,
    pub item_prefix: String,
    pub joiner: String,
    pub continuation_slot: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            header: None,
            item_prefix: "{n}. ".into(),
            joiner: "\n".into(),
            continuation_slot: "{n}.".into(),
        }
    }
}

fn escape_line(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_line(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

impl PromptTemplate {
    fn prefix(&self, n: usize) -> String {
        self.item_prefix.replace("{n}", &n.to_string())
    }

    fn continuation(&self, n: usize) -> String {
        self.continuation_slot.replace("{n}", &n.to_string())
    }

    /// Recovers the utterances of a prompt rendered with this template.
    pub fn parse_lines(&self, prompt: &str) -> Result<Vec<String>, GenerationError> {
        let mut lines: Vec<&str> = prompt.split(self.joiner.as_str()).collect();
        if let Some(header) = &self.header {
            let header_lines = header.split(self.joiner.as_str()).count();
            if lines.len() < header_lines {
                return Err(GenerationError::Contract("prompt shorter than its header".into()));
            }
            lines.drain(..header_lines);
        }
        let Some(last) = lines.pop() else {
            return Err(GenerationError::Contract("empty prompt".into()));
        };
        let k = lines.len();
        if last != self.continuation(k + 1) {
            return Err(GenerationError::Contract(format!(
                "prompt does not end with continuation slot `{}`",
                self.continuation(k + 1)
            )));
        }
        lines
            .iter()
            .enumerate()
            .map(|(i, line)| {
                line.strip_prefix(self.prefix(i + 1).as_str())
                    .map(unescape_line)
                    .ok_or_else(|| {
                        GenerationError::Contract(format!("line {} lacks its enumeration marker", i + 1))
                    })
            })
            .collect()
    }
}

/// Renders the K utterances of one class followed by the continuation slot.
pub fn build_prompt(items: &[&LabeledUtterance], tpl: &PromptTemplate) -> Result<String, GenerationError> {
    let Some(first) = items.first() else {
        return Err(GenerationError::Contract("cannot build a prompt from zero utterances".into()));
    };
    if let Some(other) = items.iter().find(|u| u.label != first.label) {
        return Err(GenerationError::Contract(format!(
            "prompt items mix labels `{}` and `{}`",
            first.label, other.label
        )));
    }
    let mut parts = Vec::with_capacity(items.len() + 2);
    if let Some(h) = &tpl.header {
        parts.push(h.clone());
    }
    for (i, u) in items.iter().enumerate() {
        parts.push(format!("{}{}", tpl.prefix(i + 1), escape_line(&u.text)));
    }
    parts.push(tpl.continuation(items.len() + 1));
    Ok(parts.join(&tpl.joiner))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Each sample ends at its first newline.
    FirstNewline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub num_samples: usize,
    pub stop: StopRule,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.prompt.is_empty() {
            return Err(GenerationError::Contract("empty prompt".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(GenerationError::Contract("temperature must be positive".into()));
        }
        if self.num_samples == 0 || self.max_new_tokens == 0 {
            return Err(GenerationError::Contract(
                "num_samples and max_new_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// First line of a raw completion, trimmed; `None` when nothing usable remains.
pub fn clean_completion(raw: &str, stop: StopRule) -> Option<String> {
    let line = match stop {
        StopRule::FirstNewline => raw.split(['\n', '\r']).next().unwrap_or(""),
    };
    let line = line.trim();
    (!line.is_empty()).then(|| line.to_string())
}

/// Samples continuations and returns the cleaned utterances.
///
/// Exact copies of `prompt_lines` are dropped when `drop_prompt_duplicates`
/// is set; everything else, including off-topic text, is kept.
pub fn generate_context(
    client: &dyn GenerativeLmClient,
    req: &GenerationRequest,
    prompt_lines: &[String],
    drop_prompt_duplicates: bool,
) -> Result<Vec<String>, GenerationError> {
    req.validate()?;
    let raw = client.generate(req)?;
    let seen: HashSet<&str> = prompt_lines.iter().map(String::as_str).collect();
    let out: Vec<String> = raw
        .iter()
        .filter_map(|r| clean_completion(r, req.stop))
        .filter(|line| !(drop_prompt_duplicates && seen.contains(line.as_str())))
        .take(req.num_samples)
        .collect();
    if out.is_empty() {
        log::debug!("generation produced no usable lines for a prompt of {} bytes", req.prompt.len());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Generated,
    Given,
    ExternalFile,
    /// Rule-based perturbations used as a context source instead of a generator.
    Eda,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub text: String,
    pub source_label: Option<String>,
    pub origin: Origin,
    pub prompt_seed: Option<u64>,
}

/// The unlabeled masked-LM corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeneratedCorpus {
    pub entries: Vec<CorpusEntry>,
}

impl GeneratedCorpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Label-free view consumed by masked-LM training.
    pub fn mlm_texts(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.text.as_str()).collect()
    }

    /// Generated entries paired with the class they were prompted from.
    /// Only the supervised-augmentation comparison mode reads this.
    pub fn generated_with_provenance_labels(&self) -> Vec<LabeledUtterance> {
        self.entries
            .iter()
            .filter(|e| e.origin == Origin::Generated)
            .filter_map(|e| {
                e.source_label
                    .as_ref()
                    .map(|l| LabeledUtterance::new(e.text.clone(), l.clone()))
            })
            .collect()
    }

    pub fn count_by_origin(&self) -> BTreeMap<Origin, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.origin).or_default() += 1;
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("corpus entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), GenerationError> {
        let io = |source| GenerationError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = fs::File::create(path).map_err(io)?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, GenerationError> {
        let raw = fs::read_to_string(path).map_err(|source| GenerationError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CorpusEntry =
                serde_json::from_str(line).map_err(|e| GenerationError::CorpusFormat {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSettings {
    pub template: PromptTemplate,
    /// Samples requested per class.
    pub per_label: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub drop_prompt_duplicates: bool,
    /// Concurrent class requests.
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            template: PromptTemplate::default(),
            per_label: 50,
            temperature: 0.8,
            max_new_tokens: 32,
            drop_prompt_duplicates: true,
            parallelism: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutput {
    pub entries: Vec<CorpusEntry>,
    pub per_label_counts: BTreeMap<String, usize>,
}

fn prompt_seed(seed: u64, label_index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(label_index as u64)
}

/// Prompts the client once per class of the episode.
pub fn augment_episode(
    client: &dyn GenerativeLmClient,
    episode: &Episode,
    settings: &AugmentSettings,
) -> Result<AugmentOutput, GenerationError> {
    let jobs: Vec<(usize, &String)> = episode.label_set.iter().enumerate().collect();
    let run = |&(li, label): &(usize, &String)| -> Result<(String, Vec<CorpusEntry>), GenerationError> {
        let items = episode.items_for(label);
        let prompt = build_prompt(&items, &settings.template)?;
        let seed = prompt_seed(settings.seed, li);
        let req = GenerationRequest {
            prompt,
            temperature: settings.temperature,
            max_new_tokens: settings.max_new_tokens,
            num_samples: settings.per_label,
            stop: StopRule::FirstNewline,
            seed,
        };
        let prompt_lines: Vec<String> = items.iter().map(|u| u.text.clone()).collect();
        let lines = generate_context(client, &req, &prompt_lines, settings.drop_prompt_duplicates)?;
        let entries = lines
            .into_iter()
            .map(|text| CorpusEntry {
                text,
                source_label: Some(label.clone()),
                origin: Origin::Generated,
                prompt_seed: Some(seed),
            })
            .collect();
        Ok((label.clone(), entries))
    };
    let results: Vec<Result<(String, Vec<CorpusEntry>), GenerationError>> = if settings.parallelism > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.parallelism)
            .build()
            .map_err(|e| GenerationError::Contract(format!("cannot start worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };
    let mut entries = Vec::new();
    let mut per_label_counts = BTreeMap::new();
    for r in results {
        let (label, mut e) = r?;
        per_label_counts.insert(label, e.len());
        entries.append(&mut e);
    }
    let empty: Vec<&str> = per_label_counts.iter().filter(|(_, n)| **n == 0).map(|(l, _)| l.as_str()).collect();
    if !empty.is_empty() {
        log::warn!("{}: no usable generations for {}", client.describe(), empty.join(", "));
    }
    Ok(AugmentOutput {
        entries,
        per_label_counts,
    })
}

/// `generated ∪ episode texts ∪ external lines`, each tagged with its origin.
pub fn assemble_daug(
    episode: &Episode,
    generated: Vec<CorpusEntry>,
    external: Option<&Path>,
) -> Result<GeneratedCorpus, GenerationError> {
    let mut entries = generated;
    entries.extend(episode.items.iter().map(|u| CorpusEntry {
        text: u.text.clone(),
        source_label: Some(u.label.clone()),
        origin: Origin::Given,
        prompt_seed: None,
    }));
    if let Some(path) = external {
        let raw = fs::read_to_string(path).map_err(|source| GenerationError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        entries.extend(raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(|l| CorpusEntry {
            text: l.to_string(),
            source_label: None,
            origin: Origin::ExternalFile,
            prompt_seed: None,
        }));
    }
    Ok(GeneratedCorpus { entries })
}
