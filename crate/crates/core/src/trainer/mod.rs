//! Optimization loops: direct fine-tuning, the joint cross-entropy + masked-LM
//! objective, and the supervised augmentation baselines.

mod eda;
mod optim;
mod pipeline;

pub use eda::{apply_eda_op, eda_augment, eda_corpus_entries, EdaOp, SynonymLexicon};
pub use optim::{AdamW, AdamWParams, LinearSchedule};
pub use pipeline::{run_pipeline, PipelineError, PipelineInputs, PipelineOutcome, PipelineProvenance, StageKind, StagePlan, StageRecord};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{
    sentence_vectors, BackboneError, ClassifierHead, EncoderBackbone, HiddenStates, ParamGrads,
};
use crate::contextgen::{GeneratedCorpus, GenerationError};
use crate::corpus::{Episode, LabeledUtterance};
use crate::distillation::kd_loss_with_grad;
use crate::numeric::argmax;
use crate::objectives::{
    apply_masking_with, ce_loss_from_logits, joint_loss, mlm_loss_with_grad, JointObjectiveConfig,
    MaskedBatch, MlmLoss, ObjectiveError,
};
use crate::provenance::{hash_tensors, sha256_hex};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("training diverged at epoch {} step {}: {}", .0.epoch, .0.step, .0.reason)]
    Diverged(Box<DivergenceReport>),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Cross-entropy on the episode.
    Dft,
    /// Cross-entropy on the episode plus λ·masked-LM on the context corpus.
    DftCa,
    /// Cross-entropy on the episode and its rule-based perturbations.
    EdaDa,
    /// Cross-entropy on the episode and generated text labelled by its prompt class.
    GptjDa,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Dft => "dft",
            TrainMode::DftCa => "dft_ca",
            TrainMode::EdaDa => "eda_da",
            TrainMode::GptjDa => "gptj_da",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dft" => Ok(TrainMode::Dft),
            "dft_ca" => Ok(TrainMode::DftCa),
            "eda_da" => Ok(TrainMode::EdaDa),
            "gptj_da" => Ok(TrainMode::GptjDa),
            other => Err(format!("unknown mode `{other}` (expected dft, dft_ca, eda_da or gptj_da)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Peak learning rate of the encoder group.
    pub lr_plm: f64,
    /// Peak learning rate of the classifier head.
    pub lr_cls: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mlm_batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub freeze_plm: bool,
    /// Perturbed copies per utterance in `eda_da` mode.
    pub eda_ops_per_item: usize,
    /// Score the eval pool after every epoch rather than only after the last.
    pub eval_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_plm: 2e-4,
            lr_cls: 2e-5,
            weight_decay: 1e-3,
            warmup_frac: 0.05,
            epochs: 200,
            batch_size: 16,
            mlm_batch_size: 16,
            seed: 0,
            mode: TrainMode::Dft,
            freeze_plm: false,
            eda_ops_per_item: 4,
            eval_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Contract(m));
        if !(self.lr_plm > 0.0 && self.lr_plm.is_finite()) || !(self.lr_cls > 0.0 && self.lr_cls.is_finite()) {
            return bad(format!("learning rates must be positive, got {} / {}", self.lr_plm, self.lr_cls));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup_frac {} outside [0, 1)", self.warmup_frac));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.mlm_batch_size == 0 {
            return bad("epochs, batch_size and mlm_batch_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub epochs: Vec<EpochStats>,
}

impl LearningCurve {
    pub fn final_train_acc(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_acc)
    }

    pub fn final_eval_acc(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.eval_acc)
    }

    pub fn eval_series(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.eval_acc).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_acc,eval_acc,train_loss\n");
        for e in &self.epochs {
            let eval = e.eval_acc.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_acc, eval, e.train_loss));
        }
        out
    }
}

/// State captured when a step produces a non-finite loss or gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub epoch: usize,
    pub step: usize,
    pub reason: String,
    pub supervised_loss: f64,
    pub mlm_loss: Option<f64>,
    pub grad_norm_plm: f64,
    pub grad_norm_cls: f64,
    pub lr_plm: f64,
    pub lr_cls: f64,
    pub param_hash: String,
    pub recent_step_losses: Vec<f64>,
}

/// An encoder with its intent head and the label names the head's rows stand for.
#[derive(Debug, Clone)]
pub struct IntentModel<B> {
    pub backbone: B,
    pub head: ClassifierHead,
    pub label_set: Vec<String>,
}

const EVAL_CHUNK: usize = 64;

impl<B: EncoderBackbone> IntentModel<B> {
    pub fn new(backbone: B, head: ClassifierHead, label_set: Vec<String>) -> Result<Self, TrainError> {
        if head.num_labels() != label_set.len() || head.hidden_dim() != backbone.hidden_dim() {
            return Err(TrainError::Contract(format!(
                "head is {}×{} but the model has {} labels and hidden size {}",
                head.num_labels(),
                head.hidden_dim(),
                label_set.len(),
                backbone.hidden_dim()
            )));
        }
        Ok(Self {
            backbone,
            head,
            label_set,
        })
    }

    /// A copy of `pretrained` under a freshly initialized head.
    pub fn fresh(pretrained: &B, label_set: &[String], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_HEAD));
        let head = ClassifierHead::init(label_set.len(), pretrained.hidden_dim(), &mut rng);
        Self {
            backbone: pretrained.clone(),
            head,
            label_set: label_set.to_vec(),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    /// Eval-mode logits, `texts.len() × L`.
    pub fn logits(&self, texts: &[&str]) -> Result<Array2<f64>, TrainError> {
        let mut out = Array2::zeros((texts.len(), self.num_labels()));
        for (c, chunk) in texts.chunks(EVAL_CHUNK).enumerate() {
            let batch = self.backbone.tokenize(chunk);
            let (hidden, _) = self.backbone.forward(&batch, None);
            let h = sentence_vectors(&hidden, self.backbone.hidden_dim());
            let z = self.head.logits(&h)?;
            out.slice_mut(ndarray::s![c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len(), ..])
                .assign(&z);
        }
        Ok(out)
    }

    pub fn predict(&self, texts: &[&str]) -> Result<Vec<usize>, TrainError> {
        Ok(self.logits(texts)?.rows().into_iter().map(argmax).collect())
    }

    /// Identity of the parameters and the label space.
    pub fn param_hash(&self) -> String {
        let tensors = hash_tensors(self.backbone.tensors().into_iter().chain(self.head.tensors()));
        sha256_hex(format!("{tensors}\n{}", self.label_set.join("\n")).as_bytes())
    }

    fn zero_plm_grads(&self) -> ParamGrads {
        let shapes: Vec<_> = self.backbone.tensors().into_iter().map(|(_, t)| t).collect();
        ParamGrads::zeros_like(&shapes)
    }
}

/// Gradients of one step, split by parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub plm: ParamGrads,
    pub cls: ParamGrads,
}

/// What the classifier output is trained against.
#[derive(Debug, Clone, Copy)]
pub enum Supervision<'a> {
    Labels(&'a [usize]),
    /// Temperature-scaled KL towards fixed teacher logits.
    Teacher { logits: &'a Array2<f64>, temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub supervised: f64,
    pub mlm: Option<MlmLoss>,
    /// Rows whose argmax matches the gold label (or the teacher's argmax).
    pub correct: usize,
}

fn zeros_like_hidden(hidden: &HiddenStates) -> HiddenStates {
    hidden.iter().map(|h| Array2::zeros(h.raw_dim())).collect()
}

/// Loss and gradients of one optimization step.
///
/// The supervised term is computed on `texts`; when `mlm` is given, the
/// corrupted batch adds `λ · mlm_loss` with its own forward pass. `None`
/// dropout generators run that pass in eval mode.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads<B: EncoderBackbone>(
    model: &IntentModel<B>,
    texts: &[&str],
    target: Supervision<'_>,
    mlm: Option<(&MaskedBatch, &JointObjectiveConfig)>,
    ce_dropout: Option<&mut dyn RngCore>,
    mlm_dropout: Option<&mut dyn RngCore>,
    freeze_plm: bool,
) -> Result<(StepLosses, ModelGrads), TrainError> {
    if texts.is_empty() {
        return Err(TrainError::Contract("empty supervised batch".into()));
    }
    let bb = &model.backbone;
    let batch = bb.tokenize(texts);
    let (hidden, cache) = bb.forward(&batch, ce_dropout);
    let h = sentence_vectors(&hidden, bb.hidden_dim());
    let logits = model.head.logits(&h)?;
    let (supervised, dlogits, reference) = match target {
        Supervision::Labels(labels) => {
            let (l, g) = ce_loss_from_logits(&logits, labels)?;
            (l, g, labels.to_vec())
        }
        Supervision::Teacher {
            logits: teacher,
            temperature,
        } => {
            let (l, g) = kd_loss_with_grad(&logits, teacher, temperature)
                .map_err(|e| TrainError::Contract(e.to_string()))?;
            (l, g, teacher.rows().into_iter().map(argmax).collect())
        }
    };
    let correct = logits
        .rows()
        .into_iter()
        .zip(&reference)
        .filter(|(row, y)| argmax(*row) == **y)
        .count();
    let (head_grads, dh) = model.head.backward(&h, &dlogits);
    let mut plm = if freeze_plm {
        model.zero_plm_grads()
    } else {
        let mut grad_hidden = zeros_like_hidden(&hidden);
        for (i, g) in grad_hidden.iter_mut().enumerate() {
            g.row_mut(0).assign(&dh.row(i));
        }
        bb.backward(&batch, &cache, &hidden, grad_hidden, None)
    };

    let mut total = supervised;
    let mut mlm_loss = None;
    if let Some((masked, objcfg)) = mlm {
        let (mh, mcache) = bb.forward(&masked.batch, mlm_dropout);
        let mlm_logits = bb.mlm_logits(&mh)?;
        let (loss, mut grads) = mlm_loss_with_grad(&mlm_logits, &masked.targets)?;
        total = joint_loss(supervised, loss.value, objcfg);
        if !freeze_plm && !loss.empty {
            for g in &mut grads {
                g.mapv_inplace(|v| v * objcfg.lambda);
            }
            let extra = bb.backward(&masked.batch, &mcache, &mh, zeros_like_hidden(&mh), Some(&grads));
            plm.add_scaled(&extra, 1.0);
        }
        mlm_loss = Some(loss);
    }
    Ok((
        StepLosses {
            total,
            supervised,
            mlm: mlm_loss,
            correct,
        },
        ModelGrads {
            plm,
            cls: head_grads.into_param_grads(),
        },
    ))
}

const STREAM_HEAD: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_CE_DROPOUT: u64 = 3;
const STREAM_MLM_SAMPLE: u64 = 4;
const STREAM_MLM_DROPOUT: u64 = 5;
const STREAM_EDA: u64 = 6;

/// Independent sub-seed for one consumer of randomness.
pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Supervision source for [`fit`].
pub enum FitTargets<'a, B> {
    Labels,
    Teacher {
        model: &'a IntentModel<B>,
        temperature: f64,
    },
}

pub struct FitInputs<'a, B> {
    /// Supervised rows; every label must belong to the model's label set.
    pub items: &'a [LabeledUtterance],
    pub targets: FitTargets<'a, B>,
    /// Unlabeled masked-LM pool and the joint objective weighting it.
    pub mlm: Option<(&'a [&'a str], &'a JointObjectiveConfig)>,
    pub eval_pool: Option<&'a [LabeledUtterance]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub curve: LearningCurve,
    /// Total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Per-epoch mean of the supervised term alone.
    pub supervised_trace: Vec<f64>,
}

fn label_ids<B: EncoderBackbone>(model: &IntentModel<B>, items: &[LabeledUtterance]) -> Result<Vec<usize>, TrainError> {
    items
        .iter()
        .map(|u| {
            model
                .label_index(&u.label)
                .ok_or_else(|| TrainError::Contract(format!("label `{}` is outside the model's label set", u.label)))
        })
        .collect()
}

/// Runs `cfg.epochs` passes over `inputs.items` and returns the final-epoch model in place.
///
/// One epoch is one shuffled pass over the supervised rows. Each step also
/// draws `mlm_batch_size` texts with replacement from the masked-LM pool.
pub fn fit<B: EncoderBackbone>(
    model: &mut IntentModel<B>,
    inputs: &FitInputs<'_, B>,
    cfg: &TrainConfig,
) -> Result<FitOutput, TrainError> {
    cfg.validate()?;
    if inputs.items.is_empty() {
        return Err(TrainError::Contract("no supervised rows to train on".into()));
    }
    let labels = label_ids(model, inputs.items)?;
    if let FitTargets::Teacher { model: t, temperature } = &inputs.targets {
        if t.label_set != model.label_set {
            return Err(TrainError::Contract("teacher and student label spaces differ".into()));
        }
        if !(*temperature > 0.0) {
            return Err(TrainError::Contract(format!("temperature must be positive, got {temperature}")));
        }
    }
    if let Some((pool, objcfg)) = inputs.mlm {
        objcfg.validate()?;
        model.backbone.mask_id()?;
        if pool.is_empty() {
            return Err(TrainError::Contract("masked-LM pool is empty".into()));
        }
    }
    let eval_ids = match inputs.eval_pool {
        Some(pool) if !pool.is_empty() => Some(label_ids(model, pool)?),
        _ => None,
    };

    let n = inputs.items.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule = LinearSchedule::new(cfg.epochs * steps_per_epoch, cfg.warmup_frac);
    let mut opt = AdamW::new(
        model,
        AdamWParams {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_SHUFFLE));
    let mut ce_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_CE_DROPOUT));
    let mut mlm_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_MLM_SAMPLE));
    let mut mlm_drop_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_MLM_DROPOUT));

    let mut order: Vec<usize> = (0..n).collect();
    let mut out = FitOutput {
        curve: LearningCurve::default(),
        step_losses: Vec::with_capacity(schedule.total_steps),
        supervised_trace: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_sup = 0.0;
        for (s, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + s;
            let texts: Vec<&str> = idx.iter().map(|&i| inputs.items[i].text.as_str()).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let teacher_logits = match &inputs.targets {
                FitTargets::Teacher { model: t, .. } => Some(t.logits(&texts)?),
                FitTargets::Labels => None,
            };
            let target = match (&inputs.targets, &teacher_logits) {
                (FitTargets::Teacher { temperature, .. }, Some(z)) => Supervision::Teacher {
                    logits: z,
                    temperature: *temperature,
                },
                _ => Supervision::Labels(&ys),
            };
            let masked = match inputs.mlm {
                Some((pool, objcfg)) => {
                    let picks: Vec<&str> = (0..cfg.mlm_batch_size)
                        .map(|_| pool[mlm_rng.random_range(0..pool.len())])
                        .collect();
                    let batch = model.backbone.tokenize(&picks);
                    Some((
                        apply_masking_with(&batch, model.backbone.vocab(), &objcfg.masking, &mut mlm_rng)?,
                        objcfg,
                    ))
                }
                None => None,
            };
            let (losses, grads) = loss_and_grads(
                model,
                &texts,
                target,
                masked.as_ref().map(|(m, c)| (m, *c)),
                Some(&mut ce_rng),
                Some(&mut mlm_drop_rng),
                cfg.freeze_plm,
            )?;
            let factor = schedule.factor(step);
            let (lr_plm, lr_cls) = (cfg.lr_plm * factor, cfg.lr_cls * factor);
            let (gp, gc) = (grads.plm.sq_norm().sqrt(), grads.cls.sq_norm().sqrt());
            if !losses.total.is_finite() || !gp.is_finite() || !gc.is_finite() {
                let recent = out.step_losses.iter().rev().take(20).rev().copied().collect();
                return Err(TrainError::Diverged(Box::new(DivergenceReport {
                    epoch,
                    step,
                    reason: if losses.total.is_finite() {
                        "non-finite gradient".into()
                    } else {
                        "non-finite loss".into()
                    },
                    supervised_loss: losses.supervised,
                    mlm_loss: losses.mlm.map(|m| m.value),
                    grad_norm_plm: gp,
                    grad_norm_cls: gc,
                    lr_plm,
                    lr_cls,
                    param_hash: model.param_hash(),
                    recent_step_losses: recent,
                })));
            }
            opt.step(model, &grads, lr_plm, lr_cls, cfg.freeze_plm);
            out.step_losses.push(losses.total);
            epoch_loss += losses.total;
            epoch_sup += losses.supervised;
        }
        let train_acc = accuracy(model, inputs.items, &labels)?;
        let last = epoch + 1 == cfg.epochs;
        let eval_acc = match (&eval_ids, inputs.eval_pool) {
            (Some(ids), Some(pool)) if cfg.eval_each_epoch || last => Some(accuracy(model, pool, ids)?),
            _ => None,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} train_acc {train_acc:.3} eval_acc {eval_acc:?}",
            epoch_loss / steps_per_epoch as f64
        );
        out.curve.epochs.push(EpochStats {
            epoch,
            train_acc,
            eval_acc,
            train_loss: epoch_loss / steps_per_epoch as f64,
        });
        out.supervised_trace.push(epoch_sup / steps_per_epoch as f64);
    }
    Ok(out)
}

fn accuracy<B: EncoderBackbone>(
    model: &IntentModel<B>,
    items: &[LabeledUtterance],
    gold: &[usize],
) -> Result<f64, TrainError> {
    let texts: Vec<&str> = items.iter().map(|u| u.text.as_str()).collect();
    let pred = model.predict(&texts)?;
    Ok(pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64)
}

/// Optional inputs some modes need.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainResources<'a> {
    pub corpus: Option<&'a GeneratedCorpus>,
    pub lexicon: Option<&'a SynonymLexicon>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<B> {
    pub model: IntentModel<B>,
    pub curve: LearningCurve,
    pub step_losses: Vec<f64>,
}

/// Trains `model` on the episode in `cfg.mode`, scoring the episode's eval pool along the way.
pub fn train<B: EncoderBackbone>(
    episode: &Episode,
    mut model: IntentModel<B>,
    objcfg: &JointObjectiveConfig,
    cfg: &TrainConfig,
    resources: &TrainResources<'_>,
) -> Result<TrainOutcome<B>, TrainError> {
    if model.label_set != episode.label_set {
        return Err(TrainError::Contract("model label set differs from the episode's".into()));
    }
    let mut items = episode.items.clone();
    let mlm_texts: Vec<&str>;
    let mut mlm = None;
    match cfg.mode {
        TrainMode::Dft => {}
        TrainMode::DftCa => {
            let corpus = resources
                .corpus
                .ok_or_else(|| TrainError::Contract("mode dft_ca needs a context corpus".into()))?;
            mlm_texts = corpus.mlm_texts();
            mlm = Some((mlm_texts.as_slice(), objcfg));
        }
        TrainMode::EdaDa => {
            let lexicon = resources
                .lexicon
                .ok_or_else(|| TrainError::Capability("eda_da mode needs a synonym lexicon".into()))?;
            items = eda_augment(
                &episode.items,
                cfg.eda_ops_per_item,
                Some(lexicon),
                stream_seed(cfg.seed, STREAM_EDA),
            )?;
        }
        TrainMode::GptjDa => {
            let corpus = resources
                .corpus
                .ok_or_else(|| TrainError::Contract("mode gptj_da needs a generated corpus".into()))?;
            let (known, unknown): (Vec<_>, Vec<_>) = corpus
                .generated_with_provenance_labels()
                .into_iter()
                .partition(|u| model.label_index(&u.label).is_some());
            if !unknown.is_empty() {
                log::warn!("dropping {} generated rows with labels outside the episode", unknown.len());
            }
            items.extend(known);
        }
    }
    let inputs = FitInputs {
        items: &items,
        targets: FitTargets::Labels,
        mlm,
        eval_pool: Some(&episode.eval_pool),
    };
    let fitted = fit(&mut model, &inputs, cfg)?;
    Ok(TrainOutcome {
        model,
        curve: fitted.curve,
        step_losses: fitted.step_losses,
    })
}
