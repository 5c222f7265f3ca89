//! Optional context generation, joint training, then an optional distillation chain.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{stream_seed, train, IntentModel, LearningCurve, SynonymLexicon, TrainConfig, TrainError, TrainMode, TrainResources};
use crate::backbone::EncoderBackbone;
use crate::config::PipelineConfig;
use crate::contextgen::{assemble_daug, augment_episode, GeneratedCorpus, GenerationError, GenerativeLmClient};
use crate::corpus::Episode;
use crate::distillation::{distill_sequence, DistillError, DistillOutcome};
use crate::provenance::hash_json;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

/// Which stages of the method run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct StagePlan {
    pub use_ca: bool,
    pub use_ssd: bool,
    /// Base training mode; `use_ca` upgrades `dft` to `dft_ca`.
    pub mode: TrainMode,
}

impl Default for StagePlan {
    fn default() -> Self {
        Self {
            use_ca: false,
            use_ssd: false,
            mode: TrainMode::Dft,
        }
    }
}

impl StagePlan {
    pub fn dft() -> Self {
        Self::default()
    }

    pub fn full() -> Self {
        Self {
            use_ca: true,
            use_ssd: true,
            mode: TrainMode::Dft,
        }
    }

    pub fn train_mode(&self) -> TrainMode {
        if self.use_ca {
            TrainMode::DftCa
        } else {
            self.mode
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.use_ca && !matches!(self.mode, TrainMode::Dft | TrainMode::DftCa) {
            return Err(PipelineError::Contract(format!(
                "context augmentation composes with dft only, not {}",
                self.mode
            )));
        }
        Ok(())
    }

    /// Row label used in reports.
    pub fn name(&self) -> String {
        match (self.train_mode(), self.use_ssd) {
            (TrainMode::Dft, false) => "DFT".into(),
            (TrainMode::Dft, true) => "DFT++(SSD)".into(),
            (TrainMode::DftCa, false) => "DFT++(CA)".into(),
            (TrainMode::DftCa, true) => "DFT++(CA,SSD)".into(),
            (TrainMode::EdaDa, ssd) => format!("EDA-DA{}", if ssd { "+SSD" } else { "" }),
            (TrainMode::GptjDa, ssd) => format!("GPTJ-DA{}", if ssd { "+SSD" } else { "" }),
        }
    }

    fn needs_corpus(&self) -> bool {
        matches!(self.train_mode(), TrainMode::DftCa | TrainMode::GptjDa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Augment,
    Train,
    Distill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub kind: StageKind,
    /// Generation index for distillation stages, 0 otherwise.
    pub index: usize,
    pub input_hash: Option<String>,
    pub output_hash: String,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineProvenance {
    pub plan: StagePlan,
    pub config_hash: String,
    pub train_config_hash: String,
    pub objective_hash: String,
    pub distill_hash: Option<String>,
    pub augment_hash: Option<String>,
    pub episode_hash: String,
    pub corpus_hash: Option<String>,
    pub backbone: String,
    pub backbone_hash: String,
    pub stages: Vec<StageRecord>,
}

impl PipelineProvenance {
    pub fn count(&self, kind: StageKind) -> usize {
        self.stages.iter().filter(|s| s.kind == kind).count()
    }
}

pub struct PipelineInputs<'a, B> {
    pub episode: &'a Episode,
    pub pretrained: &'a B,
    pub config: &'a PipelineConfig,
    pub plan: StagePlan,
    /// Used to build the context corpus when none is supplied.
    pub client: Option<&'a dyn GenerativeLmClient>,
    pub corpus: Option<&'a GeneratedCorpus>,
    pub external_corpus: Option<&'a Path>,
    pub lexicon: Option<&'a SynonymLexicon>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome<B> {
    pub model: IntentModel<B>,
    pub accuracy: Option<f64>,
    /// Learning curve of the training stage.
    pub curve: LearningCurve,
    pub corpus: Option<GeneratedCorpus>,
    pub base_model: Option<IntentModel<B>>,
    pub distill: Option<DistillOutcome<B>>,
    pub provenance: PipelineProvenance,
}

fn backbone_hash<B: EncoderBackbone>(bb: &B) -> String {
    crate::provenance::hash_tensors(bb.tensors())
}

/// Runs the stages selected by `plan` in order.
pub fn run_pipeline<B: EncoderBackbone>(inputs: PipelineInputs<'_, B>) -> Result<PipelineOutcome<B>, PipelineError> {
    let PipelineInputs {
        episode,
        pretrained,
        config,
        plan,
        client,
        corpus,
        external_corpus,
        lexicon,
    } = inputs;
    plan.validate()?;
    let mut stages = Vec::new();
    let mut augment_hash = None;

    let corpus: Option<GeneratedCorpus> = match (plan.needs_corpus(), corpus, client) {
        (false, _, _) => None,
        (true, Some(c), _) => Some(c.clone()),
        (true, None, Some(client)) => {
            let generated = augment_episode(client, episode, &config.augment)?;
            let c = assemble_daug(episode, generated.entries, external_corpus)?;
            augment_hash = Some(hash_json(&config.augment));
            stages.push(StageRecord {
                kind: StageKind::Augment,
                index: 0,
                input_hash: Some(episode.content_hash()),
                output_hash: c.content_hash(),
                accuracy: None,
            });
            Some(c)
        }
        (true, None, None) => {
            return Err(PipelineError::Contract(format!(
                "{} needs a context corpus or a generator",
                plan.name()
            )))
        }
    };

    let train_cfg = TrainConfig {
        mode: plan.train_mode(),
        ..config.train.clone()
    };
    let base = IntentModel::fresh(pretrained, &episode.label_set, stream_seed(train_cfg.seed, 0xBA5E));
    let trained = train(
        episode,
        base,
        &config.objective,
        &train_cfg,
        &TrainResources {
            corpus: corpus.as_ref(),
            lexicon,
        },
    )?;
    stages.push(StageRecord {
        kind: StageKind::Train,
        index: 0,
        input_hash: Some(backbone_hash(pretrained)),
        output_hash: trained.model.param_hash(),
        accuracy: trained.curve.final_eval_acc(),
    });

    let (model, base_model, distill, accuracy) = if plan.use_ssd {
        let outcome = distill_sequence(
            &trained.model,
            pretrained,
            episode,
            &config.distill,
            &train_cfg,
            &config.objective,
            corpus.as_ref(),
        )?;
        for r in &outcome.records {
            stages.push(StageRecord {
                kind: StageKind::Distill,
                index: r.k,
                input_hash: Some(r.teacher_hash.clone()),
                output_hash: r.student_hash.clone(),
                accuracy: r.accuracy,
            });
        }
        let acc = outcome.records.last().and_then(|r| r.accuracy);
        (outcome.final_model().clone(), Some(trained.model), Some(outcome), acc)
    } else {
        let acc = trained.curve.final_eval_acc();
        (trained.model, None, None, acc)
    };

    let provenance = PipelineProvenance {
        plan,
        config_hash: hash_json(config),
        train_config_hash: hash_json(&train_cfg),
        objective_hash: hash_json(&config.objective),
        distill_hash: plan.use_ssd.then(|| hash_json(&config.distill)),
        augment_hash,
        episode_hash: episode.content_hash(),
        corpus_hash: corpus.as_ref().map(GeneratedCorpus::content_hash),
        backbone: pretrained.identifier().to_string(),
        backbone_hash: backbone_hash(pretrained),
        stages,
    };
    Ok(PipelineOutcome {
        model,
        accuracy,
        curve: trained.curve,
        corpus,
        base_model,
        distill,
        provenance,
    })
}
