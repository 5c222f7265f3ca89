//! Masked-LM encoder abstraction, the linear intent head and parameter groups.

mod toy;
mod vocab;

pub use toy::{ToyBackbone, ToyConfig};
pub use vocab::{split_words, Vocab, CLS_TOKEN, MASK_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN};

use ndarray::{Array2, Axis};
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::softmax_rows;

/// Longest token sequence (specials included) any backbone accepts.
pub const DEFAULT_MAX_SEQ_LEN: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum BackboneError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("backbone `{backbone}` lacks capability: {capability}")]
    Capability {
        backbone: String,
        capability: String,
    },
}

/// Padded batch of token ids. Position `p` of row `i` is real iff `p < lengths[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<Vec<u32>>,
    pub lengths: Vec<usize>,
    pub pad_id: u32,
}

impl TokenBatch {
    pub fn from_sequences(seqs: Vec<Vec<u32>>, pad_id: u32) -> Self {
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let lengths = seqs.iter().map(Vec::len).collect();
        let ids = seqs
            .into_iter()
            .map(|mut s| {
                s.resize(width, pad_id);
                s
            })
            .collect();
        Self { ids, lengths, pad_id }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.ids.first().map(Vec::len).unwrap_or(0)
    }

    pub fn attention_mask(&self, row: usize, pos: usize) -> bool {
        pos < self.lengths[row]
    }
}

/// Per-sequence hidden states, `width × d` each, zero on padding rows.
pub type HiddenStates = Vec<Array2<f64>>;

/// Gradients aligned one-to-one with [`EncoderBackbone::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Array2<f64>>);

impl ParamGrads {
    pub fn zeros_like(shapes: &[&Array2<f64>]) -> Self {
        Self(shapes.iter().map(|t| Array2::zeros(t.raw_dim())).collect())
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.scaled_add(scale, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.0 {
            a.mapv_inplace(|v| v * factor);
        }
    }

    pub fn zero(&mut self) {
        for a in &mut self.0 {
            a.fill(0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|a| a.iter().all(|v| *v == 0.0))
    }

    pub fn sq_norm(&self) -> f64 {
        self.0.iter().flat_map(|a| a.iter()).map(|v| v * v).sum()
    }
}

/// A trainable masked-LM text encoder.
///
/// Implementations own their tokenizer (through [`Vocab`]), produce
/// per-position hidden states whose first row is the sentence vector, score
/// every position against the vocabulary, and back-propagate gradients of
/// both outputs into their own parameters.
pub trait EncoderBackbone: Clone + Send + Sync {
    /// Activations retained by `forward` for `backward`.
    type Cache;

    fn identifier(&self) -> &str;
    fn hidden_dim(&self) -> usize;
    fn vocab(&self) -> &Vocab;
    fn max_seq_len(&self) -> usize;

    /// Runs the encoder; `dropout` of `None` means deterministic eval mode.
    fn forward(
        &self,
        batch: &TokenBatch,
        dropout: Option<&mut dyn RngCore>,
    ) -> (HiddenStates, Self::Cache);

    /// Vocabulary logits for every position (`width × |vocab|` per sequence).
    fn mlm_logits(&self, hidden: &HiddenStates) -> Result<Vec<Array2<f64>>, BackboneError>;

    /// Gradients of a scalar loss given its derivatives w.r.t. the hidden
    /// states and, optionally, the MLM logits.
    fn backward(
        &self,
        batch: &TokenBatch,
        cache: &Self::Cache,
        hidden: &HiddenStates,
        grad_hidden: HiddenStates,
        grad_mlm_logits: Option<&[Array2<f64>]>,
    ) -> ParamGrads;

    fn tensors(&self) -> Vec<(String, &Array2<f64>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn config_json(&self) -> serde_json::Value;

    fn tokenize(&self, texts: &[&str]) -> TokenBatch {
        let seqs = texts
            .iter()
            .map(|t| {
                let (ids, truncated) = self.vocab().encode(t, self.max_seq_len());
                if truncated {
                    log::warn!(
                        "utterance truncated to {} tokens: {:.40}…",
                        self.max_seq_len(),
                        t
                    );
                }
                ids
            })
            .collect();
        TokenBatch::from_sequences(seqs, self.vocab().pad_id())
    }

    fn mask_id(&self) -> Result<u32, BackboneError> {
        self.vocab().mask_id().ok_or_else(|| BackboneError::Capability {
            backbone: self.identifier().to_string(),
            capability: "MASK token (required for masked-LM training)".into(),
        })
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Sentence vectors (first-position hidden state) for `texts`, eval mode.
pub fn encode<B: EncoderBackbone>(bb: &B, texts: &[&str]) -> Result<Array2<f64>, BackboneError> {
    if texts.is_empty() {
        return Err(BackboneError::Contract("encode needs at least one text".into()));
    }
    let batch = bb.tokenize(texts);
    let (hidden, _) = bb.forward(&batch, None);
    Ok(sentence_vectors(&hidden, bb.hidden_dim()))
}

pub fn sentence_vectors(hidden: &HiddenStates, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((hidden.len(), d));
    for (i, h) in hidden.iter().enumerate() {
        out.row_mut(i).assign(&h.row(0));
    }
    out
}

/// Linear intent classifier over sentence vectors. `bias` is stored as a `1 × L` row.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl ClassifierHead {
    pub fn zeros(num_labels: usize, hidden_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((num_labels, hidden_dim)),
            bias: Array2::zeros((1, num_labels)),
        }
    }

    /// Weights ~ N(0, 0.02²), zero bias.
    pub fn init(num_labels: usize, hidden_dim: usize, rng: &mut dyn RngCore) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let weight = Array2::from_shape_simple_fn((num_labels, hidden_dim), || normal.sample(rng));
        Self {
            weight,
            bias: Array2::zeros((1, num_labels)),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn logits(&self, h: &Array2<f64>) -> Result<Array2<f64>, BackboneError> {
        if h.ncols() != self.hidden_dim() {
            return Err(BackboneError::Contract(format!(
                "sentence vectors have width {}, head expects {}",
                h.ncols(),
                self.hidden_dim()
            )));
        }
        Ok(h.dot(&self.weight.t()) + &self.bias)
    }

    /// Gradients of the head and of its input, given `dlogits` (`B × L`).
    pub fn backward(&self, h: &Array2<f64>, dlogits: &Array2<f64>) -> (HeadGrads, Array2<f64>) {
        let grads = HeadGrads {
            weight: dlogits.t().dot(h),
            bias: dlogits.sum_axis(Axis(0)).insert_axis(Axis(0)),
        };
        (grads, dlogits.dot(&self.weight))
    }

    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        vec![("cls.weight".into(), &self.weight), ("cls.bias".into(), &self.bias)]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl HeadGrads {
    pub fn into_param_grads(self) -> ParamGrads {
        ParamGrads(vec![self.weight, self.bias])
    }
}

/// `softmax(W h + b)` row-wise.
pub fn classify(head: &ClassifierHead, h: &Array2<f64>) -> Result<Array2<f64>, BackboneError> {
    Ok(softmax_rows(&head.logits(h)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Encoder parameters, trained at `lr_plm`.
    Plm,
    /// Classifier parameters, trained at `lr_cls`.
    Cls,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub group: ParamGroup,
    pub numel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterGroups {
    pub plm: Vec<ParamInfo>,
    pub cls: Vec<ParamInfo>,
}

impl ParameterGroups {
    pub fn count(&self, group: ParamGroup) -> usize {
        let list = match group {
            ParamGroup::Plm => &self.plm,
            ParamGroup::Cls => &self.cls,
        };
        list.iter().map(|p| p.numel).sum()
    }
}

pub fn parameter_groups<B: EncoderBackbone>(bb: &B, head: &ClassifierHead) -> ParameterGroups {
    let info = |group| move |(name, t): (String, &Array2<f64>)| ParamInfo {
        name,
        group,
        numel: t.len(),
    };
    ParameterGroups {
        plm: bb.tensors().into_iter().map(info(ParamGroup::Plm)).collect(),
        cls: head.tensors().into_iter().map(info(ParamGroup::Cls)).collect(),
    }
}
