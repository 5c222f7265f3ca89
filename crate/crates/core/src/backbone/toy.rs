//! A small residual context-mixing encoder with hand-written backprop.
//!
//! Each layer updates every position as
//! `x ← x + tanh(x·Wsᵀ + mean(x)·Wcᵀ + c)`, where the mean runs over the
//! real (non-padding) positions of the sequence. The MLM decoder is tied to
//! the token embedding matrix.

use ndarray::{s, Array2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BackboneError, EncoderBackbone, HiddenStates, ParamGrads, TokenBatch, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub max_vocab: usize,
    pub init_seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            layers: 2,
            max_seq_len: super::DEFAULT_MAX_SEQ_LEN,
            dropout: 0.1,
            max_vocab: 1000,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MixLayer {
    self_w: Array2<f64>,
    ctx_w: Array2<f64>,
    bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackbone {
    config: ToyConfig,
    vocab: Vocab,
    tok_emb: Array2<f64>,
    pos_emb: Array2<f64>,
    layers: Vec<MixLayer>,
    mlm_bias: Array2<f64>,
}

pub struct ToyCache {
    seqs: Vec<SeqCache>,
}

struct SeqCache {
    drop_mask: Option<Array2<f64>>,
    /// Layer inputs, `n × d` each.
    inputs: Vec<Array2<f64>>,
    means: Vec<Array2<f64>>,
    activations: Vec<Array2<f64>>,
}

impl ToyBackbone {
    pub fn new(config: ToyConfig, vocab: Vocab) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.hidden_dim;
        let emb = Normal::new(0.0, 0.1).expect("valid normal");
        let pos = Normal::new(0.0, 0.02).expect("valid normal");
        let mix = Normal::new(0.0, 0.5 / (d as f64).sqrt()).expect("valid normal");
        let tok_emb = Array2::from_shape_simple_fn((vocab.len(), d), || emb.sample(&mut rng));
        let pos_emb = Array2::from_shape_simple_fn((config.max_seq_len, d), || pos.sample(&mut rng));
        let layers = (0..config.layers)
            .map(|_| MixLayer {
                self_w: Array2::from_shape_simple_fn((d, d), || mix.sample(&mut rng)),
                ctx_w: Array2::from_shape_simple_fn((d, d), || mix.sample(&mut rng)),
                bias: Array2::zeros((1, d)),
            })
            .collect();
        let mlm_bias = Array2::zeros((1, vocab.len()));
        Self {
            config,
            vocab,
            tok_emb,
            pos_emb,
            layers,
            mlm_bias,
        }
    }

    /// Rebuilds a backbone from saved tensors in [`EncoderBackbone::tensors`] order.
    pub fn from_parts(
        config: ToyConfig,
        vocab: Vocab,
        tensors: Vec<Array2<f64>>,
    ) -> Result<Self, BackboneError> {
        let mut bb = Self::new(config, vocab);
        let expected: Vec<_> = bb.tensors().iter().map(|(_, t)| t.raw_dim()).collect();
        if expected.len() != tensors.len() {
            return Err(BackboneError::Contract(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (slot, value)) in bb.tensors_mut().into_iter().zip(tensors).enumerate() {
            if value.raw_dim() != expected[i] {
                return Err(BackboneError::Contract(format!(
                    "tensor {i} has shape {:?}, expected {:?}",
                    value.shape(),
                    expected[i]
                )));
            }
            *slot = value;
        }
        Ok(bb)
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn token_embedding(&self) -> &Array2<f64> {
        &self.tok_emb
    }

    pub fn position_embedding(&self) -> &Array2<f64> {
        &self.pos_emb
    }

    /// `(self_w, ctx_w, bias)` of each layer.
    pub fn layer_weights(&self) -> Vec<(&Array2<f64>, &Array2<f64>, &Array2<f64>)> {
        self.layers
            .iter()
            .map(|l| (&l.self_w, &l.ctx_w, &l.bias))
            .collect()
    }

    pub fn mlm_bias(&self) -> &Array2<f64> {
        &self.mlm_bias
    }

    fn forward_seq<'r>(
        &self,
        ids: &[u32],
        mut dropout: Option<&mut (dyn RngCore + 'r)>,
    ) -> (Array2<f64>, SeqCache) {
        let n = ids.len();
        let d = self.config.hidden_dim;
        let mut x = Array2::zeros((n, d));
        for (p, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(p);
            row.assign(&self.tok_emb.row(id as usize));
            row += &self.pos_emb.row(p);
        }
        let drop_mask = match dropout.as_deref_mut() {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let mask = Array2::from_shape_simple_fn((n, d), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                x *= &mask;
                Some(mask)
            }
            _ => None,
        };
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut means = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let m = x.mean_axis(Axis(0)).expect("non-empty sequence").insert_axis(Axis(0));
            let pre = x.dot(&layer.self_w.t()) + m.dot(&layer.ctx_w.t()) + &layer.bias;
            let z = pre.mapv(f64::tanh);
            let next = &x + &z;
            inputs.push(std::mem::replace(&mut x, next));
            means.push(m);
            activations.push(z);
        }
        (
            x,
            SeqCache {
                drop_mask,
                inputs,
                means,
                activations,
            },
        )
    }
}

impl EncoderBackbone for ToyBackbone {
    type Cache = ToyCache;

    fn identifier(&self) -> &str {
        "toy"
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn forward(
        &self,
        batch: &TokenBatch,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> (HiddenStates, ToyCache) {
        let width = batch.width();
        let d = self.config.hidden_dim;
        let mut hidden = Vec::with_capacity(batch.len());
        let mut seqs = Vec::with_capacity(batch.len());
        for (ids, &len) in batch.ids.iter().zip(&batch.lengths) {
            let (h, cache) = self.forward_seq(&ids[..len], dropout.as_deref_mut());
            let mut padded = Array2::zeros((width, d));
            padded.slice_mut(s![..len, ..]).assign(&h);
            hidden.push(padded);
            seqs.push(cache);
        }
        (hidden, ToyCache { seqs })
    }

    fn mlm_logits(&self, hidden: &HiddenStates) -> Result<Vec<Array2<f64>>, BackboneError> {
        self.mask_id()?;
        Ok(hidden
            .iter()
            .map(|h| h.dot(&self.tok_emb.t()) + &self.mlm_bias)
            .collect())
    }

    fn backward(
        &self,
        batch: &TokenBatch,
        cache: &ToyCache,
        hidden: &HiddenStates,
        mut grad_hidden: HiddenStates,
        grad_mlm_logits: Option<&[Array2<f64>]>,
    ) -> ParamGrads {
        let mut d_tok = Array2::<f64>::zeros(self.tok_emb.raw_dim());
        let mut d_pos = Array2::<f64>::zeros(self.pos_emb.raw_dim());
        let mut d_layers: Vec<(Array2<f64>, Array2<f64>, Array2<f64>)> = self
            .layers
            .iter()
            .map(|l| {
                (
                    Array2::zeros(l.self_w.raw_dim()),
                    Array2::zeros(l.ctx_w.raw_dim()),
                    Array2::zeros(l.bias.raw_dim()),
                )
            })
            .collect();
        let mut d_mlm_bias = Array2::<f64>::zeros(self.mlm_bias.raw_dim());

        for (row, seq) in cache.seqs.iter().enumerate() {
            let n = batch.lengths[row];
            let ids = &batch.ids[row][..n];
            let mut g = grad_hidden[row].slice(s![..n, ..]).to_owned();
            if let Some(dl) = grad_mlm_logits {
                let dl = dl[row].slice(s![..n, ..]);
                let h = hidden[row].slice(s![..n, ..]);
                d_tok += &dl.t().dot(&h);
                d_mlm_bias += &dl.sum_axis(Axis(0)).insert_axis(Axis(0));
                g += &dl.dot(&self.tok_emb);
            }
            for (li, layer) in self.layers.iter().enumerate().rev() {
                let z = &seq.activations[li];
                let da = &g * &z.mapv(|v| 1.0 - v * v);
                let sum_da = da.sum_axis(Axis(0)).insert_axis(Axis(0));
                let (dws, dwc, dc) = &mut d_layers[li];
                *dws += &da.t().dot(&seq.inputs[li]);
                *dwc += &sum_da.t().dot(&seq.means[li]);
                *dc += &sum_da;
                let ctx = sum_da.dot(&layer.ctx_w) / n as f64;
                g = g + da.dot(&layer.self_w) + &ctx;
            }
            if let Some(mask) = &seq.drop_mask {
                g *= mask;
            }
            for (p, &id) in ids.iter().enumerate() {
                let gp = g.row(p);
                let mut t = d_tok.row_mut(id as usize);
                t += &gp;
                let mut q = d_pos.row_mut(p);
                q += &gp;
            }
            // release this row's incoming gradient early
            grad_hidden[row] = Array2::zeros((0, 0));
        }

        let mut out = vec![d_tok, d_pos];
        for (w, c, b) in d_layers {
            out.extend([w, c, b]);
        }
        out.push(d_mlm_bias);
        ParamGrads(out)
    }

    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.self_w"), &l.self_w));
            out.push((format!("layer{i}.ctx_w"), &l.ctx_w));
            out.push((format!("layer{i}.bias"), &l.bias));
        }
        out.push(("mlm_bias".to_string(), &self.mlm_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.push(&mut l.self_w);
            out.push(&mut l.ctx_w);
            out.push(&mut l.bias);
        }
        out.push(&mut self.mlm_bias);
        out
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("toy config serializes")
    }
}
