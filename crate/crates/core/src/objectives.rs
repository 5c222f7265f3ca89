//! Classification cross-entropy, masked-LM corruption and loss, and the joint objective.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{TokenBatch, Vocab};
use crate::numeric::{log_softmax, softmax};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingScheme {
    pub mask_prob: f64,
    pub replace_mask_frac: f64,
    pub replace_random_frac: f64,
    pub keep_frac: f64,
    pub rng_seed: u64,
}

impl Default for MaskingScheme {
    fn default() -> Self {
        Self {
            mask_prob: 0.15,
            replace_mask_frac: 0.8,
            replace_random_frac: 0.1,
            keep_frac: 0.1,
            rng_seed: 0,
        }
    }
}

impl MaskingScheme {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(ObjectiveError::Contract(format!(
                "mask_prob {} outside [0, 1]",
                self.mask_prob
            )));
        }
        let fracs = [self.replace_mask_frac, self.replace_random_frac, self.keep_frac];
        if fracs.iter().any(|f| *f < 0.0) {
            return Err(ObjectiveError::Contract("masking fractions must be non-negative".into()));
        }
        let total: f64 = fracs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ObjectiveError::Contract(format!(
                "masking fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointObjectiveConfig {
    pub lambda: f64,
    pub masking: MaskingScheme,
}

impl Default for JointObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            masking: MaskingScheme::default(),
        }
    }
}

impl JointObjectiveConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(ObjectiveError::Contract(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        self.masking.validate()
    }
}

/// Location and original id of one corrupted position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskTarget {
    pub row: usize,
    pub pos: usize,
    pub original: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub batch: TokenBatch,
    pub targets: Vec<MaskTarget>,
}

/// Corrupts `batch` with the scheme's own seed.
pub fn apply_masking(
    batch: &TokenBatch,
    vocab: &Vocab,
    scheme: &MaskingScheme,
) -> Result<MaskedBatch, ObjectiveError> {
    let mut rng = ChaCha8Rng::seed_from_u64(scheme.rng_seed);
    apply_masking_with(batch, vocab, scheme, &mut rng)
}

/// Selects each non-special position with probability `mask_prob`, then
/// replaces it by `[MASK]`, by a random ordinary token, or keeps it.
pub fn apply_masking_with(
    batch: &TokenBatch,
    vocab: &Vocab,
    scheme: &MaskingScheme,
    rng: &mut impl Rng,
) -> Result<MaskedBatch, ObjectiveError> {
    scheme.validate()?;
    let mask_id = vocab
        .mask_id()
        .ok_or_else(|| ObjectiveError::Contract("vocabulary has no [MASK] token".into()))?;
    let ordinary = vocab.ordinary_ids();
    let mut out = batch.clone();
    let mut targets = Vec::new();
    for row in 0..batch.len() {
        for pos in 0..batch.lengths[row] {
            let original = batch.ids[row][pos];
            if vocab.is_special(original) {
                continue;
            }
            if rng.random::<f64>() >= scheme.mask_prob {
                continue;
            }
            let u: f64 = rng.random();
            let replacement = if u < scheme.replace_mask_frac {
                mask_id
            } else if u < scheme.replace_mask_frac + scheme.replace_random_frac {
                ordinary[rng.random_range(0..ordinary.len())]
            } else {
                original
            };
            out.ids[row][pos] = replacement;
            targets.push(MaskTarget { row, pos, original });
        }
    }
    Ok(MaskedBatch { batch: out, targets })
}

/// Mean `-ln p(y_i)` over the batch, from probabilities.
pub fn ce_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64, ObjectiveError> {
    if probs.nrows() != labels.len() || labels.is_empty() {
        return Err(ObjectiveError::Contract(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    let l = probs.ncols();
    let mut total = 0.0;
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        if y >= l {
            return Err(ObjectiveError::Contract(format!("label index {y} >= {l}")));
        }
        total -= row[y].ln();
    }
    Ok(total / labels.len() as f64)
}

/// Cross-entropy from logits together with its gradient w.r.t. the logits.
pub fn ce_loss_from_logits(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>), ObjectiveError> {
    if logits.nrows() != labels.len() || labels.is_empty() {
        return Err(ObjectiveError::Contract(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let b = labels.len() as f64;
    let l = logits.ncols();
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= l {
            return Err(ObjectiveError::Contract(format!("label index {y} >= {l}")));
        }
        let logp = log_softmax(logits.row(i));
        total -= logp[y];
        let mut g = grad.row_mut(i);
        g.assign(&logp.mapv(f64::exp));
        g[y] -= 1.0;
        g.mapv_inplace(|v| v / b);
    }
    Ok((total / b, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmLoss {
    pub value: f64,
    pub num_targets: usize,
    /// No position was masked; the value is a defined zero.
    pub empty: bool,
}

fn target_log_prob(row: ArrayView1<'_, f64>, id: u32) -> Result<f64, ObjectiveError> {
    let v = row.len();
    if id as usize >= v {
        return Err(ObjectiveError::Contract(format!("target id {id} >= vocab {v}")));
    }
    Ok(log_softmax(row)[id as usize])
}

/// Mean cross-entropy over masked positions only.
pub fn mlm_loss(logits: &[Array2<f64>], targets: &[MaskTarget]) -> Result<MlmLoss, ObjectiveError> {
    if targets.is_empty() {
        return Ok(MlmLoss {
            value: 0.0,
            num_targets: 0,
            empty: true,
        });
    }
    let mut total = 0.0;
    for t in targets {
        let seq = logits
            .get(t.row)
            .ok_or_else(|| ObjectiveError::Contract(format!("target row {} out of range", t.row)))?;
        if t.pos >= seq.nrows() {
            return Err(ObjectiveError::Contract(format!("target position {} out of range", t.pos)));
        }
        total -= target_log_prob(seq.row(t.pos), t.original)?;
    }
    Ok(MlmLoss {
        value: total / targets.len() as f64,
        num_targets: targets.len(),
        empty: false,
    })
}

/// [`mlm_loss`] plus the dense gradient w.r.t. every logit (zero off-target).
pub fn mlm_loss_with_grad(
    logits: &[Array2<f64>],
    targets: &[MaskTarget],
) -> Result<(MlmLoss, Vec<Array2<f64>>), ObjectiveError> {
    let loss = mlm_loss(logits, targets)?;
    let mut grads: Vec<Array2<f64>> = logits.iter().map(|l| Array2::zeros(l.raw_dim())).collect();
    if loss.empty {
        return Ok((loss, grads));
    }
    let n = targets.len() as f64;
    for t in targets {
        let p = softmax(logits[t.row].row(t.pos));
        let mut g = grads[t.row].row_mut(t.pos);
        g.scaled_add(1.0 / n, &p);
        g[t.original as usize] -= 1.0 / n;
    }
    Ok((loss, grads))
}

/// `ce + λ·mlm`.
pub fn joint_loss(ce: f64, mlm: f64, cfg: &JointObjectiveConfig) -> f64 {
    ce + cfg.lambda * mlm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn vocab() -> Vocab {
        Vocab::build(["the quick brown fox jumps over the lazy dog"], 100)
    }

    #[test]
    fn one_hot_predictions_have_zero_ce() {
        let probs = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(ce_loss(&probs, &[0, 2]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_ce_is_ln_l() {
        let probs = Array2::from_elem((3, 4), 0.25);
        assert_abs_diff_eq!(ce_loss(&probs, &[0, 1, 3]).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(4f64.ln(), 1.3863, epsilon = 1e-4);
    }

    #[test]
    fn ce_rejects_out_of_range_label() {
        let probs = Array2::from_elem((1, 2), 0.5);
        assert!(ce_loss(&probs, &[2]).is_err());
    }

    #[test]
    fn ce_from_logits_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.5).unwrap();
        let logits = Array2::from_shape_simple_fn((3, 5), || n.sample(&mut rng));
        let labels = [4, 0, 2];
        let (_, grad) = ce_loss_from_logits(&logits, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..5 {
                let mut up = logits.clone();
                up[[i, j]] += eps;
                let mut dn = logits.clone();
                dn[[i, j]] -= eps;
                let fd = (ce_loss_from_logits(&up, &labels).unwrap().0
                    - ce_loss_from_logits(&dn, &labels).unwrap().0)
                    / (2.0 * eps);
                assert_abs_diff_eq!(grad[[i, j]], fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn mask_everything() {
        let v = vocab();
        let batch = TokenBatch::from_sequences(
            vec![v.encode("the quick fox", 64).0, v.encode("lazy dog", 64).0],
            v.pad_id(),
        );
        let scheme = MaskingScheme {
            mask_prob: 1.0,
            replace_mask_frac: 1.0,
            replace_random_frac: 0.0,
            keep_frac: 0.0,
            rng_seed: 9,
        };
        let m = apply_masking(&batch, &v, &scheme).unwrap();
        assert_eq!(m.targets.len(), 5);
        for row in 0..2 {
            for pos in 0..batch.lengths[row] {
                let orig = batch.ids[row][pos];
                let now = m.batch.ids[row][pos];
                if v.is_special(orig) {
                    assert_eq!(now, orig);
                } else {
                    assert_eq!(now, v.mask_id().unwrap());
                }
            }
        }
        assert_eq!(m.batch.ids[1][4], v.pad_id());
    }

    #[test]
    fn zero_mask_prob_is_identity() {
        let v = vocab();
        let batch = TokenBatch::from_sequences(vec![v.encode("the quick brown fox", 64).0], v.pad_id());
        let scheme = MaskingScheme {
            mask_prob: 0.0,
            ..Default::default()
        };
        let m = apply_masking(&batch, &v, &scheme).unwrap();
        assert_eq!(m.batch, batch);
        assert!(m.targets.is_empty());
    }

    #[test]
    fn sequence_without_content_is_skipped() {
        let v = vocab();
        let batch = TokenBatch::from_sequences(vec![v.encode("", 64).0], v.pad_id());
        let scheme = MaskingScheme {
            mask_prob: 1.0,
            ..Default::default()
        };
        assert!(apply_masking(&batch, &v, &scheme).unwrap().targets.is_empty());
    }

    #[test]
    fn bad_fractions_rejected() {
        let scheme = MaskingScheme {
            keep_frac: 0.2,
            ..Default::default()
        };
        assert!(scheme.validate().is_err());
    }

    #[test]
    fn masking_is_deterministic_given_seed() {
        let v = vocab();
        let batch = TokenBatch::from_sequences(
            vec![v.encode("the quick brown fox jumps over the lazy dog", 64).0; 8],
            v.pad_id(),
        );
        let scheme = MaskingScheme {
            mask_prob: 0.4,
            rng_seed: 21,
            ..Default::default()
        };
        assert_eq!(
            apply_masking(&batch, &v, &scheme).unwrap(),
            apply_masking(&batch, &v, &scheme).unwrap()
        );
    }

    #[test]
    fn perfect_mlm_logits_give_zero_loss() {
        let mut logits = Array2::from_elem((3, 6), -1e30);
        logits[[1, 4]] = 0.0;
        logits[[2, 5]] = 0.0;
        let targets = [
            MaskTarget { row: 0, pos: 1, original: 4 },
            MaskTarget { row: 0, pos: 2, original: 5 },
        ];
        let loss = mlm_loss(&[logits], &targets).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(!loss.empty);
    }

    #[test]
    fn uniform_mlm_logits_give_ln_vocab() {
        let logits = vec![Array2::zeros((4, 1000))];
        let targets = [
            MaskTarget { row: 0, pos: 1, original: 17 },
            MaskTarget { row: 0, pos: 3, original: 999 },
        ];
        let loss = mlm_loss(&logits, &targets).unwrap();
        assert_abs_diff_eq!(loss.value, 1000f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss.value, 6.9078, epsilon = 1e-4);
    }

    #[test]
    fn empty_targets_flag_zero() {
        let loss = mlm_loss(&[Array2::zeros((2, 3))], &[]).unwrap();
        assert!(loss.empty);
        assert_eq!(loss.value, 0.0);
    }

    #[test]
    fn joint_loss_arithmetic() {
        let mut cfg = JointObjectiveConfig::default();
        cfg.lambda = 0.0;
        assert_eq!(joint_loss(0.7, 123.0, &cfg), 0.7);
        cfg.lambda = 1.0;
        assert_eq!(joint_loss(0.5, 2.0, &cfg), 2.5);
    }

    #[test]
    fn negative_lambda_rejected() {
        let cfg = JointObjectiveConfig {
            lambda: -0.1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
