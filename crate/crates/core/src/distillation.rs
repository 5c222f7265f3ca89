//! Sequential born-again self-distillation: each generation is a fresh model
//! trained to match the previous generation's temperature-scaled logits.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::EncoderBackbone;
use crate::contextgen::GeneratedCorpus;
use crate::corpus::Episode;
use crate::numeric::{log_softmax, softmax};
use crate::objectives::JointObjectiveConfig;
use crate::trainer::{fit, stream_seed, FitInputs, FitTargets, IntentModel, LearningCurve, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

fn check_pair(student: &Array2<f64>, teacher: &Array2<f64>, t: f64) -> Result<(), DistillError> {
    if student.dim() != teacher.dim() || student.nrows() == 0 {
        return Err(DistillError::Contract(format!(
            "student logits {:?} vs teacher logits {:?}",
            student.dim(),
            teacher.dim()
        )));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(DistillError::Contract(format!("temperature must be positive, got {t}")));
    }
    if student.iter().chain(teacher.iter()).any(|v| !v.is_finite()) {
        return Err(DistillError::Contract("non-finite logits".into()));
    }
    Ok(())
}

/// `mean_b KL(softmax(teacher_b / t) ‖ softmax(student_b / t))`.
pub fn kd_loss(student: &Array2<f64>, teacher: &Array2<f64>, t: f64) -> Result<f64, DistillError> {
    kd_loss_with_grad(student, teacher, t).map(|(l, _)| l)
}

/// [`kd_loss`] and its gradient w.r.t. the student logits, `(q - p) / (t·B)`.
pub fn kd_loss_with_grad(
    student: &Array2<f64>,
    teacher: &Array2<f64>,
    t: f64,
) -> Result<(f64, Array2<f64>), DistillError> {
    check_pair(student, teacher, t)?;
    let b = student.nrows() as f64;
    let mut grad = Array2::zeros(student.raw_dim());
    let mut total = 0.0;
    for (i, (s, z)) in student.rows().into_iter().zip(teacher.rows()).enumerate() {
        let log_q = log_softmax(s.mapv(|v| v / t).view());
        let log_p = log_softmax(z.mapv(|v| v / t).view());
        let p = log_p.mapv(f64::exp);
        total += p
            .iter()
            .zip(log_p.iter().zip(log_q.iter()))
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, (lp, lq))| pi * (lp - lq))
            .sum::<f64>();
        let q = softmax(s.mapv(|v| v / t).view());
        grad.row_mut(i).assign(&((&q - &p) / (t * b)));
    }
    Ok(((total / b).max(0.0), grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    /// A new copy of the pretrained encoder under a newly drawn head.
    #[default]
    FreshBackboneFreshHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillationSchedule {
    pub temperature: f64,
    pub generations: usize,
    pub per_generation_epochs: usize,
    pub student_init: StudentInit,
    /// Keep the masked-LM term on the context corpus while distilling.
    pub include_mlm: bool,
}

impl Default for DistillationSchedule {
    fn default() -> Self {
        Self {
            temperature: 100.0,
            generations: 6,
            per_generation_epochs: 200,
            student_init: StudentInit::FreshBackboneFreshHead,
            include_mlm: true,
        }
    }
}

impl DistillationSchedule {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(DistillError::Contract(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.generations == 0 {
            return Err(DistillError::Contract("at least one generation is required".into()));
        }
        if self.per_generation_epochs == 0 {
            return Err(DistillError::Contract("per_generation_epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub k: usize,
    pub t: f64,
    pub epochs: usize,
    /// Mean KL per epoch.
    pub kl_trace: Vec<f64>,
    pub accuracy: Option<f64>,
    pub teacher_hash: String,
    pub student_hash: String,
}

const STREAM_GENERATION: u64 = 0x5EED_0000;

/// Trains generation `k` (1-based) against `teacher`.
#[allow(clippy::too_many_arguments)]
pub fn run_generation<B: EncoderBackbone>(
    teacher: &IntentModel<B>,
    pretrained: &B,
    episode: &Episode,
    sched: &DistillationSchedule,
    train_cfg: &TrainConfig,
    objcfg: &JointObjectiveConfig,
    corpus: Option<&GeneratedCorpus>,
    k: usize,
) -> Result<(IntentModel<B>, GenerationRecord, LearningCurve), DistillError> {
    sched.validate()?;
    if teacher.label_set != episode.label_set {
        return Err(DistillError::Contract("teacher label space differs from the episode's".into()));
    }
    let seed = stream_seed(train_cfg.seed, STREAM_GENERATION + k as u64);
    let mut student = match sched.student_init {
        StudentInit::FreshBackboneFreshHead => IntentModel::fresh(pretrained, &episode.label_set, seed),
    };
    let cfg = TrainConfig {
        epochs: sched.per_generation_epochs,
        seed,
        ..train_cfg.clone()
    };
    let mlm_texts: Vec<&str> = match corpus {
        Some(c) if sched.include_mlm => c.mlm_texts(),
        _ => Vec::new(),
    };
    let inputs = FitInputs {
        items: &episode.items,
        targets: FitTargets::Teacher {
            model: teacher,
            temperature: sched.temperature,
        },
        mlm: (!mlm_texts.is_empty()).then_some((mlm_texts.as_slice(), objcfg)),
        eval_pool: Some(&episode.eval_pool),
    };
    let out = fit(&mut student, &inputs, &cfg)?;
    let record = GenerationRecord {
        k,
        t: sched.temperature,
        epochs: cfg.epochs,
        kl_trace: out.supervised_trace,
        accuracy: out.curve.final_eval_acc(),
        teacher_hash: teacher.param_hash(),
        student_hash: student.param_hash(),
    };
    log::info!(
        "generation {k}: KL {:.3e} -> {:.3e}, eval acc {:?}",
        record.kl_trace.first().copied().unwrap_or(f64::NAN),
        record.kl_trace.last().copied().unwrap_or(f64::NAN),
        record.accuracy
    );
    Ok((student, record, out.curve))
}

#[derive(Debug, Clone)]
pub struct DistillOutcome<B> {
    /// Every student in generation order; the last is the final model.
    pub students: Vec<IntentModel<B>>,
    pub records: Vec<GenerationRecord>,
    pub curves: Vec<LearningCurve>,
}

impl<B> DistillOutcome<B> {
    pub fn final_model(&self) -> &IntentModel<B> {
        self.students.last().expect("at least one generation")
    }
}

/// Distills `base` (generation 0) through `sched.generations` students.
pub fn distill_sequence<B: EncoderBackbone>(
    base: &IntentModel<B>,
    pretrained: &B,
    episode: &Episode,
    sched: &DistillationSchedule,
    train_cfg: &TrainConfig,
    objcfg: &JointObjectiveConfig,
    corpus: Option<&GeneratedCorpus>,
) -> Result<DistillOutcome<B>, DistillError> {
    sched.validate()?;
    let mut out = DistillOutcome {
        students: Vec::with_capacity(sched.generations),
        records: Vec::with_capacity(sched.generations),
        curves: Vec::with_capacity(sched.generations),
    };
    for k in 1..=sched.generations {
        let teacher = out.students.last().unwrap_or(base);
        let (student, record, curve) =
            run_generation(teacher, pretrained, episode, sched, train_cfg, objcfg, corpus, k)?;
        out.students.push(student);
        out.records.push(record);
        out.curves.push(curve);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_logits_give_zero() {
        let z = array![[1.0, -2.0, 0.5], [3.0, 3.0, 3.0]];
        assert_eq!(kd_loss(&z, &z, 2.0).unwrap(), 0.0);
        let shifted = &z + 7.5;
        assert!(kd_loss(&shifted, &z, 1.0).unwrap() < 1e-15);
    }

    #[test]
    fn two_class_closed_form() {
        let teacher = array![[2.0, 0.0]];
        let student = array![[0.0, 2.0]];
        let e2 = 2f64.exp();
        let p = [e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)];
        let q = [p[1], p[0]];
        let oracle = p[0] * (p[0] / q[0]).ln() + p[1] * (p[1] / q[1]).ln();
        assert!((kd_loss(&student, &teacher, 1.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn huge_temperature_vanishes() {
        let teacher = array![[5.0, -3.0, 1.0]];
        let student = array![[-4.0, 2.0, 0.0]];
        assert!(kd_loss(&student, &teacher, 1e6).unwrap() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let teacher = array![[1.0, 0.2, -0.7], [0.0, 2.0, 1.0]];
        let student = array![[0.3, -0.4, 0.9], [1.5, -1.0, 0.2]];
        let t = 1.7;
        let (_, g) = kd_loss_with_grad(&student, &teacher, t).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut a = student.clone();
                let mut b = student.clone();
                a[[i, j]] += h;
                b[[i, j]] -= h;
                let fd = (kd_loss(&a, &teacher, t).unwrap() - kd_loss(&b, &teacher, t).unwrap()) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8, "{fd} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = array![[1.0, 2.0]];
        assert!(kd_loss(&a, &array![[1.0, 2.0, 3.0]], 1.0).is_err());
        assert!(kd_loss(&a, &a, 0.0).is_err());
        assert!(kd_loss(&array![[f64::NAN, 0.0]], &a, 1.0).is_err());
    }

    #[test]
    fn schedule_requires_a_generation() {
        let s = DistillationSchedule {
            generations: 0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        assert!(DistillationSchedule::default().validate().is_ok());
    }
}
