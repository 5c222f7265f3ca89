//! Accuracy, multi-seed aggregation, learning-curve statistics and the experiment grid.

mod grid;
mod plot;

pub use grid::{
    aggregate, render_report, run_grid, CellJob, CellRunner, DatasetSpec, ExperimentGrid, GeneratorKind,
    GeneratorSpec, GridOutcome, MethodSpec, PipelineRunner, RunOutput, RunRecord, RunStatus, SyntheticSpec,
    record_flatness, toy_backbone_for,
};
pub use plot::{render_curves_png, PlotSeries};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::EncoderBackbone;
use crate::corpus::LabeledUtterance;
use crate::numeric::{mean, std_dev};
use crate::trainer::{IntentModel, LearningCurve};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("prediction failed: {0}")]
    Predict(String),
}

/// Anything that maps utterances to label indices over a fixed label set.
pub trait Predictor {
    fn label_set(&self) -> &[String];
    fn predict(&self, texts: &[&str]) -> Result<Vec<usize>, String>;
}

impl<B: EncoderBackbone> Predictor for IntentModel<B> {
    fn label_set(&self) -> &[String] {
        &self.label_set
    }

    fn predict(&self, texts: &[&str]) -> Result<Vec<usize>, String> {
        IntentModel::predict(self, texts).map_err(|e| e.to_string())
    }
}

/// Micro accuracy of the argmax decision over `pool`.
pub fn evaluate(model: &dyn Predictor, pool: &[LabeledUtterance]) -> Result<f64, EvalError> {
    if pool.is_empty() {
        return Err(EvalError::Contract("evaluation pool is empty".into()));
    }
    let labels = model.label_set();
    let gold: Vec<usize> = pool
        .iter()
        .map(|u| {
            labels
                .iter()
                .position(|l| *l == u.label)
                .ok_or_else(|| EvalError::Contract(format!("label `{}` unknown to the model", u.label)))
        })
        .collect::<Result<_, _>>()?;
    let texts: Vec<&str> = pool.iter().map(|u| u.text.as_str()).collect();
    let pred = model.predict(&texts).map_err(EvalError::Predict)?;
    if pred.len() != gold.len() {
        return Err(EvalError::Predict(format!("{} predictions for {} rows", pred.len(), gold.len())));
    }
    Ok(pred.iter().zip(&gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64)
}

/// Mean and population standard deviation, computed over the sorted values.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (mean(&v), std_dev(&v))
}

/// One (dataset, K, method) entry of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultCell {
    pub dataset: String,
    pub k: usize,
    pub method: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub runtime_secs: f64,
    pub failed_seeds: Vec<u64>,
}

impl ResultCell {
    /// `runs` holds `(seed, accuracy or None for a failed run, runtime)`; output is ordered by seed.
    pub fn from_runs(dataset: &str, k: usize, method: &str, runs: &[(u64, Option<f64>, f64)]) -> Self {
        let mut runs = runs.to_vec();
        runs.sort_by_key(|r| r.0);
        let ok: Vec<(u64, f64)> = runs.iter().filter_map(|(s, a, _)| a.map(|a| (*s, a))).collect();
        let per_seed: Vec<f64> = ok.iter().map(|(_, a)| *a).collect();
        let (mean_acc, std_acc) = if per_seed.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            summarize(&per_seed)
        };
        Self {
            dataset: dataset.into(),
            k,
            method: method.into(),
            seeds: ok.iter().map(|(s, _)| *s).collect(),
            per_seed,
            mean_acc,
            std_acc,
            runtime_secs: runs.iter().map(|r| r.2).sum(),
            failed_seeds: runs.iter().filter(|r| r.1.is_none()).map(|r| r.0).collect(),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.per_seed.is_empty()
    }

    /// `mean(std)` in percentage points with two decimals.
    pub fn render(&self) -> String {
        if self.is_failed() {
            return "failed".into();
        }
        let mark = if self.failed_seeds.is_empty() { "" } else { "*" };
        format!("{:.2}({:.2}){mark}", 100.0 * self.mean_acc, 100.0 * self.std_acc)
    }
}

/// Largest fall of eval accuracy below its running peak, looking only at the final half of epochs.
///
/// The running peak is taken from the start of the curve.
pub fn flatness_drop(eval: &[f64]) -> f64 {
    let start = eval.len() / 2;
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for (i, &v) in eval.iter().enumerate() {
        peak = peak.max(v);
        if i >= start {
            worst = worst.max(peak - v);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub name: String,
    pub epochs: Vec<usize>,
    pub train_acc: Vec<f64>,
    pub eval_acc: Vec<Option<f64>>,
    pub flatness_drop: Option<f64>,
}

impl CurveSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_acc,eval_acc\n");
        for ((e, t), v) in self.epochs.iter().zip(&self.train_acc).zip(&self.eval_acc) {
            let v = v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!("{e},{t},{v}\n"));
        }
        out
    }
}

/// Plot-ready train/eval series per run plus the flatness statistic of each eval curve.
pub fn curve_report(runs: &[(String, LearningCurve)]) -> Vec<CurveSeries> {
    runs.iter()
        .map(|(name, c)| {
            let eval = c.eval_series();
            CurveSeries {
                name: name.clone(),
                epochs: c.epochs.iter().map(|e| e.epoch).collect(),
                train_acc: c.epochs.iter().map(|e| e.train_acc).collect(),
                eval_acc: c.epochs.iter().map(|e| e.eval_acc).collect(),
                flatness_drop: (!eval.is_empty()).then(|| flatness_drop(&eval)),
            }
        })
        .collect()
}

/// Per-epoch mean over several curves of equal length.
pub fn mean_curve(curves: &[&LearningCurve]) -> Option<LearningCurve> {
    let n = curves.first()?.epochs.len();
    if curves.iter().any(|c| c.epochs.len() != n) {
        return None;
    }
    let epochs = (0..n)
        .map(|i| {
            let col = |f: &dyn Fn(&crate::trainer::EpochStats) -> f64| {
                mean(&curves.iter().map(|c| f(&c.epochs[i])).collect::<Vec<_>>())
            };
            let evals: Option<Vec<f64>> = curves.iter().map(|c| c.epochs[i].eval_acc).collect();
            crate::trainer::EpochStats {
                epoch: curves[0].epochs[i].epoch,
                train_acc: col(&|e| e.train_acc),
                eval_acc: evals.map(|v| mean(&v)),
                train_loss: col(&|e| e.train_loss),
            }
        })
        .collect();
    Some(LearningCurve { epochs })
}

/// Smallest K of the shared grid `ks` at which series `a` reaches `b`.
///
/// Panics if the three slices differ in length.
pub fn crossing_point(ks: &[usize], a: &[f64], b: &[f64]) -> Option<usize> {
    assert!(ks.len() == a.len() && a.len() == b.len(), "series must share the K grid");
    let mut pts: Vec<(usize, f64, f64)> = ks.iter().zip(a).zip(b).map(|((k, x), y)| (*k, *x, *y)).collect();
    pts.sort_by_key(|p| p.0);
    pts.into_iter().find(|(_, x, y)| x >= y).map(|(k, _, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<String>, Box<dyn Fn(&str) -> usize>);

    impl Predictor for Fixed {
        fn label_set(&self) -> &[String] {
            &self.0
        }
        fn predict(&self, texts: &[&str]) -> Result<Vec<usize>, String> {
            Ok(texts.iter().map(|t| (self.1)(t)).collect())
        }
    }

    fn pool() -> Vec<LabeledUtterance> {
        ["a", "b", "c", "d"]
            .iter()
            .flat_map(|l| (0..3).map(move |i| LabeledUtterance::new(format!("{l}{i}"), *l)))
            .collect()
    }

    fn labels() -> Vec<String> {
        ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn majority_and_oracle_accuracy() {
        let majority = Fixed(labels(), Box::new(|_| 0));
        assert_eq!(evaluate(&majority, &pool()).unwrap(), 0.25);
        let oracle = Fixed(labels(), Box::new(|t| (t.as_bytes()[0] - b'a') as usize));
        assert_eq!(evaluate(&oracle, &pool()).unwrap(), 1.0);
        assert!(matches!(evaluate(&oracle, &[]), Err(EvalError::Contract(_))));
    }

    #[test]
    fn cell_statistics_recompute() {
        let c = ResultCell::from_runs("d", 5, "DFT", &[(1, Some(0.5), 1.0), (0, Some(0.7), 2.0), (2, None, 0.5)]);
        assert_eq!(c.seeds, vec![0, 1]);
        assert_eq!(c.per_seed, vec![0.7, 0.5]);
        assert!((c.mean_acc - 0.6).abs() < 1e-12);
        assert!((c.std_acc - 0.1).abs() < 1e-12);
        assert_eq!(c.failed_seeds, vec![2]);
        assert_eq!(c.render(), "60.00(10.00)*");
        assert_eq!(ResultCell::from_runs("d", 5, "m", &[(0, None, 0.0)]).render(), "failed");
    }

    #[test]
    fn flatness_cases() {
        assert_eq!(flatness_drop(&[0.5; 10]), 0.0);
        assert_eq!(flatness_drop(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]), 0.0);
        let mut decayed = vec![0.2, 0.4, 0.6, 0.8, 0.8, 0.8, 0.8, 0.8];
        decayed[6] = 0.8 - 0.05;
        decayed[7] = 0.8 - 0.05;
        assert!((flatness_drop(&decayed) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn crossing_cases() {
        let ks = [1, 2, 4, 8];
        assert_eq!(crossing_point(&ks, &[0.1, 0.2, 0.3, 0.4], &[0.5; 4]), None);
        assert_eq!(crossing_point(&ks, &[0.5; 4], &[0.5; 4]), Some(1));
        assert_eq!(crossing_point(&ks, &[0.1, 0.3, 0.6, 0.8], &[0.2, 0.4, 0.55, 0.7]), Some(4));
    }

    #[test]
    fn mean_curve_averages_epochwise() {
        let mk = |t: f64, e: Option<f64>| LearningCurve {
            epochs: vec![crate::trainer::EpochStats {
                epoch: 0,
                train_acc: t,
                eval_acc: e,
                train_loss: 1.0,
            }],
        };
        let a = mk(0.2, Some(0.4));
        let b = mk(0.4, Some(0.6));
        let m = mean_curve(&[&a, &b]).unwrap();
        assert!((m.epochs[0].train_acc - 0.3).abs() < 1e-12);
        assert!((m.epochs[0].eval_acc.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(mean_curve(&[&a, &mk(0.1, None)]).unwrap().epochs[0].eval_acc, None);
    }
}
