#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fewshot::backbone::{EncoderBackbone, ToyBackbone, ToyConfig, Vocab};
use fewshot::contextgen::{assemble_daug, GeneratedCorpus};
use fewshot::corpus::{sample_episode, Episode, IntentDataset, Split};
use fewshot::distillation::{distill_sequence, kd_loss, DistillationSchedule};
use fewshot::evalharness::{run_grid, summarize, ExperimentGrid, PipelineRunner};
use fewshot::numeric::{argmax, softmax};
use fewshot::objectives::{apply_masking, ce_loss_from_logits, joint_loss, mlm_loss, JointObjectiveConfig, MaskTarget, MaskingScheme};
use fewshot::synthetic::toy_intent_dataset;
use fewshot::trainer::{loss_and_grads, train, IntentModel, Supervision, TrainConfig, TrainMode, TrainResources};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn toy_backbone(ds: &IntentDataset, dropout: f64) -> ToyBackbone {
    let texts = ds.split(Split::Train).iter().map(|u| u.text.as_str());
    ToyBackbone::new(
        ToyConfig {
            hidden_dim: 16,
            layers: 1,
            dropout,
            ..Default::default()
        },
        Vocab::build(texts, 500),
    )
}

pub fn fast_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr_plm: 1e-2,
        lr_cls: 5e-2,
        epochs,
        batch_size: 4,
        mlm_batch_size: 4,
        ..Default::default()
    }
}

pub fn random_logits(rng: &mut ChaCha8Rng, b: usize, l: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((b, l), |_| rng.random_range(-scale..scale))
}

pub fn kd_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let z = random_logits(&mut rng, 4, 6, 10.0);
        let t = rng.random_range(0.1..200.0);
        let v = kd_loss(&z, &z, t).map_err(|e| e.to_string())?;
        ensure(v.abs() <= 1e-12, || format!("kd_loss(x, x, {t}) = {v}"))?;
    }
    for i in 0..1000 {
        let z = random_logits(&mut rng, 8, 5, 20.0);
        let t = rng.random_range(0.01..500.0);
        for row in z.rows() {
            let scaled = softmax(row.mapv(|v| v / t).view());
            ensure(argmax(scaled.view()) == argmax(row), || format!("batch {i}: argmax moved at t={t}"))?;
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = random_logits(&mut rng, 1, 2, 8.0);
        let z = random_logits(&mut rng, 1, 2, 8.0);
        let t = rng.random_range(0.5..100.0);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let p = sig((z[[0, 1]] - z[[0, 0]]) / t);
        let q = sig((s[[0, 1]] - s[[0, 0]]) / t);
        let oracle = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
        let got = kd_loss(&s, &z, t).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle).abs());
    }
    ensure(worst <= 1e-9, || format!("2-class closed form off by {worst:e}"))?;
    Ok(format!("identities hold; 2-class max error {worst:.1e}"))
}

fn brute_log_prob(row: &[f64], k: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row {
        s += (v - m).exp();
    }
    row[k] - m - s.ln()
}

pub fn loss_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let b = rng.random_range(1..10);
        let l = rng.random_range(2..9);
        let z = random_logits(&mut rng, b, l, 6.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..l)).collect();
        let (got, _) = ce_loss_from_logits(&z, &labels).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            sum -= brute_log_prob(&z.row(i).to_vec(), y);
        }
        worst = worst.max((got - sum / b as f64).abs());

        let rows = rng.random_range(1..4);
        let v = rng.random_range(5..12);
        let logits: Vec<Array2<f64>> = (0..rows).map(|_| random_logits(&mut rng, 6, v, 5.0)).collect();
        let targets: Vec<MaskTarget> = (0..rng.random_range(1..8))
            .map(|_| MaskTarget {
                row: rng.random_range(0..rows),
                pos: rng.random_range(0..6),
                original: rng.random_range(0..v as u32),
            })
            .collect();
        let got = mlm_loss(&logits, &targets).map_err(|e| e.to_string())?.value;
        let mut sum = 0.0;
        for t in &targets {
            sum -= brute_log_prob(&logits[t.row].row(t.pos).to_vec(), t.original as usize);
        }
        worst = worst.max((got - sum / targets.len() as f64).abs());
    }
    ensure(worst <= 1e-6, || format!("loss oracle mismatch {worst:e}"))?;

    let ds = toy_intent_dataset(3, 6, 4, 2);
    let bb = toy_backbone(&ds, 0.0);
    let model = IntentModel::fresh(&bb, &ds.label_set, 1);
    let texts: Vec<&str> = ds.split(Split::Train)[..6].iter().map(|u| u.text.as_str()).collect();
    let labels: Vec<usize> = ds.split(Split::Train)[..6].iter().map(|u| ds.label_index(&u.label).unwrap()).collect();
    let masked = apply_masking(
        &bb.tokenize(&texts),
        bb.vocab(),
        &MaskingScheme {
            mask_prob: 0.4,
            rng_seed: 5,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut lin = 0.0f64;
    for lambda in [0.0, 0.3, 1.0, 2.7] {
        let obj = JointObjectiveConfig {
            lambda,
            ..Default::default()
        };
        let (l, _) = loss_and_grads(&model, &texts, Supervision::Labels(&labels), Some((&masked, &obj)), None, None, false)
            .map_err(|e| e.to_string())?;
        let mlm = l.mlm.map(|m| m.value).unwrap_or(0.0);
        lin = lin.max((l.total - (l.supervised + lambda * mlm)).abs());
        lin = lin.max((joint_loss(l.supervised, mlm, &obj) - l.total).abs());
    }
    ensure(lin <= 1e-6, || format!("joint loss not linear in lambda ({lin:e})"))?;

    zero_lambda_equality()?;
    Ok(format!("ce/mlm max error {worst:.1e}; lambda linearity {lin:.1e}; dft == dft_ca at lambda 0"))
}

pub fn episode_with_corpus(labels: usize, k: usize, seed: u64) -> (IntentDataset, Episode, GeneratedCorpus) {
    let ds = toy_intent_dataset(labels, 8, 6, seed);
    let ep = sample_episode(&ds, k, seed).unwrap();
    let corpus = assemble_daug(&ep, Vec::new(), None).unwrap();
    (ds, ep, corpus)
}

pub fn zero_lambda_equality() -> Result<(), String> {
    let (ds, ep, corpus) = episode_with_corpus(3, 3, 4);
    let bb = toy_backbone(&ds, 0.1);
    let model = IntentModel::fresh(&bb, &ep.label_set, 8);
    let res = TrainResources {
        corpus: Some(&corpus),
        lexicon: None,
    };
    let obj = JointObjectiveConfig {
        lambda: 0.0,
        ..Default::default()
    };
    let a = train(&ep, model.clone(), &obj, &fast_cfg(4), &res).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        mode: TrainMode::DftCa,
        ..fast_cfg(4)
    };
    let b = train(&ep, model, &obj, &cfg, &res).map_err(|e| e.to_string())?;
    ensure(a.step_losses == b.step_losses, || "step losses differ between dft and dft_ca".into())?;
    ensure(a.model.param_hash() == b.model.param_hash(), || "final parameters differ".into())
}

pub fn gradient_check() -> Check {
    let ds = toy_intent_dataset(2, 4, 2, 9);
    let bb = toy_backbone(&ds, 0.0);
    let mut model = IntentModel::fresh(&bb, &ds.label_set, 4);
    let train_rows = ds.split(Split::Train);
    let texts: Vec<&str> = train_rows[..4].iter().map(|u| u.text.as_str()).collect();
    let labels: Vec<usize> = train_rows[..4].iter().map(|u| ds.label_index(&u.label).unwrap()).collect();
    let mlm_texts: Vec<&str> = train_rows[4..].iter().map(|u| u.text.as_str()).collect();
    let masked = apply_masking(
        &bb.tokenize(&mlm_texts),
        bb.vocab(),
        &MaskingScheme {
            mask_prob: 0.5,
            rng_seed: 1,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let obj = JointObjectiveConfig {
        lambda: 0.5,
        ..Default::default()
    };
    let value = |m: &IntentModel<ToyBackbone>| {
        loss_and_grads(m, &texts, Supervision::Labels(&labels), Some((&masked, &obj)), None, None, false)
            .map(|(l, _)| l.total)
            .map_err(|e| e.to_string())
    };
    let (_, grads) = loss_and_grads(&model, &texts, Supervision::Labels(&labels), Some((&masked, &obj)), None, None, false)
        .map_err(|e| e.to_string())?;
    let analytic: Vec<Array2<f64>> = grads.plm.0.iter().chain(grads.cls.0.iter()).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut coords = Vec::new();
    let mut tries = 0;
    while coords.len() < 16 && tries < 20_000 {
        tries += 1;
        let ti = rng.random_range(0..analytic.len());
        let (r, c) = analytic[ti].dim();
        let (r, c) = (rng.random_range(0..r), rng.random_range(0..c));
        if analytic[ti][[r, c]].abs() > 1e-6 && !coords.contains(&(ti, r, c)) {
            coords.push((ti, r, c));
        }
    }
    ensure(coords.len() >= 10, || format!("only {} coordinates with signal", coords.len()))?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for &(ti, r, c) in &coords {
        let nudge = |m: &mut IntentModel<ToyBackbone>, d: f64| {
            let mut all = m.backbone.tensors_mut();
            all.extend(m.head.tensors_mut());
            all[ti][[r, c]] += d;
        };
        nudge(&mut model, h);
        let up = value(&model)?;
        nudge(&mut model, -2.0 * h);
        let down = value(&model)?;
        nudge(&mut model, h);
        let fd = (up - down) / (2.0 * h);
        let a = analytic[ti][[r, c]];
        worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()));
    }
    ensure(worst <= 1e-3, || format!("relative error {worst:e}"))?;
    Ok(format!("{} coordinates, max relative error {worst:.1e}", coords.len()))
}

pub fn masking_statistics() -> Check {
    let ds = toy_intent_dataset(6, 40, 2, 1);
    let bb = toy_backbone(&ds, 0.0);
    let vocab = bb.vocab();
    let ordinary: Vec<u32> = vocab.ordinary_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 10_000usize;
    let mut seqs = Vec::new();
    let mut left = n;
    while left > 0 {
        let len = left.min(50);
        let mut ids = vec![vocab.cls_id()];
        ids.extend((0..len).map(|_| ordinary[rng.random_range(0..ordinary.len())]));
        ids.push(vocab.sep_id());
        seqs.push(ids);
        left -= len;
    }
    let batch = fewshot::backbone::TokenBatch::from_sequences(seqs, vocab.pad_id());
    let scheme = MaskingScheme {
        rng_seed: 2024,
        ..Default::default()
    };
    let m = apply_masking(&batch, vocab, &scheme).map_err(|e| e.to_string())?;
    let expect = scheme.mask_prob * n as f64;
    let sigma = (n as f64 * scheme.mask_prob * (1.0 - scheme.mask_prob)).sqrt();
    let got = m.targets.len() as f64;
    ensure((got - expect).abs() <= 3.0 * sigma, || format!("{got} selected, expected {expect} ± {:.1}", 3.0 * sigma))?;

    let texts: Vec<&str> = ds.split(Split::Train).iter().take(32).map(|u| u.text.as_str()).collect();
    let real = bb.tokenize(&texts);
    for seed in 0..100 {
        let scheme = MaskingScheme {
            mask_prob: 0.9,
            rng_seed: seed,
            ..Default::default()
        };
        let m = apply_masking(&real, vocab, &scheme).map_err(|e| e.to_string())?;
        for t in &m.targets {
            ensure(!vocab.is_special(t.original), || format!("seed {seed}: special token selected"))?;
        }
        for (row, ids) in m.batch.ids.iter().enumerate() {
            for (pos, id) in ids.iter().enumerate() {
                let orig = real.ids[row][pos];
                if vocab.is_special(orig) {
                    ensure(*id == orig, || format!("seed {seed}: special token rewritten at {row},{pos}"))?;
                }
            }
        }
    }
    Ok(format!("{got} of {n} selected (expected {expect}, 3σ = {:.1}); specials intact over 100 seeds", 3.0 * sigma))
}

pub fn sampler_determinism() -> Check {
    let ds = toy_intent_dataset(5, 12, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let k = rng.random_range(1..=12);
        let seed: u64 = rng.random();
        let a = sample_episode(&ds, k, seed).map_err(|e| e.to_string())?;
        let b = sample_episode(&ds, k, seed).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("K={k} seed={seed}: draws differ"))?;
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for it in &a.items {
            *per.entry(it.label.as_str()).or_default() += 1;
            ensure(ds.split(Split::Train).contains(it), || "item outside the train split".into())?;
        }
        ensure(per.len() == ds.num_labels() && per.values().all(|&c| c == k), || {
            format!("K={k} seed={seed}: per-label counts {per:?}")
        })?;
    }
    Ok("100 draws reproducible with exactly K per label".into())
}

pub fn distillation_chain() -> Check {
    let (ds, ep, corpus) = episode_with_corpus(3, 4, 6);
    let bb = toy_backbone(&ds, 0.0);
    let obj = JointObjectiveConfig::default();
    let base = train(
        &ep,
        IntentModel::fresh(&bb, &ep.label_set, 1),
        &obj,
        &fast_cfg(25),
        &TrainResources::default(),
    )
    .map_err(|e| e.to_string())?
    .model;
    let sched = DistillationSchedule {
        temperature: 2.0,
        generations: 3,
        per_generation_epochs: 25,
        include_mlm: false,
        ..Default::default()
    };
    let out = distill_sequence(&base, &bb, &ep, &sched, &fast_cfg(25), &obj, Some(&corpus)).map_err(|e| e.to_string())?;
    ensure(out.records.len() == 3, || format!("{} generations recorded", out.records.len()))?;
    let mut prev = base.param_hash();
    let mut summary = Vec::new();
    for (r, s) in out.records.iter().zip(&out.students) {
        let (first, last) = (r.kl_trace[0], *r.kl_trace.last().unwrap());
        ensure(last < first, || format!("generation {}: KL {first} -> {last}", r.k))?;
        ensure(r.teacher_hash == prev, || format!("generation {}: teacher hash breaks the chain", r.k))?;
        ensure(r.student_hash == s.param_hash(), || format!("generation {}: student hash mismatch", r.k))?;
        prev = r.student_hash.clone();
        summary.push(format!("{first:.2e}->{last:.2e}"));
    }
    Ok(format!("KL per generation {}; hashes chained", summary.join(", ")))
}

pub fn toy_dft_fits() -> Check {
    let ds = toy_intent_dataset(4, 10, 10, 1);
    let ep = sample_episode(&ds, 5, 0).map_err(|e| e.to_string())?;
    let bb = toy_backbone(&ds, 0.1);
    let out = train(
        &ep,
        IntentModel::fresh(&bb, &ep.label_set, 0),
        &JointObjectiveConfig::default(),
        &fast_cfg(40),
        &TrainResources::default(),
    )
    .map_err(|e| e.to_string())?;
    let acc = out.curve.final_train_acc().unwrap_or(0.0);
    ensure(acc == 1.0, || format!("final train accuracy {acc}"))?;
    Ok(format!(
        "train accuracy 1.0, eval accuracy {:.3}",
        out.curve.final_eval_acc().unwrap_or(f64::NAN)
    ))
}

pub const TOY_GRID: &str = r#"
name = "toy"
seeds = [0, 1, 2]
k_values = [5]
workers = 2

[generator]
kind = "stub"
stub_completions = [" i lost my card somewhere\n", " what is my balance today\n", " send money to my friend\n"]

[[datasets]]
name = "toy4"
synthetic = { labels = 4, train_per_label = 10, eval_per_label = 10, seed = 1 }

[[methods]]
name = "DFT"

[[methods]]
use_ca = true
use_ssd = true

[config.backbone]
hidden_dim = 16
layers = 1

[config.train]
epochs = 30
lr_plm = 0.01
lr_cls = 0.05
batch_size = 4
mlm_batch_size = 4

[config.augment]
per_label = 6
parallelism = 1

[config.distill]
temperature = 2.0
generations = 2
per_generation_epochs = 30
"#;

/// Parses the mean(std) table back out of `report.md` and recomputes it from the per-run records.
pub fn report_is_recomputable(out_dir: &Path, grid: &ExperimentGrid) -> Result<usize, String> {
    let report = fs::read_to_string(out_dir.join("report.md")).map_err(|e| format!("report.md: {e}"))?;
    let mut accs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for entry in fs::read_dir(out_dir.join("cells")).map_err(|e| e.to_string())? {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(entry.map_err(|e| e.to_string())?.path()).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let method = v["method"].as_str().unwrap_or_default().to_string();
        let acc = v["accuracy"].as_f64().ok_or_else(|| format!("{method}: run without accuracy"))?;
        accs.entry(method).or_default().push(acc);
    }
    ensure(accs.len() == grid.methods.len(), || format!("records for {} methods", accs.len()))?;
    for (method, values) in &accs {
        ensure(values.len() == grid.seeds.len(), || format!("{method}: {} runs", values.len()))?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        let (m2, s2) = summarize(values);
        ensure((mean - m2).abs() < 1e-12 && (var.sqrt() - s2).abs() < 1e-12, || format!("{method}: summary differs"))?;
        let cell = format!("{:.2}({:.2})", 100.0 * mean, 100.0 * var.sqrt());
        let row = report
            .lines()
            .find(|l| l.contains(&format!("| {method} |")))
            .ok_or_else(|| format!("no report row for {method}"))?;
        ensure(row.contains(&cell), || format!("{method}: expected {cell} in `{row}`"))?;
    }
    Ok(accs.len())
}

pub fn toy_pipeline_report(out_dir: &Path) -> Check {
    let grid = ExperimentGrid::from_toml_str(TOY_GRID).map_err(|e| e.to_string())?;
    let runner = PipelineRunner::new(&grid, out_dir).map_err(|e| e.to_string())?;
    let outcome = run_grid(&grid, out_dir, &runner, false).map_err(|e| e.to_string())?;
    for c in &outcome.cells {
        ensure(c.failed_seeds.is_empty(), || format!("{}: seeds {:?} failed", c.method, c.failed_seeds))?;
    }
    let n = report_is_recomputable(out_dir, &grid)?;
    let rendered: Vec<String> = outcome.cells.iter().map(|c| format!("{} {}", c.method, c.render())).collect();
    Ok(format!("{n} methods reported: {}", rendered.join(", ")))
}

