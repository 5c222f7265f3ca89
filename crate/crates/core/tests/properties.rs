use fewshot::backbone::{EncoderBackbone, ToyBackbone, ToyConfig, Vocab};
use fewshot::corpus::{sample_episode, Split};
use fewshot::distillation::{kd_loss, kd_loss_with_grad};
use fewshot::numeric::{argmax, softmax_rows};
use fewshot::objectives::{apply_masking, ce_loss_from_logits, mlm_loss, MaskTarget, MaskingScheme};
use fewshot::synthetic::toy_intent_dataset;
use ndarray::Array2;
use proptest::collection::vec;
use proptest::prelude::*;

fn logits(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    vec(-30.0..30.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn logit_pair() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (1usize..6, 2usize..8).prop_flat_map(|(r, c)| (logits(r, c), logits(r, c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kd_is_zero_on_identical_logits(z in (1usize..6, 2usize..8).prop_flat_map(|(r, c)| logits(r, c)), t in 0.05..300.0f64) {
        let (l, g) = kd_loss_with_grad(&z, &z, t).unwrap();
        prop_assert!(l.abs() <= 1e-12);
        prop_assert!(g.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn kd_is_nonnegative((s, z) in logit_pair(), t in 0.05..300.0f64) {
        prop_assert!(kd_loss(&s, &z, t).unwrap() >= 0.0);
    }

    #[test]
    fn kd_gradient_matches_finite_differences((s, z) in logit_pair(), t in 0.5..20.0f64) {
        let (_, g) = kd_loss_with_grad(&s, &z, t).unwrap();
        let h = 1e-6;
        for ((r, c), a) in g.indexed_iter() {
            let mut up = s.clone();
            up[[r, c]] += h;
            let mut down = s.clone();
            down[[r, c]] -= h;
            let fd = (kd_loss(&up, &z, t).unwrap() - kd_loss(&down, &z, t).unwrap()) / (2.0 * h);
            prop_assert!((fd - a).abs() <= 1e-6 + 1e-4 * a.abs(), "{} vs {}", fd, a);
        }
    }

    #[test]
    fn temperature_preserves_argmax(z in (1usize..9, 2usize..10).prop_flat_map(|(r, c)| logits(r, c)), t in 0.01..1000.0f64) {
        let p = softmax_rows(&z.mapv(|v| v / t));
        for (a, b) in p.rows().into_iter().zip(z.rows()) {
            prop_assert_eq!(argmax(a), argmax(b));
        }
    }

    #[test]
    fn ce_matches_brute_force(z in (1usize..8, 2usize..8).prop_flat_map(|(r, c)| logits(r, c)), seed in any::<u64>()) {
        let labels: Vec<usize> = (0..z.nrows()).map(|i| ((seed >> (i % 32)) as usize + i) % z.ncols()).collect();
        let (got, grad) = ce_loss_from_logits(&z, &labels).unwrap();
        let mut want = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let lse = z.row(i).iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - z[[i, y]];
        }
        want /= labels.len() as f64;
        prop_assert!((got - want).abs() <= 1e-6 * (1.0 + want.abs()));
        for i in 0..z.nrows() {
            prop_assert!(grad.row(i).sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn mlm_matches_brute_force(z in logits(5, 7), picks in vec((0usize..5, 0u32..7), 1..10)) {
        let targets: Vec<MaskTarget> = picks.iter().map(|&(pos, original)| MaskTarget { row: 0, pos, original }).collect();
        let got = mlm_loss(std::slice::from_ref(&z), &targets).unwrap();
        let mut want = 0.0;
        for t in &targets {
            let lse = z.row(t.pos).iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - z[[t.pos, t.original as usize]];
        }
        want /= targets.len() as f64;
        prop_assert_eq!(got.num_targets, targets.len());
        prop_assert!((got.value - want).abs() <= 1e-6 * (1.0 + want.abs()));
    }
}

fn backbone() -> ToyBackbone {
    let ds = toy_intent_dataset(4, 10, 2, 0);
    let texts = ds.split(Split::Train).iter().map(|u| u.text.as_str());
    ToyBackbone::new(ToyConfig::default(), Vocab::build(texts, 500))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn masking_never_touches_specials(seed in any::<u64>(), p in 0.0..1.0f64) {
        let bb = backbone();
        let texts = ["i lost my card", "what is the balance", "send money please now", "[MASK] card zzz unknown"];
        let batch = bb.tokenize(&texts);
        let m = apply_masking(&batch, bb.vocab(), &MaskingScheme { mask_prob: p, rng_seed: seed, ..Default::default() }).unwrap();
        for t in &m.targets {
            prop_assert!(!bb.vocab().is_special(t.original));
            prop_assert_eq!(batch.ids[t.row][t.pos], t.original);
        }
        for (row, ids) in batch.ids.iter().enumerate() {
            for (pos, id) in ids.iter().enumerate() {
                if bb.vocab().is_special(*id) {
                    prop_assert_eq!(m.batch.ids[row][pos], *id);
                }
            }
        }
        prop_assert_eq!(&m.batch.lengths, &batch.lengths);
    }

    #[test]
    fn masking_is_deterministic_per_seed(seed in any::<u64>()) {
        let bb = backbone();
        let batch = bb.tokenize(&["i lost my card again", "send money to my friend"]);
        let scheme = MaskingScheme { rng_seed: seed, mask_prob: 0.5, ..Default::default() };
        prop_assert_eq!(apply_masking(&batch, bb.vocab(), &scheme).unwrap(), apply_masking(&batch, bb.vocab(), &scheme).unwrap());
    }

    #[test]
    fn sampler_is_exact_and_deterministic(k in 1usize..=8, seed in any::<u64>()) {
        let ds = toy_intent_dataset(3, 8, 4, 2);
        let a = sample_episode(&ds, k, seed).unwrap();
        prop_assert_eq!(&a, &sample_episode(&ds, k, seed).unwrap());
        for label in &ds.label_set {
            prop_assert_eq!(a.items_for(label).len(), k);
        }
        prop_assert_eq!(a.eval_pool.len(), ds.split(Split::Dev).len() + ds.split(Split::Test).len());
    }

    #[test]
    fn oversized_k_is_rejected(extra in 1usize..5, seed in any::<u64>()) {
        let ds = toy_intent_dataset(3, 4, 2, 1);
        prop_assert!(sample_episode(&ds, 4 + extra, seed).is_err());
    }
}
