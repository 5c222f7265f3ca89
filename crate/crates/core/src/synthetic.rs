//! Small generated intent datasets for smoke runs and tests.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{IntentDataset, LabeledUtterance, Split};

const FILLER: &[&str] = &[
    "please", "can", "you", "help", "me", "i", "my", "now", "today", "want", "to", "the", "need", "with",
];

const INTENTS: &[(&str, &[&str])] = &[
    ("card_lost", &["lost", "card", "stolen", "missing", "wallet", "misplaced"]),
    ("balance", &["balance", "account", "funds", "much", "left", "statement"]),
    ("transfer", &["transfer", "send", "money", "payment", "recipient", "wire"]),
    ("greeting", &["hello", "hi", "morning", "hey", "greetings", "evening"]),
    ("exchange", &["exchange", "rate", "currency", "euro", "dollar", "convert"]),
    ("pin", &["pin", "code", "reset", "forgot", "unlock", "blocked"]),
];

/// One utterance: two class keywords among two to four shared filler words.
fn utterance(keywords: &[&str], rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = keywords.choose_multiple(rng, 2).copied().collect();
    for _ in 0..rng.random_range(2..=4) {
        words.push(FILLER.choose(rng).expect("non-empty filler"));
    }
    words.shuffle(rng);
    words.join(" ")
}

/// A balanced dataset over the first `num_labels` built-in intents (at most 6).
pub fn toy_intent_dataset(num_labels: usize, train_per_label: usize, eval_per_label: usize, seed: u64) -> IntentDataset {
    assert!((2..=INTENTS.len()).contains(&num_labels), "2 to {} labels", INTENTS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits: BTreeMap<Split, Vec<LabeledUtterance>> = BTreeMap::new();
    for (split, n) in [
        (Split::Train, train_per_label),
        (Split::Dev, eval_per_label.div_ceil(2)),
        (Split::Test, eval_per_label / 2),
    ] {
        let rows = splits.entry(split).or_default();
        for _ in 0..n {
            for (label, keywords) in &INTENTS[..num_labels] {
                rows.push(LabeledUtterance::new(utterance(keywords, &mut rng), *label));
            }
        }
    }
    splits.retain(|_, v| !v.is_empty());
    let labels = INTENTS[..num_labels].iter().map(|(l, _)| l.to_string()).collect();
    IntentDataset::from_splits("toy", splits, Some(labels)).expect("generated dataset is valid")
}

/// Background sentences built from the same word pools, unlabeled.
pub fn toy_background(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (_, kw) = INTENTS.choose(&mut rng).expect("intents");
            utterance(kw, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = toy_intent_dataset(4, 10, 6, 1);
        assert_eq!(a.num_labels(), 4);
        assert_eq!(a.split(Split::Train).len(), 40);
        assert_eq!(a.eval_pool().len(), 24);
        assert_eq!(a.content_hash(), toy_intent_dataset(4, 10, 6, 1).content_hash());
        assert_ne!(a.content_hash(), toy_intent_dataset(4, 10, 6, 2).content_hash());
    }
}
