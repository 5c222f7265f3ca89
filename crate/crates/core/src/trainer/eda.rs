//! Rule-based text perturbation: synonym replacement, random insertion, swap and deletion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::contextgen::{CorpusEntry, Origin};
use crate::corpus::{Episode, LabeledUtterance};

/// `word → synonyms`, keys lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let entries = pairs
            .into_iter()
            .map(|(w, syns)| (w.into().to_lowercase(), syns.into_iter().map(Into::into).collect()))
            .filter(|(_, s): &(String, Vec<String>)| !s.is_empty())
            .collect();
        Self { entries }
    }

    /// Tab-separated `word<TAB>syn1,syn2,…`; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let raw = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or_else(|| {
                TrainError::Contract(format!("{}:{}: expected `word<TAB>synonyms`", path.display(), i + 1))
            })?;
            let syns: Vec<String> = syns
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if !syns.is_empty() {
                entries.insert(word.trim().to_lowercase(), syns);
            }
        }
        Ok(Self { entries })
    }

    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdaOp {
    SynonymReplace,
    RandomInsert,
    RandomSwap,
    RandomDelete,
}

const OPS: [EdaOp; 4] = [
    EdaOp::SynonymReplace,
    EdaOp::RandomInsert,
    EdaOp::RandomSwap,
    EdaOp::RandomDelete,
];
const DELETE_PROB: f64 = 0.1;

/// Applies one operation to whitespace tokens. Never returns an empty sequence.
pub fn apply_eda_op(words: &[String], op: EdaOp, lexicon: &SynonymLexicon, rng: &mut impl Rng) -> Vec<String> {
    let mut out = words.to_vec();
    let with_syn: Vec<usize> = (0..words.len()).filter(|&i| lexicon.synonyms(&words[i]).is_some()).collect();
    match op {
        EdaOp::SynonymReplace => {
            if let Some(&i) = with_syn.choose(rng) {
                let syns = lexicon.synonyms(&words[i]).unwrap_or_default();
                if let Some(s) = syns.choose(rng) {
                    out[i] = s.clone();
                }
            }
        }
        EdaOp::RandomInsert => {
            if let Some(&i) = with_syn.choose(rng) {
                let syns = lexicon.synonyms(&words[i]).unwrap_or_default();
                if let Some(s) = syns.choose(rng) {
                    let at = rng.random_range(0..=out.len());
                    out.insert(at, s.clone());
                }
            }
        }
        EdaOp::RandomSwap => {
            if out.len() >= 2 {
                let a = rng.random_range(0..out.len());
                let mut b = rng.random_range(0..out.len() - 1);
                if b >= a {
                    b += 1;
                }
                out.swap(a, b);
            }
        }
        EdaOp::RandomDelete => {
            if out.len() <= 1 {
                return out;
            }
            let kept: Vec<String> = words.iter().filter(|_| !rng.random_bool(DELETE_PROB)).cloned().collect();
            out = if kept.is_empty() {
                vec![words[rng.random_range(0..words.len())].clone()]
            } else if kept.len() == words.len() {
                let drop = rng.random_range(0..words.len());
                words.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, w)| w.clone()).collect()
            } else {
                kept
            };
        }
    }
    out
}

/// Originals followed by `ops_per_item` perturbed copies of each, one random operation per copy.
pub fn eda_augment(
    items: &[LabeledUtterance],
    ops_per_item: usize,
    lexicon: Option<&SynonymLexicon>,
    seed: u64,
) -> Result<Vec<LabeledUtterance>, TrainError> {
    if ops_per_item == 0 {
        return Ok(items.to_vec());
    }
    let lexicon = lexicon.ok_or_else(|| TrainError::Capability("EDA needs a synonym lexicon".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = items.to_vec();
    for u in items {
        let words: Vec<String> = u.text.split_whitespace().map(str::to_string).collect();
        if words.is_empty() {
            continue;
        }
        for _ in 0..ops_per_item {
            let op = OPS[rng.random_range(0..OPS.len())];
            let text = apply_eda_op(&words, op, lexicon, &mut rng).join(" ");
            out.push(LabeledUtterance::new(text, u.label.clone()));
        }
    }
    Ok(out)
}

/// Perturbed copies of the episode as unlabeled context entries.
pub fn eda_corpus_entries(
    episode: &Episode,
    per_item: usize,
    lexicon: Option<&SynonymLexicon>,
    seed: u64,
) -> Result<Vec<CorpusEntry>, TrainError> {
    let augmented = eda_augment(&episode.items, per_item, lexicon, seed)?;
    Ok(augmented
        .into_iter()
        .skip(episode.items.len())
        .map(|u| CorpusEntry {
            text: u.text,
            source_label: Some(u.label),
            origin: Origin::Eda,
            prompt_seed: Some(seed),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon() -> SynonymLexicon {
        SynonymLexicon::from_pairs([("card", vec!["plastic"]), ("lost", vec!["misplaced", "dropped"])])
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn zero_ops_is_identity() {
        let items = vec![LabeledUtterance::new("i lost my card", "card")];
        assert_eq!(eda_augment(&items, 0, None, 1).unwrap(), items);
    }

    #[test]
    fn deleting_from_single_token_keeps_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(apply_eda_op(&words("hello"), EdaOp::RandomDelete, &lexicon(), &mut rng), words("hello"));
        }
    }

    #[test]
    fn deletion_never_empties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let out = apply_eda_op(&words("a b"), EdaOp::RandomDelete, &lexicon(), &mut rng);
            assert_eq!(out.len(), 1);
        }
    }

    #[test]
    fn synonym_ops_use_lexicon() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = apply_eda_op(&words("my card"), EdaOp::SynonymReplace, &lexicon(), &mut rng);
        assert_eq!(out, words("my plastic"));
        let out = apply_eda_op(&words("my card"), EdaOp::RandomInsert, &lexicon(), &mut rng);
        assert_eq!(out.len(), 3);
        assert!(out.contains(&"plastic".to_string()));
    }

    #[test]
    fn augment_is_deterministic_and_label_preserving() {
        let items = vec![
            LabeledUtterance::new("i lost my card today", "card"),
            LabeledUtterance::new("hi", "greet"),
        ];
        let a = eda_augment(&items, 3, Some(&lexicon()), 9).unwrap();
        assert_eq!(a, eda_augment(&items, 3, Some(&lexicon()), 9).unwrap());
        assert_eq!(a.len(), 8);
        assert_eq!(&a[..2], &items[..]);
        assert!(a[2..5].iter().all(|u| u.label == "card"));
        assert!(a.iter().all(|u| !u.text.trim().is_empty()));
    }

    #[test]
    fn missing_lexicon_is_capability_error() {
        let items = vec![LabeledUtterance::new("x y", "a")];
        assert!(matches!(eda_augment(&items, 1, None, 0), Err(TrainError::Capability(_))));
    }

    #[test]
    fn lexicon_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("syn.tsv");
        fs::write(&p, "# comment\nCard\tplastic, debit\n\nlost\tmisplaced\n").unwrap();
        let lex = SynonymLexicon::load(&p).unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.synonyms("card").unwrap(), ["plastic", "debit"]);
        fs::write(&p, "broken line\n").unwrap();
        assert!(SynonymLexicon::load(&p).is_err());
    }
}
