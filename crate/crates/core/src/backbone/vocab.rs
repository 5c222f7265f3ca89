use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";

/// Word-level token inventory with BERT-style special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
    mask: Option<u32>,
}

/// Lowercased alphanumeric runs; an apostrophe inside a word is kept.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = c == '\''
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> io::Result<Self> {
        let index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if index.len() != tokens.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "duplicate vocabulary entries"));
        }
        let need = |name: &str| {
            index.get(name).copied().ok_or_else(|| {
                io::Error::new(io::ErrorKind::InvalidData, format!("vocabulary lacks {name}"))
            })
        };
        Ok(Self {
            pad: need(PAD_TOKEN)?,
            unk: need(UNK_TOKEN)?,
            cls: need(CLS_TOKEN)?,
            sep: need(SEP_TOKEN)?,
            mask: index.get(MASK_TOKEN).copied(),
            tokens,
            index,
        })
    }

    /// Specials first, then words by descending frequency (ties alphabetical), capped at `max_size`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let room = max_size.saturating_sub(tokens.len());
        tokens.extend(words.into_iter().take(room).map(|(w, _)| w));
        Self::from_tokens(tokens).expect("built vocabulary has all specials")
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let raw = fs::read_to_string(path)?;
        Self::from_tokens(raw.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        fs::write(path, out)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }
    pub fn unk_id(&self) -> u32 {
        self.unk
    }
    pub fn cls_id(&self) -> u32 {
        self.cls
    }
    pub fn sep_id(&self) -> u32 {
        self.sep
    }
    pub fn mask_id(&self) -> Option<u32> {
        self.mask
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Structural tokens that masking must never touch. `[UNK]` is ordinary content.
    pub fn is_special(&self, id: u32) -> bool {
        id == self.pad || id == self.cls || id == self.sep || Some(id) == self.mask
    }

    /// Ids that random replacement may draw from.
    pub fn ordinary_ids(&self) -> Vec<u32> {
        (0..self.tokens.len() as u32).filter(|id| !self.is_special(*id)).collect()
    }

    /// `[CLS] words… [SEP]`, truncated to `max_len`. The flag reports truncation.
    pub fn encode(&self, text: &str, max_len: usize) -> (Vec<u32>, bool) {
        let mut ids = vec![self.cls];
        ids.extend(
            split_words(text)
                .iter()
                .map(|w| self.index.get(w).copied().unwrap_or(self.unk)),
        );
        let budget = max_len.max(2) - 1;
        let truncated = ids.len() > budget;
        ids.truncate(budget);
        ids.push(self.sep);
        (ids, truncated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_lowercase_words() {
        assert_eq!(
            split_words("Where's my CARD?? It's 3-days late."),
            vec!["where's", "my", "card", "it's", "3", "days", "late"]
        );
    }

    #[test]
    fn build_orders_by_frequency_and_caps() {
        let v = Vocab::build(["b a a", "c a b"], 7);
        assert_eq!(v.len(), 7);
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.token(6), Some("b"));
        assert_eq!(v.id("c"), None);
    }

    #[test]
    fn encode_wraps_and_truncates() {
        let v = Vocab::build(["one two three four"], 100);
        let (ids, truncated) = v.encode("one two three four", 4);
        assert!(truncated);
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[0], v.cls_id());
        assert_eq!(*ids.last().unwrap(), v.sep_id());
        let (ids, truncated) = v.encode("one zebra", 64);
        assert!(!truncated);
        assert_eq!(ids[2], v.unk_id());
    }

    #[test]
    fn vocab_without_mask_still_loads() {
        let toks = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, "hi"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let v = Vocab::from_tokens(toks).unwrap();
        assert_eq!(v.mask_id(), None);
    }
}
