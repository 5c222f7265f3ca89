use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GenerationError, GenerationRequest, PromptTemplate};
use crate::backbone::split_words as vocab_split_words;

/// A causal LM that continues a prompt.
pub trait GenerativeLmClient: Send + Sync {
    /// Returns `req.num_samples` raw continuations of `req.prompt`.
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, GenerationError>;

    fn describe(&self) -> String;
}

/// Deterministic test double: sample `i` is `completions[i % len]`.
#[derive(Debug, Clone)]
pub struct StubClient {
    completions: Vec<String>,
}

impl StubClient {
    pub fn new(completions: Vec<String>) -> Self {
        Self { completions }
    }
}

impl GenerativeLmClient for StubClient {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        if self.completions.is_empty() {
            return Ok(Vec::new());
        }
        Ok((0..req.num_samples)
            .map(|i| self.completions[i % self.completions.len()].clone())
            .collect())
    }

    fn describe(&self) -> String {
        format!("stub({} completions)", self.completions.len())
    }
}

const BOS: &str = "<s>";
const EOS: &str = "</s>";

/// Local word-bigram causal LM fitted on the prompt's own utterances
/// (plus an optional background corpus) and sampled with temperature.
#[derive(Debug, Clone, Default)]
pub struct MarkovClient {
    template: PromptTemplate,
    background: Vec<String>,
    background_weight: f64,
}

impl MarkovClient {
    pub fn new(template: PromptTemplate) -> Self {
        Self {
            template,
            background: Vec::new(),
            background_weight: 0.0,
        }
    }

    pub fn with_background(mut self, texts: Vec<String>, weight: f64) -> Self {
        self.background = texts;
        self.background_weight = weight;
        self
    }

    fn fit(&self, prompt: &str) -> HashMap<String, Vec<(String, f64)>> {
        let lines = self
            .template
            .parse_lines(prompt)
            .unwrap_or_else(|_| prompt.lines().map(str::to_string).collect());
        let mut counts: HashMap<String, HashMap<String, f64>> = HashMap::new();
        let mut add = |text: &str, w: f64| {
            let words = vocab_split_words(text);
            if words.is_empty() {
                return;
            }
            let mut prev = BOS.to_string();
            for word in words.into_iter().chain(std::iter::once(EOS.to_string())) {
                *counts.entry(prev).or_default().entry(word.clone()).or_default() += w;
                prev = word;
            }
        };
        for l in &lines {
            add(l, 1.0);
        }
        if self.background_weight > 0.0 {
            for l in &self.background {
                add(l, self.background_weight);
            }
        }
        counts
            .into_iter()
            .map(|(k, v)| {
                let mut next: Vec<(String, f64)> = v.into_iter().collect();
                next.sort_by(|a, b| a.0.cmp(&b.0));
                (k, next)
            })
            .collect()
    }
}

impl GenerativeLmClient for MarkovClient {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        req.validate()?;
        let model = self.fit(&req.prompt);
        let inv_t = 1.0 / req.temperature;
        let mut out = Vec::with_capacity(req.num_samples);
        for i in 0..req.num_samples {
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed.wrapping_mul(0x100_0000_01B3).wrapping_add(i as u64));
            let mut words = Vec::new();
            let mut cur = BOS.to_string();
            while words.len() < req.max_new_tokens {
                let Some(next) = model.get(&cur) else { break };
                let weights: Vec<f64> = next.iter().map(|(_, c)| c.powf(inv_t)).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = next.len() - 1;
                for (j, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = j;
                        break;
                    }
                    u -= w;
                }
                let word = &next[pick].0;
                if word == EOS {
                    break;
                }
                words.push(word.clone());
                cur = word.clone();
            }
            out.push(format!(" {}\n", words.join(" ")));
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        "markov-bigram".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contextgen::{build_prompt, StopRule};
    use crate::corpus::LabeledUtterance;

    fn request(seed: u64) -> GenerationRequest {
        let items = [
            LabeledUtterance::new("i lost my card", "card"),
            LabeledUtterance::new("my card was stolen", "card"),
            LabeledUtterance::new("i think i lost my wallet and card", "card"),
        ];
        let refs: Vec<_> = items.iter().collect();
        GenerationRequest {
            prompt: build_prompt(&refs, &PromptTemplate::default()).unwrap(),
            temperature: 0.8,
            max_new_tokens: 12,
            num_samples: 20,
            stop: StopRule::FirstNewline,
            seed,
        }
    }

    #[test]
    fn markov_is_deterministic_and_in_domain() {
        let client = MarkovClient::new(PromptTemplate::default());
        let a = client.generate(&request(3)).unwrap();
        assert_eq!(a, client.generate(&request(3)).unwrap());
        assert_eq!(a.len(), 20);
        let vocab = ["i", "lost", "my", "card", "was", "stolen", "think", "wallet", "and"];
        for s in &a {
            for w in s.split_whitespace() {
                assert!(vocab.contains(&w), "unexpected word {w}");
            }
            assert!(s.split_whitespace().count() <= 12);
        }
    }

    #[test]
    fn stub_cycles() {
        let c = StubClient::new(vec!["a".into(), "b".into()]);
        let mut req = request(0);
        req.num_samples = 3;
        assert_eq!(c.generate(&req).unwrap(), vec!["a", "b", "a"]);
    }
}
