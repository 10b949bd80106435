//! Synthetic authorship corpus with a known answer.
//!
//! Each author owns a handful of signature tokens that carry a fixed share of
//! its unigram mass; the rest is spread evenly over the whole vocabulary.
//! Signature sets are disjoint while the vocabulary allows it. Every token,
//! plus the sentence terminator, gets a random embedding.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numeric::{Rng, Vector};
use crate::preprocess::VerificationInstance;
use crate::siamese::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub authors: usize,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub instances: usize,
    /// Inclusive range of sentences per document.
    pub sentences: (usize, usize),
    /// Inclusive range of tokens per sentence, the terminator included.
    pub tokens: (usize, usize),
    /// Inclusive range of known documents per instance.
    pub known_docs: (usize, usize),
    pub signature_tokens: usize,
    /// Probability mass on an author's signature tokens.
    pub signature_mass: f64,
    /// Embedding entries are uniform on `[-scale, scale)`.
    pub embedding_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            authors: 40,
            vocab_size: 200,
            embedding_dim: 20,
            instances: 800,
            sentences: (5, 15),
            tokens: (4, 12),
            known_docs: (1, 2),
            signature_tokens: 3,
            signature_mass: 0.9,
            embedding_scale: 3.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.sentences, self.tokens, self.known_docs];
        if self.authors < 2
            || self.vocab_size == 0
            || self.embedding_dim == 0
            || self.instances == 0
            || ranges.iter().any(|(lo, hi)| *lo == 0 || lo > hi)
            || self.tokens.0 < 2
            || self.signature_tokens == 0
            || self.signature_tokens > self.vocab_size
            || !(0.0..=1.0).contains(&self.signature_mass)
            || !(self.embedding_scale > 0.0 && self.embedding_scale.is_finite())
        {
            return Err(Error::Config(format!("invalid synthetic settings {self:?}")));
        }
        Ok(())
    }
}

pub const TERMINATOR: &str = ".";

pub fn token_name(index: usize) -> String {
    format!("w{index:03}")
}

/// A generated corpus with everything needed to train on it.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub instances: Vec<VerificationInstance>,
    pub embeddings: EmbeddingTable,
    /// Author of every instance's known documents.
    pub known_authors: Vec<usize>,
    pub unknown_authors: Vec<usize>,
}

struct Author {
    cumulative: Vec<f64>,
}

impl Author {
    fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Author { cumulative }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let u = rng.uniform() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

fn between(rng: &mut Rng, (lo, hi): (usize, usize)) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn document(author: &Author, config: &SyntheticConfig, rng: &mut Rng) -> String {
    let n = between(rng, config.sentences);
    let mut sentences = Vec::with_capacity(n);
    for _ in 0..n {
        let words: Vec<String> = (0..between(rng, config.tokens) - 1).map(|_| token_name(author.sample(rng))).collect();
        let mut s = words.join(" ");
        s[..1].make_ascii_uppercase();
        s.push_str(TERMINATOR);
        sentences.push(s);
    }
    sentences.join(" ")
}

/// Generates a corpus with exactly alternating labels (same, different, ...).
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let root = Rng::new(seed);
    let mut rng = root.derive(0);

    let mut embeddings = EmbeddingTable::new(config.embedding_dim);
    let random_vector = |rng: &mut Rng| Vector::from_vec((0..config.embedding_dim).map(|_| rng.uniform_range(-config.embedding_scale, config.embedding_scale)).collect());
    for t in 0..config.vocab_size {
        embeddings.insert(token_name(t), random_vector(&mut rng))?;
    }
    embeddings.insert(TERMINATOR, random_vector(&mut rng))?;

    let order = rng.permutation(config.vocab_size);
    let authors: Vec<Author> = (0..config.authors)
        .map(|a| {
            let mut weights = vec![(1.0 - config.signature_mass) / config.vocab_size as f64; config.vocab_size];
            for k in 0..config.signature_tokens {
                weights[order[(a * config.signature_tokens + k) % config.vocab_size]] +=
                    config.signature_mass / config.signature_tokens as f64;
            }
            Author::new(&weights)
        })
        .collect();

    let mut rng = root.derive(1);
    let mut instances = Vec::with_capacity(config.instances);
    let mut known_authors = Vec::with_capacity(config.instances);
    let mut unknown_authors = Vec::with_capacity(config.instances);
    for i in 0..config.instances {
        let label = if i % 2 == 0 { Label::Same } else { Label::Different };
        let a = rng.below(config.authors);
        let b = match label {
            Label::Same => a,
            Label::Different => (a + 1 + rng.below(config.authors - 1)) % config.authors,
        };
        let known = (0..between(&mut rng, config.known_docs))
            .map(|_| document(&authors[a], config, &mut rng))
            .collect();
        let unknown = document(&authors[b], config, &mut rng);
        instances.push(VerificationInstance::new(known, unknown, label)?);
        known_authors.push(a);
        unknown_authors.push(b);
    }
    Ok(SyntheticCorpus {
        instances,
        embeddings,
        known_authors,
        unknown_authors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::tokenize_document;

    #[test]
    fn corpus_matches_the_requested_shape() {
        let config = SyntheticConfig {
            instances: 60,
            ..Default::default()
        };
        let corpus = generate(&config, 7).unwrap();
        assert_eq!(corpus.instances.len(), 60);
        assert_eq!(corpus.embeddings.len(), 201);
        assert_eq!(corpus.embeddings.dim(), 20);
        let same = corpus.instances.iter().filter(|i| i.label == Label::Same).count();
        assert_eq!(same, 30);
        for (i, inst) in corpus.instances.iter().enumerate() {
            assert!((1..=2).contains(&inst.known.len()));
            assert_eq!(inst.label == Label::Same, corpus.known_authors[i] == corpus.unknown_authors[i]);
            for doc in inst.known.iter().chain([&inst.unknown]) {
                let sentences = tokenize_document(doc);
                assert!((5..=15).contains(&sentences.len()), "{doc}");
                for s in sentences {
                    assert!((4..=12).contains(&s.len()), "{s:?}");
                    assert_eq!(s.last().unwrap(), TERMINATOR);
                    assert!(s.iter().all(|t| corpus.embeddings.get(t).is_some()), "{s:?}");
                }
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let config = SyntheticConfig {
            instances: 10,
            ..Default::default()
        };
        let a = generate(&config, 1).unwrap();
        let b = generate(&config, 1).unwrap();
        let c = generate(&config, 2).unwrap();
        assert_eq!(a.instances, b.instances);
        assert_ne!(a.instances, c.instances);
    }

    #[test]
    fn sampling_follows_the_weights() {
        let author = Author::new(&[0.1, 0.6, 0.1, 0.2]);
        let mut rng = Rng::new(5);
        let hits = (0..10_000).filter(|_| author.sample(&mut rng) == 1).count();
        assert!((5800..6200).contains(&hits), "{hits}");
    }

    #[test]
    fn rejects_bad_settings() {
        let config = SyntheticConfig {
            authors: 2,
            instances: 2,
            ..Default::default()
        };
        assert!(generate(&config, 3).is_ok());
        assert!(generate(&SyntheticConfig { signature_tokens: 0, ..config.clone() }, 3).is_err());
        assert!(generate(&SyntheticConfig { signature_mass: 1.5, ..config }, 3).is_err());
    }
}
