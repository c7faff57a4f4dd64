//! Template-generated corpora standing in for access-restricted clinical
//! data. Each category owns a surface-distinct word list and a few trigger
//! words that tend to precede its mentions; context words are shared.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::derive_seed;

use super::{Document, LabelScheme, Tag, TaggedCorpus, TaggedSentence, Token};

const CATEGORY_NAMES: &[&str] = &[
    "Medication",
    "Dosage",
    "Mode",
    "Frequency",
    "Duration",
    "Reason",
    "Problem",
    "Test",
    "Treatment",
    "Department",
];
const SUFFIXES: &[&str] = &["ol", "mg", "ex", "ly", "ium", "ase", "itis", "scan", "apy", "ward"];
const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl",
    "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub categories: usize,
    pub sentences: usize,
    pub sentences_per_doc: usize,
    /// Distinct surface forms per category.
    pub entity_vocab: usize,
    pub context_vocab: usize,
    /// Probability that a free position starts an entity mention.
    pub entity_density: f64,
    pub max_entity_len: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            categories: 2,
            sentences: 100,
            sentences_per_doc: 5,
            entity_vocab: 40,
            context_vocab: 150,
            entity_density: 0.15,
            max_entity_len: 2,
            min_sentence_len: 5,
            max_sentence_len: 14,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLexicon {
    categories: Vec<String>,
    entities: Vec<Vec<String>>,
    triggers: Vec<Vec<String>>,
    context: Vec<String>,
}

struct WordMaker {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordMaker {
    fn stem(&mut self, syllables: usize) -> String {
        (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS.choose(&mut self.rng).expect("non-empty"),
                    VOWELS.choose(&mut self.rng).expect("non-empty")
                )
            })
            .collect()
    }

    fn fresh(&mut self, mut make: impl FnMut(&mut Self) -> String) -> String {
        loop {
            let w = make(self);
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn entity(&mut self, category: usize) -> String {
        let suffix = SUFFIXES[category % SUFFIXES.len()];
        self.fresh(|m| match category % 4 {
            1 => format!("{}{}", m.rng.random_range(1..1000), suffix),
            2 => {
                let stem = m.stem(2);
                let mut chars = stem.chars();
                let first = chars.next().expect("non-empty stem").to_ascii_uppercase();
                format!("{first}{}{suffix}", chars.as_str())
            }
            _ => {
                let syllables = m.rng.random_range(1..=2);
                format!("{}{suffix}", m.stem(syllables))
            }
        })
    }

    fn plain(&mut self) -> String {
        self.fresh(|m| {
            let n = m.rng.random_range(1..=3);
            m.stem(n)
        })
    }
}

impl SyntheticLexicon {
    pub fn new(spec: &SyntheticSpec, seed: u64) -> Self {
        let mut maker = WordMaker {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
        };
        let categories = (0..spec.categories.max(1))
            .map(|i| {
                let base = CATEGORY_NAMES[i % CATEGORY_NAMES.len()];
                match i / CATEGORY_NAMES.len() {
                    0 => base.to_string(),
                    n => format!("{base}{n}"),
                }
            })
            .collect::<Vec<_>>();
        let entities = (0..categories.len())
            .map(|c| (0..spec.entity_vocab.max(1)).map(|_| maker.entity(c)).collect())
            .collect();
        let triggers = (0..categories.len())
            .map(|_| (0..2).map(|_| maker.plain()).collect())
            .collect();
        let context = (0..spec.context_vocab.max(1)).map(|_| maker.plain()).collect();
        SyntheticLexicon {
            categories,
            entities,
            triggers,
            context,
        }
    }

    /// A lexicon for a related domain: same categories and trigger words, and
    /// roughly `overlap` of each word list carried over; the rest is fresh
    /// vocabulary in the same surface style.
    pub fn related(&self, overlap: f64, seed: u64) -> Self {
        let mut maker = WordMaker {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: self.words().map(str::to_string).collect(),
        };
        let keep = |n: usize| ((n as f64) * overlap.clamp(0.0, 1.0)).round() as usize;
        let entities = self
            .entities
            .iter()
            .enumerate()
            .map(|(c, words)| {
                let k = keep(words.len());
                let mut out: Vec<String> = words[..k].to_vec();
                out.extend((k..words.len()).map(|_| maker.entity(c)));
                out
            })
            .collect();
        let k = keep(self.context.len());
        let mut context = self.context[..k].to_vec();
        context.extend((k..self.context.len()).map(|_| maker.plain()));
        SyntheticLexicon {
            categories: self.categories.clone(),
            entities,
            triggers: self.triggers.clone(),
            context,
        }
    }

    pub fn scheme(&self) -> LabelScheme {
        LabelScheme::new(self.categories.clone()).expect("generated names are valid")
    }

    pub fn words(&self) -> impl Iterator<Item = &str> + '_ {
        self.entities
            .iter()
            .flatten()
            .chain(self.triggers.iter().flatten())
            .chain(self.context.iter())
            .map(String::as_str)
    }

    pub fn entities(&self, category: usize) -> &[String] {
        &self.entities[category]
    }

    pub fn generate(&self, spec: &SyntheticSpec, seed: u64) -> TaggedCorpus {
        let scheme = self.scheme();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per_doc = spec.sentences_per_doc.max(1);
        let mut documents: Vec<Document> = Vec::new();
        for i in 0..spec.sentences.max(1) {
            let sentence = self.sentence(spec, &scheme, &mut rng);
            if i % per_doc == 0 {
                documents.push(Document {
                    id: format!("doc-{}", documents.len()),
                    sentences: Vec::with_capacity(per_doc),
                });
            }
            documents.last_mut().expect("pushed").sentences.push(sentence);
        }
        TaggedCorpus::new(documents, scheme).expect("generated corpus is valid")
    }

    fn sentence(&self, spec: &SyntheticSpec, scheme: &LabelScheme, rng: &mut ChaCha8Rng) -> TaggedSentence {
        let lo = spec.min_sentence_len.max(1);
        let hi = spec.max_sentence_len.max(lo);
        let target = rng.random_range(lo..=hi);
        let mut words: Vec<&str> = Vec::with_capacity(target + 4);
        let mut tags = Vec::with_capacity(target + 4);
        while words.len() < target {
            if spec.entity_density > 0.0 && rng.random_bool(spec.entity_density.min(1.0)) {
                let c = rng.random_range(0..self.categories.len());
                if rng.random_bool(0.7) {
                    words.push(self.triggers[c].choose(rng).expect("non-empty"));
                    tags.push(scheme.tag_id(Tag::Outside));
                }
                let len = rng.random_range(1..=spec.max_entity_len.max(1));
                for j in 0..len {
                    words.push(self.entities[c].choose(rng).expect("non-empty"));
                    tags.push(scheme.tag_id(if j == 0 { Tag::Begin(c) } else { Tag::Inside(c) }));
                }
            } else {
                words.push(self.context.choose(rng).expect("non-empty"));
                tags.push(scheme.tag_id(Tag::Outside));
            }
        }
        let tokens = words
            .into_iter()
            .map(|w| Token::new(w).expect("generated words have no whitespace"))
            .collect();
        TaggedSentence::new(tokens, tags, scheme).expect("generated tags are valid")
    }
}

/// Deterministic corpus from a fresh lexicon; equal inputs give equal corpora.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> TaggedCorpus {
    SyntheticLexicon::new(spec, seed).generate(spec, seed.wrapping_add(0x5eed))
}

/// A source domain and a related target domain sharing categories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainPairSpec {
    pub source: SyntheticSpec,
    /// Shape of target sentences; `sentences` is the training split size.
    pub target: SyntheticSpec,
    /// Fraction of each target word list shared with the source.
    pub overlap: f64,
    pub target_dev: usize,
    pub target_test: usize,
}

impl Default for DomainPairSpec {
    fn default() -> Self {
        DomainPairSpec {
            source: SyntheticSpec { sentences: 2000, ..SyntheticSpec::default() },
            target: SyntheticSpec { sentences: 200, ..SyntheticSpec::default() },
            overlap: 0.5,
            target_dev: 200,
            target_test: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    pub source: TaggedCorpus,
    pub target_train: TaggedCorpus,
    pub target_dev: TaggedCorpus,
    pub target_test: TaggedCorpus,
}

pub fn generate_domain_pair(spec: &DomainPairSpec, seed: u64) -> DomainPair {
    let lexicon = SyntheticLexicon::new(&spec.source, derive_seed(seed, 0));
    let related = lexicon.related(spec.overlap, derive_seed(seed, 1));
    let split = |n: usize, salt: u64| {
        let s = SyntheticSpec { sentences: n, ..spec.target };
        related.generate(&s, derive_seed(seed, salt))
    };
    DomainPair {
        source: lexicon.generate(&spec.source, derive_seed(seed, 2)),
        target_train: split(spec.target.sentences, 3),
        target_dev: split(spec.target_dev, 4),
        target_test: split(spec.target_test, 5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::repair_bio;

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec {
            categories: 2,
            sentences: 100,
            ..SyntheticSpec::default()
        };
        assert_eq!(generate_synthetic_corpus(&spec, 7), generate_synthetic_corpus(&spec, 7));
        assert_ne!(generate_synthetic_corpus(&spec, 7), generate_synthetic_corpus(&spec, 8));
    }

    #[test]
    fn tags_are_valid_bio_and_cover_categories() {
        let spec = SyntheticSpec {
            categories: 3,
            sentences: 200,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec, 1);
        let mut seen = HashSet::new();
        for s in corpus.sentences() {
            let mut tags = s.tags().to_vec();
            assert_eq!(repair_bio(&mut tags, corpus.scheme()), 0);
            for &t in s.tags() {
                if let Some(c) = corpus.scheme().tag(t).category() {
                    seen.insert(c);
                }
            }
        }
        assert_eq!(seen.len(), 3);
        assert_eq!(corpus.sentence_count(), 200);
    }

    #[test]
    fn zero_density_is_all_outside() {
        let spec = SyntheticSpec {
            entity_density: 0.0,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec, 2);
        assert!(corpus.sentences().all(|s| s.tags().iter().all(|&t| t == 0)));
    }

    #[test]
    fn related_lexicon_overlaps_partially() {
        let spec = SyntheticSpec::default();
        let a = SyntheticLexicon::new(&spec, 5);
        let b = a.related(0.5, 6);
        assert_eq!(a.scheme(), b.scheme());
        let aw: HashSet<&str> = a.entities(0).iter().map(String::as_str).collect();
        let shared = b.entities(0).iter().filter(|w| aw.contains(w.as_str())).count();
        assert_eq!(shared, spec.entity_vocab / 2);
    }

    #[test]
    fn domain_pair_shares_scheme_and_part_of_the_lexicon() {
        let spec = DomainPairSpec {
            source: SyntheticSpec { sentences: 50, ..SyntheticSpec::default() },
            target: SyntheticSpec { sentences: 10, ..SyntheticSpec::default() },
            target_dev: 20,
            target_test: 30,
            overlap: 0.5,
        };
        let pair = generate_domain_pair(&spec, 4);
        assert_eq!(pair.source.sentence_count(), 50);
        assert_eq!(pair.target_train.sentence_count(), 10);
        assert_eq!(pair.target_test.sentence_count(), 30);
        assert_eq!(pair.source.scheme(), pair.target_dev.scheme());
        assert_eq!(pair, generate_domain_pair(&spec, 4));
        assert_ne!(pair.target_train, pair.target_dev);
    }
}
