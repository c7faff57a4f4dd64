use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TaggedCorpus;
use crate::error::{Error, Result};

/// Uniformly samples `k` documents without replacement. The chosen id set
/// depends only on the set of document ids, `k` and `seed`; output keeps the
/// corpus order.
pub fn sample_few_shot(corpus: &TaggedCorpus, k: usize, seed: u64) -> Result<TaggedCorpus> {
    if k == 0 {
        return Err(Error::config("few-shot sample size must be at least 1"));
    }
    let mut ids: Vec<&str> = corpus.documents().iter().map(|d| d.id.as_str()).collect();
    if ids.is_empty() {
        return Err(Error::EmptyInput("corpus has no documents".into()));
    }
    if k >= ids.len() {
        return Ok(corpus.clone());
    }
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<&str> = index::sample(&mut rng, ids.len(), k)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    Ok(corpus.select(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, Document, SyntheticSpec};

    fn docs(n: usize) -> TaggedCorpus {
        let spec = SyntheticSpec {
            sentences: n,
            sentences_per_doc: 1,
            ..SyntheticSpec::default()
        };
        generate_synthetic_corpus(&spec, 11)
    }

    fn ids(c: &TaggedCorpus) -> Vec<String> {
        c.documents().iter().map(|d| d.id.clone()).collect()
    }

    #[test]
    fn ten_of_fifty_seven() {
        let c = docs(57);
        let s = sample_few_shot(&c, 10, 1).unwrap();
        let mut got = ids(&s);
        assert_eq!(got.len(), 10);
        got.dedup();
        assert_eq!(got.len(), 10);
    }

    #[test]
    fn saturates() {
        let c = docs(57);
        assert_eq!(sample_few_shot(&c, 100, 1).unwrap().documents().len(), 57);
    }

    #[test]
    fn deterministic_and_permutation_stable() {
        let c = docs(30);
        let a = sample_few_shot(&c, 5, 3).unwrap();
        assert_eq!(a, sample_few_shot(&c, 5, 3).unwrap());

        let mut reversed: Vec<Document> = c.documents().to_vec();
        reversed.reverse();
        let r = TaggedCorpus::new(reversed, c.scheme().clone()).unwrap();
        let mut x = ids(&a);
        let mut y = ids(&sample_few_shot(&r, 5, 3).unwrap());
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_k_is_error() {
        assert!(sample_few_shot(&docs(3), 0, 0).is_err());
    }
}
