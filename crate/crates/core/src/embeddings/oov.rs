use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::corpus::normalize_str;
use crate::corpus::TaggedCorpus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OovReport {
    pub types: usize,
    pub oov_raw: usize,
    pub oov_normalized: usize,
    /// Percentage of raw OOV types recovered by normalization.
    pub reduction: f64,
}

/// Counts distinct lowercased word types missing from `emb`, before and
/// after [`normalize_token`](crate::corpus::normalize_token).
pub fn oov_report(corpus: &TaggedCorpus, emb: &EmbeddingMatrix) -> OovReport {
    let types: BTreeSet<String> = corpus
        .sentences()
        .flat_map(|s| s.tokens())
        .map(|t| t.as_str().to_lowercase())
        .collect();
    let raw: Vec<&String> = types.iter().filter(|t| !emb.contains(t)).collect();
    let recovered = raw
        .iter()
        .filter(|t| normalize_str(t).is_some_and(|n| emb.contains(n)))
        .count();
    let oov_raw = raw.len();
    let reduction = if oov_raw > 0 {
        100.0 * recovered as f64 / oov_raw as f64
    } else {
        0.0
    };
    OovReport {
        types: types.len(),
        oov_raw,
        oov_normalized: oov_raw - recovered,
        reduction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, LabelScheme, TaggedSentence, Token};

    fn corpus(words: &[&str]) -> TaggedCorpus {
        let scheme = LabelScheme::new(["X"]).unwrap();
        let tokens: Vec<Token> = words.iter().map(|w| Token::new(*w).unwrap()).collect();
        let tags = vec![0; tokens.len()];
        let sentence = TaggedSentence::new(tokens, tags, &scheme).unwrap();
        TaggedCorpus::new(
            vec![Document {
                id: "d".into(),
                sentences: vec![sentence],
            }],
            scheme,
        )
        .unwrap()
    }

    fn emb(words: &[&str]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            words.iter().map(|w| w.to_string()).collect(),
            vec![0.5; words.len()],
            1,
        )
        .unwrap()
    }

    #[test]
    fn trailing_period_recovered() {
        let r = oov_report(&corpus(&["week."]), &emb(&["week"]));
        assert_eq!((r.types, r.oov_raw, r.oov_normalized), (1, 1, 0));
        assert_eq!(r.reduction, 100.0);
    }

    #[test]
    fn crafted_counts() {
        // 100 types: 80 known, 17 plain OOV, 3 recoverable
        let mut words: Vec<String> = (0..80).map(|i| format!("k{i}")).collect();
        words.extend((0..17).map(|i| format!("u{i}")));
        words.extend(["k0.", "k1:", "+k2"].map(String::from));
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let known: Vec<String> = (0..80).map(|i| format!("k{i}")).collect();
        let known: Vec<&str> = known.iter().map(String::as_str).collect();
        let r = oov_report(&corpus(&refs), &emb(&known));
        assert_eq!((r.types, r.oov_raw, r.oov_normalized), (100, 20, 17));
        assert!((r.reduction - 15.0).abs() < 1e-12);
    }

    #[test]
    fn lowercases_types() {
        let r = oov_report(&corpus(&["The", "the", "THE"]), &emb(&["the"]));
        assert_eq!((r.types, r.oov_raw), (1, 0));
        assert_eq!(r.reduction, 0.0);
    }

    #[test]
    fn empty_table_misses_everything() {
        let empty = EmbeddingMatrix::new(vec![], vec![], 4).unwrap();
        let r = oov_report(&corpus(&["a", "b", "c."]), &empty);
        assert_eq!((r.types, r.oov_raw, r.oov_normalized), (3, 3, 3));
    }
}
