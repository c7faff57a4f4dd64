//! Strict entity-level scoring: a predicted span counts only when category,
//! start, and end all match a gold span of the same sentence.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelScheme, Tag, TagId, TaggedCorpus};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub category: usize,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Maximal `B-x (I-x)*` runs in start order. An `I-x` that cannot continue
/// the current span opens a new one.
pub fn extract_spans(tags: &[TagId], scheme: &LabelScheme) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, &id) in tags.iter().enumerate() {
        match scheme.tag(id) {
            Tag::Inside(c) if open.is_some_and(|s| s.category == c) => {
                open.as_mut().expect("checked").end = i;
            }
            Tag::Begin(c) | Tag::Inside(c) => {
                spans.extend(open.take());
                open = Some(EntitySpan {
                    category: c,
                    start: i,
                    end: i,
                });
            }
            Tag::Outside => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<CategoryScore>,
    pub micro: Counts,
    pub token_accuracy: f64,
    pub tokens: usize,
}

impl EvalReport {
    pub fn micro_f1(&self) -> f64 {
        self.micro.f1()
    }

    /// `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut section = |prefix: &str, c: &Counts| {
            let _ = writeln!(out, "{prefix}.tp = {}", c.tp);
            let _ = writeln!(out, "{prefix}.fp = {}", c.fp);
            let _ = writeln!(out, "{prefix}.fn = {}", c.fn_);
            let _ = writeln!(out, "{prefix}.precision = {}", c.precision());
            let _ = writeln!(out, "{prefix}.recall = {}", c.recall());
            let _ = writeln!(out, "{prefix}.f1 = {}", c.f1());
        };
        section("micro", &self.micro);
        for cat in &self.categories {
            section(&format!("category.{}", cat.category), &cat.counts);
        }
        let _ = writeln!(out, "tokens = {}", self.tokens);
        let _ = writeln!(out, "token_accuracy = {}", self.token_accuracy);
        out
    }

    /// One row per category plus a final `micro` row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["category", "tp", "fp", "fn", "precision", "recall", "f1"])?;
        let rows = self
            .categories
            .iter()
            .map(|c| (c.category.as_str(), &c.counts))
            .chain([("micro", &self.micro)]);
        for (name, c) in rows {
            w.write_record([
                name.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.precision().to_string(),
                c.recall().to_string(),
                c.f1().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores `predicted` tag sequences against the gold corpus, sentence by
/// sentence in corpus order.
pub fn score(gold: &TaggedCorpus, predicted: &[Vec<TagId>]) -> Result<EvalReport> {
    let scheme = gold.scheme();
    let n_cat = scheme.categories().len();
    let mut per = vec![Counts::default(); n_cat];
    let mut correct = 0;
    let mut tokens = 0;
    let mut sentences = 0;
    for doc in gold.documents() {
        for (i, sentence) in doc.sentences.iter().enumerate() {
            let Some(pred) = predicted.get(sentences) else {
                return Err(Error::shape(format!(
                    "{} predicted sentences for a corpus of {}",
                    predicted.len(),
                    gold.sentence_count()
                )));
            };
            sentences += 1;
            if pred.len() != sentence.len() {
                return Err(Error::shape(format!(
                    "sentence {i} of document `{}` has {} tokens but {} predicted tags",
                    doc.id,
                    sentence.len(),
                    pred.len()
                )));
            }
            if let Some(&bad) = pred.iter().find(|&&t| t >= scheme.n_tags()) {
                return Err(Error::shape(format!("predicted tag id {bad} outside the scheme")));
            }
            tokens += pred.len();
            correct += pred.iter().zip(sentence.tags()).filter(|(a, b)| a == b).count();
            let g: HashSet<EntitySpan> = extract_spans(sentence.tags(), scheme).into_iter().collect();
            let p: HashSet<EntitySpan> = extract_spans(pred, scheme).into_iter().collect();
            for s in &p {
                if g.contains(s) {
                    per[s.category].tp += 1;
                } else {
                    per[s.category].fp += 1;
                }
            }
            for s in g.difference(&p) {
                per[s.category].fn_ += 1;
            }
        }
    }
    if sentences != predicted.len() {
        return Err(Error::shape(format!(
            "{} predicted sentences for a corpus of {sentences}",
            predicted.len()
        )));
    }
    let mut micro = Counts::default();
    for c in &per {
        micro.add(*c);
    }
    Ok(EvalReport {
        categories: scheme
            .categories()
            .iter()
            .zip(per)
            .map(|(name, counts)| CategoryScore {
                category: name.clone(),
                counts,
            })
            .collect(),
        micro,
        token_accuracy: if tokens == 0 { 1.0 } else { correct as f64 / tokens as f64 },
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, TaggedSentence, Token};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scheme() -> LabelScheme {
        LabelScheme::new(["Problems", "Tests"]).unwrap()
    }

    fn ids(names: &str) -> Vec<TagId> {
        let s = scheme();
        names.split_whitespace().map(|n| s.parse_tag(n).unwrap()).collect()
    }

    fn corpus(seqs: &[Vec<TagId>]) -> TaggedCorpus {
        let s = scheme();
        let sentences = seqs
            .iter()
            .map(|t| {
                let tokens = (0..t.len()).map(|i| Token::new(format!("t{i}")).unwrap()).collect();
                TaggedSentence::new(tokens, t.clone(), &s).unwrap()
            })
            .collect();
        TaggedCorpus::new(vec![Document { id: "d".into(), sentences }], s).unwrap()
    }

    #[test]
    fn spans_by_hand() {
        let s = scheme();
        let tests = s.category_index("Tests").unwrap();
        let problems = s.category_index("Problems").unwrap();
        assert_eq!(
            extract_spans(&ids("B-Tests I-Tests O B-Problems"), &s),
            vec![
                EntitySpan { category: tests, start: 0, end: 1 },
                EntitySpan { category: problems, start: 3, end: 3 },
            ]
        );
        assert!(extract_spans(&ids("O O"), &s).is_empty());
        assert_eq!(extract_spans(&ids("B-Tests B-Tests"), &s).len(), 2);
    }

    #[test]
    fn perfect_prediction() {
        let gold = vec![ids("B-Tests I-Tests O B-Problems"), ids("O B-Problems")];
        let r = score(&corpus(&gold), &gold).unwrap();
        assert_eq!(r.micro_f1(), 1.0);
        assert!(r.categories.iter().all(|c| c.counts.f1() == 1.0));
        assert_eq!(r.token_accuracy, 1.0);
    }

    #[test]
    fn one_hit_one_spurious() {
        let gold = vec![ids("B-Tests O B-Problems O")];
        let pred = vec![ids("B-Tests O O B-Tests")];
        let r = score(&corpus(&gold), &pred).unwrap();
        assert_eq!((r.micro.tp, r.micro.fp, r.micro.fn_), (1, 1, 1));
        assert_eq!((r.micro.precision(), r.micro.recall(), r.micro_f1()), (0.5, 0.5, 0.5));
    }

    #[test]
    fn length_mismatch_names_sentence() {
        let gold = vec![ids("O O"), ids("O")];
        let err = score(&corpus(&gold), &[ids("O O"), ids("O O")]).unwrap_err();
        assert!(err.to_string().contains("sentence 1"), "{err}");
        assert!(score(&corpus(&gold), &[ids("O O")]).is_err());
    }

    #[test]
    fn empty_counts_are_zero() {
        let c = Counts::default();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    /// Independent matcher: enumerate all (i, j, category) runs directly.
    fn brute_spans(tags: &[TagId], s: &LabelScheme) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for i in 0..tags.len() {
            let cat = match s.tag(tags[i]) {
                Tag::Begin(c) => c,
                Tag::Inside(c) if i == 0 || s.tag(tags[i - 1]).category() != Some(c) => c,
                _ => continue,
            };
            let mut j = i;
            while j + 1 < tags.len() && s.tag(tags[j + 1]) == Tag::Inside(cat) {
                j += 1;
            }
            out.push((cat, i, j));
        }
        out
    }

    #[test]
    fn matches_brute_force_on_random_pairs() {
        let s = scheme();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let len = rng.random_range(1..12);
            let gold: Vec<TagId> = (0..len).map(|_| rng.random_range(0..s.n_tags())).collect();
            let pred: Vec<TagId> = (0..len).map(|_| rng.random_range(0..s.n_tags())).collect();
            let c = corpus(&[gold]);
            let gold = c.sentences().next().unwrap().tags().to_vec();
            let r = score(&c, std::slice::from_ref(&pred)).unwrap();
            let g = brute_spans(&gold, &s);
            let p = brute_spans(&pred, &s);
            let tp = p.iter().filter(|x| g.contains(x)).count();
            assert_eq!(r.micro.tp, tp);
            assert_eq!(r.micro.fp, p.len() - tp);
            assert_eq!(r.micro.fn_, g.len() - tp);
            // swapping roles keeps TP
            let swapped = score(&corpus(&[pred]), &[gold]).unwrap();
            assert_eq!(swapped.micro.tp, r.micro.tp);
        }
    }

    #[test]
    fn reordering_keeps_micro_f1() {
        let a = vec![ids("B-Tests O"), ids("O B-Problems I-Problems"), ids("B-Problems")];
        let p = vec![ids("B-Tests O"), ids("O B-Problems O"), ids("O")];
        let r1 = score(&corpus(&a), &p).unwrap();
        let r2 = score(
            &corpus(&[a[2].clone(), a[0].clone(), a[1].clone()]),
            &[p[2].clone(), p[0].clone(), p[1].clone()],
        )
        .unwrap();
        assert_eq!(r1.micro_f1(), r2.micro_f1());
    }

    #[test]
    fn report_serializations() {
        let gold = vec![ids("B-Tests O B-Problems O")];
        let r = score(&corpus(&gold), &[ids("B-Tests O O O")]).unwrap();
        let kv = r.to_kv();
        assert!(kv.contains("micro.tp = 1\n"));
        assert!(kv.contains("category.Problems.fn = 1\n"));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("category,tp,fp,fn,precision,recall,f1\n"));
    }
}
