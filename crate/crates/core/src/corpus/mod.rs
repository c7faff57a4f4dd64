//! Annotated corpora: tokens, BIO label schemes, column-format I/O, and the
//! three input channels (word, character, casing) fed to the tagger.

mod batch;
mod casing;
mod normalize;
mod sample;
mod synthetic;
mod vocab;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{make_batches, Batch, BatchOptions};
pub use casing::{casing_of, CasingClass};
pub use normalize::normalize_token;
pub(crate) use normalize::normalize_str;
pub use sample::sample_few_shot;
pub use synthetic::{
    generate_domain_pair, generate_synthetic_corpus, DomainPair, DomainPairSpec, SyntheticLexicon, SyntheticSpec,
};
pub use vocab::{
    encode_token, CharIndex, EncodeOptions, EncodedToken, Vocab, CHAR_PAD, CHAR_UNK, CHAR_VOCAB,
    MAX_CHARS, WORD_PAD, WORD_UNK,
};

/// Dense tag index under a [`LabelScheme`]: `0` is `O`, then `B-`/`I-` pairs
/// in category order.
pub type TagId = usize;

/// A single pre-tokenized word. Never empty, never contains whitespace.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(Error::config("token must not be empty"));
        }
        if surface.chars().any(char::is_whitespace) {
            return Err(Error::config(format!(
                "token {surface:?} contains whitespace"
            )));
        }
        Ok(Token(surface))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Token {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Token::new(value)
    }
}

impl From<Token> for String {
    fn from(token: Token) -> Self {
        token.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A decoded BIO tag. Category fields index into [`LabelScheme::categories`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

impl Tag {
    pub fn category(self) -> Option<usize> {
        match self {
            Tag::Outside => None,
            Tag::Begin(c) | Tag::Inside(c) => Some(c),
        }
    }
}

/// Ordered entity categories. Induces `1 + 2 * categories.len()` BIO tags.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelScheme {
    categories: Vec<String>,
}

impl LabelScheme {
    pub fn new<I, S>(categories: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let categories: Vec<String> = categories.into_iter().map(Into::into).collect();
        if categories.is_empty() {
            return Err(Error::config("label scheme needs at least one category"));
        }
        let mut seen = HashSet::new();
        for c in &categories {
            if c.is_empty() || c.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("invalid category name {c:?}")));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::config(format!("duplicate category {c:?}")));
            }
        }
        Ok(LabelScheme { categories })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn n_tags(&self) -> usize {
        1 + 2 * self.categories.len()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn tag_id(&self, tag: Tag) -> TagId {
        match tag {
            Tag::Outside => 0,
            Tag::Begin(c) => 1 + 2 * c,
            Tag::Inside(c) => 2 + 2 * c,
        }
    }

    /// Panics if `id >= n_tags()`.
    pub fn tag(&self, id: TagId) -> Tag {
        assert!(id < self.n_tags(), "tag id {id} out of range");
        match id {
            0 => Tag::Outside,
            n if n % 2 == 1 => Tag::Begin((n - 1) / 2),
            n => Tag::Inside((n - 2) / 2),
        }
    }

    pub fn tag_name(&self, id: TagId) -> String {
        match self.tag(id) {
            Tag::Outside => "O".to_string(),
            Tag::Begin(c) => format!("B-{}", self.categories[c]),
            Tag::Inside(c) => format!("I-{}", self.categories[c]),
        }
    }

    pub fn parse_tag(&self, name: &str) -> Option<TagId> {
        let (prefix, cat) = split_tag(name)?;
        let Some(cat) = cat else {
            return Some(0);
        };
        let c = self.category_index(cat)?;
        Some(match prefix {
            'B' => self.tag_id(Tag::Begin(c)),
            _ => self.tag_id(Tag::Inside(c)),
        })
    }

    /// Categories of both schemes, `self` first, then new ones from `other`.
    pub fn union(&self, other: &LabelScheme) -> LabelScheme {
        let mut categories = self.categories.clone();
        for c in &other.categories {
            if !categories.contains(c) {
                categories.push(c.clone());
            }
        }
        LabelScheme { categories }
    }
}

/// Splits `O`, `B-x`, `I-x`. Returns `None` for anything else.
fn split_tag(name: &str) -> Option<(char, Option<&str>)> {
    if name == "O" {
        return Some(('O', None));
    }
    let (prefix, cat) = name.split_once('-')?;
    match prefix {
        "B" | "I" if !cat.is_empty() => Some((prefix.chars().next()?, Some(cat))),
        _ => None,
    }
}

/// Rewrites `I-x` that follows `O` or a different category as `B-x`.
/// Returns the number of tags changed.
pub fn repair_bio(tags: &mut [TagId], scheme: &LabelScheme) -> usize {
    let mut repaired = 0;
    let mut prev = Tag::Outside;
    for id in tags.iter_mut() {
        let mut tag = scheme.tag(*id);
        if let Tag::Inside(c) = tag {
            if prev.category() != Some(c) {
                tag = Tag::Begin(c);
                *id = scheme.tag_id(tag);
                repaired += 1;
            }
        }
        prev = tag;
    }
    repaired
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    tokens: Vec<Token>,
    tags: Vec<TagId>,
}

impl TaggedSentence {
    /// The tag sequence is BIO-repaired against `scheme`.
    pub fn new(tokens: Vec<Token>, mut tags: Vec<TagId>, scheme: &LabelScheme) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::shape(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        if tokens.is_empty() {
            return Err(Error::config("sentence must contain at least one token"));
        }
        if let Some(bad) = tags.iter().find(|&&t| t >= scheme.n_tags()) {
            return Err(Error::config(format!(
                "tag id {bad} outside scheme of {} tags",
                scheme.n_tags()
            )));
        }
        repair_bio(&mut tags, scheme);
        Ok(TaggedSentence { tokens, tags })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn tags(&self) -> &[TagId] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<TaggedSentence>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedCorpus {
    documents: Vec<Document>,
    scheme: LabelScheme,
}

impl TaggedCorpus {
    pub fn new(documents: Vec<Document>, scheme: LabelScheme) -> Result<Self> {
        let mut ids = HashSet::new();
        for doc in &documents {
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::config(format!("duplicate document id {:?}", doc.id)));
            }
            for s in &doc.sentences {
                if let Some(bad) = s.tags.iter().find(|&&t| t >= scheme.n_tags()) {
                    return Err(Error::config(format!(
                        "document {:?}: tag id {bad} outside scheme",
                        doc.id
                    )));
                }
            }
        }
        let corpus = TaggedCorpus { documents, scheme };
        if corpus.sentence_count() == 0 {
            return Err(Error::EmptyInput("corpus has no sentences".into()));
        }
        Ok(corpus)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn sentences(&self) -> impl Iterator<Item = &TaggedSentence> + '_ {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn token_count(&self) -> usize {
        self.sentences().map(TaggedSentence::len).sum()
    }

    /// Re-expresses every tag under `scheme`, which must contain all of this
    /// corpus's categories.
    pub fn remap(&self, scheme: &LabelScheme) -> Result<TaggedCorpus> {
        let mut table = Vec::with_capacity(self.scheme.n_tags());
        for id in 0..self.scheme.n_tags() {
            let name = self.scheme.tag_name(id);
            let mapped = scheme.parse_tag(&name).ok_or_else(|| {
                Error::SchemeMismatch(format!("tag {name} not present in target scheme"))
            })?;
            table.push(mapped);
        }
        let documents = self
            .documents
            .iter()
            .map(|d| Document {
                id: d.id.clone(),
                sentences: d
                    .sentences
                    .iter()
                    .map(|s| TaggedSentence {
                        tokens: s.tokens.clone(),
                        tags: s.tags.iter().map(|&t| table[t]).collect(),
                    })
                    .collect(),
            })
            .collect();
        TaggedCorpus::new(documents, scheme.clone())
    }

    /// The same tokens and documents carrying `tags`, one sequence per
    /// sentence in corpus order (e.g. model predictions).
    pub fn with_tags(&self, tags: &[Vec<TagId>]) -> Result<TaggedCorpus> {
        if tags.len() != self.sentence_count() {
            return Err(Error::shape(format!(
                "{} tag sequences for {} sentences",
                tags.len(),
                self.sentence_count()
            )));
        }
        let mut next = tags.iter();
        let mut documents = Vec::with_capacity(self.documents.len());
        for d in &self.documents {
            let mut sentences = Vec::with_capacity(d.sentences.len());
            for s in &d.sentences {
                let t = next.next().expect("length checked");
                sentences.push(TaggedSentence::new(s.tokens.clone(), t.clone(), &self.scheme)?);
            }
            documents.push(Document {
                id: d.id.clone(),
                sentences,
            });
        }
        TaggedCorpus::new(documents, self.scheme.clone())
    }

    /// Splits every sentence into its own document, so that sampling operates
    /// on sentences.
    pub fn sentences_as_documents(&self) -> TaggedCorpus {
        let documents = self
            .sentences()
            .enumerate()
            .map(|(i, s)| Document {
                id: format!("doc-{i}"),
                sentences: vec![s.clone()],
            })
            .collect();
        TaggedCorpus {
            documents,
            scheme: self.scheme.clone(),
        }
    }

    /// Keeps the documents whose ids are in `ids`, preserving corpus order.
    pub(crate) fn select(&self, ids: &HashSet<&str>) -> TaggedCorpus {
        TaggedCorpus {
            documents: self
                .documents
                .iter()
                .filter(|d| ids.contains(d.id.as_str()))
                .cloned()
                .collect(),
            scheme: self.scheme.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub documents: usize,
    pub sentences: usize,
    pub tokens: usize,
    /// `I-` tags rewritten to `B-` because they did not continue an entity.
    pub repaired_tags: usize,
}

/// Parses column-format annotated text; see [`parse_conll_with_stats`].
pub fn parse_conll<R: BufRead>(source: R) -> Result<TaggedCorpus> {
    let (corpus, stats) = parse_conll_with_stats(source)?;
    if stats.repaired_tags > 0 {
        log::warn!(
            "repaired {} I- tags that did not continue an entity",
            stats.repaired_tags
        );
    }
    Ok(corpus)
}

/// One `token tag` pair per line (tab or space separated; the 4-column
/// CoNLL-2003 layout uses its first and last columns). Blank lines end
/// sentences and `-DOCSTART-` starts a new document. The label scheme is the
/// sorted set of observed categories.
pub fn parse_conll_with_stats<R: BufRead>(source: R) -> Result<(TaggedCorpus, ParseStats)> {
    struct RawSentence {
        tokens: Vec<Token>,
        tags: Vec<(char, Option<String>)>,
    }

    let mut docs: Vec<Vec<RawSentence>> = vec![Vec::new()];
    let mut current = RawSentence {
        tokens: Vec::new(),
        tags: Vec::new(),
    };
    let mut categories = BTreeSet::new();
    let mut saw_line = false;

    fn flush(current: &mut RawSentence, docs: &mut [Vec<RawSentence>]) {
        if !current.tokens.is_empty() {
            let done = RawSentence {
                tokens: std::mem::take(&mut current.tokens),
                tags: std::mem::take(&mut current.tags),
            };
            docs.last_mut().expect("at least one document").push(done);
        }
    }

    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        saw_line |= !line.trim().is_empty();
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut current, &mut docs);
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            flush(&mut current, &mut docs);
            if !docs.last().is_some_and(Vec::is_empty) {
                docs.push(Vec::new());
            }
            continue;
        }
        let (token, tag) = match cols.len() {
            2 => (cols[0], cols[1]),
            4 => (cols[0], cols[3]),
            n => {
                return Err(Error::parse(
                    lineno,
                    format!("expected 2 or 4 columns, found {n}"),
                ))
            }
        };
        let (prefix, cat) = split_tag(tag).ok_or_else(|| {
            Error::parse(lineno, format!("tag {tag:?} is not O, B-<cat> or I-<cat>"))
        })?;
        if let Some(cat) = cat {
            categories.insert(cat.to_string());
        }
        current
            .tokens
            .push(Token::new(token).map_err(|e| Error::parse(lineno, e.to_string()))?);
        current.tags.push((prefix, cat.map(str::to_string)));
    }
    flush(&mut current, &mut docs);

    if !saw_line {
        return Err(Error::EmptyInput("no annotated lines".into()));
    }
    if categories.is_empty() {
        // An all-O corpus still needs a valid scheme.
        categories.insert("ENTITY".to_string());
    }
    let scheme = LabelScheme::new(categories)?;

    let mut stats = ParseStats::default();
    let mut documents = Vec::new();
    for raw_doc in docs.into_iter().filter(|d| !d.is_empty()) {
        let mut sentences = Vec::with_capacity(raw_doc.len());
        for raw in raw_doc {
            let mut tags: Vec<TagId> = raw
                .tags
                .iter()
                .map(|(prefix, cat)| {
                    let tag = match (prefix, cat) {
                        (_, None) => Tag::Outside,
                        ('B', Some(c)) => Tag::Begin(scheme.category_index(c).expect("seen")),
                        (_, Some(c)) => Tag::Inside(scheme.category_index(c).expect("seen")),
                    };
                    scheme.tag_id(tag)
                })
                .collect();
            stats.repaired_tags += repair_bio(&mut tags, &scheme);
            stats.tokens += tags.len();
            sentences.push(TaggedSentence {
                tokens: raw.tokens,
                tags,
            });
        }
        stats.sentences += sentences.len();
        documents.push(Document {
            id: format!("doc-{}", documents.len()),
            sentences,
        });
    }
    stats.documents = documents.len();
    let corpus = TaggedCorpus::new(documents, scheme)?;
    Ok((corpus, stats))
}

/// Writes the two-column form read by [`parse_conll`].
pub fn write_conll<W: Write>(corpus: &TaggedCorpus, mut out: W) -> Result<()> {
    for doc in corpus.documents() {
        writeln!(out, "-DOCSTART- O")?;
        writeln!(out)?;
        for sentence in &doc.sentences {
            for (token, &tag) in sentence.tokens.iter().zip(&sentence.tags) {
                writeln!(out, "{}\t{}", token, corpus.scheme.tag_name(tag))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<TaggedCorpus> {
        parse_conll(text.as_bytes())
    }

    #[test]
    fn minimal_corpus() {
        let corpus = parse("Aspirin B-Medication\n81mg B-Dosage\n\n").unwrap();
        assert_eq!(corpus.documents().len(), 1);
        assert_eq!(corpus.sentence_count(), 1);
        assert_eq!(corpus.token_count(), 2);
        assert_eq!(
            corpus.scheme().categories(),
            &["Dosage".to_string(), "Medication".to_string()]
        );
    }

    #[test]
    fn docstart_splits_documents() {
        let text = "-DOCSTART- O\n\na O\nb B-X\n\n-DOCSTART- O\n\nc I-X\n\nd O\n";
        let corpus = parse(text).unwrap();
        assert_eq!(corpus.documents().len(), 2);
        assert_eq!(corpus.documents()[0].sentences.len(), 1);
        assert_eq!(corpus.documents()[1].sentences.len(), 2);
        assert_eq!(corpus.documents()[1].id, "doc-1");
    }

    #[test]
    fn single_column_line_is_error() {
        let err = parse("a O\ntoken\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_tag_is_error() {
        assert!(matches!(parse("a X-Y\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("a B-\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(parse(""), Err(Error::EmptyInput(_))));
        assert!(matches!(parse("\n\n"), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn four_column_and_crlf() {
        let text = "EU NNP B-NP B-ORG\r\nrejects VBZ B-VP O\r\n\r\n";
        let corpus = parse(text).unwrap();
        let s = corpus.sentences().next().unwrap();
        assert_eq!(s.tokens()[0].as_str(), "EU");
        assert_eq!(corpus.scheme().tag_name(s.tags()[0]), "B-ORG");
    }

    #[test]
    fn invalid_continuations_are_repaired() {
        let text = "a O\nb I-X\nc I-Y\nd I-Y\n";
        let (corpus, stats) = parse_conll_with_stats(text.as_bytes()).unwrap();
        assert_eq!(stats.repaired_tags, 2);
        let s = corpus.sentences().next().unwrap();
        let names: Vec<String> = s.tags().iter().map(|&t| corpus.scheme().tag_name(t)).collect();
        assert_eq!(names, ["O", "B-X", "B-Y", "I-Y"]);
    }

    #[test]
    fn scheme_tag_layout() {
        let scheme = LabelScheme::new(["A", "B"]).unwrap();
        assert_eq!(scheme.n_tags(), 5);
        let names: Vec<String> = (0..5).map(|i| scheme.tag_name(i)).collect();
        assert_eq!(names, ["O", "B-A", "I-A", "B-B", "I-B"]);
        for i in 0..5 {
            assert_eq!(scheme.parse_tag(&scheme.tag_name(i)), Some(i));
        }
        assert!(LabelScheme::new(Vec::<String>::new()).is_err());
        assert!(LabelScheme::new(["A", "A"]).is_err());
    }

    #[test]
    fn remap_onto_superset() {
        let corpus = parse("a B-X\nb I-X\n").unwrap();
        let wide = LabelScheme::new(["W", "X"]).unwrap();
        let remapped = corpus.remap(&wide).unwrap();
        let s = remapped.sentences().next().unwrap();
        assert_eq!(wide.tag_name(s.tags()[0]), "B-X");
        assert_eq!(wide.tag_name(s.tags()[1]), "I-X");
        let narrow = LabelScheme::new(["Y"]).unwrap();
        assert!(matches!(corpus.remap(&narrow), Err(Error::SchemeMismatch(_))));
    }

    #[test]
    fn token_rejects_whitespace() {
        assert!(Token::new("").is_err());
        assert!(Token::new("a b").is_err());
        assert!(Token::new("ab").is_ok());
    }
}
