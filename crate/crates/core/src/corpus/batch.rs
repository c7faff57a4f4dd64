use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{encode_token, Vocab, CHAR_PAD, MAX_CHARS, WORD_PAD};
use super::{CasingClass, TagId, TaggedCorpus, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub shuffle: bool,
    /// Sort by length before windowing so batches hold similar lengths.
    pub bucket: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            batch_size: 64,
            shuffle: true,
            bucket: true,
        }
    }
}

/// Padded `b x w` grids (characters `b x w x 52`), row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    b: usize,
    w: usize,
    word_ids: Vec<usize>,
    char_ids: Vec<usize>,
    casing_ids: Vec<usize>,
    tag_ids: Vec<TagId>,
    mask: Vec<bool>,
    lengths: Vec<usize>,
    sources: Vec<usize>,
}

impl Batch {
    /// Encodes untagged or tagged sentences; `tags`, when given, must align
    /// with `sentences`. `sources` records where each row came from.
    pub fn encode(
        sentences: &[&[Token]],
        tags: Option<&[&[TagId]]>,
        sources: Vec<usize>,
        vocab: &Vocab,
    ) -> Batch {
        assert_eq!(sentences.len(), sources.len());
        let b = sentences.len();
        let w = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
        let cells = b * w;
        let mut batch = Batch {
            b,
            w,
            word_ids: vec![WORD_PAD; cells],
            char_ids: vec![CHAR_PAD; cells * MAX_CHARS],
            casing_ids: vec![CasingClass::Padding.id(); cells],
            tag_ids: vec![0; cells],
            mask: vec![false; cells],
            lengths: sentences.iter().map(|s| s.len()).collect(),
            sources,
        };
        let normalize = vocab.options().normalize;
        for (row, tokens) in sentences.iter().enumerate() {
            for (col, token) in tokens.iter().enumerate() {
                let cell = row * w + col;
                let enc = encode_token(token, vocab, normalize);
                batch.word_ids[cell] = enc.word;
                batch.casing_ids[cell] = enc.casing;
                batch.char_ids[cell * MAX_CHARS..(cell + 1) * MAX_CHARS]
                    .copy_from_slice(&enc.chars);
                batch.mask[cell] = true;
                if let Some(tags) = tags {
                    batch.tag_ids[cell] = tags[row][col];
                }
            }
        }
        batch
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn word_ids(&self) -> &[usize] {
        &self.word_ids
    }

    pub fn char_ids(&self) -> &[usize] {
        &self.char_ids
    }

    pub fn casing_ids(&self) -> &[usize] {
        &self.casing_ids
    }

    pub fn tag_ids(&self) -> &[TagId] {
        &self.tag_ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// True token count of each row.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Position of each row in the sentence order the batch was built from.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn token_count(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Characters of the token at (`row`, `col`).
    pub fn chars_at(&self, row: usize, col: usize) -> &[usize] {
        let cell = row * self.w + col;
        &self.char_ids[cell * MAX_CHARS..(cell + 1) * MAX_CHARS]
    }
}

/// Groups the corpus's sentences into padded batches of at most
/// `batch_size`. Shuffling is a deterministic function of `seed`.
pub fn make_batches(
    corpus: &TaggedCorpus,
    vocab: &Vocab,
    options: &BatchOptions,
    seed: u64,
) -> Vec<Batch> {
    assert!(options.batch_size >= 1, "batch_size must be at least 1");
    let sentences: Vec<_> = corpus.sentences().collect();
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if options.shuffle {
        order.shuffle(&mut rng);
    }
    if options.bucket {
        order.sort_by_key(|&i| sentences[i].len());
    }
    let mut groups: Vec<&[usize]> = order.chunks(options.batch_size).collect();
    if options.shuffle && options.bucket {
        groups.shuffle(&mut rng);
    }
    groups
        .into_iter()
        .map(|group| {
            let tokens: Vec<&[Token]> = group.iter().map(|&i| sentences[i].tokens()).collect();
            let tags: Vec<&[TagId]> = group.iter().map(|&i| sentences[i].tags()).collect();
            Batch::encode(&tokens, Some(&tags), group.to_vec(), vocab)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_token, EncodeOptions, SyntheticSpec, generate_synthetic_corpus};

    fn corpus(sentences: usize) -> TaggedCorpus {
        let spec = SyntheticSpec {
            sentences,
            ..SyntheticSpec::default()
        };
        generate_synthetic_corpus(&spec, 3)
    }

    #[test]
    fn batch_sizes_follow_arithmetic() {
        let c = corpus(130);
        let vocab = Vocab::new(Vec::<String>::new(), EncodeOptions::default());
        let plain = BatchOptions {
            batch_size: 64,
            shuffle: false,
            bucket: false,
        };
        let sizes: Vec<usize> = make_batches(&c, &vocab, &plain, 0).iter().map(Batch::b).collect();
        assert_eq!(sizes, [64, 64, 2]);

        let mut shuffled: Vec<usize> = make_batches(&c, &vocab, &BatchOptions::default(), 9)
            .iter()
            .map(Batch::b)
            .collect();
        shuffled.sort();
        assert_eq!(shuffled, [2, 64, 64]);
    }

    #[test]
    fn grids_and_mask_are_consistent() {
        let c = corpus(20);
        let sentences: Vec<_> = c.sentences().collect();
        let vocab = Vocab::new(
            sentences[0].tokens().iter().map(|t| t.as_str().to_lowercase()),
            EncodeOptions::default(),
        );
        for batch in make_batches(&c, &vocab, &BatchOptions { batch_size: 7, ..Default::default() }, 4) {
            let (b, w) = (batch.b(), batch.w());
            assert_eq!(batch.word_ids().len(), b * w);
            assert_eq!(batch.char_ids().len(), b * w * MAX_CHARS);
            assert_eq!(batch.mask().len(), b * w);
            for row in 0..b {
                let real = batch.mask()[row * w..(row + 1) * w].iter().filter(|&&m| m).count();
                assert_eq!(real, batch.lengths()[row]);
                let sentence = sentences[batch.sources()[row]];
                assert_eq!(real, sentence.len());
                for col in 0..w {
                    let cell = row * w + col;
                    if col < real {
                        let enc = encode_token(&sentence.tokens()[col], &vocab, false);
                        assert_eq!(batch.word_ids()[cell], enc.word);
                        assert_eq!(batch.casing_ids()[cell], enc.casing);
                        assert_eq!(batch.chars_at(row, col), &enc.chars[..]);
                        assert_eq!(batch.tag_ids()[cell], sentence.tags()[col]);
                    } else {
                        assert_eq!(batch.casing_ids()[cell], CasingClass::Padding.id());
                        assert_eq!(batch.word_ids()[cell], WORD_PAD);
                        assert!(batch.chars_at(row, col).iter().all(|&c| c == CHAR_PAD));
                    }
                }
            }
        }
    }

    #[test]
    fn shuffle_is_seeded() {
        let c = corpus(50);
        let vocab = Vocab::new(Vec::<String>::new(), EncodeOptions::default());
        let opts = BatchOptions { batch_size: 8, ..Default::default() };
        let a = make_batches(&c, &vocab, &opts, 1);
        let b = make_batches(&c, &vocab, &opts, 1);
        let z = make_batches(&c, &vocab, &opts, 2);
        assert_eq!(a, b);
        assert_ne!(
            a.iter().flat_map(|x| x.sources().to_vec()).collect::<Vec<_>>(),
            z.iter().flat_map(|x| x.sources().to_vec()).collect::<Vec<_>>()
        );
    }
}
