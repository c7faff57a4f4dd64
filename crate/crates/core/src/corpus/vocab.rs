use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::casing::classify;
use super::normalize::normalize_str;
use super::{CasingClass, Token};

/// Characters kept per token; longer tokens are truncated.
pub const MAX_CHARS: usize = 52;
/// PAD, UNK, space, and the 94 printable non-space ASCII characters.
pub const CHAR_VOCAB: usize = 97;
pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;
const CHAR_SPACE: usize = 2;

pub const WORD_PAD: usize = 0;
pub const WORD_UNK: usize = 1;
const PAD_WORD: &str = "<pad>";
const UNK_WORD: &str = "<unk>";

/// Fixed character index.
#[derive(Clone, Copy, Debug, Default)]
pub struct CharIndex;

impl CharIndex {
    pub fn id(c: char) -> usize {
        match c {
            ' ' => CHAR_SPACE,
            '!'..='~' => 3 + (c as usize - '!' as usize),
            _ => CHAR_UNK,
        }
    }

    pub fn len() -> usize {
        CHAR_VOCAB
    }
}

/// How surfaces are mapped to word ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeOptions {
    pub lowercase: bool,
    /// Retry word lookups with the OOV-normalized surface.
    pub normalize: bool,
    /// Also feed the normalized surface to the character and casing channels.
    pub normalize_all_channels: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            lowercase: true,
            normalize: false,
            normalize_all_channels: false,
        }
    }
}

/// Word index with reserved PAD and UNK ids, plus encoding options.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    options: EncodeOptions,
}

impl Vocab {
    /// Ids 0 and 1 are PAD and UNK; `words` follow in order. Later duplicates
    /// are kept in the list but never looked up.
    pub fn new<I, S>(words: I, options: EncodeOptions) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = vec![PAD_WORD.to_string(), UNK_WORD.to_string()];
        list.extend(words.into_iter().map(Into::into));
        Self::from_full_list(list, options)
    }

    /// Rebuilds a vocabulary from [`Vocab::words`] output.
    pub fn from_full_list(words: Vec<String>, options: EncodeOptions) -> Self {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate().skip(2) {
            index.entry(w.clone()).or_insert(i);
        }
        Vocab {
            words,
            index,
            options,
        }
    }

    /// Full id-ordered list including the PAD and UNK placeholders.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn options(&self) -> EncodeOptions {
        self.options
    }

    pub fn with_options(mut self, options: EncodeOptions) -> Self {
        self.options = options;
        self
    }

    pub fn casing_len(&self) -> usize {
        CasingClass::COUNT
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// SHA-256 over the newline-joined word list.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.words)
    }

    pub fn word_id(&self, surface: &str, normalize: bool) -> usize {
        let key = if self.options.lowercase {
            surface.to_lowercase()
        } else {
            surface.to_string()
        };
        if let Some(id) = self.get(&key) {
            return id;
        }
        if normalize {
            if let Some(id) = normalize_str(&key).and_then(|n| self.get(n)) {
                return id;
            }
        }
        WORD_UNK
    }
}

pub fn fingerprint(words: &[String]) -> String {
    let mut hasher = Sha256::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(w.as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedToken {
    pub word: usize,
    pub chars: [usize; MAX_CHARS],
    pub casing: usize,
}

/// Word id from the lowercased surface (retrying the normalized form when
/// `normalize` is set), raw characters right-padded to [`MAX_CHARS`], and the
/// casing class of the raw surface.
pub fn encode_token(token: &Token, vocab: &Vocab, normalize: bool) -> EncodedToken {
    let raw = token.as_str();
    let word = vocab.word_id(raw, normalize);
    let surface = if normalize && vocab.options.normalize_all_channels {
        normalize_str(raw).unwrap_or(raw)
    } else {
        raw
    };
    let mut chars = [CHAR_PAD; MAX_CHARS];
    for (slot, c) in chars.iter_mut().zip(surface.chars()) {
        *slot = CharIndex::id(c);
    }
    EncodedToken {
        word,
        chars,
        casing: classify(surface).id(),
    }
}
