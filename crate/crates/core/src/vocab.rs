//! Vocabulary construction, tokenization and corpus ingestion.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The synthesized end-of-sequence token. Corpora never contain it.
pub const EOS_TOKEN: &str = "<eos>";

/// How text is split into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// One token per Unicode scalar value.
    #[default]
    Char,
    /// Tokens separated by whitespace; detokenization joins with one space.
    Whitespace,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenizerMode::Char),
            "whitespace" => Ok(TokenizerMode::Whitespace),
            other => Err(Error::InvalidConfig(format!(
                "unknown tokenizer mode {other:?}"
            ))),
        }
    }
}

/// Splits `text` into token strings without looking anything up.
pub fn split_tokens(text: &str, mode: TokenizerMode) -> Vec<&str> {
    match mode {
        TokenizerMode::Char => text
            .char_indices()
            .map(|(i, c)| &text[i..i + c.len_utf8()])
            .collect(),
        TokenizerMode::Whitespace => text.split_whitespace().collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    eos_id: usize,
}

/// An ordered set of distinct token strings with a designated EOS id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos_id: usize,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.eos_id == other.eos_id
    }
}

impl Eq for Vocabulary {}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_parts(repr.tokens, repr.eos_id)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            eos_id: v.eos_id,
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens: sorted, deduplicated, EOS last.
    pub fn from_content<I, S>(content: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = content.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if set.contains(EOS_TOKEN) {
            return Err(Error::ReservedToken(EOS_TOKEN.to_string()));
        }
        let mut tokens: Vec<String> = set.into_iter().collect();
        let eos_id = tokens.len();
        tokens.push(EOS_TOKEN.to_string());
        Self::from_parts(tokens, eos_id)
    }

    /// Validates an explicit token list.
    pub fn from_parts(tokens: Vec<String>, eos_id: usize) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidVocabulary(format!(
                "size {} < 2",
                tokens.len()
            )));
        }
        if eos_id >= tokens.len() {
            return Err(Error::InvalidVocabulary(format!(
                "eos_id {eos_id} out of range"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            eos_id,
            index,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn check_id(&self, id: usize) -> Result<()> {
        if id < self.size() {
            Ok(())
        } else {
            Err(Error::InvalidTokenId {
                id,
                size: self.size(),
            })
        }
    }

    pub fn to_json(&self) -> String {
        crate::json::to_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// A non-empty list of token ids in which EOS, if present, is last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<usize>);

impl TokenSeq {
    pub fn new(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidSequence("empty".into()));
        }
        for (pos, &id) in ids.iter().enumerate() {
            vocab.check_id(id)?;
            if id == vocab.eos_id() && pos + 1 != ids.len() {
                return Err(Error::InvalidSequence(format!(
                    "EOS at position {pos} is not final"
                )));
            }
        }
        Ok(TokenSeq(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ends_with_eos(&self, vocab: &Vocabulary) -> bool {
        self.0.last() == Some(&vocab.eos_id())
    }

    /// The ids with a trailing EOS removed; used when a sequence serves as a
    /// prompt.
    pub fn without_eos(&self, vocab: &Vocabulary) -> &[usize] {
        match self.0.split_last() {
            Some((&last, rest)) if last == vocab.eos_id() => rest,
            _ => &self.0,
        }
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.0
    }
}

/// Tokenizes `text`, appending EOS.
pub fn tokenize(text: &str, vocab: &Vocabulary, mode: TokenizerMode) -> Result<TokenSeq> {
    let pieces = split_tokens(text, mode);
    if pieces.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut ids = Vec::with_capacity(pieces.len() + 1);
    for (position, piece) in pieces.into_iter().enumerate() {
        match vocab.id(piece) {
            Some(id) if id != vocab.eos_id() => ids.push(id),
            _ => {
                return Err(Error::UnknownToken {
                    token: piece.to_string(),
                    position,
                })
            }
        }
    }
    ids.push(vocab.eos_id());
    Ok(TokenSeq(ids))
}

/// Inverse of [`tokenize`]; EOS is dropped.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary, mode: TokenizerMode) -> String {
    let words = ids
        .iter()
        .filter(|&&id| id != vocab.eos_id())
        .filter_map(|&id| vocab.token(id));
    match mode {
        TokenizerMode::Char => words.collect(),
        TokenizerMode::Whitespace => words.collect::<Vec<_>>().join(" "),
    }
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::Utf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

fn corpus_lines(text: &str) -> impl Iterator<Item = &str> {
    text.split('\n').filter(|l| !l.is_empty())
}

/// Builds a vocabulary from text in memory.
pub fn build_vocabulary_from_texts<S: AsRef<str>>(
    texts: &[S],
    mode: TokenizerMode,
) -> Result<Vocabulary> {
    let mut set = BTreeSet::new();
    for text in texts {
        for line in corpus_lines(text.as_ref()) {
            set.extend(split_tokens(line, mode).into_iter().map(str::to_string));
        }
    }
    Vocabulary::from_content(set)
}

/// Union of the tokens in every file plus EOS; lexicographic order, EOS last.
pub fn build_vocabulary<P: AsRef<Path>>(paths: &[P], mode: TokenizerMode) -> Result<Vocabulary> {
    let texts = paths
        .iter()
        .map(|p| read_utf8(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    build_vocabulary_from_texts(&texts, mode)
}

/// Tokenized sequences read from one source, each ending with EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<TokenSeq>,
    pub source_path: String,
    pub tokenizer_mode: TokenizerMode,
}

impl Corpus {
    /// One sequence per non-empty line.
    pub fn from_text(
        text: &str,
        source: impl Into<String>,
        vocab: &Vocabulary,
        mode: TokenizerMode,
    ) -> Result<Self> {
        let mut sequences = Vec::new();
        for line in corpus_lines(text) {
            if split_tokens(line, mode).is_empty() {
                continue;
            }
            sequences.push(tokenize(line, vocab, mode)?);
        }
        if sequences.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Corpus {
            sequences,
            source_path: source.into(),
            tokenizer_mode: mode,
        })
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary, mode: TokenizerMode) -> Result<Self> {
        let path = path.as_ref();
        let text = read_utf8(path)?;
        Self::from_text(&text, path.display().to_string(), vocab, mode)
    }

    /// Wraps already-tokenized sequences, appending EOS where missing.
    pub fn from_sequences(
        sequences: Vec<Vec<usize>>,
        source: impl Into<String>,
        vocab: &Vocabulary,
        mode: TokenizerMode,
    ) -> Result<Self> {
        let sequences = sequences
            .into_iter()
            .map(|mut ids| {
                if ids.last() != Some(&vocab.eos_id()) {
                    ids.push(vocab.eos_id());
                }
                TokenSeq::new(ids, vocab)
            })
            .collect::<Result<Vec<_>>>()?;
        if sequences.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Corpus {
            sequences,
            source_path: source.into(),
            tokenizer_mode: mode,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.sequences.iter().map(TokenSeq::len).sum()
    }
}
