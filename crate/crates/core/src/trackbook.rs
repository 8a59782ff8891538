//! Description phrases, prompt templates, vocabulary and token sequences.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const INIT: u32 = 1;
pub const EOS: u32 = 2;
const RESERVED: [&str; 3] = ["<pad>", "<init>", "<eos>"];

pub const DEFAULT_TOKEN_LEN: usize = 15;
pub const TOKEN_LEN_SWEEP: [usize; 6] = [11, 13, 15, 17, 19, 21];

const DEFAULT_BOOK: &str = include_str!("../assets/trackbook.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trackbook {
    phrases: Vec<String>,
    version: String,
}

fn normalize(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Trackbook {
    /// Parses one phrase per line; `#` lines are comments and a
    /// `# version: X` comment sets the version.
    pub fn parse(text: &str) -> Result<Self> {
        let mut phrases = Vec::new();
        let mut seen = HashSet::new();
        let mut version = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = Some(v.trim().to_string());
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let phrase = normalize(line);
            if !seen.insert(phrase.clone()) {
                return Err(Error::DuplicatePhrase { phrase, line: i + 1 });
            }
            phrases.push(phrase);
        }
        if phrases.is_empty() {
            return Err(Error::EmptyTrackbook);
        }
        Ok(Self {
            phrases,
            version: version.unwrap_or_else(|| "unversioned".into()),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn render(&self, template: &PromptTemplate) -> Vec<String> {
        self.phrases.iter().map(|p| template.render(p)).collect()
    }
}

impl Default for Trackbook {
    fn default() -> Self {
        Self::parse(DEFAULT_BOOK).expect("bundled trackbook is valid")
    }
}

pub fn load_trackbook(path: impl AsRef<Path>) -> Result<Trackbook> {
    Trackbook::load(path)
}

pub fn render_sentences(book: &Trackbook, template: &PromptTemplate) -> Vec<String> {
    book.render(template)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub prefix: String,
}

impl PromptTemplate {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self { prefix: prefix.into() }
    }

    pub fn render(&self, phrase: &str) -> String {
        if self.prefix.is_empty() {
            phrase.to_string()
        } else {
            format!("{} {}", self.prefix, phrase)
        }
    }

    /// The three templates compared in the template study.
    pub fn study() -> [PromptTemplate; 3] {
        [Self::new("A photo of"), Self::new(""), Self::new("a")]
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new("A photo of")
    }
}

/// Closed word-level ("bag-of-words") vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Reserved ids first, then every distinct word in sorted order.
    pub fn build<S: AsRef<str>>(sentences: &[S]) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyInput);
        }
        let distinct: BTreeSet<&str> = sentences
            .iter()
            .flat_map(|s| s.as_ref().split_whitespace())
            .collect();
        let words: Vec<String> = RESERVED
            .iter()
            .copied()
            .chain(distinct)
            .map(str::to_string)
            .collect();
        Self::from_words(words)
    }

    fn from_words(words: Vec<String>) -> Result<Self> {
        let ids: BTreeMap<String, u32> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        if ids.len() != words.len() {
            return Err(Error::Shape("vocabulary words are not unique".into()));
        }
        Ok(Self { words, ids })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.ids).expect("string map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, u32> = serde_json::from_str(text)?;
        let mut words = vec![String::new(); map.len()];
        for (w, &id) in &map {
            let slot = words
                .get_mut(id as usize)
                .ok_or_else(|| Error::Shape(format!("vocabulary id {id} is not dense")))?;
            if !slot.is_empty() {
                return Err(Error::Shape(format!("vocabulary id {id} assigned twice")));
            }
            *slot = w.clone();
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if words.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Shape(format!("reserved id {i} must map to {r}")));
            }
        }
        Self::from_words(words)
    }
}

pub fn build_vocabulary<S: AsRef<str>>(sentences: &[S]) -> Result<Vocabulary> {
    Vocabulary::build(sentences)
}

/// `INIT w1 .. wn EOS PAD ..` of fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    eos: usize,
}

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn eos_position(&self) -> usize {
        self.eos
    }

    /// Builds from raw ids, checking the layout.
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        let eos = ids.iter().position(|&t| t == EOS).ok_or(Error::MissingEos)?;
        let ok = ids.first() == Some(&INIT)
            && ids[1..eos].iter().all(|&t| t > EOS)
            && ids[eos + 1..].iter().all(|&t| t == PAD);
        if !ok {
            return Err(Error::Shape("token layout must be INIT words EOS PAD*".into()));
        }
        Ok(Self { ids, eos })
    }

    /// The word list between INIT and EOS.
    pub fn decode(&self, vocab: &Vocabulary) -> Vec<String> {
        self.ids[1..self.eos]
            .iter()
            .map(|&t| vocab.word(t).unwrap_or("<unk>").to_string())
            .collect()
    }
}

pub fn tokenize(sentence: &str, vocab: &Vocabulary, len: usize) -> Result<TokenSequence> {
    if len < 3 {
        return Err(Error::TokenLength(len));
    }
    let mut ids = Vec::with_capacity(len);
    ids.push(INIT);
    for word in sentence.split_whitespace().take(len - 2) {
        ids.push(vocab.id(word).ok_or_else(|| Error::UnknownWord(word.to_string()))?);
    }
    let eos = ids.len();
    ids.push(EOS);
    ids.resize(len, PAD);
    Ok(TokenSequence { ids, eos })
}
