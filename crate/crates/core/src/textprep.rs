//! Source-code normalization: strip, lowercase, lemmatize, tokenize, pad.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lowercase alphanumeric tokens in document order.
pub type TokenSequence = Vec<String>;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_MAXLEN: usize = 200;
pub const DEFAULT_MIN_FREQ: usize = 2;

/// Replaces every non-alphanumeric character with a space, lowercases,
/// splits on whitespace and lemmatizes each token.
///
/// Only ASCII letters and digits survive, so the output alphabet is `[a-z0-9]`.
pub fn normalize(text: &str) -> TokenSequence {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .map(lemmatize)
        .filter(|t| !t.is_empty())
        .collect()
}

fn has_vowel(s: &str) -> bool {
    s.bytes().any(|b| matches!(b, b'a' | b'e' | b'i' | b'o' | b'u'))
}

/// Applies the first rule of the suffix table that fires, or `None`.
fn apply_rule(token: &str) -> Option<String> {
    let n = token.len();
    if n > 4 && token.ends_with("ies") {
        return Some(format!("{}y", &token[..n - 3]));
    }
    if token.ends_with("sses") {
        return Some(token[..n - 2].to_string());
    }
    if n > 5 && token.ends_with("ing") && has_vowel(&token[..n - 3]) {
        return Some(token[..n - 3].to_string());
    }
    if n > 4 && token.ends_with("ed") && has_vowel(&token[..n - 2]) {
        return Some(token[..n - 2].to_string());
    }
    if n > 3
        && token.ends_with('s')
        && !token.ends_with("ss")
        && !token.ends_with("us")
        && !token.ends_with("is")
    {
        return Some(token[..n - 1].to_string());
    }
    None
}

/// Suffix-rule lemmatizer.
///
/// Rules, in priority order: `-ies`→`-y` (len > 4), `-sses`→`-ss`,
/// `-ing`→`` (len > 5, stem keeps a vowel), `-ed`→`` (len > 4, stem keeps a
/// vowel), `-s`→`` (len > 3, not `-ss`/`-us`/`-is`). The table is applied
/// until no rule fires, so the result is a fixed point and re-lemmatizing
/// is a no-op.
pub fn lemmatize(token: &str) -> String {
    let mut current = token.to_string();
    while let Some(next) = apply_rule(&current) {
        debug_assert!(!next.is_empty() && next.len() < current.len());
        current = next;
    }
    current
}

/// Token ↔ id map with reserved ids `PAD = 0` and `UNK = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Tokens with frequency ≥ `min_freq` get ids from 2 upward, ordered by
    /// descending frequency and then lexicographically.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a TokenSequence>, min_freq: usize) -> Result<Self> {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        let mut docs = 0usize;
        for seq in corpus {
            docs += 1;
            for t in seq {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        if docs == 0 {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, n)| n >= min_freq.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        // PAD and UNK are always present
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokens in id order, including the two reserved entries.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 over the tokens in id order; identifies a vocabulary in
    /// checkpoints.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn encode(&self, tokens: &[String], maxlen: usize) -> EncodedExample {
        encode_pad(tokens, self, maxlen)
    }

    /// Inverse of encoding for in-vocabulary ids; stops at the true length.
    pub fn decode(&self, example: &EncodedExample) -> Vec<String> {
        example.ids[..example.true_length]
            .iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}

// Serialized as a JSON object {token: id} written in id order.
impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.tokens.len()))?;
        for (i, t) in self.tokens.iter().enumerate() {
            map.serialize_entry(t, &(i as u32))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct VocabVisitor;

        impl<'de> Visitor<'de> for VocabVisitor {
            type Value = Vocab;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map of token to contiguous id")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Vocab, A::Error> {
                let mut pairs: Vec<(String, u32)> = Vec::new();
                while let Some((t, id)) = access.next_entry::<String, u32>()? {
                    pairs.push((t, id));
                }
                pairs.sort_by_key(|p| p.1);
                for (i, (_, id)) in pairs.iter().enumerate() {
                    if *id as usize != i {
                        return Err(de::Error::custom("vocabulary ids are not contiguous from 0"));
                    }
                }
                if pairs.len() < 2 || pairs[0].0 != PAD_TOKEN || pairs[1].0 != UNK_TOKEN {
                    return Err(de::Error::custom("vocabulary must start with <pad>, <unk>"));
                }
                Ok(Vocab::from_tokens(pairs.into_iter().map(|p| p.0).collect()))
            }
        }

        deserializer.deserialize_map(VocabVisitor)
    }
}

/// Fixed-length id sequence. Positions at or past `true_length` are PAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl EncodedExample {
    pub fn maxlen(&self) -> usize {
        self.ids.len()
    }

    /// The non-padding prefix.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }
}

/// Maps tokens to ids (UNK when unknown), keeps the first `maxlen` and
/// right-pads with PAD.
pub fn encode_pad(tokens: &[String], vocab: &Vocab, maxlen: usize) -> EncodedExample {
    assert!(maxlen >= 1, "maxlen must be at least 1");
    let true_length = tokens.len().min(maxlen);
    let mut ids: Vec<u32> = tokens[..true_length].iter().map(|t| vocab.id(t)).collect();
    ids.resize(maxlen, PAD);
    EncodedExample { ids, true_length }
}
