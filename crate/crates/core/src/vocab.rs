//! Token alphabet and the two supported tokenizers.
//!
//! Ids are assigned in list order. Every vocabulary reserves an end-of-sequence
//! token and an unknown-word token at ids 0 and 1.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    /// Split on Unicode whitespace.
    #[default]
    Whitespace,
    /// One token per byte of the UTF-8 encoding.
    Byte,
}

impl TokenizerKind {
    pub fn as_u8(self) -> u8 {
        match self {
            TokenizerKind::Whitespace => 0,
            TokenizerKind::Byte => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(TokenizerKind::Whitespace),
            1 => Some(TokenizerKind::Byte),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
    unk: TokenId,
    kind: TokenizerKind,
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list. `eos` and `unk` must name
    /// tokens present in the list.
    pub fn from_tokens(
        tokens: Vec<String>,
        eos: TokenId,
        unk: TokenId,
        kind: TokenizerKind,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::VocabularyMismatch(format!("duplicate token {t:?}")));
            }
        }
        let size = tokens.len();
        for id in [eos, unk] {
            if id as usize >= size {
                return Err(Error::TokenOutOfRange { token: id, vocab_size: size });
            }
        }
        Ok(Self { tokens, index, eos, unk, kind })
    }

    /// Collects every distinct token of `texts` in first-seen order, after the
    /// two reserved tokens. Byte vocabularies always contain all 256 bytes.
    pub fn build<'a, I>(texts: I, kind: TokenizerKind) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut tokens = vec![EOS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        match kind {
            TokenizerKind::Whitespace => {
                let mut seen: HashMap<&str, ()> = HashMap::new();
                for text in texts {
                    for w in text.split_whitespace() {
                        if w != EOS_TOKEN && w != UNK_TOKEN && seen.insert(w, ()).is_none() {
                            tokens.push(w.to_string());
                        }
                    }
                }
            }
            TokenizerKind::Byte => tokens.extend((0..=255u8).map(byte_token)),
        }
        Self::from_tokens(tokens, 0, 1, kind).expect("reserved ids are in range")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokenizes `text`; out-of-vocabulary words map to the unknown token.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        match self.kind {
            TokenizerKind::Whitespace => text
                .split_whitespace()
                .map(|w| self.id(w).unwrap_or(self.unk))
                .collect(),
            TokenizerKind::Byte => text
                .bytes()
                .map(|b| self.id(&byte_token(b)).unwrap_or(self.unk))
                .collect(),
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        match self.kind {
            TokenizerKind::Whitespace => ids
                .iter()
                .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
                .collect::<Vec<_>>()
                .join(" "),
            TokenizerKind::Byte => {
                let bytes: Vec<u8> = ids
                    .iter()
                    .filter_map(|&i| {
                        let t = self.token(i)?;
                        let hex = t.strip_prefix("<0x")?.strip_suffix('>')?;
                        u8::from_str_radix(hex, 16).ok()
                    })
                    .collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
        }
    }
}
