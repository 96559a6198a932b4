//! Interpolated n-gram model and its binary file format.
//!
//! The conditional distribution interpolates maximum-likelihood estimates from
//! the longest observed context down to a uniform floor:
//!
//! ```text
//! P(w | h) = lambda * ML(w | h) + (1 - lambda) * P(w | h')
//! ```
//!
//! where `h'` drops the oldest token of `h`. Levels whose context never occurs
//! in training are skipped.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic   b"SGNG"
//! version u32
//! tokenizer u8            0 = whitespace, 1 = byte
//! order   u32
//! lambda  f64
//! vocab   size u32, eos u32, unk u32, then size x (len u32, utf-8 bytes)
//! levels  for m in 0..order:
//!           contexts u32, then per context (sorted):
//!             m x token u32, entries u32, entries x (token u32, count u64)
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::model::{CostParams, LanguageModel};
use crate::vocab::{TokenizerKind, Vocabulary};
use crate::TokenId;

pub const NGRAM_MAGIC: &[u8; 4] = b"SGNG";
pub const NGRAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
struct NextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u64)>,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    lambda: f64,
    /// `levels[m]` maps contexts of length `m` to next-token counts.
    levels: Vec<HashMap<Vec<TokenId>, NextCounts>>,
    max_context: usize,
    cost: CostParams,
}

/// Counts every in-document n-gram window of `corpus`, for all orders up to
/// `order`.
pub fn train_ngram(
    vocab: Vocabulary,
    corpus: &[Vec<TokenId>],
    order: usize,
    lambda: f64,
) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} not in (0, 1]")));
    }
    if corpus.iter().all(|d| d.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let vocab_size = vocab.size();
    let mut raw: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u64>>> = vec![HashMap::new(); order];
    for doc in corpus {
        if let Some(&token) = doc.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange { token, vocab_size });
        }
        for i in 0..doc.len() {
            for (m, level) in raw.iter_mut().enumerate() {
                if m > i {
                    break;
                }
                let ctx = doc[i - m..i].to_vec();
                *level.entry(ctx).or_default().entry(doc[i]).or_insert(0) += 1;
            }
        }
    }
    let levels = raw
        .into_iter()
        .map(|level| {
            level
                .into_iter()
                .map(|(ctx, counts)| {
                    let mut next: Vec<(TokenId, u64)> = counts.into_iter().collect();
                    next.sort_unstable();
                    let total = next.iter().map(|(_, c)| c).sum();
                    (ctx, NextCounts { total, next })
                })
                .collect()
        })
        .collect();
    Ok(NGramModel {
        vocab,
        order,
        lambda,
        levels,
        max_context: usize::MAX,
        cost: CostParams::TARGET,
    })
}

impl NGramModel {
    /// Builds a vocabulary from `texts`, tokenizes each text as one document and
    /// trains on the result.
    pub fn from_texts<S: AsRef<str>>(
        texts: &[S],
        kind: TokenizerKind,
        order: usize,
        lambda: f64,
    ) -> Result<Self> {
        let vocab = Vocabulary::build(texts.iter().map(AsRef::as_ref), kind);
        let corpus: Vec<Vec<TokenId>> = texts.iter().map(|t| vocab.encode(t.as_ref())).collect();
        train_ngram(vocab, &corpus, order, lambda)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_cost(mut self, cost: CostParams) -> Self {
        self.cost = cost;
        self
    }

    pub fn set_cost(&mut self, cost: CostParams) {
        self.cost = cost;
    }

    pub fn with_max_context(mut self, max: usize) -> Self {
        self.max_context = max;
        self
    }

    /// Distinct n-grams stored for each order `1..=order`.
    pub fn ngram_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.values().map(|c| c.next.len()).sum()).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(NGRAM_MAGIC)?;
        w.write_all(&NGRAM_VERSION.to_le_bytes())?;
        w.write_all(&[self.vocab.kind().as_u8()])?;
        write_u32(&mut w, self.order)?;
        w.write_all(&self.lambda.to_le_bytes())?;
        write_u32(&mut w, self.vocab.size())?;
        w.write_all(&self.vocab.eos().to_le_bytes())?;
        w.write_all(&self.vocab.unk().to_le_bytes())?;
        for t in self.vocab.tokens() {
            write_u32(&mut w, t.len())?;
            w.write_all(t.as_bytes())?;
        }
        for level in &self.levels {
            let mut ctxs: Vec<&Vec<TokenId>> = level.keys().collect();
            ctxs.sort();
            write_u32(&mut w, ctxs.len())?;
            for ctx in ctxs {
                for &t in ctx {
                    w.write_all(&t.to_le_bytes())?;
                }
                let counts = &level[ctx];
                write_u32(&mut w, counts.next.len())?;
                for &(t, c) in &counts.next {
                    w.write_all(&t.to_le_bytes())?;
                    w.write_all(&c.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |m: &str| Error::ModelFormat(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != NGRAM_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != NGRAM_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = TokenizerKind::from_u8(kind[0]).ok_or_else(|| fmt("unknown tokenizer"))?;
        let order = read_u32(&mut r)? as usize;
        let lambda = read_f64(&mut r)?;
        let size = read_u32(&mut r)? as usize;
        let eos = read_u32(&mut r)?;
        let unk = read_u32(&mut r)?;
        let mut tokens = Vec::with_capacity(size.min(1 << 20));
        for _ in 0..size {
            let len = read_u32(&mut r)? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            tokens.push(String::from_utf8(bytes).map_err(|_| fmt("token is not utf-8"))?);
        }
        let vocab = Vocabulary::from_tokens(tokens, eos, unk, kind)?;
        let mut levels = Vec::with_capacity(order);
        for m in 0..order {
            let n_ctx = read_u32(&mut r)? as usize;
            let mut level = HashMap::with_capacity(n_ctx.min(1 << 20));
            for _ in 0..n_ctx {
                let ctx = (0..m).map(|_| read_token(&mut r, size)).collect::<Result<Vec<_>>>()?;
                let n_next = read_u32(&mut r)? as usize;
                let mut next = Vec::with_capacity(n_next.min(1 << 20));
                for _ in 0..n_next {
                    let t = read_token(&mut r, size)?;
                    let mut c = [0u8; 8];
                    r.read_exact(&mut c)?;
                    next.push((t, u64::from_le_bytes(c)));
                }
                let total = next.iter().map(|(_, c)| c).sum();
                level.insert(ctx, NextCounts { total, next });
            }
            levels.push(level);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(fmt("trailing bytes"));
        }
        if order == 0 || !(lambda > 0.0 && lambda <= 1.0) {
            return Err(fmt("invalid order or lambda"));
        }
        Ok(NGramModel {
            vocab,
            order,
            lambda,
            levels,
            max_context: usize::MAX,
            cost: CostParams::TARGET,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::ModelFormat(format!("{v} overflows u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::ModelFormat("truncated file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::ModelFormat("truncated file".into()))?;
    Ok(f64::from_le_bytes(b))
}

fn read_token<R: Read>(r: &mut R, vocab_size: usize) -> Result<TokenId> {
    let t = read_u32(r)?;
    if t as usize >= vocab_size {
        return Err(Error::ModelFormat(format!("token {t} outside vocabulary")));
    }
    Ok(t)
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn max_context(&self) -> usize {
        self.max_context
    }

    fn cost(&self) -> CostParams {
        self.cost
    }

    fn predict(&self, context: &[TokenId]) -> Distribution {
        let v = self.vocab.size();
        let longest = (self.order - 1).min(context.len());
        let mut weight = self.lambda;
        let mut remaining = 1.0;
        let mut seen: Vec<(&NextCounts, f64)> = Vec::with_capacity(longest + 1);
        for m in (0..=longest).rev() {
            if let Some(counts) = self.levels[m].get(&context[context.len() - m..]) {
                if counts.total > 0 {
                    seen.push((counts, weight));
                    remaining -= weight;
                    weight *= 1.0 - self.lambda;
                }
            }
        }
        let floor = remaining.max(0.0) / v as f64;
        let mut probs = vec![floor; v];
        for (counts, w) in seen {
            let scale = w / counts.total as f64;
            for &(t, c) in &counts.next {
                probs[t as usize] += scale * c as f64;
            }
        }
        Distribution::from_normalized(probs)
    }
}
