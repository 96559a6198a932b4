#![allow(dead_code)]

use std::path::PathBuf;

use specgraph::model::NGramModel;
use specgraph::{CostParams, TokenId, TokenizerKind, Vocabulary};

pub fn corpus_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus.txt")
}

/// Blank-line separated paragraphs with whitespace normalized.
pub fn paragraphs() -> Vec<String> {
    let text = std::fs::read_to_string(corpus_path()).expect("corpus readable");
    text.split("\n\n")
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect()
}

pub struct NaturalText {
    pub vocab: Vocabulary,
    pub draft: NGramModel,
    pub target: NGramModel,
    pub docs: Vec<Vec<TokenId>>,
}

impl NaturalText {
    pub fn eos(&self) -> Option<TokenId> {
        Some(self.vocab.eos())
    }

    /// `n` prompts of `len` tokens, each starting a paragraph long enough to
    /// hold it, cycling through paragraphs with shifting offsets.
    pub fn prompts(&self, n: usize, len: usize) -> Vec<Vec<TokenId>> {
        let long: Vec<&Vec<TokenId>> = self.docs.iter().filter(|d| d.len() >= len + 8).collect();
        (0..n)
            .map(|i| {
                let d = long[i % long.len()];
                let off = (i / long.len() * 7) % (d.len() - len);
                d[off..off + len].to_vec()
            })
            .collect()
    }
}

pub fn natural_text(draft_order: usize, target_order: usize, lambda: f64) -> NaturalText {
    let paras = paragraphs();
    let vocab = Vocabulary::build(paras.iter().map(String::as_str), TokenizerKind::Whitespace);
    let docs: Vec<Vec<TokenId>> = paras.iter().map(|p| vocab.encode(p)).collect();
    let draft = specgraph::model::train_ngram(vocab.clone(), &docs, draft_order, lambda)
        .unwrap()
        .with_cost(CostParams::DRAFT);
    let target = specgraph::model::train_ngram(vocab.clone(), &docs, target_order, lambda).unwrap();
    NaturalText { vocab, draft, target, docs }
}
