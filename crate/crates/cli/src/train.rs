use anyhow::{bail, Context, Result};
use specgraph::model::train_ngram;
use specgraph::{LanguageModel, TokenizerKind, Vocabulary};

use crate::args::{QueryArgs, TrainArgs};
use crate::io::{load_model, write_atomic};
use crate::UsageError;

pub fn train(a: &TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.corpus)
        .with_context(|| format!("reading corpus {}", a.corpus.display()))?;
    let docs: Vec<&str> = if a.line_docs {
        text.lines().filter(|l| !l.trim().is_empty()).collect()
    } else {
        text.split("\n\n").filter(|p| !p.trim().is_empty()).collect()
    };
    if docs.is_empty() {
        bail!("corpus {} is empty", a.corpus.display());
    }
    if a.order == 0 || !(a.lambda > 0.0 && a.lambda <= 1.0) {
        bail!(UsageError("order must be at least 1 and lambda in (0, 1]".into()));
    }
    let kind = if a.byte_level { TokenizerKind::Byte } else { TokenizerKind::Whitespace };
    let vocab = Vocabulary::build(docs.iter().copied(), kind);
    let encoded: Vec<_> = docs.iter().map(|d| vocab.encode(d)).collect();
    let model = train_ngram(vocab, &encoded, a.order, a.lambda)?;
    write_atomic(&a.out, &model.to_bytes())?;
    println!("vocabulary size: {}", model.vocab_size());
    for (i, n) in model.ngram_counts().iter().enumerate() {
        println!("{}-grams: {n}", i + 1);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn query(a: &QueryArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let ctx = model.vocab().encode(&a.context);
    let dist = model.eval_next(&ctx)?;
    for (t, p) in dist.top_k(a.top) {
        println!("{}\t{p:.6}", model.vocab().token(t).unwrap_or("?"));
    }
    Ok(())
}
