use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use specgraph::analysis::compute_metrics;
use specgraph::draft::Mode;
use specgraph::trace::{write_timings, TraceHeader};
use specgraph::{run_session, LanguageModel, SessionOutput, Trace};

use crate::args::RunArgs;
use crate::config::RunSettings;
use crate::io::{load_model, load_prompts, write_atomic, TIMING_SUFFIX, TRACE_SUFFIX};
use crate::UsageError;

/// Per-prompt generator: the run seed with the prompt index as stream, so
/// results do not depend on scheduling.
pub fn prompt_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub struct RunFiles {
    pub trace: PathBuf,
    pub timing: PathBuf,
    pub metrics: PathBuf,
    pub outputs: PathBuf,
}

pub fn run(a: &RunArgs) -> Result<RunFiles> {
    let s = RunSettings::from_args(a)?;
    let mode = s.session.draft.mode;
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone().ok_or_else(|| anyhow!(UsageError(format!("--{what} is required"))))
    };
    let target_path = need(&s.target_model, "target-model")?;
    let prompts_path = need(&s.prompts, "prompts")?;
    let draft_path = if mode == Mode::Vanilla {
        s.draft_model.clone().unwrap_or_else(|| target_path.clone())
    } else {
        need(&s.draft_model, "draft-model")?
    };

    let target = load_model(&target_path)?.with_cost(s.target_cost);
    let draft = load_model(&draft_path)?.with_cost(s.draft_cost);
    if draft.vocab() != target.vocab() {
        bail!(
            "draft model {} and target model {} use different vocabularies",
            draft_path.display(),
            target_path.display()
        );
    }
    let vocab = target.vocab().clone();
    let prompts: Vec<_> = load_prompts(&prompts_path)?.iter().map(|p| vocab.encode(p)).collect();
    if let Some(i) = prompts.iter().position(|p| p.is_empty()) {
        bail!("prompt {} is empty after tokenization", i + 1);
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.threads).build()?;
    let eos = Some(vocab.eos());
    let sessions: Vec<SessionOutput> = pool.install(|| {
        prompts
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = prompt_rng(s.session.draft.seed, i);
                run_session(&draft, &target, p, &s.session, eos, &mut rng)
                    .with_context(|| format!("decoding prompt {}", i + 1))
            })
            .collect::<Result<_>>()
    })?;

    let name = a.name.clone().unwrap_or_else(|| mode.to_string());
    if name.is_empty() || name.contains(['/', '\\']) {
        bail!(UsageError(format!("invalid run name {name:?}")));
    }
    let header = TraceHeader::new(&name, s.session, vocab.size(), draft.cost(), target.cost());
    let trace = Trace::from_sessions(header, &sessions);
    let mut timing = Vec::new();
    write_timings(&sessions, &mut timing)?;
    let timings = specgraph::trace::read_timings(&timing[..])?;
    let metrics = compute_metrics(&trace)?.with_timings(&timings);
    let outputs: String = sessions
        .iter()
        .map(|o| {
            let text: Vec<_> = o.output.iter().copied().filter(|&t| Some(t) != eos).collect();
            vocab.decode(&text) + "\n"
        })
        .collect();

    let dir = &a.out_dir;
    let files = RunFiles {
        trace: dir.join(format!("{name}{TRACE_SUFFIX}")),
        timing: dir.join(format!("{name}{TIMING_SUFFIX}")),
        metrics: dir.join(format!("{name}.metrics.json")),
        outputs: dir.join(format!("{name}.outputs.txt")),
    };
    write_atomic(&files.trace, &trace.to_bytes())?;
    write_atomic(&files.timing, &timing)?;
    write_atomic(&files.metrics, &(serde_json::to_string_pretty(&metrics)? + "\n").into_bytes())?;
    write_atomic(&files.outputs, outputs.as_bytes())?;
    println!(
        "{name}: {} prompts, {} tokens, {} stages, acceptance {:.4}, graph success {:.4}, modeled speedup {:.4}",
        metrics.prompts,
        metrics.total_output_tokens,
        metrics.stages,
        metrics.acceptance_rate,
        metrics.graph_success,
        metrics.modeled_speedup
    );
    println!("wrote {}", files.trace.display());
    Ok(files)
}
