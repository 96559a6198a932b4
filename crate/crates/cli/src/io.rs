use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use specgraph::NGramModel;

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NGramModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    NGramModel::from_bytes(&bytes).with_context(|| format!("loading model {}", path.display()))
}

/// Prompts from a text file (one per line) or JSONL (`{"prompt": ...}` per
/// line). Blank lines are skipped.
pub fn load_prompts(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading prompts {}", path.display()))?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl")
        || text.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.trim_start().starts_with('{'));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if jsonl {
            let v: serde_json::Value = serde_json::from_str(line)
                .with_context(|| format!("{}:{}: invalid JSON", path.display(), i + 1))?;
            match v.get("prompt").and_then(|p| p.as_str()) {
                Some(p) => out.push(p.to_string()),
                None => bail!("{}:{}: missing string field \"prompt\"", path.display(), i + 1),
            }
        } else {
            out.push(line.to_string());
        }
    }
    if out.is_empty() {
        bail!("{} holds no prompts", path.display());
    }
    Ok(out)
}

pub const TRACE_SUFFIX: &str = ".trace.jsonl";
pub const TIMING_SUFFIX: &str = ".timing.jsonl";

/// Timing sidecar belonging to a trace file.
pub fn timing_path(trace: &Path) -> PathBuf {
    let name = trace.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(TRACE_SUFFIX).unwrap_or(&name);
    trace.with_file_name(format!("{stem}{TIMING_SUFFIX}"))
}
