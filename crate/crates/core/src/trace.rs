//! JSONL run traces.
//!
//! A trace holds one JSON object per line, tagged by `"type"`:
//!
//! - `header`: format name, version, session config and declared model costs;
//! - `prompt`: start of a prompt, with its (truncated) tokens;
//! - `stage`: one [`StageRecord`];
//! - `prompt_end`: the prompt's output tokens and stop reason;
//! - `end`: footer with prompt and stage counts.
//!
//! Only deterministic data goes into a trace, so identical runs produce
//! identical files. Wall-clock timings live in a separate sidecar file with
//! one [`TimingRecord`] per stage.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CostParams;
use crate::session::{SessionConfig, SessionOutput, StageRecord, StageTiming, StopReason};
use crate::TokenId;

pub const TRACE_FORMAT: &str = "specgraph-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub session: SessionConfig,
    pub vocab_size: usize,
    pub draft_cost: CostParams,
    pub target_cost: CostParams,
}

impl TraceHeader {
    pub fn new(
        name: &str,
        session: SessionConfig,
        vocab_size: usize,
        draft_cost: CostParams,
        target_cost: CostParams,
    ) -> Self {
        Self {
            format: TRACE_FORMAT.to_string(),
            version: TRACE_VERSION,
            name: name.to_string(),
            session,
            vocab_size,
            draft_cost,
            target_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Prompt { index: usize, tokens: Vec<TokenId>, original_len: usize },
    Stage { prompt: usize, #[serde(flatten)] record: StageRecord },
    PromptEnd { index: usize, output: Vec<TokenId>, stop: StopReason },
    End { prompts: usize, stages: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub prompt: usize,
    #[serde(flatten)]
    pub timing: StageTiming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTrace {
    pub index: usize,
    pub prompt: Vec<TokenId>,
    pub original_len: usize,
    pub stages: Vec<StageRecord>,
    pub output: Vec<TokenId>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub prompts: Vec<PromptTrace>,
}

impl Trace {
    pub fn from_sessions(header: TraceHeader, sessions: &[SessionOutput]) -> Self {
        let prompts = sessions
            .iter()
            .enumerate()
            .map(|(index, s)| PromptTrace {
                index,
                prompt: s.prompt.clone(),
                original_len: s.prompt_len_original,
                stages: s.stages.clone(),
                output: s.output.clone(),
                stop: s.stop,
            })
            .collect();
        Self { header, prompts }
    }

    pub fn stages(&self) -> impl Iterator<Item = &StageRecord> {
        self.prompts.iter().flat_map(|p| p.stages.iter())
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        let mut out = vec![TraceRecord::Header(self.header.clone())];
        let mut stages = 0;
        for p in &self.prompts {
            out.push(TraceRecord::Prompt {
                index: p.index,
                tokens: p.prompt.clone(),
                original_len: p.original_len,
            });
            for s in &p.stages {
                out.push(TraceRecord::Stage { prompt: p.index, record: s.clone() });
            }
            stages += p.stages.len();
            out.push(TraceRecord::PromptEnd { index: p.index, output: p.output.clone(), stop: p.stop });
        }
        out.push(TraceRecord::End { prompts: self.prompts.len(), stages });
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write(&mut v).expect("writing to memory");
        v
    }

    /// Parses a trace, rejecting foreign formats, other versions, out-of-order
    /// records and traces without a footer.
    pub fn read<R: BufRead>(r: R) -> Result<Trace> {
        let err = |m: String| Error::Trace(m);
        let mut header = None;
        let mut prompts: Vec<PromptTrace> = Vec::new();
        let mut open: Option<PromptTrace> = None;
        let mut ended = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if ended {
                return Err(err(format!("line {}: data after end record", i + 1)));
            }
            let rec: TraceRecord = serde_json::from_str(&line)
                .map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            match rec {
                TraceRecord::Header(h) => {
                    if header.is_some() || i != 0 {
                        return Err(err(format!("line {}: unexpected header", i + 1)));
                    }
                    if h.format != TRACE_FORMAT {
                        return Err(err(format!("not a trace file (format {:?})", h.format)));
                    }
                    if h.version != TRACE_VERSION {
                        return Err(err(format!(
                            "trace version {} unsupported (expected {TRACE_VERSION})",
                            h.version
                        )));
                    }
                    header = Some(h);
                }
                _ if header.is_none() => return Err(err("missing trace header".into())),
                TraceRecord::Prompt { index, tokens, original_len } => {
                    if open.is_some() || index != prompts.len() {
                        return Err(err(format!("line {}: unexpected prompt {index}", i + 1)));
                    }
                    open = Some(PromptTrace {
                        index,
                        prompt: tokens,
                        original_len,
                        stages: Vec::new(),
                        output: Vec::new(),
                        stop: StopReason::MaxOutput,
                    });
                }
                TraceRecord::Stage { prompt, record } => match open.as_mut() {
                    Some(p) if p.index == prompt && record.stage == p.stages.len() => {
                        p.stages.push(record)
                    }
                    _ => return Err(err(format!("line {}: stray stage record", i + 1))),
                },
                TraceRecord::PromptEnd { index, output, stop } => match open.take() {
                    Some(mut p) if p.index == index => {
                        p.output = output;
                        p.stop = stop;
                        prompts.push(p);
                    }
                    _ => return Err(err(format!("line {}: stray prompt end", i + 1))),
                },
                TraceRecord::End { prompts: n, stages } => {
                    let seen: usize = prompts.iter().map(|p| p.stages.len()).sum();
                    if open.is_some() || n != prompts.len() || stages != seen {
                        return Err(err("end record does not match trace contents".into()));
                    }
                    ended = true;
                }
            }
        }
        let header = header.ok_or_else(|| err("empty trace".into()))?;
        if !ended {
            return Err(err("truncated trace: no end record".into()));
        }
        Ok(Trace { header, prompts })
    }

    pub fn read_path(path: &std::path::Path) -> Result<Trace> {
        let f = std::fs::File::open(path)?;
        Trace::read(std::io::BufReader::new(f))
    }
}

pub fn write_timings<W: Write>(sessions: &[SessionOutput], mut w: W) -> Result<()> {
    for (prompt, s) in sessions.iter().enumerate() {
        for t in &s.timings {
            serde_json::to_writer(&mut w, &TimingRecord { prompt, timing: *t })?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_timings<R: BufRead>(r: R) -> Result<Vec<TimingRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Trace(format!("timing line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
