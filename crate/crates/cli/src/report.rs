use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use specgraph::analysis::{
    child_position_acceptance, compute_metrics, ngram_overlap, timing_summary, KlRow,
    OverlapStats, RunMetrics,
};
use specgraph::draft::Mode;
use specgraph::graph::{parse_graph_lines, unmerge};
use specgraph::trace::{read_timings, TimingRecord};
use specgraph::Trace;

use crate::args::{AnalyzeArgs, CompareArgs, Study};
use crate::io::{timing_path, write_atomic};

fn load_trace(path: &Path) -> Result<Trace> {
    Trace::read_path(path).with_context(|| format!("reading trace {}", path.display()))
}

fn load_timings(trace: &Path) -> Result<Option<Vec<TimingRecord>>> {
    let p = timing_path(trace);
    if !p.exists() {
        return Ok(None);
    }
    let f = std::fs::File::open(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(Some(read_timings(std::io::BufReader::new(f))?))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub const COMPARE_HEADER: [&str; 9] = [
    "name",
    "mode",
    "acceptance_rate",
    "drafted_tokens",
    "drafted_per_stage",
    "graph_success",
    "modeled_speedup",
    "wall_clock_s",
    "output_tokens",
];

fn compare_row(m: &RunMetrics) -> Vec<String> {
    let gs = match m.mode {
        Mode::Vanilla | Mode::Ssd => "-".to_string(),
        _ => format!("{:.4}", m.graph_success),
    };
    let speedup = if m.mode == Mode::Vanilla { 1.0 } else { m.modeled_speedup };
    let wall = m.wall.map_or_else(|| "-".to_string(), |w| format!("{:.4}", w.total()));
    vec![
        m.name.clone(),
        m.mode.to_string(),
        format!("{:.4}", m.acceptance_rate),
        m.drafted_token_total.to_string(),
        format!("{:.2}", m.mean_drafted_per_stage),
        gs,
        format!("{speedup:.4}"),
        wall,
        m.total_output_tokens.to_string(),
    ]
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let mut rows = Vec::new();
    let mut prompts = None;
    for path in &a.traces {
        let t = load_trace(path)?;
        let p: Vec<_> = t.prompts.iter().map(|p| p.prompt.clone()).collect();
        match &prompts {
            None => prompts = Some(p),
            Some(first) if *first != p => {
                bail!("{} was run on a different prompt set", path.display())
            }
            Some(_) => {}
        }
        let mut m = compute_metrics(&t)?;
        if let Some(tm) = load_timings(path)? {
            m = m.with_timings(&tm);
        }
        rows.push(compare_row(&m));
    }
    let header: Vec<String> = COMPARE_HEADER.iter().map(|s| s.to_string()).collect();
    if let Some(p) = &a.csv {
        let mut csv = String::new();
        for r in std::iter::once(&header).chain(&rows) {
            csv += &r.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",");
            csv.push('\n');
        }
        write_atomic(p, csv.as_bytes())?;
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| std::iter::once(&header).chain(&rows).map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    for r in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> =
            r.iter().zip(&widths).map(|(f, w)| format!("{f:>w$}", w = *w)).collect();
        println!("{}", line.join("  ").trim_end());
    }
    Ok(())
}

/// Prefixes every data line of a study CSV with the trace name and mode.
fn prefixed(csv: &str, t: &Trace, out: &mut String) {
    let prefix = format!("{},{}", csv_field(&t.header.name), t.header.session.draft.mode);
    for line in csv.lines().skip(1) {
        out.push_str(&prefix);
        out.push(',');
        out.push_str(line);
        out.push('\n');
    }
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let mut out = String::new();
    match a.study {
        Study::Overlap => {
            out += "trace,mode,n,covered,total,fraction\n";
            for path in &a.traces {
                let t = load_trace(path)?;
                let mut stats = OverlapStats { covered: vec![0; a.n_max], total: 0 };
                for s in t.stages() {
                    let Some(lines) = &s.graph else {
                        bail!("{} has no recorded graphs; rerun with --trace-graphs", path.display());
                    };
                    let g = parse_graph_lines(lines)?;
                    let tree = if g.has_merges() { unmerge(&g) } else { g };
                    stats.absorb(&ngram_overlap(&tree, a.n_max));
                }
                prefixed(&stats.to_csv(), &t, &mut out);
            }
        }
        Study::Kl => {
            out += "trace,mode,k,tau,merges,mean_kl,max_kl\n";
            for path in &a.traces {
                let t = load_trace(path)?;
                let mut samples = Vec::new();
                for s in t.stages() {
                    let Some(kl) = &s.merge_kl else {
                        bail!("{} has no KL records; rerun with --record-kl", path.display());
                    };
                    samples.extend_from_slice(kl);
                }
                let d = &t.header.session.draft;
                let table = specgraph::analysis::KlTable { rows: vec![KlRow::from_samples(d.k, d.tau, &samples)] };
                prefixed(&table.to_csv(), &t, &mut out);
            }
        }
        Study::ChildRank => {
            out += "trace,mode,rank,count,fraction_of_steps,fraction_of_accepts\n";
            for path in &a.traces {
                let t = load_trace(path)?;
                prefixed(&child_position_acceptance(&t).to_csv(), &t, &mut out);
            }
        }
        Study::Timing => {
            out += "trace,mode,stages,draft_s,verify_s,others_s,total_s,\
                    modeled_draft,modeled_verify,modeled_others,modeled_total\n";
            for path in &a.traces {
                let t = load_trace(path)?;
                let Some(tm) = load_timings(path)? else {
                    bail!("no timing file {} for {}", timing_path(path).display(), path.display());
                };
                let w = timing_summary(&tm);
                let m = compute_metrics(&t)?.modeled;
                out += &format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    csv_field(&t.header.name),
                    t.header.session.draft.mode,
                    w.stages,
                    w.draft,
                    w.verify,
                    w.others,
                    w.total,
                    m.draft,
                    m.verify,
                    m.others,
                    m.total()
                );
            }
        }
    }
    emit(&a.out, &out)
}
