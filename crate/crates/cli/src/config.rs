//! Run settings: defaults, then a key-value config file, then flags.
//!
//! Config files hold one `key = value` per line; `#` starts a comment.
//! Keys: `mode`, `k`, `gamma`, `theta_prob`, `theta_sib`, `tau`,
//! `verification`, `top_p`, `temperature`, `seed`, `max_output`, `max_input`,
//! `draft_cost`, `target_cost` (each `per_forward,per_token,attention`),
//! `draft_model`, `target_model`, `prompts`, `trace_graphs`, `record_kl`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use specgraph::draft::{Mode, Verification};
use specgraph::{CostParams, SessionConfig};

use crate::args::{ModeArg, RunArgs};
use crate::UsageError;

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub session: SessionConfig,
    pub draft_cost: CostParams,
    pub target_cost: CostParams,
    pub draft_model: Option<PathBuf>,
    pub target_model: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            draft_cost: CostParams::DRAFT,
            target_cost: CostParams::TARGET,
            draft_model: None,
            target_model: None,
            prompts: None,
        }
    }
}

fn parse_triple(s: &str) -> Result<CostParams> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!(UsageError(format!("bad cost triple {s:?}"))))?;
    match v[..] {
        [per_forward, per_token, attention]
            if v.iter().all(|x| *x >= 0.0 && x.is_finite()) =>
        {
            Ok(CostParams { per_forward, per_token, attention })
        }
        _ => Err(anyhow!(UsageError(format!(
            "cost needs three non-negative numbers per_forward,per_token,attention, got {s:?}"
        )))),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(anyhow!(UsageError(format!("bad boolean {v:?} for {key}")))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!(UsageError(format!("bad value {v:?} for {key}"))))
}

impl RunSettings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self
            .session
            .draft
            .set(key, value)
            .map_err(|e| anyhow!(UsageError(e.to_string())))?
        {
            return Ok(());
        }
        match key {
            "max_output" => self.session.max_output = parse_num(key, value)?,
            "max_input" => self.session.max_input = parse_num(key, value)?,
            "trace_graphs" => self.session.record_graphs = parse_bool(key, value)?,
            "record_kl" => self.session.record_kl = parse_bool(key, value)?,
            "draft_cost" => self.draft_cost = parse_triple(value)?,
            "target_cost" => self.target_cost = parse_triple(value)?,
            "draft_model" => self.draft_model = Some(value.into()),
            "target_model" => self.target_model = Some(value.into()),
            "prompts" => self.prompts = Some(value.into()),
            _ => return Err(anyhow!(UsageError(format!("unknown config key {key:?}")))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                anyhow!(UsageError(format!("{origin}:{}: expected key = value", i + 1)))
            })?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `role=a,b,c` pairs separated by `;`, roles `draft` and `target`.
    pub fn apply_cost_spec(&mut self, spec: &str) -> Result<()> {
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (role, triple) = part
                .split_once('=')
                .ok_or_else(|| anyhow!(UsageError(format!("bad cost spec {part:?}"))))?;
            match role.trim() {
                "draft" => self.draft_cost = parse_triple(triple)?,
                "target" => self.target_cost = parse_triple(triple)?,
                r => return Err(anyhow!(UsageError(format!("unknown cost role {r:?}")))),
            }
        }
        Ok(())
    }

    pub fn from_args(a: &RunArgs) -> Result<Self> {
        let mut s = RunSettings::default();
        if let Some(p) = &a.config {
            s.apply_file(p)?;
        }
        let d = &mut s.session.draft;
        if let Some(m) = a.mode {
            d.mode = match m {
                ModeArg::Vanilla => Mode::Vanilla,
                ModeArg::Ssd => Mode::Ssd,
                ModeArg::Tsd => Mode::Tsd,
                ModeArg::Gsd => Mode::Gsd,
            };
        }
        macro_rules! over {
            ($($src:ident => $dst:expr),*) => { $(if let Some(v) = a.$src { $dst = v; })* };
        }
        over!(k => d.k, gamma => d.gamma_max, theta_prob => d.theta_prob,
              theta_sib => d.theta_sib, tau => d.tau, top_p => d.top_p,
              temperature => d.temperature, seed => d.seed,
              max_output => s.session.max_output, max_input => s.session.max_input);
        if a.stochastic {
            s.session.draft.verification = Verification::Stochastic;
        } else if a.deterministic {
            s.session.draft.verification = Verification::Deterministic;
        }
        s.session.record_graphs |= a.trace_graphs;
        s.session.record_kl |= a.record_kl;
        if let Some(c) = &a.cost_params {
            s.apply_cost_spec(c)?;
        }
        for (dst, src) in [
            (&mut s.draft_model, &a.draft_model),
            (&mut s.target_model, &a.target_model),
            (&mut s.prompts, &a.prompts),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        s.session.validate().map_err(|e| anyhow!(UsageError(e.to_string())))?;
        Ok(s)
    }
}
