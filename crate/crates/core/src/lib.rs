//! Speculative decoding with chain, tree and graph-structured drafts.
//!
//! A draft model proposes candidate continuations; a target model verifies
//! them in one masked forward pass. Graph drafting merges nodes whose recent
//! tokens repeat elsewhere in the draft so that shared continuations are
//! drafted once.

pub mod analysis;
pub mod dist;
pub mod draft;
pub mod error;
pub mod graph;
pub mod model;
pub mod session;
pub mod trace;
pub mod verify;
pub mod vocab;

pub type TokenId = u32;

pub use dist::{argmax_token, sample_token, Distribution, SamplingParams};
pub use draft::{DraftConfig, Mode, Verification};
pub use error::{Error, Result};
pub use graph::{NodeId, NodeStatus, TokenGraph};
pub use model::{CostParams, ForwardWork, LanguageModel, NGramModel, ScriptedModel};
pub use session::{run_session, SessionConfig, SessionOutput, StageRecord};
pub use trace::Trace;
pub use vocab::{TokenizerKind, Vocabulary};
