//! Text-to-physics translation: the simulation spec language, the grounding
//! bundle given to a language model, the model client with its repair loop,
//! and a deterministic keyword translator for offline use.

mod convert;
pub mod diag;
pub mod dsl;
pub mod grounding;
pub mod llm;
pub mod offline;

pub use diag::{Diagnostic, DiagnosticKind, SpecError};
pub use dsl::{parse_spec, SimSpec};
pub use grounding::GroundingBundle;
pub use llm::{translate, HttpLlm, LlmBackend, LlmConfig, SceneSummary, TranslateError};
pub use offline::offline_translate;
