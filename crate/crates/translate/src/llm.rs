//! Language-model client and the prompt-to-spec repair loop.

use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::diag::{Diagnostic, DiagnosticKind};
use crate::dsl::{parse_spec, SimSpec};
use crate::grounding::GroundingBundle;

pub const KEY_ENV: &str = "PHYSTALK_LLM_KEY";
pub const URL_ENV: &str = "PHYSTALK_LLM_URL";
pub const MODEL_ENV: &str = "PHYSTALK_LLM_MODEL";
/// Total attempts, the first included.
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum TranslateError {
    /// Every attempt produced a spec that failed validation. One entry per
    /// attempt, in order.
    #[error("translation failed after {} attempts; last problems:\n{}", .attempts.len(), render(.attempts.last()))]
    TranslationFailed { attempts: Vec<Vec<Diagnostic>> },
    #[error("language model transport error: {0}")]
    Transport(String),
    #[error("language model config error: {0}")]
    Config(String),
}

fn render(diags: Option<&Vec<Diagnostic>>) -> String {
    diags
        .map(|d| {
            d.iter()
                .map(|d| format!("  {d}"))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .unwrap_or_default()
}

/// A chat model: one system message, one user message, one reply.
pub trait LlmBackend {
    fn complete(&self, system: &str, user: &str) -> Result<String, TranslateError>;
}

impl<F> LlmBackend for F
where
    F: Fn(&str, &str) -> Result<String, TranslateError>,
{
    fn complete(&self, system: &str, user: &str) -> Result<String, TranslateError> {
        self(system, user)
    }
}

/// Endpoint settings. The key is never stored in the config file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    /// Chat-completions URL.
    pub url: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

fn default_timeout() -> f64 {
    60.0
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            timeout_s: default_timeout(),
            temperature: 0.0,
            api_key: None,
        }
    }
}

impl LlmConfig {
    /// Defaults, then the optional TOML file, then environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, TranslateError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| TranslateError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| {
                    TranslateError::Config(format!("{}: {}", p.display(), e.message()))
                })?
            }
            None => LlmConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(u) = get(URL_ENV) {
            self.url = u;
        }
        if let Some(m) = get(MODEL_ENV) {
            self.model = m;
        }
        self.api_key = get(KEY_ENV).filter(|k| !k.is_empty());
    }
}

/// Chat-completions client over HTTP.
pub struct HttpLlm {
    config: LlmConfig,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpLlm { config, agent }
    }
}

impl LlmBackend for HttpLlm {
    fn complete(&self, system: &str, user: &str) -> Result<String, TranslateError> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| TranslateError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TranslateError::Transport(format!(
                "HTTP {status}: {}",
                text.chars().take(500).collect::<String>()
            )));
        }
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TranslateError::Transport(format!("bad response body: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                TranslateError::Transport("response has no choices[0].message.content".into())
            })
    }
}

/// What the model is told about the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSummary {
    pub gaussian_count: usize,
    pub object_count: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl SceneSummary {
    pub fn describe(&self) -> String {
        let f = |v: [f64; 3]| format!("[{:.3}, {:.3}, {:.3}]", v[0], v[1], v[2]);
        format!(
            "Scene: {} Gaussians, {} in the object. Object bounding box min {} max {} (metres).",
            self.gaussian_count,
            self.object_count,
            f(self.bbox_min),
            f(self.bbox_max)
        )
    }
}

/// Pull the spec document out of a reply: the first ```spec block, else
/// the first ```toml block, else a bare reply that looks like a spec.
pub fn extract_spec_block(reply: &str) -> Option<&str> {
    for fence in ["```spec", "```toml"] {
        if let Some(start) = reply.find(fence) {
            let body = &reply[start + fence.len()..];
            let body = body.strip_prefix('\r').unwrap_or(body);
            let body = body.strip_prefix('\n')?;
            let end = body.find("```").unwrap_or(body.len());
            return Some(&body[..end]);
        }
    }
    let trimmed = reply.trim();
    (!trimmed.contains("```") && trimmed.contains("spec_version")).then_some(trimmed)
}

pub fn user_message(prompt: &str, scene: Option<&SceneSummary>, problems: &[Diagnostic]) -> String {
    let mut out = format!("Request: {}\n", prompt.trim());
    if let Some(s) = scene {
        out.push('\n');
        out.push_str(&s.describe());
        out.push('\n');
    }
    if !problems.is_empty() {
        out.push_str("\nYour previous spec for this request was rejected. Problems:\n");
        for d in problems {
            out.push_str(&format!("- {d}\n"));
        }
        out.push_str("Return the whole corrected spec.\n");
    }
    out
}

/// Ask the model for a spec and validate it, re-prompting with the
/// diagnostics of the failed attempt. `max_attempts` counts every call.
pub fn translate(
    prompt: &str,
    bundle: &GroundingBundle,
    llm: &dyn LlmBackend,
    scene: Option<&SceneSummary>,
    max_attempts: u32,
) -> Result<SimSpec, TranslateError> {
    let system = bundle.system_message();
    let mut attempts: Vec<Vec<Diagnostic>> = Vec::new();
    for _ in 0..max_attempts.max(1) {
        let user = user_message(prompt, scene, attempts.last().map_or(&[], |d| d.as_slice()));
        let reply = llm.complete(&system, &user)?;
        let diags = match extract_spec_block(&reply) {
            None => vec![Diagnostic {
                kind: DiagnosticKind::Syntax,
                path: String::new(),
                line: None,
                message: "reply contains no ```spec block".into(),
            }],
            Some(block) => match parse_spec(block) {
                Ok(spec) => return Ok(spec),
                Err(e) => e.diagnostics,
            },
        };
        log::debug!(
            "attempt {} rejected: {} problems",
            attempts.len() + 1,
            diags.len()
        );
        attempts.push(diags);
    }
    Err(TranslateError::TranslationFailed { attempts })
}
