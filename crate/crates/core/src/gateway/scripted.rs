use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;

use super::{Backend, GatewayError, GenerationRequest, GenerationResponse, MalformedReason};

/// Reply `response` when every substring in `needles` occurs in the prompt.
/// A rule with no needles is a default and only fires when nothing else does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRule {
    pub needles: Vec<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn new(needle: impl Into<String>, response: impl Into<String>) -> Self {
        let needle = needle.into();
        let needles = if needle.is_empty() { Vec::new() } else { vec![needle] };
        ScriptRule { needles, response: response.into() }
    }

    pub fn all_of<I, S>(needles: I, response: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptRule {
            needles: needles.into_iter().map(Into::into).filter(|s: &String| !s.is_empty()).collect(),
            response: response.into(),
        }
    }

    pub fn is_default(&self) -> bool {
        self.needles.is_empty()
    }

    fn matches(&self, prompt: &str) -> bool {
        !self.is_default() && self.needles.iter().all(|n| prompt.contains(n.as_str()))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Needle {
    One(String),
    All(Vec<String>),
}

#[derive(Deserialize)]
struct RuleEntry {
    #[serde(default)]
    match_substring: Option<Needle>,
    #[serde(default)]
    response_file: Option<String>,
    #[serde(default)]
    response: Option<String>,
}

/// Offline backend replying from a rule table. Rules are tried in order
/// against `system_prompt + "\n" + user_prompt`; the first match wins.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    rules: Vec<ScriptRule>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedBackend { id: "scripted".into(), rules, calls: AtomicUsize::new(0) }
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.rules.push(ScriptRule::new("", response));
        self
    }

    /// Load a JSON array of `{match_substring, response_file}` entries.
    /// `match_substring` may also be a list (all must match) and
    /// `response_file` is resolved relative to the rules file. An inline
    /// `response` string may be given instead of a file.
    pub fn from_rules_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let entries: Vec<RuleEntry> = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut rules = Vec::with_capacity(entries.len());
        for (i, entry) in entries.into_iter().enumerate() {
            let response = match (entry.response, entry.response_file) {
                (Some(inline), _) => inline,
                (None, Some(file)) => {
                    let p = base.join(file);
                    fs::read_to_string(&p)
                        .map_err(|e| GatewayError::Config(format!("rule {i}: {}: {e}", p.display())))?
                }
                (None, None) => {
                    return Err(GatewayError::Config(format!(
                        "rule {i} needs response_file or response"
                    )))
                }
            };
            let needles = match entry.match_substring {
                None => Vec::new(),
                Some(Needle::One(s)) => vec![s],
                Some(Needle::All(v)) => v,
            };
            rules.push(ScriptRule::all_of(needles, response));
        }
        let mut backend = ScriptedBackend::new(rules);
        backend.id = format!("scripted:{}", path.file_name().and_then(|n| n.to_str()).unwrap_or("rules"));
        Ok(backend)
    }

    /// Number of `generate` calls served so far, successful or not.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = format!("{}\n{}", req.system_prompt, req.user_prompt);
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(&prompt))
            .or_else(|| self.rules.iter().find(|r| r.is_default()))
            .ok_or(GatewayError::ResponseMalformed(MalformedReason::NoScriptMatch))?;
        Ok(GenerationResponse {
            text: rule.response.clone(),
            prompt_tokens: prompt.split_whitespace().count() as u64,
            completion_tokens: rule.response.split_whitespace().count() as u64,
            backend_id: self.id.clone(),
        })
    }
}
