//! Prompt assembly and chat transports.
//!
//! Templates are rendered in a single pass — bound values are never
//! rescanned for placeholders, so record text containing `{braces}` cannot
//! inject into the prompt. Transports sit behind [`ChatTransport`]: the
//! replay transport answers from recorded fixtures keyed by a request
//! digest (fully offline and byte-deterministic), the HTTP transport talks
//! to a chat-completions endpoint.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::sha256_hex;
use crate::retrieve::ParentHit;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("template {template} has no binding for placeholder {{{placeholder}}}")]
    MissingBinding {
        template: String,
        placeholder: String,
    },
    #[error("no recorded reply for request digest {digest} (expected fixture at {path})")]
    ReplayMiss { digest: String, path: String },
    #[error("top-ranked context needs {needed} characters but the budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("chat endpoint {url} returned status {status}")]
    Http { url: String, status: u16 },
    #[error("network error calling {url}: {detail}")]
    Network { url: String, detail: String },
    #[error("giving up after {attempts} attempts: {detail}")]
    RetriesExhausted { attempts: u32, detail: String },
    #[error("malformed chat response: {detail}")]
    BadResponse { detail: String },
    #[error("chat request has no messages")]
    EmptyMessages,
    #[error("unsupported message role {role:?}")]
    BadRole { role: String },
    #[error("temperature must be finite and non-negative, got {value}")]
    BadTemperature { value: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A named pair of system and user templates with `{placeholder}` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub system: String,
    pub user: String,
}

/// A template with every placeholder substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    /// Substitutes `{placeholder}` slots from `bindings`. Placeholders are
    /// `[a-z_]+` between braces; anything else brace-shaped stays literal.
    /// Substituted values are emitted verbatim, never rescanned.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<RenderedPrompt, LlmError> {
        Ok(RenderedPrompt {
            system: self.fill(&self.system, bindings)?,
            user: self.fill(&self.user, bindings)?,
        })
    }

    fn fill(&self, template: &str, bindings: &BTreeMap<&str, &str>) -> Result<String, LlmError> {
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let name_len = after
                .bytes()
                .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
                .count();
            if name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}') {
                let name = &after[..name_len];
                let value = bindings.get(name).ok_or_else(|| LlmError::MissingBinding {
                    template: self.name.to_string(),
                    placeholder: name.to_string(),
                })?;
                out.push_str(value);
                rest = &after[name_len + 1..];
            } else {
                out.push('{');
                rest = after;
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// The built-in prompt templates.
pub mod templates {
    use super::PromptTemplate;

    /// Prompt for summarizing what changed between two versions of a CVE
    /// record. The system text is a fixed artifact — downstream fixtures
    /// and recorded replies key on it byte-for-byte, so it must not drift.
    pub fn change_summary() -> PromptTemplate {
        PromptTemplate {
            name: "change-summary",
            system: "You are Bob, a cybersecurity professor and expert. Please compare the \
                     differences in the specific content of the same CVE number after changes \
                     and summarize the changes in several sentences. Remain faithful to the \
                     original text and do not fabricate content."
                .to_string(),
            user: "CVE-ID: {cve_id}\n\nBefore the change:\n{old_value}\n\nAfter the change:\n{new_value}"
                .to_string(),
        }
    }

    /// Prompt for answering a question from retrieved CVE context.
    pub fn rag_answer() -> PromptTemplate {
        PromptTemplate {
            name: "rag-answer",
            system: "You are a vulnerability analyst. Answer strictly from the provided CVE \
                     context. If the context does not contain the answer, say so plainly."
                .to_string(),
            user: "Context:\n{context}\n\nQuestion: {question}".to_string(),
        }
    }

    /// Plain chain-of-thought baseline prompt: a generic placeholder for
    /// comparison runs, deliberately not tuned for the CVE domain.
    pub fn cot_baseline() -> PromptTemplate {
        PromptTemplate {
            name: "cot-baseline",
            system: "You are a careful assistant. Think through the question step by step, \
                     then state your final answer on its own line."
                .to_string(),
            user: "{question}".to_string(),
        }
    }
}

/// Greedy prefix of ranked parents whose texts fit a character budget.
///
/// The budget covers the joined context block (texts separated by one
/// newline). The top-ranked parent must fit on its own; otherwise no
/// truncation could preserve it, and that is an error rather than a silent
/// drop.
pub fn select_contexts(parents: &[ParentHit], budget: usize) -> Result<Vec<&ParentHit>, LlmError> {
    let mut kept = Vec::new();
    let mut used = 0usize;
    for (i, hit) in parents.iter().enumerate() {
        let len = hit.parent.full_text.chars().count();
        let needed = if i == 0 { len } else { used + 1 + len };
        if needed > budget {
            if i == 0 {
                return Err(LlmError::BudgetExceeded {
                    needed: len,
                    budget,
                });
            }
            break;
        }
        used = needed;
        kept.push(hit);
    }
    Ok(kept)
}

/// Builds the user prompt for a query: retrieved parent texts under the
/// budget, rendered through the RAG answer template. With nothing retrieved
/// the query passes through verbatim.
pub fn augment(query: &str, parents: &[ParentHit], budget: usize) -> Result<String, LlmError> {
    if parents.is_empty() {
        return Ok(query.to_string());
    }
    let kept = select_contexts(parents, budget)?;
    let context = kept
        .iter()
        .map(|h| h.parent.full_text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let rendered = templates::rag_answer().render(&BTreeMap::from([
        ("context", context.as_str()),
        ("question", query),
    ]))?;
    Ok(rendered.user)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::EmptyMessages);
        }
        for message in &self.messages {
            if !matches!(message.role.as_str(), "system" | "user" | "assistant") {
                return Err(LlmError::BadRole {
                    role: message.role.clone(),
                });
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::BadTemperature {
                value: self.temperature,
            });
        }
        Ok(())
    }
}

/// Builds the full chat request for a RAG answer.
pub fn rag_chat_request(
    query: &str,
    parents: &[ParentHit],
    budget: usize,
    model: &str,
    temperature: f64,
) -> Result<ChatRequest, LlmError> {
    let user = augment(query, parents, budget)?;
    let request = ChatRequest {
        model: model.to_string(),
        temperature,
        messages: vec![
            ChatMessage {
                role: "system".to_string(),
                content: templates::rag_answer().system,
            },
            ChatMessage {
                role: "user".to_string(),
                content: user,
            },
        ],
    };
    request.validate()?;
    Ok(request)
}

/// Stable content address of a request: sha256 over its canonical JSON
/// (fixed field order, no whitespace). Replay fixtures are named by it.
pub fn request_digest(request: &ChatRequest) -> String {
    let canonical = serde_json::to_string(request).expect("string-only struct serializes");
    sha256_hex(canonical.as_bytes())
}

/// Something that answers chat requests.
pub trait ChatTransport {
    fn name(&self) -> &'static str;
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// Offline transport answering from recorded fixtures:
/// `<dir>/<request digest>.json`, each holding `{"content": "..."}`.
///
/// A missing fixture fails with the digest and the expected path, which is
/// exactly what a caller needs in order to record the fixture and rerun.
pub struct ReplayTransport {
    dir: PathBuf,
}

impl ReplayTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayTransport { dir: dir.into() }
    }

    pub fn fixture_path(&self, request: &ChatRequest) -> PathBuf {
        self.dir.join(format!("{}.json", request_digest(request)))
    }

    /// Records `content` as the reply for `request`; returns the fixture
    /// path.
    pub fn record(&self, request: &ChatRequest, content: &str) -> Result<PathBuf, LlmError> {
        let path = self.fixture_path(request);
        std::fs::create_dir_all(&self.dir).map_err(|source| LlmError::Io {
            path: self.dir.display().to_string(),
            source,
        })?;
        let body = serde_json::to_string(&ChatResponse {
            content: content.to_string(),
        })
        .expect("string-only struct serializes");
        std::fs::write(&path, body + "\n").map_err(|source| LlmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }
}

impl ChatTransport for ReplayTransport {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let path = self.fixture_path(request);
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(LlmError::ReplayMiss {
                    digest: request_digest(request),
                    path: path.display().to_string(),
                })
            }
            Err(source) => {
                return Err(LlmError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        serde_json::from_str(&text).map_err(|e| LlmError::BadResponse {
            detail: format!("fixture {}: {e}", path.display()),
        })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

/// Chat-completions HTTP transport with bounded retries on throttling and
/// server errors.
pub struct HttpChatTransport {
    endpoint: String,
    api_key: Option<String>,
    max_attempts: u32,
    backoff: Duration,
}

impl HttpChatTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        HttpChatTransport {
            endpoint: endpoint.into(),
            api_key,
            max_attempts: 3,
            backoff: Duration::from_secs(2),
        }
    }

    fn call_once(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let wire = WireRequest {
            model: &request.model,
            temperature: request.temperature,
            messages: &request.messages,
        };
        let mut builder = ureq::post(&self.endpoint);
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = builder.send_json(&wire).map_err(|e| match e {
            ureq::Error::StatusCode(status) => LlmError::Http {
                url: self.endpoint.clone(),
                status,
            },
            other => LlmError::Network {
                url: self.endpoint.clone(),
                detail: other.to_string(),
            },
        })?;
        let parsed: WireResponse =
            response
                .body_mut()
                .read_json()
                .map_err(|e| LlmError::BadResponse {
                    detail: e.to_string(),
                })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::BadResponse {
                detail: "response has no choices".to_string(),
            })?;
        Ok(ChatResponse {
            content: choice.message.content,
        })
    }
}

impl ChatTransport for HttpChatTransport {
    fn name(&self) -> &'static str {
        "http"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let mut last = None;
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff);
            }
            match self.call_once(request) {
                Ok(response) => return Ok(response),
                Err(e @ LlmError::Http { status, .. })
                    if status == 429 || (500..600).contains(&status) =>
                {
                    last = Some(e);
                }
                Err(e @ LlmError::Network { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(LlmError::RetriesExhausted {
            attempts: self.max_attempts,
            detail: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::ParentDoc;

    fn bindings<'a>(pairs: &[(&'a str, &'a str)]) -> BTreeMap<&'a str, &'a str> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn change_summary_renders_both_record_versions() {
        let template = templates::change_summary();
        let rendered = template
            .render(&bindings(&[
                ("cve_id", "CVE-2024-0001"),
                ("old_value", "old text"),
                ("new_value", "new text"),
            ]))
            .unwrap();
        assert!(rendered.system.starts_with("You are Bob"));
        assert_eq!(rendered.system, template.system, "system has no slots");
        assert!(rendered.user.contains("CVE-ID: CVE-2024-0001"));
        let old_at = rendered.user.find("old text").unwrap();
        let new_at = rendered.user.find("new text").unwrap();
        assert!(old_at < new_at, "old version must come first");
    }

    #[test]
    fn missing_bindings_name_the_placeholder() {
        let err = templates::change_summary()
            .render(&bindings(&[
                ("cve_id", "CVE-2024-0001"),
                ("old_value", "x"),
            ]))
            .unwrap_err();
        match err {
            LlmError::MissingBinding { placeholder, .. } => {
                assert_eq!(placeholder, "new_value")
            }
            other => panic!("expected MissingBinding, got {other:?}"),
        }
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let rendered = templates::change_summary()
            .render(&bindings(&[
                ("cve_id", "CVE-2024-0001"),
                ("old_value", "literal {new_value} inside a record"),
                ("new_value", "REPLACEMENT"),
            ]))
            .unwrap();
        assert!(
            rendered.user.contains("literal {new_value} inside"),
            "value text must stay verbatim: {}",
            rendered.user
        );
    }

    #[test]
    fn non_placeholder_braces_stay_literal() {
        let template = PromptTemplate {
            name: "test",
            system: String::new(),
            user: "set {x} and {Bad-Name} and {unclosed".to_string(),
        };
        let rendered = template.render(&bindings(&[("x", "1")])).unwrap();
        assert_eq!(rendered.user, "set 1 and {Bad-Name} and {unclosed");
    }

    fn parent_hit(parent_id: &str, text: &str, score: f64) -> ParentHit {
        ParentHit {
            parent: ParentDoc {
                parent_id: parent_id.to_string(),
                cve_id: format!("CVE-2024-{parent_id}"),
                sentences: vec![text.to_string()],
                full_text: text.to_string(),
            },
            score,
        }
    }

    #[test]
    fn budget_keeps_a_ranked_prefix() {
        let parents = vec![
            parent_hit("a", "0123456789", 0.9), // 10 chars
            parent_hit("b", "0123456789", 0.8), // +1 separator +10
            parent_hit("c", "0123456789", 0.7),
        ];
        let kept = select_contexts(&parents, 21).unwrap();
        assert_eq!(kept.len(), 2, "third context would need 32 characters");

        let err = select_contexts(&parents, 5).unwrap_err();
        match err {
            LlmError::BudgetExceeded { needed, budget } => {
                assert_eq!((needed, budget), (10, 5))
            }
            other => panic!("expected BudgetExceeded, got {other:?}"),
        }
    }

    #[test]
    fn augment_passes_bare_queries_through() {
        assert_eq!(
            augment("just a question", &[], 100).unwrap(),
            "just a question"
        );
        let parents = vec![parent_hit("a", "cve_id: CVE-2024-0001\n", 1.0)];
        let prompt = augment("what changed?", &parents, 100).unwrap();
        assert!(prompt.starts_with("Context:\n"));
        assert!(prompt.contains("cve_id: CVE-2024-0001"));
        assert!(prompt.ends_with("Question: what changed?"));
    }

    fn sample_request() -> ChatRequest {
        ChatRequest {
            model: "local-replay".to_string(),
            temperature: 0.0,
            messages: vec![
                ChatMessage {
                    role: "system".to_string(),
                    content: "be brief".to_string(),
                },
                ChatMessage {
                    role: "user".to_string(),
                    content: "ping".to_string(),
                },
            ],
        }
    }

    #[test]
    fn digests_are_stable_and_content_sensitive() {
        let request = sample_request();
        let digest = request_digest(&request);
        assert_eq!(digest.len(), 64);
        assert!(digest.bytes().all(|b| b.is_ascii_hexdigit()));
        assert_eq!(digest, request_digest(&request.clone()));

        let mut warmer = request.clone();
        warmer.temperature = 0.7;
        assert_ne!(digest, request_digest(&warmer));
    }

    #[test]
    fn replay_answers_recorded_requests_and_names_misses() {
        let dir = tempfile::tempdir().unwrap();
        let transport = ReplayTransport::new(dir.path());
        let request = sample_request();

        let miss = transport.send(&request).unwrap_err();
        let digest = request_digest(&request);
        let message = miss.to_string();
        assert!(
            message.contains(&digest),
            "miss must print digest: {message}"
        );
        assert!(
            message.contains(".json"),
            "miss must print the path: {message}"
        );

        transport.record(&request, "pong").unwrap();
        assert_eq!(transport.send(&request).unwrap().content, "pong");
    }

    #[test]
    fn requests_are_validated_before_sending() {
        let empty = ChatRequest {
            model: "m".to_string(),
            temperature: 0.0,
            messages: vec![],
        };
        assert!(matches!(empty.validate(), Err(LlmError::EmptyMessages)));

        let mut bad_role = sample_request();
        bad_role.messages[0].role = "narrator".to_string();
        assert!(matches!(bad_role.validate(), Err(LlmError::BadRole { .. })));

        let mut cold = sample_request();
        cold.temperature = -1.0;
        assert!(matches!(
            cold.validate(),
            Err(LlmError::BadTemperature { .. })
        ));
    }

    #[test]
    fn rag_requests_carry_system_and_augmented_user() {
        let parents = vec![parent_hit("a", "cve_id: CVE-2024-0001\n", 1.0)];
        let request =
            rag_chat_request("what changed?", &parents, 400, "local-replay", 0.0).unwrap();
        assert_eq!(request.messages.len(), 2);
        assert_eq!(request.messages[0].role, "system");
        assert!(request.messages[0]
            .content
            .contains("vulnerability analyst"));
        assert_eq!(request.messages[1].role, "user");
        assert!(request.messages[1].content.contains("what changed?"));
    }
}
