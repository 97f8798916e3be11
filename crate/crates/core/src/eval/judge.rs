//! Claim and relevance judges.
//!
//! The rule-based judge is the deterministic default: a claim counts as
//! supported when its normalized token sequence appears contiguously in the
//! target text. The LLM judge asks a chat transport the same questions and
//! expects YES/NO answers.

use crate::eval::text::{contains_subsequence, extract_claims, normalize_tokens};
use crate::eval::EvalError;
use crate::llm::{ChatMessage, ChatRequest, ChatTransport};

/// Decides whether claims are supported by text and whether retrieved
/// contexts are relevant to a question.
pub trait Judge {
    fn name(&self) -> &'static str;

    /// Is `claim` supported by `target`?
    fn supports(&self, claim: &str, target: &str) -> Result<bool, EvalError>;

    /// Is `context` relevant to answering `question` given the expected
    /// `ground_truth`?
    fn context_relevant(
        &self,
        context: &str,
        question: &str,
        ground_truth: &str,
    ) -> Result<bool, EvalError>;
}

/// Deterministic token-containment judge.
pub struct RuleJudge;

impl Judge for RuleJudge {
    fn name(&self) -> &'static str {
        "rule"
    }

    fn supports(&self, claim: &str, target: &str) -> Result<bool, EvalError> {
        let needle = normalize_tokens(claim);
        if needle.is_empty() {
            return Ok(false);
        }
        Ok(contains_subsequence(&needle, &normalize_tokens(target)))
    }

    /// A context is relevant when it contains the question's token sequence
    /// or any ground-truth claim's token sequence.
    fn context_relevant(
        &self,
        context: &str,
        question: &str,
        ground_truth: &str,
    ) -> Result<bool, EvalError> {
        let target = normalize_tokens(context);
        let question_tokens = normalize_tokens(question);
        if !question_tokens.is_empty() && contains_subsequence(&question_tokens, &target) {
            return Ok(true);
        }
        for claim in extract_claims(ground_truth) {
            let needle = normalize_tokens(&claim);
            if !needle.is_empty() && contains_subsequence(&needle, &target) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Judge that delegates verdicts to a chat model. Replies must start with
/// YES or NO (case-insensitive); anything else is an error rather than a
/// silent guess.
pub struct LlmJudge<'a> {
    transport: &'a dyn ChatTransport,
    model: String,
}

impl<'a> LlmJudge<'a> {
    pub fn new(transport: &'a dyn ChatTransport, model: impl Into<String>) -> Self {
        LlmJudge {
            transport,
            model: model.into(),
        }
    }

    fn ask(&self, user: String) -> Result<bool, EvalError> {
        let request = ChatRequest {
            model: self.model.clone(),
            temperature: 0.0,
            messages: vec![
                ChatMessage {
                    role: "system".to_string(),
                    content: "You are a strict grader. Reply with exactly YES or NO.".to_string(),
                },
                ChatMessage {
                    role: "user".to_string(),
                    content: user,
                },
            ],
        };
        let response = self.transport.send(&request)?;
        let verdict = response.content.trim().to_ascii_uppercase();
        if verdict.starts_with("YES") {
            Ok(true)
        } else if verdict.starts_with("NO") {
            Ok(false)
        } else {
            Err(EvalError::Judge {
                detail: format!("expected YES or NO, got {:?}", response.content),
            })
        }
    }
}

impl Judge for LlmJudge<'_> {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn supports(&self, claim: &str, target: &str) -> Result<bool, EvalError> {
        self.ask(format!(
            "Statement:\n{claim}\n\nSource text:\n{target}\n\nIs the statement fully supported by the source text?"
        ))
    }

    fn context_relevant(
        &self,
        context: &str,
        question: &str,
        ground_truth: &str,
    ) -> Result<bool, EvalError> {
        self.ask(format!(
            "Question:\n{question}\n\nExpected answer:\n{ground_truth}\n\nContext:\n{context}\n\nIs the context relevant to answering the question?"
        ))
    }
}
