//! Question generators for the answer-relevance metric: paraphrase an
//! answer back into questions, which are then embedded and compared with
//! the original question.

use crate::eval::text::{extract_claims, normalize_tokens};
use crate::eval::EvalError;
use crate::llm::{ChatMessage, ChatRequest, ChatTransport};

/// Produces up to `count` questions that `answer` would answer. Returning
/// fewer — even zero for degenerate input — is allowed; the caller treats
/// an empty set as "metric undefined".
pub trait QuestionGenerator {
    fn name(&self) -> &'static str;
    fn generate(&self, answer: &str, count: usize) -> Result<Vec<String>, EvalError>;
}

const QUESTION_FORMS: [&str; 3] = [
    "What is stated about {}?",
    "Which detail of the record concerns {}?",
    "What does the answer say regarding {}?",
];

/// Deterministic generator: cycles through the answer's claims and a fixed
/// set of question forms, using each claim's longest token as the subject.
pub struct TemplateQuestionGenerator;

impl QuestionGenerator for TemplateQuestionGenerator {
    fn name(&self) -> &'static str {
        "template"
    }

    fn generate(&self, answer: &str, count: usize) -> Result<Vec<String>, EvalError> {
        let claims = extract_claims(answer);
        if claims.is_empty() {
            return Ok(Vec::new());
        }
        let subjects: Vec<String> = claims
            .iter()
            .map(|claim| {
                let tokens = normalize_tokens(claim);
                // first-longest keeps ties deterministic
                tokens.iter().fold(String::new(), |best, t| {
                    if t.len() > best.len() {
                        t.clone()
                    } else {
                        best
                    }
                })
            })
            .collect();
        Ok((0..count)
            .map(|i| {
                let form = QUESTION_FORMS[i % QUESTION_FORMS.len()];
                form.replace("{}", &subjects[i % subjects.len()])
            })
            .collect())
    }
}

/// Generator that asks a chat model for questions, one per line. Leading
/// list markers ("1.", "-", "*") are stripped; blank lines are dropped.
pub struct LlmQuestionGenerator<'a> {
    transport: &'a dyn ChatTransport,
    model: String,
}

impl<'a> LlmQuestionGenerator<'a> {
    pub fn new(transport: &'a dyn ChatTransport, model: impl Into<String>) -> Self {
        LlmQuestionGenerator {
            transport,
            model: model.into(),
        }
    }
}

impl QuestionGenerator for LlmQuestionGenerator<'_> {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn generate(&self, answer: &str, count: usize) -> Result<Vec<String>, EvalError> {
        let request = ChatRequest {
            model: self.model.clone(),
            temperature: 0.0,
            messages: vec![
                ChatMessage {
                    role: "system".to_string(),
                    content: "You write short factual questions. Output one question per line, \
                              nothing else."
                        .to_string(),
                },
                ChatMessage {
                    role: "user".to_string(),
                    content: format!(
                        "Write {count} distinct questions that the text below answers.\n\nText:\n{answer}"
                    ),
                },
            ],
        };
        let response = self.transport.send(&request)?;
        Ok(response
            .content
            .lines()
            .map(strip_list_marker)
            .filter(|line| !line.is_empty())
            .take(count)
            .map(str::to_string)
            .collect())
    }
}

fn strip_list_marker(line: &str) -> &str {
    let trimmed = line.trim();
    let without_digits = trimmed.trim_start_matches(|c: char| c.is_ascii_digit());
    let stripped = without_digits.strip_prefix(['.', ')', '-', '*']).unwrap_or(
        if without_digits.len() < trimmed.len() {
            // bare "3 What..." style marker
            without_digits
        } else {
            trimmed
        },
    );
    stripped.trim()
}
