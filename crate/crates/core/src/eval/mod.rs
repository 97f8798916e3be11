//! Answer-quality metrics for retrieval-augmented runs.
//!
//! Each sample is a question, the contexts retrieved for it, the generated
//! answer, and the expected answer. Retrieval metrics (faithfulness,
//! context recall, context precision) are undefined without contexts and
//! reported as absent rather than zero; the remaining metrics always score.
//! All defaults are deterministic and offline: rule-based judge, template
//! question generator, hashing embedder.

mod judge;
mod question;
mod text;

pub use judge::{Judge, LlmJudge, RuleJudge};
pub use question::{LlmQuestionGenerator, QuestionGenerator, TemplateQuestionGenerator};
pub use text::{bleu, contains_subsequence, extract_claims, normalize_tokens, rouge_l, RougeScore};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, EmbedError, Embedder};
use crate::llm::LlmError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("invalid evaluation config: {detail}")]
    Config { detail: String },
    #[error("line {line}: {detail}")]
    Import { line: usize, detail: String },
    #[error("judge returned an unusable verdict: {detail}")]
    Judge { detail: String },
    #[error("report serialization failed: {detail}")]
    Json { detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// One evaluation case: contexts are the retrieved texts in rank order and
/// may be empty for methods that answer without retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub question: String,
    #[serde(default)]
    pub contexts: Vec<String>,
    pub answer: String,
    pub ground_truth: String,
}

impl EvalSample {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (field, value) in [
            ("question", &self.question),
            ("answer", &self.answer),
            ("ground_truth", &self.ground_truth),
        ] {
            if value.trim().is_empty() {
                return Err(EvalError::Config {
                    detail: format!("{field} must be non-empty"),
                });
            }
        }
        Ok(())
    }
}

/// Mixing weights for answer correctness; must be non-negative and sum
/// to 1 so the score stays in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcWeights {
    pub claim_f1: f64,
    pub similarity: f64,
}

impl Default for AcWeights {
    fn default() -> Self {
        AcWeights {
            claim_f1: 0.75,
            similarity: 0.25,
        }
    }
}

impl AcWeights {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = (0.0..=1.0).contains(&self.claim_f1)
            && (0.0..=1.0).contains(&self.similarity)
            && (self.claim_f1 + self.similarity - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(EvalError::Config {
                detail: format!(
                    "correctness weights must be non-negative and sum to 1, got {} and {}",
                    self.claim_f1, self.similarity
                ),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Questions generated per answer for the relevance metric.
    pub question_count: usize,
    pub weights: AcWeights,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            question_count: 3,
            weights: AcWeights::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.question_count == 0 {
            return Err(EvalError::Config {
                detail: "question_count must be at least 1".to_string(),
            });
        }
        self.weights.validate()
    }
}

/// Fraction of the answer's claims supported by at least one context.
/// Undefined (None) without contexts or when the answer yields no claims.
pub fn faithfulness(
    answer: &str,
    contexts: &[String],
    judge: &dyn Judge,
) -> Result<Option<f64>, EvalError> {
    if contexts.is_empty() {
        return Ok(None);
    }
    let claims = extract_claims(answer);
    if claims.is_empty() {
        return Ok(None);
    }
    let mut supported = 0usize;
    for claim in &claims {
        for context in contexts {
            if judge.supports(claim, context)? {
                supported += 1;
                break;
            }
        }
    }
    Ok(Some(supported as f64 / claims.len() as f64))
}

/// Rank-weighted precision: Σ_k (Precision@k · v_k) / |relevant|, where
/// v_k is the judge's relevance verdict for the context at rank k. Putting
/// relevant contexts first scores higher — [1,0] gives 1.0 but [0,1] gives
/// 0.5. A retrieved-but-useless set scores 0.0; no contexts means
/// undefined.
pub fn context_precision_at_k(
    contexts: &[String],
    question: &str,
    ground_truth: &str,
    judge: &dyn Judge,
) -> Result<Option<f64>, EvalError> {
    if contexts.is_empty() {
        return Ok(None);
    }
    let mut relevant = 0usize;
    let mut sum = 0.0;
    for (i, context) in contexts.iter().enumerate() {
        if judge.context_relevant(context, question, ground_truth)? {
            relevant += 1;
            sum += relevant as f64 / (i + 1) as f64;
        }
    }
    if relevant == 0 {
        return Ok(Some(0.0));
    }
    Ok(Some(sum / relevant as f64))
}

/// Fraction of ground-truth claims attributable to at least one context.
/// Undefined without contexts or when the ground truth yields no claims.
pub fn context_recall(
    contexts: &[String],
    ground_truth: &str,
    judge: &dyn Judge,
) -> Result<Option<f64>, EvalError> {
    if contexts.is_empty() {
        return Ok(None);
    }
    let claims = extract_claims(ground_truth);
    if claims.is_empty() {
        return Ok(None);
    }
    let mut attributable = 0usize;
    for claim in &claims {
        for context in contexts {
            if judge.supports(claim, context)? {
                attributable += 1;
                break;
            }
        }
    }
    Ok(Some(attributable as f64 / claims.len() as f64))
}

/// Mean cosine similarity between the original question and questions
/// generated back from the answer. Undefined when the generator produces
/// nothing.
pub fn answer_relevance(
    question: &str,
    answer: &str,
    generator: &dyn QuestionGenerator,
    embedder: &dyn Embedder,
    count: usize,
) -> Result<Option<f64>, EvalError> {
    let generated = generator.generate(answer, count)?;
    if generated.is_empty() {
        return Ok(None);
    }
    let original = embedder.embed(question)?;
    let mut sum = 0.0;
    for g in &generated {
        sum += cosine(&embedder.embed(g)?, &original)?;
    }
    Ok(Some(sum / generated.len() as f64))
}

/// Cosine similarity of answer and ground-truth embeddings, in [-1, 1].
pub fn answer_similarity(
    answer: &str,
    ground_truth: &str,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    Ok(cosine(
        &embedder.embed(answer)?,
        &embedder.embed(ground_truth)?,
    )?)
}

/// Weighted blend of claim-level F1 against the ground truth and embedding
/// similarity. Claims the judge attributes to the ground truth are true
/// positives, the answer's other claims are false positives, ground-truth
/// claims missing from the answer are false negatives; F1 uses
/// TP / (TP + 0.5·(FP+FN)). An exactly equal answer short-circuits to 1.0
/// under any judge.
pub fn answer_correctness(
    answer: &str,
    ground_truth: &str,
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    weights: &AcWeights,
) -> Result<f64, EvalError> {
    weights.validate()?;
    if answer == ground_truth {
        return Ok(1.0);
    }
    let similarity = answer_similarity(answer, ground_truth, embedder)?.clamp(0.0, 1.0);

    let mut tp = 0usize;
    let mut fp = 0usize;
    for claim in extract_claims(answer) {
        if judge.supports(&claim, ground_truth)? {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    let mut missing = 0usize;
    for claim in extract_claims(ground_truth) {
        if !judge.supports(&claim, answer)? {
            missing += 1;
        }
    }
    let denominator = tp as f64 + 0.5 * (fp + missing) as f64;
    let f1 = if denominator == 0.0 {
        0.0
    } else {
        tp as f64 / denominator
    };
    Ok(weights.claim_f1 * f1 + weights.similarity * similarity)
}

/// Per-sample metric values. `None` marks a metric that is undefined for
/// the sample (no contexts, or no generated questions) — distinct from a
/// zero score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub faithfulness: Option<f64>,
    pub context_recall: Option<f64>,
    pub context_precision: Option<f64>,
    pub answer_relevance: Option<f64>,
    pub answer_correctness: f64,
    pub answer_similarity: f64,
    pub bleu: f64,
    pub rouge_l_f: f64,
    pub rouge_l_precision: f64,
    pub rouge_l_recall: f64,
}

/// Scores per sample plus their macro average (mean of per-sample values;
/// optional metrics average over the samples where they are defined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<SampleScores>,
    pub mean: SampleScores,
}

fn score_sample(
    sample: &EvalSample,
    judge: &dyn Judge,
    generator: &dyn QuestionGenerator,
    embedder: &dyn Embedder,
    config: &EvalConfig,
) -> Result<SampleScores, EvalError> {
    let rouge = rouge_l(&sample.answer, &sample.ground_truth);
    Ok(SampleScores {
        faithfulness: faithfulness(&sample.answer, &sample.contexts, judge)?,
        context_recall: context_recall(&sample.contexts, &sample.ground_truth, judge)?,
        context_precision: context_precision_at_k(
            &sample.contexts,
            &sample.question,
            &sample.ground_truth,
            judge,
        )?,
        answer_relevance: answer_relevance(
            &sample.question,
            &sample.answer,
            generator,
            embedder,
            config.question_count,
        )?,
        answer_correctness: answer_correctness(
            &sample.answer,
            &sample.ground_truth,
            judge,
            embedder,
            &config.weights,
        )?,
        answer_similarity: answer_similarity(&sample.answer, &sample.ground_truth, embedder)?,
        bleu: bleu(&sample.answer, &sample.ground_truth),
        rouge_l_f: rouge.f,
        rouge_l_precision: rouge.precision,
        rouge_l_recall: rouge.recall,
    })
}

fn mean_required(scores: &[SampleScores], pick: impl Fn(&SampleScores) -> f64) -> f64 {
    scores.iter().map(&pick).sum::<f64>() / scores.len() as f64
}

fn mean_optional(
    scores: &[SampleScores],
    pick: impl Fn(&SampleScores) -> Option<f64>,
) -> Option<f64> {
    let defined: Vec<f64> = scores.iter().filter_map(&pick).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Scores every sample and aggregates macro means.
pub fn evaluate_run(
    samples: &[EvalSample],
    judge: &dyn Judge,
    generator: &dyn QuestionGenerator,
    embedder: &dyn Embedder,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    config.validate()?;
    let mut per_sample = Vec::with_capacity(samples.len());
    for sample in samples {
        sample.validate()?;
        per_sample.push(score_sample(sample, judge, generator, embedder, config)?);
    }
    let mean = SampleScores {
        faithfulness: mean_optional(&per_sample, |s| s.faithfulness),
        context_recall: mean_optional(&per_sample, |s| s.context_recall),
        context_precision: mean_optional(&per_sample, |s| s.context_precision),
        answer_relevance: mean_optional(&per_sample, |s| s.answer_relevance),
        answer_correctness: mean_required(&per_sample, |s| s.answer_correctness),
        answer_similarity: mean_required(&per_sample, |s| s.answer_similarity),
        bleu: mean_required(&per_sample, |s| s.bleu),
        rouge_l_f: mean_required(&per_sample, |s| s.rouge_l_f),
        rouge_l_precision: mean_required(&per_sample, |s| s.rouge_l_precision),
        rouge_l_recall: mean_required(&per_sample, |s| s.rouge_l_recall),
    };
    Ok(EvalReport { per_sample, mean })
}

const TABLE_COLUMNS: [&str; 10] = [
    "Faith", "CR", "CP", "AR", "AC", "AS", "BLEU", "RL-F", "RL-P", "RL-R",
];

fn table_cells(scores: &SampleScores) -> [String; 10] {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    [
        opt(scores.faithfulness),
        opt(scores.context_recall),
        opt(scores.context_precision),
        opt(scores.answer_relevance),
        format!("{:.2}", scores.answer_correctness),
        format!("{:.2}", scores.answer_similarity),
        format!("{:.2}", scores.bleu),
        format!("{:.2}", scores.rouge_l_f),
        format!("{:.2}", scores.rouge_l_precision),
        format!("{:.2}", scores.rouge_l_recall),
    ]
}

/// Renders the report as a fixed-width table: one row per sample plus a
/// mean row, values to two decimals, "-" where a metric is undefined.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:>6}", "sample"));
    for column in TABLE_COLUMNS {
        out.push_str(&format!(" {column:>6}"));
    }
    out.push('\n');
    let mut push_row = |label: &str, scores: &SampleScores| {
        out.push_str(&format!("{label:>6}"));
        for cell in table_cells(scores) {
            out.push_str(&format!(" {cell:>6}"));
        }
        out.push('\n');
    };
    for (i, scores) in report.per_sample.iter().enumerate() {
        push_row(&(i + 1).to_string(), scores);
    }
    push_row("mean", &report.mean);
    out
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| EvalError::Json {
                detail: e.to_string(),
            })
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Json {
            detail: e.to_string(),
        })
    }
}

/// Reads samples from JSONL, one object per line; blank lines are skipped.
/// Errors carry the 1-based line number.
pub fn read_samples_jsonl(path: &Path) -> Result<Vec<EvalSample>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: EvalSample = serde_json::from_str(line).map_err(|e| EvalError::Import {
            line: i + 1,
            detail: e.to_string(),
        })?;
        sample.validate().map_err(|e| EvalError::Import {
            line: i + 1,
            detail: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}
