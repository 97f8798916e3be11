//! Direct preference optimization over a tabular toy policy.
//!
//! The policy is an explicit logit table: per prompt, one logit per
//! completion, softmax-normalized. That keeps every quantity in the DPO loss
//! exactly computable, so the trainer can be validated against closed-form
//! values (the uniform-init loss is exactly `ln 2`) and finite-difference
//! gradient checks instead of loose behavioral assertions.
//!
//! Conventions: the loss is `mean(-ln σ(z))` with
//! `z = β·[(lpθ(chosen) − lpref(chosen)) − (lpθ(rejected) − lpref(rejected))]`,
//! gradients are with respect to the policy logits, and
//! [`ToyPolicy::apply_step`] performs plain gradient descent.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ConflictRecord;

#[derive(Debug, Error)]
pub enum DpoError {
    #[error("invalid training config: {detail}")]
    Config { detail: String },
    #[error("preference batch is empty")]
    EmptyBatch,
    #[error("prompt {prompt:?} is not in the policy")]
    UnknownPrompt { prompt: String },
    #[error("completion {completion:?} is not in the policy for prompt {prompt:?}")]
    UnknownCompletion { prompt: String, completion: String },
    #[error("non-finite value: {detail}")]
    NonFinite { detail: String },
    #[error("invalid preference triple: {detail}")]
    Invalid { detail: String },
    #[error("prompt template error: {detail}")]
    Template { detail: String },
    #[error("line {line}: {detail}")]
    Import { line: usize, detail: String },
    #[error("optimization diverged at step {step}")]
    Diverged { step: usize, trace: Vec<f64> },
}

/// One preference judgment: for `prompt`, `chosen` beats `rejected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

impl PreferenceTriple {
    pub fn validate(&self) -> Result<(), DpoError> {
        if self.prompt.is_empty() || self.chosen.is_empty() || self.rejected.is_empty() {
            return Err(DpoError::Invalid {
                detail: "prompt, chosen, and rejected must all be non-empty".to_string(),
            });
        }
        if self.chosen == self.rejected {
            return Err(DpoError::Invalid {
                detail: format!(
                    "chosen and rejected are identical for prompt {:?}",
                    self.prompt
                ),
            });
        }
        Ok(())
    }
}

/// prompt → completion → logit.
pub type LogitTable = BTreeMap<String, BTreeMap<String, f64>>;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow for large `|x|`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Tabular softmax policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    logits: LogitTable,
}

impl ToyPolicy {
    pub fn new(logits: LogitTable) -> Result<Self, DpoError> {
        for (prompt, completions) in &logits {
            if completions.is_empty() {
                return Err(DpoError::Invalid {
                    detail: format!("prompt {prompt:?} has no completions"),
                });
            }
            for (completion, logit) in completions {
                if !logit.is_finite() {
                    return Err(DpoError::NonFinite {
                        detail: format!("logit for ({prompt:?}, {completion:?}) is {logit}"),
                    });
                }
            }
        }
        Ok(ToyPolicy { logits })
    }

    /// Uniform policy over exactly the prompts and completions the triples
    /// mention.
    pub fn uniform_from_triples(triples: &[PreferenceTriple]) -> Result<Self, DpoError> {
        if triples.is_empty() {
            return Err(DpoError::EmptyBatch);
        }
        let mut support: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for triple in triples {
            triple.validate()?;
            let entry = support.entry(&triple.prompt).or_default();
            entry.insert(&triple.chosen);
            entry.insert(&triple.rejected);
        }
        let logits = support
            .into_iter()
            .map(|(prompt, completions)| {
                (
                    prompt.to_string(),
                    completions
                        .into_iter()
                        .map(|c| (c.to_string(), 0.0))
                        .collect(),
                )
            })
            .collect();
        Ok(ToyPolicy { logits })
    }

    pub fn logits(&self) -> &LogitTable {
        &self.logits
    }

    fn completions(&self, prompt: &str) -> Result<&BTreeMap<String, f64>, DpoError> {
        self.logits
            .get(prompt)
            .ok_or_else(|| DpoError::UnknownPrompt {
                prompt: prompt.to_string(),
            })
    }

    /// `ln softmax(logits)[completion]`, computed through a max-shifted
    /// log-sum-exp.
    pub fn log_prob(&self, prompt: &str, completion: &str) -> Result<f64, DpoError> {
        let completions = self.completions(prompt)?;
        let logit = *completions
            .get(completion)
            .ok_or_else(|| DpoError::UnknownCompletion {
                prompt: prompt.to_string(),
                completion: completion.to_string(),
            })?;
        let max = completions
            .values()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max
            + completions
                .values()
                .map(|&l| (l - max).exp())
                .sum::<f64>()
                .ln();
        Ok(logit - lse)
    }

    pub fn prob(&self, prompt: &str, completion: &str) -> Result<f64, DpoError> {
        Ok(self.log_prob(prompt, completion)?.exp())
    }

    /// Full softmax distribution for one prompt.
    pub fn probs(&self, prompt: &str) -> Result<BTreeMap<String, f64>, DpoError> {
        let completions = self.completions(prompt)?.clone();
        completions
            .keys()
            .map(|c| Ok((c.clone(), self.prob(prompt, c)?)))
            .collect()
    }

    /// Draws one completion from the softmax distribution.
    pub fn sample<R: Rng + ?Sized>(&self, prompt: &str, rng: &mut R) -> Result<String, DpoError> {
        let probs = self.probs(prompt)?;
        let draw: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut last = None;
        for (completion, p) in &probs {
            cumulative += p;
            last = Some(completion);
            if draw < cumulative {
                return Ok(completion.clone());
            }
        }
        // Rounding can leave the cumulative a hair under 1.
        Ok(last.expect("policies have completions").clone())
    }

    /// Fraction of triples where the policy strictly prefers the chosen
    /// completion. A tie — as at uniform init — counts as incorrect.
    pub fn preference_accuracy(&self, triples: &[PreferenceTriple]) -> Result<f64, DpoError> {
        if triples.is_empty() {
            return Err(DpoError::EmptyBatch);
        }
        let mut correct = 0usize;
        for triple in triples {
            let chosen = self.log_prob(&triple.prompt, &triple.chosen)?;
            let rejected = self.log_prob(&triple.prompt, &triple.rejected)?;
            if chosen > rejected {
                correct += 1;
            }
        }
        Ok(correct as f64 / triples.len() as f64)
    }

    /// Gradient-descent update: `logit ← logit − lr · grad`.
    pub fn apply_step(
        &mut self,
        gradient: &LogitTable,
        learning_rate: f64,
    ) -> Result<(), DpoError> {
        for (prompt, completions) in gradient {
            let own = self
                .logits
                .get_mut(prompt)
                .ok_or_else(|| DpoError::UnknownPrompt {
                    prompt: prompt.clone(),
                })?;
            for (completion, g) in completions {
                let logit = own
                    .get_mut(completion)
                    .ok_or_else(|| DpoError::UnknownCompletion {
                        prompt: prompt.clone(),
                        completion: completion.clone(),
                    })?;
                *logit -= learning_rate * g;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    /// Preference sharpness; scales the implicit reward gap.
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.1,
            learning_rate: 0.5,
            steps: 500,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), DpoError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(DpoError::Config {
                detail: format!("beta must be finite and positive, got {}", self.beta),
            });
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(DpoError::Config {
                detail: format!(
                    "learning_rate must be finite and positive, got {}",
                    self.learning_rate
                ),
            });
        }
        Ok(())
    }
}

/// Per-triple margin `z`; the loss on a triple is `softplus(−z)`.
pub fn preference_margins(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    triples: &[PreferenceTriple],
    beta: f64,
) -> Result<Vec<f64>, DpoError> {
    if triples.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    triples
        .iter()
        .map(|t| {
            let chosen_gap = policy.log_prob(&t.prompt, &t.chosen)?
                - reference.log_prob(&t.prompt, &t.chosen)?;
            let rejected_gap = policy.log_prob(&t.prompt, &t.rejected)?
                - reference.log_prob(&t.prompt, &t.rejected)?;
            Ok(beta * (chosen_gap - rejected_gap))
        })
        .collect()
}

/// Batch loss: `mean(-ln σ(z))`, evaluated as `softplus(−z)` for stability.
pub fn dpo_loss(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    triples: &[PreferenceTriple],
    beta: f64,
) -> Result<f64, DpoError> {
    let margins = preference_margins(policy, reference, triples, beta)?;
    Ok(margins.iter().map(|&z| softplus(-z)).sum::<f64>() / margins.len() as f64)
}

/// Exact batch-mean gradient of [`dpo_loss`] with respect to the policy
/// logits. Every policy entry is present in the result, zeros included.
///
/// Per triple, the score gradient of a completion `c` is the difference of
/// log-softmax derivatives, `(1[c=chosen] − p(c)) − (1[c=rejected] − p(c))`;
/// the softmax coupling cancels, so completions outside the pair get exactly
/// zero.
pub fn dpo_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    triples: &[PreferenceTriple],
    beta: f64,
) -> Result<LogitTable, DpoError> {
    if triples.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let mut gradient: LogitTable = policy
        .logits()
        .iter()
        .map(|(prompt, completions)| {
            (
                prompt.clone(),
                completions.keys().map(|c| (c.clone(), 0.0)).collect(),
            )
        })
        .collect();
    let batch = triples.len() as f64;
    for triple in triples {
        let margin = preference_margins(policy, reference, std::slice::from_ref(triple), beta)?[0];
        let weight = sigmoid(-margin);
        let probs = policy.probs(&triple.prompt)?;
        let slot = gradient
            .get_mut(&triple.prompt)
            .expect("gradient mirrors the policy");
        for (completion, p) in &probs {
            let chosen_score = f64::from(completion == &triple.chosen) - p;
            let rejected_score = f64::from(completion == &triple.rejected) - p;
            let g = -weight * beta * (chosen_score - rejected_score) / batch;
            *slot.get_mut(completion).expect("same support") += g;
        }
    }
    Ok(gradient)
}

/// A finished optimization: the trained policy and the loss trace, one entry
/// per step plus a final post-training evaluation (so `steps = 0` yields a
/// single entry, the initial loss).
#[derive(Debug, Clone, PartialEq)]
pub struct DpoRun {
    pub policy: ToyPolicy,
    pub trace: Vec<f64>,
}

/// Plain gradient descent on the DPO loss.
pub fn dpo_optimize(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    triples: &[PreferenceTriple],
    config: &DpoConfig,
) -> Result<DpoRun, DpoError> {
    config.validate()?;
    if triples.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let mut current = policy.clone();
    let mut trace = Vec::with_capacity(config.steps + 1);
    for step in 0..config.steps {
        let loss = dpo_loss(&current, reference, triples, config.beta)?;
        if !loss.is_finite() {
            return Err(DpoError::Diverged { step, trace });
        }
        trace.push(loss);
        let gradient = dpo_gradient(&current, reference, triples, config.beta)?;
        current.apply_step(&gradient, config.learning_rate)?;
    }
    let final_loss = dpo_loss(&current, reference, triples, config.beta)?;
    if !final_loss.is_finite() {
        return Err(DpoError::Diverged {
            step: config.steps,
            trace,
        });
    }
    trace.push(final_loss);
    Ok(DpoRun {
        policy: current,
        trace,
    })
}

/// Default prompt used when deriving preference data from conflict records.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "What is the authoritative current record for {cve_id}?";

/// Turns conflict records into preference triples: the newer record text is
/// preferred over the text it replaced. The template must contain a
/// `{cve_id}` placeholder.
pub fn build_preference_dataset(
    conflicts: &[ConflictRecord],
    template: &str,
) -> Result<Vec<PreferenceTriple>, DpoError> {
    if !template.contains("{cve_id}") {
        return Err(DpoError::Template {
            detail: format!("template {template:?} lacks a {{cve_id}} placeholder"),
        });
    }
    if conflicts.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    conflicts
        .iter()
        .map(|c| {
            let triple = PreferenceTriple {
                prompt: template.replace("{cve_id}", &c.cve_id),
                chosen: c.new_value.clone(),
                rejected: c.old_value.clone(),
            };
            triple.validate()?;
            Ok(triple)
        })
        .collect()
}

/// Serializes triples as JSONL with `prompt`/`chosen`/`rejected` keys.
pub fn export_jsonl(triples: &[PreferenceTriple]) -> String {
    triples
        .iter()
        .map(|t| serde_json::to_string(t).expect("string-only struct serializes") + "\n")
        .collect()
}

/// Parses and validates JSONL written by [`export_jsonl`]; errors carry the
/// 1-based line number.
pub fn import_jsonl(text: &str) -> Result<Vec<PreferenceTriple>, DpoError> {
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let triple: PreferenceTriple =
            serde_json::from_str(line).map_err(|e| DpoError::Import {
                line: i + 1,
                detail: e.to_string(),
            })?;
        triple.validate().map_err(|e| DpoError::Import {
            line: i + 1,
            detail: e.to_string(),
        })?;
        triples.push(triple);
    }
    Ok(triples)
}

/// Renders a loss trace as `step,loss` CSV.
pub fn write_loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, loss) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{loss}\n"));
    }
    out
}

/// A small built-in preference set with CVE-shaped prompts: four prompts,
/// two completions each. Returns the uniform reference policy and the
/// triples.
pub fn toy_preference_set() -> (ToyPolicy, Vec<PreferenceTriple>) {
    let data = [
        (
            "After the latest revision, which base severity applies to CVE-2024-31002?",
            "HIGH, raised when remote code execution was confirmed",
            "MEDIUM, as originally triaged",
        ),
        (
            "Which component does CVE-2023-77014 affect after the advisory update?",
            "the bundled image decoder",
            "the build scripts only",
        ),
        (
            "Does the current record say CVE-2024-88410 is exploitable without authentication?",
            "yes, the updated advisory drops the authentication requirement",
            "no, it still requires a valid session",
        ),
        (
            "What fix status does the current record list for CVE-2022-60311?",
            "patched in the 5.2.1 release",
            "no patch available",
        ),
    ];
    let triples: Vec<PreferenceTriple> = data
        .into_iter()
        .map(|(prompt, chosen, rejected)| PreferenceTriple {
            prompt: prompt.to_string(),
            chosen: chosen.to_string(),
            rejected: rejected.to_string(),
        })
        .collect();
    let reference = ToyPolicy::uniform_from_triples(&triples).expect("built-in set is valid");
    (reference, triples)
}
