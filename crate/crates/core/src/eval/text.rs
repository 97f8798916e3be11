//! Text-overlap primitives: claim extraction, token normalization, and the
//! classic n-gram / subsequence scores.

use std::collections::BTreeMap;

/// Splits text into atomic claim statements.
///
/// Boundaries are newlines, plus `.` or `;` when followed by whitespace or
/// the end of the text — so decimal values like "9.8" survive intact.
/// Abbreviations such as "e.g. " still split; fixtures that care are
/// annotated with the exact expected list. Claims are trimmed and claims
/// without any alphanumeric token are dropped.
pub fn extract_claims(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut claims = Vec::new();
    let mut start = 0usize;
    for (i, b) in bytes.iter().enumerate() {
        let boundary = match b {
            b'\n' => true,
            b'.' | b';' => bytes
                .get(i + 1)
                .map_or(true, |next| next.is_ascii_whitespace()),
            _ => false,
        };
        if boundary {
            push_claim(&text[start..i], &mut claims);
            start = i + 1;
        }
    }
    push_claim(&text[start..], &mut claims);
    claims
}

fn push_claim(raw: &str, claims: &mut Vec<String>) {
    let trimmed = raw.trim();
    if !trimmed.is_empty() && !normalize_tokens(trimmed).is_empty() {
        claims.push(trimmed.to_string());
    }
}

/// Case-folded, punctuation-stripped token sequence.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Whether `needle` appears as a contiguous run inside `haystack`.
pub fn contains_subsequence(needle: &[String], haystack: &[String]) -> bool {
    if needle.is_empty() {
        return true;
    }
    if needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// BLEU-4 with uniform weights and a brevity penalty.
///
/// Modified n-gram precisions are clipped against the reference. When any
/// order with candidate n-grams has zero matches, add-one smoothing is
/// applied to every order so the geometric mean stays positive; orders the
/// candidate is too short for contribute a neutral factor of 1. Either text
/// without tokens scores 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = normalize_tokens(candidate);
    let refr = normalize_tokens(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }

    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    for n in 1..=4usize {
        if cand.len() < n {
            break;
        }
        totals[n - 1] = cand.len() + 1 - n;
        let mut ref_counts: BTreeMap<&[String], usize> = BTreeMap::new();
        for gram in refr.windows(n) {
            *ref_counts.entry(gram).or_default() += 1;
        }
        let mut cand_counts: BTreeMap<&[String], usize> = BTreeMap::new();
        for gram in cand.windows(n) {
            *cand_counts.entry(gram).or_default() += 1;
        }
        matches[n - 1] = cand_counts
            .iter()
            .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
    }

    let smooth = (0..4).any(|i| totals[i] > 0 && matches[i] == 0);
    let mut log_sum = 0.0;
    for i in 0..4 {
        let p = if totals[i] == 0 {
            1.0
        } else if smooth {
            (matches[i] as f64 + 1.0) / (totals[i] as f64 + 1.0)
        } else {
            matches[i] as f64 / totals[i] as f64
        };
        log_sum += 0.25 * p.ln();
    }

    let c = cand.len() as f64;
    let r = refr.len() as f64;
    let brevity = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    (brevity * log_sum.exp()).min(1.0)
}

/// ROUGE-L scores over normalized tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Longest-common-subsequence precision/recall with a balanced F-measure.
/// Either text without tokens scores all zeros.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let cand = normalize_tokens(candidate);
    let refr = normalize_tokens(reference);
    if cand.is_empty() || refr.is_empty() {
        return RougeScore {
            f: 0.0,
            precision: 0.0,
            recall: 0.0,
        };
    }

    let mut prev = vec![0usize; refr.len() + 1];
    let mut curr = vec![0usize; refr.len() + 1];
    for c_tok in &cand {
        for (j, r_tok) in refr.iter().enumerate() {
            curr[j + 1] = if c_tok == r_tok {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let lcs = prev[refr.len()] as f64;

    let precision = lcs / cand.len() as f64;
    let recall = lcs / refr.len() as f64;
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        f,
        precision,
        recall,
    }
}
