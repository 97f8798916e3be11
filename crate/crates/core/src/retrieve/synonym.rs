//! Query expansion from a tab-separated synonym table.

use std::path::Path;

use regex::Regex;

use super::{cve_token_regex, RetrieveError};

/// Ordered `term → replacement` pairs. Matching is case-insensitive and
/// whole-word, so the table suits word-like terms (`rce`, `sqli`), not
/// punctuation-heavy ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    pairs: Vec<(String, String)>,
}

impl SynonymTable {
    pub fn empty() -> Self {
        SynonymTable::default()
    }

    /// Parses `term<TAB>replacement` lines; `#` comments and blank lines are
    /// skipped. Anything else is an error naming the 1-based line.
    pub fn parse(text: &str) -> Result<Self, RetrieveError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [term, replacement] if !term.is_empty() && !replacement.is_empty() => {
                    pairs.push((term.to_string(), replacement.to_string()));
                }
                _ => {
                    return Err(RetrieveError::Synonyms {
                        line: i + 1,
                        detail: format!(
                            "expected two tab-separated non-empty fields, got {:?}",
                            line
                        ),
                    })
                }
            }
        }
        Ok(SynonymTable { pairs })
    }

    pub fn load(path: &Path) -> Result<Self, RetrieveError> {
        let text = std::fs::read_to_string(path).map_err(|source| RetrieveError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SynonymTable::parse(&text)
    }

    /// The built-in table of common security shorthand.
    pub fn default_security() -> Self {
        SynonymTable::parse(include_str!("../../assets/synonyms.tsv"))
            .expect("bundled synonym table parses")
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Expands a query into subqueries: the original first, then one variant per
/// synonym pair that actually rewrites something, deduplicated in order.
/// Each variant applies a single pair to the original query; CVE identifiers
/// are never rewritten.
pub fn expand_query(query: &str, synonyms: &SynonymTable) -> Vec<String> {
    let mut out = vec![query.to_string()];
    for (term, replacement) in &synonyms.pairs {
        let variant = replace_outside_cve_ids(query, term, replacement);
        if variant != query && !out.contains(&variant) {
            out.push(variant);
        }
    }
    out
}

fn replace_outside_cve_ids(query: &str, term: &str, replacement: &str) -> String {
    let pattern = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(term)))
        .expect("escaped term is a valid regex");
    let rewrite = |segment: &str| {
        pattern
            .replace_all(segment, regex::NoExpand(replacement))
            .into_owned()
    };

    let mut result = String::new();
    let mut cursor = 0usize;
    for m in cve_token_regex().find_iter(query) {
        result.push_str(&rewrite(&query[cursor..m.start()]));
        result.push_str(m.as_str());
        cursor = m.end();
    }
    result.push_str(&rewrite(&query[cursor..]));
    result
}
