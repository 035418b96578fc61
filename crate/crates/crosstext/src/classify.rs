//! Turning language-model output into category predictions.
//!
//! Two routes: rank classification (argmax of summed per-token
//! log-likelihood over the category set) and generative classification
//! (beam-search an answer, then normalize it against the category set).
//! Generated answers are messy in practice (quoted, bracketed, wrapped in
//! boilerplate, or outside the option set entirely), so normalization is a
//! fixed pipeline and anything unrecoverable becomes `UNMATCHED`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::CategorySet;
use crate::error::{Error, Result};
use crate::prompt::PromptInstance;
use crate::provider::LmProvider;

pub const DEFAULT_BEAM_WIDTH: usize = 4;
pub const DEFAULT_MAX_TOKENS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchedBy {
    Exact,
    Normalized,
    Substring,
    RankFallback,
    Unmatched,
}

/// A single classification outcome. `category` is `None` for UNMATCHED,
/// which evaluation always counts as incorrect.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub category: Option<String>,
    pub raw_answer: String,
    pub matched_by: MatchedBy,
    pub score: Option<f64>,
}

/// How rank classification aggregates per-token log-likelihoods. The stock
/// behavior is the plain sum; the per-token mean exists for study only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreNorm {
    #[default]
    Sum,
    PerToken,
}

/// Score every category's answer tokens after the prompt and take the
/// argmax; ties break toward the earlier category.
pub fn rank_classify(
    lm: &dyn LmProvider,
    prompt: &PromptInstance,
    cs: &CategorySet,
) -> Result<Prediction> {
    rank_classify_with(lm, prompt, cs, ScoreNorm::Sum)
}

pub fn rank_classify_with(
    lm: &dyn LmProvider,
    prompt: &PromptInstance,
    cs: &CategorySet,
    norm: ScoreNorm,
) -> Result<Prediction> {
    let mut best: Option<(f64, usize)> = None;
    for (i, name) in cs.names().iter().enumerate() {
        let score = lm.score(&prompt.text, name)?;
        let value = match norm {
            ScoreNorm::Sum => score.total,
            ScoreNorm::PerToken => score.total / score.tokens.len() as f64,
        };
        let better = match best {
            None => true,
            Some((b, _)) => value > b,
        };
        if better {
            best = Some((value, i));
        }
    }
    let (value, index) = best.ok_or_else(|| Error::Arg("empty category set".into()))?;
    let name = cs.name(index).to_string();
    Ok(Prediction {
        raw_answer: name.clone(),
        category: Some(name),
        matched_by: MatchedBy::Exact,
        score: Some(value),
    })
}

/// Beam-generate an answer and normalize it. With `fallback` on, an
/// UNMATCHED answer is resolved by rank classification so every sample gets
/// a category.
pub fn generative_classify(
    lm: &dyn LmProvider,
    prompt: &PromptInstance,
    cs: &CategorySet,
    fallback: bool,
) -> Result<Prediction> {
    generative_classify_with(
        lm,
        prompt,
        cs,
        fallback,
        DEFAULT_BEAM_WIDTH,
        DEFAULT_MAX_TOKENS,
    )
}

pub fn generative_classify_with(
    lm: &dyn LmProvider,
    prompt: &PromptInstance,
    cs: &CategorySet,
    fallback: bool,
    beam_width: usize,
    max_tokens: usize,
) -> Result<Prediction> {
    let generation = lm.generate(&prompt.text, beam_width, max_tokens)?;
    let (category, matched_by) = normalize_answer(&generation.text, cs);
    if category.is_none() && fallback {
        let ranked = rank_classify(lm, prompt, cs)?;
        return Ok(Prediction {
            category: ranked.category,
            raw_answer: generation.text,
            matched_by: MatchedBy::RankFallback,
            score: ranked.score,
        });
    }
    Ok(Prediction {
        category,
        raw_answer: generation.text,
        matched_by,
        score: None,
    })
}

/// Characters stripped from the ends of an answer: quotes, brackets, and the
/// LaTeX-style backtick/apostrophe quoting that generation tends to produce.
const WRAP_CHARS: &[char] = &[
    '`', '\'', '"', '[', ']', '(', ')', '{', '}', '\u{2018}', '\u{2019}', '\u{201c}', '\u{201d}',
];

fn strip_wrapping(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || WRAP_CHARS.contains(&c))
}

fn strip_trailing_punct(s: &str) -> &str {
    s.trim_end_matches(|c: char| {
        c.is_whitespace()
            || WRAP_CHARS.contains(&c)
            || matches!(c, '.' | '!' | '?' | ',' | ';' | ':')
    })
}

/// Drop a leading "the most similar category ... is" clause, staying inside
/// the first sentence.
fn strip_boilerplate_prefix(s: &str) -> Option<&str> {
    const HEAD: &str = "the most similar category";
    if !s.starts_with(HEAD) {
        return None;
    }
    let sentence_end = s.find('.').unwrap_or(s.len());
    let within = &s[..sentence_end];
    let is_pos = within[HEAD.len()..].find(" is ")?;
    Some(&s[HEAD.len() + is_pos + " is ".len()..])
}

/// Word-bounded occurrences of `needle` in `haystack`; both lowercase.
fn word_bounded_positions(haystack: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for (pos, _) in haystack.match_indices(needle) {
        let before_ok = haystack[..pos]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[pos + needle.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            out.push(pos);
        }
    }
    out
}

/// Normalize a raw generated answer against the category set.
///
/// Pipeline: trim; strip surrounding quotes/brackets; lowercase; strip the
/// "the most similar category ... is" boilerplate; exact match; else the
/// category occurring as a word-bounded substring (preferring the longest
/// name, then the earliest position); else UNMATCHED. Substring matching is
/// word-bounded so e.g. "art" never matches inside "cartoon".
pub fn normalize_answer(raw: &str, cs: &CategorySet) -> (Option<String>, MatchedBy) {
    // Untouched raw (modulo trim/lowercase) matching a category is exact.
    if let Some(i) = cs.position(raw) {
        return (Some(cs.name(i).to_string()), MatchedBy::Exact);
    }
    let stripped = strip_wrapping(raw.trim());
    let lowered = stripped.to_lowercase();
    let without_prefix = strip_boilerplate_prefix(&lowered).unwrap_or(&lowered);
    let cleaned = strip_trailing_punct(strip_wrapping(without_prefix));
    if let Some(i) = cs.position(cleaned) {
        return (Some(cs.name(i).to_string()), MatchedBy::Normalized);
    }
    // Substring stage over the prefix-stripped text.
    let mut best: Option<(usize, usize, usize)> = None; // (len desc, pos, cs index)
    for (i, name) in cs.names().iter().enumerate() {
        let needle = name.trim().to_lowercase();
        if let Some(&pos) = word_bounded_positions(without_prefix, &needle).first() {
            let better = match best {
                None => true,
                Some((blen, bpos, _)) => {
                    needle.len() > blen || (needle.len() == blen && pos < bpos)
                }
            };
            if better {
                best = Some((needle.len(), pos, i));
            }
        }
    }
    match best {
        Some((_, _, i)) => (Some(cs.name(i).to_string()), MatchedBy::Substring),
        None => (None, MatchedBy::Unmatched),
    }
}

/// One line of the prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub raw_answer: String,
    pub category: Option<String>,
    pub matched_by: MatchedBy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, p: &Prediction) -> Self {
        PredictionRecord {
            id: id.into(),
            raw_answer: p.raw_answer.clone(),
            category: p.category.clone(),
            matched_by: p.matched_by,
            score: p.score,
        }
    }
}

pub fn write_prediction_log(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::FormatFile(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_prediction_log(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| Error::Format {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}
