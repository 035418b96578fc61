//! Contracts for external model capabilities: embedding, captioning,
//! attribute generation, and language-model scoring/generation.
//!
//! Two families of implementations ship with the crate: file-backed fixture
//! providers, which make the whole pipeline runnable offline and every
//! downstream test deterministic, and remote clients speaking the
//! OpenAI-compatible wire convention (see [`remote`]). The reference model in
//! [`crate::reflm`] implements [`LmProvider`] natively.

mod cache;
mod fixture;
mod remote;

pub use cache::{canonical_json, GcReport, ResponseCache};
pub use fixture::{FixtureAttributes, FixtureCaptions, FixtureEmbeddings, FixtureLm};
pub use remote::{EndpointKind, ProviderConfig, RemoteProvider};

use crate::error::{Error, Result};
use crate::vocab::EmbeddingVector;

/// Input to an embedding provider: raw text or an opaque image locator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedInput<'a> {
    Text(&'a str),
    Image(&'a str),
}

impl<'a> EmbedInput<'a> {
    pub fn key(&self) -> &'a str {
        match self {
            EmbedInput::Text(s) | EmbedInput::Image(s) => s,
        }
    }

    pub fn modality(&self) -> &'static str {
        match self {
            EmbedInput::Text(_) => "text",
            EmbedInput::Image(_) => "image",
        }
    }
}

/// Per-token log-likelihoods of a completion, with their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LmScore {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    pub total: f64,
}

impl LmScore {
    /// Totals are always recomputed from the parts; tiny positive logprobs
    /// from float round-off are clamped to zero, anything larger is rejected.
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self> {
        if tokens.len() != logprobs.len() {
            return Err(Error::Arg(format!(
                "{} tokens but {} logprobs",
                tokens.len(),
                logprobs.len()
            )));
        }
        let mut clamped = Vec::with_capacity(logprobs.len());
        for lp in logprobs {
            if !lp.is_finite() && lp != f64::NEG_INFINITY {
                return Err(Error::Numerics("logprob".into()));
            }
            if lp > 1e-6 {
                return Err(Error::Numerics(format!("positive logprob {lp}")));
            }
            clamped.push(lp.min(0.0));
        }
        let total = clamped.iter().sum();
        Ok(LmScore {
            tokens,
            logprobs: clamped,
            total,
        })
    }
}

/// Generated text plus whether the token budget ran out before an end token.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub truncated: bool,
}

pub trait EmbeddingProvider {
    /// Stable identifier for cache keys and run manifests.
    fn identity(&self) -> String;
    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector>;
}

pub trait CaptionProvider {
    fn identity(&self) -> String;
    /// Exactly `n` captions for the image.
    fn captions(&self, image_ref: &str, n: usize) -> Result<Vec<String>>;
}

pub trait AttributeProvider {
    fn identity(&self) -> String;
    /// Visual attributes that help distinguish `tag` in a photo.
    fn attributes(&self, tag: &str) -> Result<Vec<String>>;
}

pub trait LmProvider {
    fn identity(&self) -> String;
    /// Per-token log-likelihoods of `completion` conditioned on `prompt`.
    fn score(&self, prompt: &str, completion: &str) -> Result<LmScore>;
    /// Beam-search (or documented fallback) generation from `prompt`.
    fn generate(&self, prompt: &str, beam_width: usize, max_tokens: usize) -> Result<Generation>;
}

/// The question asked of the attribute model, with the tag substituted
/// verbatim.
pub fn attribute_prompt(tag: &str) -> String {
    format!("What are useful features for distinguishing a {tag} in a photo?")
}

/// Split a free-text attribute response into one attribute per line,
/// dropping leading list markers and blank lines. How the model delimits
/// attributes is provider-dependent; newline splitting is the convention
/// this crate fixes.
pub fn split_attribute_response(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            let t = line.trim();
            let t = t.trim_start_matches(['-', '*', '•']).trim_start();
            // "1." / "2)" style enumerations
            let t = match t.split_once(['.', ')']) {
                Some((head, rest))
                    if !head.is_empty() && head.chars().all(|c| c.is_ascii_digit()) =>
                {
                    rest.trim_start()
                }
                _ => t,
            };
            t.to_string()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attribute_prompt_substitutes_verbatim() {
        assert_eq!(
            attribute_prompt("giraffe"),
            "What are useful features for distinguishing a giraffe in a photo?"
        );
    }

    #[test]
    fn split_strips_list_markers() {
        let text = "- long neck\n* cloven hooves\n2. dark spots\n\n  • tall\n";
        assert_eq!(
            split_attribute_response(text),
            vec!["long neck", "cloven hooves", "dark spots", "tall"]
        );
    }

    #[test]
    fn lm_score_total_is_sum() {
        let s = LmScore::new(vec!["a".into(), "b".into()], vec![-0.5, -1.25]).unwrap();
        assert!((s.total - (-1.75)).abs() < 1e-9);
    }

    #[test]
    fn lm_score_rejects_mismatch_and_positive() {
        assert!(LmScore::new(vec!["a".into()], vec![-0.5, -0.1]).is_err());
        assert!(LmScore::new(vec!["a".into()], vec![0.5]).is_err());
        // round-off above zero is tolerated and clamped
        let s = LmScore::new(vec!["a".into()], vec![1e-9]).unwrap();
        assert_eq!(s.logprobs[0], 0.0);
    }
}
