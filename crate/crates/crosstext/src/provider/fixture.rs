//! File-backed providers: pure functions of their fixture files.
//!
//! Fixture files are line-delimited JSON keyed by explicit id or exact input
//! text; language-model fixtures may also be keyed by `sha256:<hex>` of the
//! prompt for unwieldy prompt strings.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vocab::EmbeddingVector;

use super::{
    AttributeProvider, CaptionProvider, EmbedInput, EmbeddingProvider, Generation, LmProvider,
    LmScore,
};

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::Format {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct EmbeddingEntry {
    key: String,
    vector: Vec<f64>,
}

/// Embeddings looked up by image id or exact text.
pub struct FixtureEmbeddings {
    map: HashMap<String, Vec<f64>>,
    identity: String,
}

impl FixtureEmbeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries: Vec<EmbeddingEntry> = load_lines(path)?;
        let identity = format!("fixture-embed:{}", &sha256_hex(&fs::read(path)?)[..12]);
        Ok(Self::build(
            entries.into_iter().map(|e| (e.key, e.vector)).collect(),
            identity,
        ))
    }

    pub fn from_entries(entries: Vec<(String, Vec<f64>)>) -> Self {
        let mut hasher = Sha256::new();
        for (k, v) in &entries {
            hasher.update(k.as_bytes());
            for x in v {
                hasher.update(x.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let identity = format!(
            "fixture-embed:{}",
            digest
                .iter()
                .take(6)
                .map(|b| format!("{b:02x}"))
                .collect::<String>()
        );
        Self::build(entries, identity)
    }

    fn build(entries: Vec<(String, Vec<f64>)>, identity: String) -> Self {
        FixtureEmbeddings {
            map: entries.into_iter().collect(),
            identity,
        }
    }

    pub fn with_identity(mut self, identity: String) -> Self {
        self.identity = identity;
        self
    }
}

impl EmbeddingProvider for FixtureEmbeddings {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector> {
        let key = input.key();
        match self.map.get(key) {
            Some(v) => EmbeddingVector::new(v.clone()),
            None => Err(Error::provider(format!("missing fixture for '{key}'"))),
        }
    }
}

#[derive(Deserialize)]
struct CaptionEntry {
    key: String,
    captions: Vec<String>,
}

/// Stored captions returned verbatim, first `n` in stored order.
pub struct FixtureCaptions {
    map: HashMap<String, Vec<String>>,
    identity: String,
}

impl FixtureCaptions {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries: Vec<CaptionEntry> = load_lines(path)?;
        let identity = format!("fixture-captions:{}", &sha256_hex(&fs::read(path)?)[..12]);
        Ok(FixtureCaptions {
            map: entries.into_iter().map(|e| (e.key, e.captions)).collect(),
            identity,
        })
    }

    pub fn from_entries(entries: Vec<(String, Vec<String>)>) -> Self {
        FixtureCaptions {
            map: entries.into_iter().collect(),
            identity: "fixture-captions:inline".into(),
        }
    }
}

impl CaptionProvider for FixtureCaptions {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn captions(&self, image_ref: &str, n: usize) -> Result<Vec<String>> {
        if n == 0 {
            return Err(Error::Arg("caption count must be at least 1".into()));
        }
        let stored = self
            .map
            .get(image_ref)
            .ok_or_else(|| Error::provider(format!("missing fixture for '{image_ref}'")))?;
        if stored.len() < n {
            return Err(Error::provider(format!(
                "fixture for '{image_ref}' has {} captions, {n} requested",
                stored.len()
            )));
        }
        Ok(stored[..n].to_vec())
    }
}

#[derive(Deserialize)]
struct AttributeEntry {
    key: String,
    attributes: Vec<String>,
}

/// Attribute lists keyed by tag.
pub struct FixtureAttributes {
    map: HashMap<String, Vec<String>>,
    identity: String,
}

impl FixtureAttributes {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries: Vec<AttributeEntry> = load_lines(path)?;
        let identity = format!("fixture-attrs:{}", &sha256_hex(&fs::read(path)?)[..12]);
        Ok(FixtureAttributes {
            map: entries.into_iter().map(|e| (e.key, e.attributes)).collect(),
            identity,
        })
    }

    pub fn from_entries(entries: Vec<(String, Vec<String>)>) -> Self {
        FixtureAttributes {
            map: entries.into_iter().collect(),
            identity: "fixture-attrs:inline".into(),
        }
    }
}

impl AttributeProvider for FixtureAttributes {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn attributes(&self, tag: &str) -> Result<Vec<String>> {
        if tag.is_empty() {
            return Err(Error::Arg("empty tag".into()));
        }
        let stored = self
            .map
            .get(tag)
            .ok_or_else(|| Error::provider(format!("missing fixture for '{tag}'")))?;
        if stored.is_empty() {
            return Err(Error::provider(format!(
                "empty attribute fixture for '{tag}'"
            )));
        }
        Ok(stored.clone())
    }
}

#[derive(Deserialize)]
struct LmEntry {
    key: String,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    truncated: bool,
    /// completion text -> per-token logprobs
    #[serde(default)]
    scores: HashMap<String, Vec<f64>>,
}

/// Canned language model: generation and (optionally) completion scores per
/// prompt.
pub struct FixtureLm {
    generations: HashMap<String, (String, bool)>,
    scores: HashMap<String, HashMap<String, Vec<f64>>>,
    identity: String,
}

impl FixtureLm {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries: Vec<LmEntry> = load_lines(path)?;
        let identity = format!("fixture-lm:{}", &sha256_hex(&fs::read(path)?)[..12]);
        let mut lm = FixtureLm {
            generations: HashMap::new(),
            scores: HashMap::new(),
            identity,
        };
        for e in entries {
            if let Some(answer) = e.answer {
                lm.generations.insert(e.key.clone(), (answer, e.truncated));
            }
            if !e.scores.is_empty() {
                lm.scores.insert(e.key, e.scores);
            }
        }
        Ok(lm)
    }

    pub fn from_generations(entries: Vec<(String, String)>) -> Self {
        FixtureLm {
            generations: entries.into_iter().map(|(k, v)| (k, (v, false))).collect(),
            scores: HashMap::new(),
            identity: "fixture-lm:inline".into(),
        }
    }

    /// A model that answers every prompt with the same string.
    pub fn constant(answer: &str) -> Self {
        FixtureLm {
            generations: HashMap::new(),
            scores: HashMap::new(),
            identity: format!("fixture-lm:const:{}", &sha256_hex(answer.as_bytes())[..8]),
        }
        .with_default(answer)
    }

    fn with_default(mut self, answer: &str) -> Self {
        self.generations
            .insert("*".to_string(), (answer.to_string(), false));
        self
    }

    pub fn with_scores(mut self, prompt_key: &str, scores: Vec<(&str, Vec<f64>)>) -> Self {
        self.scores.insert(
            prompt_key.to_string(),
            scores
                .into_iter()
                .map(|(c, l)| (c.to_string(), l))
                .collect(),
        );
        self
    }

    fn lookup_key<'m, T>(&self, map: &'m HashMap<String, T>, prompt: &str) -> Option<&'m T> {
        map.get(prompt)
            .or_else(|| map.get(&format!("sha256:{}", sha256_hex(prompt.as_bytes()))))
            .or_else(|| map.get("*"))
    }
}

impl LmProvider for FixtureLm {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn score(&self, prompt: &str, completion: &str) -> Result<LmScore> {
        let per_prompt = self
            .lookup_key(&self.scores, prompt)
            .ok_or_else(|| Error::Capability("fixture LM has no scores for this prompt".into()))?;
        let logprobs = per_prompt
            .get(completion)
            .ok_or_else(|| Error::provider(format!("missing fixture score for '{completion}'")))?;
        let tokens: Vec<String> = completion.split_whitespace().map(str::to_string).collect();
        if tokens.len() != logprobs.len() {
            return Err(Error::FormatFile(format!(
                "fixture score for '{completion}' has {} logprobs for {} tokens",
                logprobs.len(),
                tokens.len()
            )));
        }
        LmScore::new(tokens, logprobs.clone())
    }

    fn generate(&self, prompt: &str, _beam_width: usize, _max_tokens: usize) -> Result<Generation> {
        match self.lookup_key(&self.generations, prompt) {
            Some((text, truncated)) => Ok(Generation {
                text: text.clone(),
                truncated: *truncated,
            }),
            None => Err(Error::provider("missing fixture for prompt")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn embeddings_lookup_and_miss() {
        let fx = FixtureEmbeddings::from_entries(vec![("img_001".into(), vec![0.1, 0.2])]);
        let v = fx.embed(EmbedInput::Image("img_001")).unwrap();
        assert_eq!(v.values(), &[0.1, 0.2]);
        let err = fx.embed(EmbedInput::Image("nope")).unwrap_err();
        assert!(matches!(err, Error::Provider { .. }));
        assert!(err.to_string().contains("missing fixture"));
    }

    #[test]
    fn captions_first_n_in_order() {
        let stored: Vec<String> = (0..10).map(|i| format!("caption {i}")).collect();
        let fx = FixtureCaptions::from_entries(vec![("img".into(), stored.clone())]);
        assert_eq!(fx.captions("img", 5).unwrap(), stored[..5]);
        assert_eq!(fx.captions("img", 1).unwrap(), vec!["caption 0"]);
        assert!(fx.captions("img", 11).is_err());
    }

    #[test]
    fn attributes_empty_fixture_is_error() {
        let fx = FixtureAttributes::from_entries(vec![("x".into(), vec![])]);
        assert!(matches!(fx.attributes("x"), Err(Error::Provider { .. })));
    }

    #[test]
    fn lm_generation_and_digest_key() {
        let lm = FixtureLm::from_generations(vec![("hello".into(), "world".into())]);
        assert_eq!(lm.generate("hello", 4, 16).unwrap().text, "world");
        assert!(lm.generate("other", 4, 16).is_err());

        let digest_key = format!("sha256:{}", sha256_hex(b"long prompt"));
        let lm2 = FixtureLm::from_generations(vec![(digest_key, "ok".into())]);
        assert_eq!(lm2.generate("long prompt", 4, 16).unwrap().text, "ok");
    }

    #[test]
    fn lm_scores_or_capability_error() {
        let lm = FixtureLm::from_generations(vec![]).with_scores("p", vec![("dog", vec![-0.7])]);
        let s = lm.score("p", "dog").unwrap();
        assert!((s.total + 0.7).abs() < 1e-9);
        assert!(matches!(lm.score("q", "dog"), Err(Error::Capability(_))));
    }

    #[test]
    fn load_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("embeddings.jsonl");
        let mut f = fs::File::create(&p).unwrap();
        writeln!(f, r#"{{"key":"a","vector":[1.0,0.0]}}"#).unwrap();
        writeln!(f, r#"{{"key":"b","vector":[0.0,1.0]}}"#).unwrap();
        drop(f);
        let fx = FixtureEmbeddings::load(&p).unwrap();
        assert_eq!(
            fx.embed(EmbedInput::Text("b")).unwrap().values(),
            &[0.0, 1.0]
        );
    }
}
