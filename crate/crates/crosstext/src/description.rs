//! Build and render the textual description of an image: its top-K tags,
//! top-M attributes, and N captions.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::provider::{CaptionProvider, EmbedInput, EmbeddingProvider};
use crate::vocab::{top_k, VocabIndex};

/// How many tags, attributes, and captions go into a description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptionConfig {
    pub k: usize,
    pub m: usize,
    pub n: usize,
}

impl Default for DescriptionConfig {
    fn default() -> Self {
        DescriptionConfig { k: 5, m: 5, n: 5 }
    }
}

impl DescriptionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.n == 0 {
            return Err(crate::error::Error::Arg(
                "K, M, and N must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A retrieved item with its cosine similarity. Scores are kept for
/// analysis and debugging; they are never rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredText {
    pub text: String,
    pub score: f64,
}

/// Full description of one image, score-ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct Description {
    pub image_id: String,
    pub tags: Vec<ScoredText>,
    pub attributes: Vec<ScoredText>,
    pub captions: Vec<String>,
}

/// The plain text lists persisted in dataset records; scores are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionText {
    pub tags: Vec<String>,
    pub attributes: Vec<String>,
    pub captions: Vec<String>,
}

impl Description {
    pub fn to_text(&self) -> DescriptionText {
        DescriptionText {
            tags: self.tags.iter().map(|t| t.text.clone()).collect(),
            attributes: self.attributes.iter().map(|t| t.text.clone()).collect(),
            captions: self.captions.clone(),
        }
    }

    pub fn render(&self) -> String {
        self.to_text().render()
    }
}

impl DescriptionText {
    /// Canonical serialization: a "Tags:" block, a blank line, an
    /// "Attributes:" block, a blank line, a "Captions:" block. Items are
    /// prefixed with "-" and there is no trailing newline. This exact layout
    /// is what finetuned models see, so it is frozen.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("Tags:");
        for t in &self.tags {
            out.push_str("\n-");
            out.push_str(t);
        }
        out.push_str("\n\nAttributes:");
        for a in &self.attributes {
            out.push_str("\n-");
            out.push_str(a);
        }
        out.push_str("\n\nCaptions:");
        for c in &self.captions {
            out.push_str("\n-");
            out.push_str(c);
        }
        out
    }
}

/// Convenience for callers holding a `Description`.
pub fn render_description(d: &Description) -> String {
    d.render()
}

/// Embed the image once, retrieve top-K tags and top-M attributes against
/// the prebuilt indexes, and sample N captions. Provider failures carry the
/// stage they came from (tag | attribute | caption).
pub fn build_description(
    image_ref: &str,
    tag_index: &VocabIndex,
    attr_index: &VocabIndex,
    embedder: &dyn EmbeddingProvider,
    captioner: &dyn CaptionProvider,
    cfg: &DescriptionConfig,
) -> Result<Description> {
    cfg.validate()?;
    let image_embedding = embedder
        .embed(EmbedInput::Image(image_ref))
        .map_err(|e| e.context("tag stage"))?;
    let tags = top_k(tag_index, &image_embedding, cfg.k)
        .map_err(|e| e.context("tag stage"))?
        .into_iter()
        .map(|(text, score)| ScoredText { text, score })
        .collect();
    let attributes = top_k(attr_index, &image_embedding, cfg.m)
        .map_err(|e| e.context("attribute stage"))?
        .into_iter()
        .map(|(text, score)| ScoredText { text, score })
        .collect();
    let captions = captioner
        .captions(image_ref, cfg.n)
        .map_err(|e| e.context("caption stage"))?;
    Ok(Description {
        image_id: image_ref.to_string(),
        tags,
        attributes,
        captions,
    })
}
