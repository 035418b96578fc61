//! Question instruction templates.
//!
//! Rendering is byte-frozen: the finetuned model is format-sensitive, so any
//! change to whitespace or newline placement is a breaking format version
//! bump. Golden copies of rendered prompts are checked in under
//! `tests/goldens/` and guarded by tests.

use crate::dataset::CategorySet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateVariant {
    /// The default question wrapper around a description and the options.
    Standard,
    /// Standard plus the sample's domain name.
    DomainAware,
    /// Description only, no question or options.
    Simple,
}

impl TemplateVariant {
    /// Frozen format version tag, recorded in manifests.
    pub fn version_tag(&self) -> &'static str {
        match self {
            TemplateVariant::Standard => "t1",
            TemplateVariant::DomainAware => "t2",
            TemplateVariant::Simple => "t3",
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateVariant::Standard => "standard",
            TemplateVariant::DomainAware => "domain-aware",
            TemplateVariant::Simple => "simple",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" | "t1" => Ok(TemplateVariant::Standard),
            "domain-aware" | "t2" => Ok(TemplateVariant::DomainAware),
            "simple" | "t3" => Ok(TemplateVariant::Simple),
            other => Err(Error::Arg(format!("unknown template variant '{other}'"))),
        }
    }
}

/// A rendered instruction with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub text: String,
    pub variant: TemplateVariant,
    pub categories: CategorySet,
    pub sample_id: Option<String>,
}

impl PromptInstance {
    pub fn with_sample_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = Some(id.into());
        self
    }
}

/// Render one prompt. `domain_name` is required for the domain-aware
/// variant and ignored otherwise. Every rendered prompt ends with
/// "### Answer:".
pub fn render_prompt(
    description_text: &str,
    cs: &CategorySet,
    variant: TemplateVariant,
    domain_name: Option<&str>,
) -> Result<PromptInstance> {
    let text = match variant {
        TemplateVariant::Standard => format!(
            "Give the information about an image:\n{}. \nAccording to the information, choose the most similar category from the given options: \n{}. \n### Answer:",
            description_text,
            cs.joined()
        ),
        TemplateVariant::DomainAware => {
            let domain = domain_name.ok_or_else(|| {
                Error::Arg("domain-aware template needs a domain name".into())
            })?;
            format!(
                "Give the information about a {} image:\n{}. \nAccording to the information, choose the most similar category from the given options: \n{}. \n### Answer:",
                domain,
                description_text,
                cs.joined()
            )
        }
        TemplateVariant::Simple => format!("{description_text}.\n### Answer:"),
    };
    Ok(PromptInstance {
        text,
        variant,
        categories: cs.clone(),
        sample_id: None,
    })
}
