//! Construct providers from command-line flags: file-backed fixtures, a
//! remote OpenAI-compatible service, or a reference-model checkpoint.

use std::path::{Path, PathBuf};

use clap::Args;

use crosstext::provider::{
    AttributeProvider, CaptionProvider, EmbeddingProvider, EndpointKind, FixtureAttributes,
    FixtureCaptions, FixtureEmbeddings, FixtureLm, LmProvider, ProviderConfig, RemoteProvider,
    ResponseCache,
};
use crosstext::reflm::{load_checkpoint, RefLm};
use crosstext::{Error, Result};

#[derive(Debug, Clone, Args)]
pub struct ProviderFlags {
    /// Directory of fixture files (embeddings.jsonl, captions.jsonl,
    /// attributes.jsonl, lm.jsonl).
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,

    /// Base URL of an OpenAI-compatible service.
    #[arg(long, global = true)]
    pub remote_url: Option<String>,

    /// Remote endpoint kind: embeddings | completions | chat.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,

    /// Remote model identifier.
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// Environment variable holding the bearer token (never the token
    /// itself).
    #[arg(long, global = true)]
    pub auth_env: Option<String>,

    /// Response/vocabulary cache directory.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,

    /// Reference-model checkpoint path.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
}

impl ProviderFlags {
    fn remote(&self, default_endpoint: EndpointKind) -> Result<Option<RemoteProvider>> {
        let Some(url) = &self.remote_url else {
            return Ok(None);
        };
        let endpoint = match &self.endpoint {
            Some(s) => EndpointKind::parse(s)?,
            None => default_endpoint,
        };
        let model = self.model.clone().unwrap_or_else(|| "default".to_string());
        let mut config = ProviderConfig::new(url.clone(), endpoint, model);
        config.auth_env = self.auth_env.clone();
        let mut provider = RemoteProvider::new(config)?;
        if let Some(dir) = &self.cache {
            provider = provider.with_cache(ResponseCache::new(dir));
        }
        Ok(Some(provider))
    }

    pub fn cache_dir(&self) -> Option<&Path> {
        self.cache.as_deref()
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        if let Some(dir) = &self.fixtures {
            return Ok(Box::new(FixtureEmbeddings::load(
                dir.join("embeddings.jsonl"),
            )?));
        }
        if let Some(remote) = self.remote(EndpointKind::Embeddings)? {
            return Ok(Box::new(remote));
        }
        Err(Error::Arg(
            "no embedding provider: pass --fixtures or --remote-url".into(),
        ))
    }

    pub fn captioner(&self) -> Result<Box<dyn CaptionProvider>> {
        if let Some(dir) = &self.fixtures {
            return Ok(Box::new(FixtureCaptions::load(dir.join("captions.jsonl"))?));
        }
        if let Some(remote) = self.remote(EndpointKind::Completions)? {
            return Ok(Box::new(remote));
        }
        Err(Error::Arg(
            "no caption provider: pass --fixtures or --remote-url".into(),
        ))
    }

    pub fn attributer(&self) -> Result<Box<dyn AttributeProvider>> {
        if let Some(dir) = &self.fixtures {
            return Ok(Box::new(FixtureAttributes::load(
                dir.join("attributes.jsonl"),
            )?));
        }
        if let Some(remote) = self.remote(EndpointKind::Completions)? {
            return Ok(Box::new(remote));
        }
        Err(Error::Arg(
            "no attribute provider: pass --fixtures or --remote-url".into(),
        ))
    }

    /// A scoring/generating model: checkpoint first, then fixtures, then
    /// remote.
    pub fn lm(&self) -> Result<Box<dyn LmProvider>> {
        if let Some(path) = &self.checkpoint {
            let (lm, _) = load_checkpoint(path)?;
            return Ok(Box::new(lm));
        }
        if let Some(dir) = &self.fixtures {
            return Ok(Box::new(FixtureLm::load(dir.join("lm.jsonl"))?));
        }
        if let Some(remote) = self.remote(EndpointKind::Completions)? {
            return Ok(Box::new(remote));
        }
        Err(Error::Arg(
            "no language model: pass --checkpoint, --fixtures, or --remote-url".into(),
        ))
    }

    /// The native reference model, required by gradient-based analysis.
    pub fn reference_lm(&self) -> Result<RefLm> {
        let path = self.checkpoint.as_ref().ok_or_else(|| {
            Error::Capability(
                "this analysis needs a reference-model checkpoint (--checkpoint)".into(),
            )
        })?;
        Ok(load_checkpoint(path)?.0)
    }

    pub fn identity_summary(&self) -> String {
        if let Some(path) = &self.checkpoint {
            return format!("checkpoint:{}", path.display());
        }
        if let Some(dir) = &self.fixtures {
            return format!("fixtures:{}", dir.display());
        }
        if let Some(url) = &self.remote_url {
            return format!("{}@{url}", self.model.as_deref().unwrap_or("default"));
        }
        "none".to_string()
    }
}
