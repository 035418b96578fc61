//! Multi-domain dataset loading, validation, splitting, and emission.
//!
//! Datasets are line-delimited JSON records (`id` and `domain` required;
//! `label`, `image_ref`, `tags`, `attributes`, `captions` optional, unknown
//! keys rejected). Category sets are plain text files with one name per line.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::description::DescriptionText;
use crate::error::{Error, Result};
use crate::token::tokenize;

/// Ordered set of category names. Order is stable and defines tie-break
/// priority everywhere a tie between categories must be resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorySet {
    names: Vec<String>,
    lowered: Vec<String>,
    token_seqs: Vec<Vec<String>>,
}

impl CategorySet {
    /// Build from already-collected names. Names are trimmed; duplicates
    /// (case-insensitive) are rejected with the 1-based position of the
    /// second occurrence.
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::FormatFile("category set is empty".into()));
        }
        let mut trimmed = Vec::with_capacity(names.len());
        let mut lowered = Vec::with_capacity(names.len());
        let mut seen = HashSet::new();
        for (i, name) in names.iter().enumerate() {
            let t = name.trim();
            if t.is_empty() {
                return Err(Error::Format {
                    line: i + 1,
                    msg: "empty category name".into(),
                });
            }
            let low = t.to_lowercase();
            if !seen.insert(low.clone()) {
                return Err(Error::Duplicate {
                    line: i + 1,
                    name: t.to_string(),
                });
            }
            trimmed.push(t.to_string());
            lowered.push(low);
        }
        let token_seqs = trimmed.iter().map(|n| tokenize(n)).collect();
        Ok(CategorySet {
            names: trimmed,
            lowered,
            token_seqs,
        })
    }

    /// Load from a UTF-8 file with one category per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        if lines.iter().all(|l| l.trim().is_empty()) {
            return Err(Error::FormatFile("category set file is empty".into()));
        }
        Self::new(lines)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// Answer-token sequence of the category at `index`.
    pub fn answer_tokens(&self, index: usize) -> &[String] {
        &self.token_seqs[index]
    }

    /// Case-insensitive, whitespace-trimmed membership lookup.
    pub fn position(&self, name: &str) -> Option<usize> {
        let low = name.trim().to_lowercase();
        self.lowered.iter().position(|n| *n == low)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    /// Category names joined by ", " in set order, as rendered into prompts.
    pub fn joined(&self) -> String {
        self.names.join(", ")
    }
}

/// One sample: an identifier, its domain, and whatever of label / image
/// locator / textual description is known.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub domain: String,
    pub label: Option<String>,
    pub image_ref: Option<String>,
    pub description: Option<DescriptionText>,
}

/// On-disk shape of one record. Field order here is the canonical emission
/// order; `deny_unknown_fields` enforces the schema on load.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    id: String,
    domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attributes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captions: Option<Vec<String>>,
}

impl RecordWire {
    fn into_sample(self, line: usize) -> Result<SampleRecord> {
        let parts = [&self.tags, &self.attributes, &self.captions];
        let present = parts.iter().filter(|p| p.is_some()).count();
        let description = match present {
            0 => None,
            3 => {
                let tags = self.tags.unwrap();
                let attributes = self.attributes.unwrap();
                let captions = self.captions.unwrap();
                if tags.is_empty() || attributes.is_empty() || captions.is_empty() {
                    return Err(Error::Format {
                        line,
                        msg: format!("record '{}': empty description list", self.id),
                    });
                }
                Some(DescriptionText {
                    tags,
                    attributes,
                    captions,
                })
            }
            _ => {
                return Err(Error::Format {
                    line,
                    msg: format!(
                        "record '{}': tags, attributes, and captions must be present together",
                        self.id
                    ),
                })
            }
        };
        if self.id.trim().is_empty() {
            return Err(Error::Format {
                line,
                msg: "empty id".into(),
            });
        }
        if self.domain.trim().is_empty() {
            return Err(Error::Format {
                line,
                msg: format!("record '{}': empty domain", self.id),
            });
        }
        if self.image_ref.is_none() && description.is_none() {
            return Err(Error::Format {
                line,
                msg: format!(
                    "record '{}': needs at least one of image_ref or description",
                    self.id
                ),
            });
        }
        Ok(SampleRecord {
            id: self.id,
            domain: self.domain,
            label: self.label,
            image_ref: self.image_ref,
            description,
        })
    }

    fn from_sample(s: &SampleRecord) -> Self {
        let (tags, attributes, captions) = match &s.description {
            Some(d) => (
                Some(d.tags.clone()),
                Some(d.attributes.clone()),
                Some(d.captions.clone()),
            ),
            None => (None, None, None),
        };
        RecordWire {
            id: s.id.clone(),
            domain: s.domain.clone(),
            label: s.label.clone(),
            image_ref: s.image_ref.clone(),
            tags,
            attributes,
            captions,
        }
    }
}

/// Labeled samples partitioned by named domain, plus the category set they
/// are labeled against. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    domains: Vec<(String, Vec<SampleRecord>)>,
    category_set: CategorySet,
}

impl MultiDomainDataset {
    /// Group samples by domain in first-appearance order, validating labels
    /// and id uniqueness.
    pub fn new(samples: Vec<SampleRecord>, category_set: CategorySet) -> Result<Self> {
        let mut domains: Vec<(String, Vec<SampleRecord>)> = Vec::new();
        let mut ids = HashSet::new();
        for (i, sample) in samples.into_iter().enumerate() {
            if !ids.insert(sample.id.clone()) {
                return Err(Error::Duplicate {
                    line: i + 1,
                    name: sample.id,
                });
            }
            if let Some(label) = &sample.label {
                if !category_set.contains(label) {
                    return Err(Error::Label {
                        id: sample.id.clone(),
                        label: label.clone(),
                    });
                }
            }
            match domains.iter_mut().find(|(d, _)| *d == sample.domain) {
                Some((_, list)) => list.push(sample),
                None => domains.push((sample.domain.clone(), vec![sample])),
            }
        }
        if domains.is_empty() {
            return Err(Error::FormatFile("dataset has no samples".into()));
        }
        Ok(MultiDomainDataset {
            domains,
            category_set,
        })
    }

    pub fn category_set(&self) -> &CategorySet {
        &self.category_set
    }

    pub fn domain_names(&self) -> Vec<&str> {
        self.domains.iter().map(|(d, _)| d.as_str()).collect()
    }

    pub fn domain(&self, name: &str) -> Option<&[SampleRecord]> {
        self.domains
            .iter()
            .find(|(d, _)| d == name)
            .map(|(_, list)| list.as_slice())
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn sample_count(&self) -> usize {
        self.domains.iter().map(|(_, list)| list.len()).sum()
    }

    /// All samples in domain order then record order.
    pub fn iter_samples(&self) -> impl Iterator<Item = &SampleRecord> {
        self.domains.iter().flat_map(|(_, list)| list.iter())
    }
}

/// Load a line-delimited dataset file against a category set.
pub fn load_dataset(
    path: impl AsRef<Path>,
    category_set: CategorySet,
) -> Result<MultiDomainDataset> {
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            return Err(Error::Format {
                line: i + 1,
                msg: "blank line".into(),
            });
        }
        let wire: RecordWire = serde_json::from_str(line).map_err(|e| Error::Format {
            line: i + 1,
            msg: e.to_string(),
        })?;
        samples.push(wire.into_sample(i + 1)?);
    }
    MultiDomainDataset::new(samples, category_set)
}

/// Split into (all non-target domains merged, the target domain). Source
/// order is domain order then record order. A one-domain dataset with that
/// domain as target yields an empty source; the caller decides whether that
/// is legal for its protocol.
pub fn merge_and_split(
    ds: &MultiDomainDataset,
    target_domain: &str,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    if ds.domain(target_domain).is_none() {
        return Err(Error::Domain(target_domain.to_string()));
    }
    let mut source = Vec::new();
    let mut target = Vec::new();
    for (name, list) in &ds.domains {
        if name == target_domain {
            target.extend(list.iter().cloned());
        } else {
            source.extend(list.iter().cloned());
        }
    }
    Ok((source, target))
}

/// Write the dataset in the released text format, one record per line.
/// Every sample must carry a description. Returns the record count.
pub fn emit_text_dataset(ds: &MultiDomainDataset, path: impl AsRef<Path>) -> Result<usize> {
    for sample in ds.iter_samples() {
        if sample.description.is_none() {
            return Err(Error::MissingDescription {
                id: sample.id.clone(),
            });
        }
    }
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    let mut count = 0;
    for sample in ds.iter_samples() {
        let wire = RecordWire::from_sample(sample);
        let line = serde_json::to_string(&wire).map_err(|e| Error::FormatFile(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        count += 1;
    }
    out.flush()?;
    Ok(count)
}

/// Headline counts for a loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub samples: usize,
    pub classes: usize,
    pub domains: usize,
    pub per_domain: Vec<(String, usize)>,
}

pub fn stats(ds: &MultiDomainDataset) -> DatasetStats {
    DatasetStats {
        samples: ds.sample_count(),
        classes: ds.category_set().len(),
        domains: ds.domain_count(),
        per_domain: ds
            .domains
            .iter()
            .map(|(d, list)| (d.clone(), list.len()))
            .collect(),
    }
}
