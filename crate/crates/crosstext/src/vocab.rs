//! Immutable embedding index over a tag or attribute vocabulary with exact
//! top-K cosine retrieval.
//!
//! Retrieval is a full scan with partial selection, not approximate search:
//! vocabularies stay small enough (~1e5) that exactness is affordable and
//! testable against brute force. All similarity arithmetic is f64,
//! accumulated in index order, so identical inputs give identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::provider::{EmbedInput, EmbeddingProvider};

/// Fixed-length dense vector of finite f64s.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dim {
                expected: 1,
                got: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("embedding vector".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-normalized copy; a (near-)zero vector is degenerate.
    pub fn normalized(&self, origin: &str) -> Result<EmbeddingVector> {
        let n = self.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::DegenerateEmbedding {
                text: origin.to_string(),
            });
        }
        Ok(EmbeddingVector {
            values: self.values.iter().map(|v| v / n).collect(),
        })
    }

    /// Dot product accumulated in index order.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabKind {
    Tag,
    Attribute,
}

impl VocabKind {
    /// Text actually sent to the embedder. Tags get the standard photo
    /// wrapper; attributes are embedded verbatim.
    pub fn wrap(&self, text: &str) -> String {
        match self {
            VocabKind::Tag => format!("A photo of {text}"),
            VocabKind::Attribute => text.to_string(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VocabKind::Tag => "tag",
            VocabKind::Attribute => "attribute",
        }
    }
}

#[derive(Debug, Clone)]
pub struct VocabEntry {
    pub text: String,
    pub wrapped_text: String,
    /// Unit-normalized at build time.
    embedding: EmbeddingVector,
    pub insertion_index: usize,
}

impl VocabEntry {
    pub fn embedding(&self) -> &EmbeddingVector {
        &self.embedding
    }
}

/// Immutable index; concurrent queries need no synchronization.
#[derive(Debug, Clone)]
pub struct VocabIndex {
    entries: Vec<VocabEntry>,
    kind: VocabKind,
    dim: usize,
}

impl VocabIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }
}

/// Embed every text (tags wrapped first) and build the normalized index.
pub fn build_index(
    texts: &[String],
    kind: VocabKind,
    embedder: &dyn EmbeddingProvider,
) -> Result<VocabIndex> {
    if texts.is_empty() {
        return Err(Error::Arg("vocabulary is empty".into()));
    }
    let mut entries = Vec::with_capacity(texts.len());
    let mut dim = 0usize;
    for (i, text) in texts.iter().enumerate() {
        let wrapped = kind.wrap(text);
        let raw = embedder
            .embed(EmbedInput::Text(&wrapped))
            .map_err(|e| e.context(format!("embedding '{text}'")))?;
        if i == 0 {
            dim = raw.dim();
        } else if raw.dim() != dim {
            return Err(Error::Dim {
                expected: dim,
                got: raw.dim(),
            });
        }
        let unit = raw.normalized(text)?;
        entries.push(VocabEntry {
            text: text.clone(),
            wrapped_text: wrapped,
            embedding: unit,
            insertion_index: i,
        });
    }
    Ok(VocabIndex { entries, kind, dim })
}

/// Exact top-k by cosine similarity: scores descending, ties broken by
/// smaller insertion index, exactly k results.
pub fn top_k(index: &VocabIndex, query: &EmbeddingVector, k: usize) -> Result<Vec<(String, f64)>> {
    if query.dim() != index.dim {
        return Err(Error::Dim {
            expected: index.dim,
            got: query.dim(),
        });
    }
    if k == 0 || k > index.entries.len() {
        return Err(Error::Size {
            k,
            len: index.entries.len(),
        });
    }
    let unit_query = query.normalized("query")?;
    let mut scored: Vec<(f64, usize)> = index
        .entries
        .iter()
        .map(|e| (unit_query.dot(&e.embedding), e.insertion_index))
        .collect();
    let better = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, better);
        scored.truncate(k);
    }
    scored.sort_unstable_by(better);
    Ok(scored
        .into_iter()
        .map(|(score, idx)| (index.entries[idx].text.clone(), score))
        .collect())
}

/// Load a vocabulary file: UTF-8, one text per line.
pub fn load_vocab_file(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            return Err(Error::Format {
                line: i + 1,
                msg: "blank vocabulary line".into(),
            });
        }
        out.push(t.to_string());
    }
    if out.is_empty() {
        return Err(Error::FormatFile("vocabulary file is empty".into()));
    }
    Ok(out)
}

const CACHE_MAGIC: &[u8; 8] = b"XTVIDX1\n";

fn cache_key(texts: &[String], kind: VocabKind, embedder_identity: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(embedder_identity.as_bytes());
    hasher.update([0u8]);
    for t in texts {
        hasher.update(t.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("vocab-{key}.bin"))
}

fn write_cache(index: &VocabIndex, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.push(match index.kind {
        VocabKind::Tag => 0,
        VocabKind::Attribute => 1,
    });
    buf.extend_from_slice(&(index.dim as u64).to_le_bytes());
    buf.extend_from_slice(&(index.entries.len() as u64).to_le_bytes());
    for e in &index.entries {
        buf.extend_from_slice(&(e.text.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.text.as_bytes());
        for v in e.embedding.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_cache(path: &Path, texts: &[String], kind: VocabKind) -> Option<VocabIndex> {
    let mut bytes = Vec::new();
    fs::File::open(path).ok()?.read_to_end(&mut bytes).ok()?;
    let mut cursor = bytes.as_slice();
    let mut take = |n: usize| -> Option<&[u8]> {
        if cursor.len() < n {
            return None;
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Some(head)
    };
    if take(8)? != CACHE_MAGIC {
        return None;
    }
    let kind_byte = take(1)?[0];
    let stored_kind = match kind_byte {
        0 => VocabKind::Tag,
        1 => VocabKind::Attribute,
        _ => return None,
    };
    if stored_kind != kind {
        return None;
    }
    let dim = u64::from_le_bytes(take(8)?.try_into().ok()?) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().ok()?) as usize;
    if count != texts.len() {
        return None;
    }
    let mut entries = Vec::with_capacity(count);
    for (i, expected_text) in texts.iter().enumerate() {
        let len = u32::from_le_bytes(take(4)?.try_into().ok()?) as usize;
        let text = std::str::from_utf8(take(len)?).ok()?;
        if text != expected_text {
            return None;
        }
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(f64::from_le_bytes(take(8)?.try_into().ok()?));
        }
        entries.push(VocabEntry {
            text: text.to_string(),
            wrapped_text: kind.wrap(text),
            embedding: EmbeddingVector::new(values).ok()?,
            insertion_index: i,
        });
    }
    if !cursor.is_empty() {
        return None;
    }
    Some(VocabIndex { entries, kind, dim })
}

/// Build the index, consulting a binary cache keyed by (vocabulary hash,
/// embedder identity). A corrupt or stale cache entry is rebuilt.
pub fn build_or_load(
    texts: &[String],
    kind: VocabKind,
    embedder: &dyn EmbeddingProvider,
    cache_dir: Option<&Path>,
) -> Result<VocabIndex> {
    let path = cache_dir.map(|dir| cache_path(dir, &cache_key(texts, kind, &embedder.identity())));
    if let Some(p) = &path {
        if p.exists() {
            if let Some(index) = read_cache(p, texts, kind) {
                return Ok(index);
            }
            let _ = fs::remove_file(p);
        }
    }
    let index = build_index(texts, kind, embedder)?;
    if let Some(p) = &path {
        write_cache(&index, p)?;
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::FixtureEmbeddings;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(pairs: &[(&str, Vec<f64>)]) -> FixtureEmbeddings {
        FixtureEmbeddings::from_entries(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        )
    }

    #[test]
    fn tag_wrapping() {
        let fx = fixture(&[("A photo of dog", vec![1.0, 0.0])]);
        let index = build_index(&["dog".to_string()], VocabKind::Tag, &fx).unwrap();
        assert_eq!(index.entries()[0].wrapped_text, "A photo of dog");
        assert_eq!(index.entries()[0].text, "dog");
    }

    #[test]
    fn orthonormal_entries_normalized() {
        let fx = fixture(&[("a", vec![2.0, 0.0]), ("b", vec![0.0, 3.0])]);
        let index = build_index(
            &["a".to_string(), "b".to_string()],
            VocabKind::Attribute,
            &fx,
        )
        .unwrap();
        assert_eq!(index.len(), 2);
        for e in index.entries() {
            assert!((e.embedding().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_vector_is_degenerate() {
        let fx = fixture(&[("a", vec![0.0, 0.0])]);
        let err = build_index(&["a".to_string()], VocabKind::Attribute, &fx).unwrap_err();
        assert!(matches!(err, Error::DegenerateEmbedding { .. }));
    }

    #[test]
    fn self_similarity_is_one() {
        let fx = fixture(&[
            ("a", vec![1.0, 2.0, 3.0]),
            ("b", vec![-1.0, 0.5, 2.0]),
            ("c", vec![4.0, -2.0, 1.0]),
            ("d", vec![0.3, 0.3, 0.3]),
        ]);
        let texts: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let index = build_index(&texts, VocabKind::Attribute, &fx).unwrap();
        let query = EmbeddingVector::new(vec![0.3, 0.3, 0.3]).unwrap();
        let hits = top_k(&index, &query, 1).unwrap();
        assert_eq!(hits[0].0, "d");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tie_broken_by_insertion_index() {
        let v = vec![1.0, 1.0];
        let fx = fixture(&[
            ("x0", vec![0.0, 1.0]),
            ("dup_a", v.clone()),
            ("x2", vec![1.0, 0.0]),
            ("dup_b", v.clone()),
        ]);
        let texts: Vec<String> = ["x0", "dup_a", "x2", "dup_b"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let index = build_index(&texts, VocabKind::Attribute, &fx).unwrap();
        let hits = top_k(&index, &EmbeddingVector::new(v).unwrap(), 2).unwrap();
        assert_eq!(hits[0].0, "dup_a");
        assert_eq!(hits[1].0, "dup_b");
    }

    #[test]
    fn cosine_is_symmetric() {
        let a = EmbeddingVector::new(vec![0.3, -1.2, 0.7]).unwrap();
        let b = EmbeddingVector::new(vec![2.0, 0.4, -0.9]).unwrap();
        let an = a.normalized("a").unwrap();
        let bn = b.normalized("b").unwrap();
        assert!((an.dot(&bn) - bn.dot(&an)).abs() < 1e-12);
    }

    #[test]
    fn k_out_of_range() {
        let fx = fixture(&[("a", vec![1.0])]);
        let index = build_index(&["a".to_string()], VocabKind::Attribute, &fx).unwrap();
        let q = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(matches!(top_k(&index, &q, 2), Err(Error::Size { .. })));
        assert!(matches!(top_k(&index, &q, 0), Err(Error::Size { .. })));
    }

    #[test]
    fn dim_mismatch() {
        let fx = fixture(&[("a", vec![1.0, 0.0])]);
        let index = build_index(&["a".to_string()], VocabKind::Attribute, &fx).unwrap();
        let q = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(matches!(top_k(&index, &q, 1), Err(Error::Dim { .. })));
    }

    /// Brute-force oracle: independently normalize, score every entry, and
    /// fully sort.
    fn brute_force(index: &VocabIndex, query: &EmbeddingVector, k: usize) -> Vec<(String, f64)> {
        let qn = query.norm();
        let unit: Vec<f64> = query.values().iter().map(|v| v / qn).collect();
        let mut all: Vec<(f64, usize, String)> = index
            .entries()
            .iter()
            .map(|e| {
                let score: f64 = unit
                    .iter()
                    .zip(e.embedding().values())
                    .map(|(a, b)| a * b)
                    .sum();
                (score, e.insertion_index, e.text.clone())
            })
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(s, _, t)| (t, s)).collect()
    }

    #[test]
    fn matches_brute_force_on_random_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = rng.gen_range(2..40);
            let dim = rng.gen_range(2..16);
            let pairs: Vec<(String, Vec<f64>)> = (0..n)
                .map(|i| {
                    (
                        format!("t{i}"),
                        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    )
                })
                .collect();
            let fx = FixtureEmbeddings::from_entries(pairs.clone());
            let texts: Vec<String> = pairs.iter().map(|(t, _)| t.clone()).collect();
            let index = build_index(&texts, VocabKind::Attribute, &fx).unwrap();
            let query =
                EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            for k in [1, n.min(5), n] {
                let got = top_k(&index, &query, k).unwrap();
                let want = brute_force(&index, &query, k);
                assert_eq!(got, want, "trial {trial} k {k}");
            }
        }
    }

    #[test]
    fn invariant_under_positive_query_scaling() {
        let fx = fixture(&[
            ("a", vec![1.0, 2.0, -1.0]),
            ("b", vec![0.5, -1.0, 2.0]),
            ("c", vec![-2.0, 0.1, 0.4]),
        ]);
        let texts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let index = build_index(&texts, VocabKind::Attribute, &fx).unwrap();
        let q1 = EmbeddingVector::new(vec![0.2, 0.5, 0.9]).unwrap();
        let q2 = EmbeddingVector::new(vec![0.2 * 37.0, 0.5 * 37.0, 0.9 * 37.0]).unwrap();
        let r1: Vec<String> = top_k(&index, &q1, 3)
            .unwrap()
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        let r2: Vec<String> = top_k(&index, &q2, 3)
            .unwrap()
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        assert_eq!(r1, r2);
    }

    #[test]
    fn full_k_is_total_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(String, Vec<f64>)> = (0..12)
            .map(|i| {
                (
                    format!("e{i}"),
                    (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let fx = FixtureEmbeddings::from_entries(pairs.clone());
        let texts: Vec<String> = pairs.iter().map(|(t, _)| t.clone()).collect();
        let index = build_index(&texts, VocabKind::Attribute, &fx).unwrap();
        let q = EmbeddingVector::new((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let all = top_k(&index, &q, 12).unwrap();
        for w in all.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(&[
            ("A photo of dog", vec![3.0, 4.0]),
            ("A photo of cat", vec![1.0, 0.0]),
        ]);
        let texts = vec!["dog".to_string(), "cat".to_string()];
        let built = build_or_load(&texts, VocabKind::Tag, &fx, Some(dir.path())).unwrap();
        // Second load must come from the cache; an embedder with no fixtures
        // would fail if it were consulted.
        let empty = FixtureEmbeddings::from_entries(Vec::new()).with_identity(fx.identity());
        let cached = build_or_load(&texts, VocabKind::Tag, &empty, Some(dir.path())).unwrap();
        assert_eq!(cached.len(), built.len());
        assert_eq!(
            cached.entries()[0].embedding(),
            built.entries()[0].embedding()
        );
        // Corrupt the cache file: the index is rebuilt from the embedder.
        let key = cache_key(&texts, VocabKind::Tag, &fx.identity());
        let p = cache_path(dir.path(), &key);
        fs::write(&p, b"garbage").unwrap();
        let rebuilt = build_or_load(&texts, VocabKind::Tag, &fx, Some(dir.path())).unwrap();
        assert_eq!(rebuilt.entries()[1].text, "cat");
    }
}
