//! Text embeddings and the similarity primitives used by retrieval.
//!
//! Every vector handed to the engine is unit-norm, so cosine similarity is a
//! plain dot product. Neighbor search is an exact linear scan.

use crate::error::{Error, Result};
use crate::model::MemoryId;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Tolerance on the L2 norm of a stored embedding.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Default dimension of [`HashingEmbedder`].
pub const DEFAULT_TEST_DIM: usize = 64;

/// A unit-norm, finite embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::SchemaViolation("embedding has zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::SchemaViolation("embedding has non-finite component".into()));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(Error::SchemaViolation("cannot normalize a zero vector".into()));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps `values` that are already unit-norm, rejecting anything else.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::SchemaViolation("embedding must be non-empty and finite".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::SchemaViolation(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    /// Standard basis vector `e_index` in `dim` dimensions.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        EmbeddingVector::from_unit(values).map_err(serde::de::Error::custom)
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), actual: b.dim() });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Descending similarity, ascending id on ties.
pub(crate) fn by_similarity_then_id(a: (&MemoryId, f64), b: (&MemoryId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0))
}

/// Exact top-`n` neighbors of `query` in `pool`, most similar first.
pub fn nearest_neighbors<'a, I>(query: &EmbeddingVector, pool: I, n: usize) -> Result<Vec<(MemoryId, f64)>>
where
    I: IntoIterator<Item = (&'a MemoryId, &'a EmbeddingVector)>,
{
    let mut scored =
        pool.into_iter().map(|(id, v)| cosine_sim(query, v).map(|s| (id, s))).collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| by_similarity_then_id(*a, *b));
    scored.truncate(n);
    Ok(scored.into_iter().map(|(id, s)| (id.clone(), s)).collect())
}

/// A text embedding provider.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    fn dimension(&self) -> usize;

    /// Identifies the vector space. Stores built under one provider id refuse
    /// to load under another.
    fn provider_id(&self) -> String;
}

/// Deterministic feature-hashing embedder over character trigrams.
///
/// Texts sharing most of their trigrams land close together, which is all the
/// engine's tests and fixtures need from an embedding space.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

const NGRAM: usize = 3;

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("embedding dimension must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    fn bucket(&self, gram: &[char]) -> (usize, f64) {
        // FNV-1a over the seed bytes followed by the gram's UTF-8 bytes.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |byte: u8| {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        self.seed.to_le_bytes().into_iter().for_each(&mut feed);
        let mut buf = [0u8; 4];
        for c in gram {
            c.encode_utf8(&mut buf).bytes().for_each(&mut feed);
        }
        let h = splitmix(h);
        let index = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        (index, sign)
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_TEST_DIM, seed: 0 }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut chars: Vec<char> = vec!['^'];
        let mut last_space = false;
        for c in text.trim().chars().flat_map(char::to_lowercase) {
            if c.is_whitespace() {
                if !last_space {
                    chars.push(' ');
                }
                last_space = true;
            } else {
                chars.push(c);
                last_space = false;
            }
        }
        chars.push('$');
        let mut values = vec![0.0; self.dim];
        for gram in chars.windows(NGRAM.min(chars.len())) {
            let (i, sign) = self.bucket(gram);
            values[i] += sign;
        }
        if values.iter().all(|v| *v == 0.0) {
            // Every bucket cancelled; fall back to the bucket of the padded text.
            let (i, _) = self.bucket(&chars);
            values[i] = 1.0;
        }
        EmbeddingVector::normalized(values)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("hash-trigram-v1/d{}/s{}", self.dim, self.seed)
    }
}

/// Convenience wrapper: embed with the default 64-dimensional hashing embedder.
pub fn test_embed(text: &str) -> EmbeddingVector {
    HashingEmbedder::default().embed(text).expect("hashing embedder is infallible")
}
