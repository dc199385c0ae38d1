//! Embeddings, providers, threshold search and confusion tallies.

mod emb1;
mod search;
mod tally;

use std::collections::HashMap;
use std::path::Path;

pub use emb1::{decode_emb1, encode_emb1, read_emb1, write_emb1, EMB1_MAGIC};
pub use search::{cosine_distance, search_1_to_n, MatchResult, PreparedGallery};
pub use tally::{probe_counts, tally, tally_per_probe, ConfusionCounts, TallyMode};

use crate::degrade::area_sums;
use crate::error::{Error, Result};
use crate::image::{to_grayscale, Image};

/// Side of the square grid the builtin embedder samples onto.
pub const BUILTIN_GRID: usize = 32;
pub const BUILTIN_DIM: usize = BUILTIN_GRID * BUILTIN_GRID;

/// A finite, nonzero feature vector for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    id: String,
    vector: Vec<f64>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if vector.is_empty() {
            return Err(Error::usage(format!("embedding '{id}' is empty")));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage(format!("embedding '{id}' has non-finite entries")));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(Error::usage(format!("embedding '{id}' is the zero vector")));
        }
        Ok(Embedding { id, vector })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Source of embeddings. Implementations must return a vector for every image
/// they are asked about; a face that cannot be detected still gets embedded.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Whether [`EmbeddingProvider::embed`] looks at pixels at all. Lookup
    /// providers return false so callers can skip decoding and degrading.
    fn needs_pixels(&self) -> bool {
        true
    }

    /// Embeds the image identified by `key`. `image` produces the pixels on demand.
    fn embed(&self, key: &str, image: &dyn Fn() -> Result<Image>) -> Result<Embedding>;
}

pub fn embed(provider: &dyn EmbeddingProvider, key: &str, img: &Image) -> Result<Embedding> {
    provider.embed(key, &|| Ok(img.clone()))
}

/// Deterministic pixel embedder: grayscale, area-average onto a 32x32 grid,
/// subtract the mean, scale to unit length. Flat images map to the first axis.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinEmbedder;

pub fn builtin_embed(id: impl Into<String>, img: &Image) -> Embedding {
    let gray = to_grayscale(img);
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    // Integer box sums keep mean removal exact, so a uniform brightness shift
    // leaves the centred vector untouched.
    let sums = area_sums(gray.pixels(), w, h, BUILTIN_GRID, BUILTIN_GRID);
    let total: u64 = sums.iter().sum();
    let centred: Vec<f64> = sums
        .iter()
        .map(|&s| (BUILTIN_DIM as i64 * s as i64 - total as i64) as f64)
        .collect();
    let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
    let vector = if norm == 0.0 {
        let mut e1 = vec![0.0; BUILTIN_DIM];
        e1[0] = 1.0;
        e1
    } else {
        centred.into_iter().map(|v| v / norm).collect()
    };
    Embedding::new(id, vector).expect("builtin embeddings are finite and nonzero")
}

impl EmbeddingProvider for BuiltinEmbedder {
    fn name(&self) -> &str {
        "builtin"
    }

    fn embed(&self, key: &str, image: &dyn Fn() -> Result<Image>) -> Result<Embedding> {
        Ok(builtin_embed(key, &image()?))
    }
}

/// Serves precomputed vectors from an EMB1 file, keyed by image id.
#[derive(Debug, Clone)]
pub struct FileEmbeddings {
    name: String,
    dim: usize,
    by_id: HashMap<String, Embedding>,
}

impl FileEmbeddings {
    /// Loads an EMB1 file. Any failure, including a missing file, is a provider error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let records = read_emb1(path, None)
            .map_err(|e| Error::Provider(format!("{}: {e}", path.display())))?;
        Self::from_records(path.display().to_string(), records)
    }

    pub fn from_records(name: impl Into<String>, records: Vec<Embedding>) -> Result<Self> {
        let name = name.into();
        let dim = records.first().map_or(0, Embedding::dim);
        let mut by_id = HashMap::with_capacity(records.len());
        for r in records {
            if r.dim() != dim {
                return Err(Error::Provider(format!(
                    "{name}: '{}' has dimension {} but the file uses {dim}",
                    r.id(),
                    r.dim()
                )));
            }
            if let Some(dup) = by_id.insert(r.id().to_string(), r) {
                return Err(Error::Provider(format!("{name}: duplicate id '{}'", dup.id())));
            }
        }
        Ok(FileEmbeddings { name, dim, by_id })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.by_id.contains_key(key)
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn name(&self) -> &str {
        &self.name
    }

    fn needs_pixels(&self) -> bool {
        false
    }

    fn embed(&self, key: &str, _image: &dyn Fn() -> Result<Image>) -> Result<Embedding> {
        self.by_id
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Provider(format!("{}: no embedding for '{key}'", self.name)))
    }
}
