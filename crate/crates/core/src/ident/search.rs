use crate::error::{Error, Result};

use super::Embedding;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance_with_norms(a: &[f64], a_norm: f64, b: &[f64], b_norm: f64) -> f64 {
    (1.0 - dot(a, b) / (a_norm * b_norm)).clamp(0.0, 2.0)
}

/// `1 - cos(angle)`, in `[0, 2]`.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::usage(format!(
            "cannot compare '{}' (dim {}) with '{}' (dim {})",
            a.id(),
            a.dim(),
            b.id(),
            b.dim()
        )));
    }
    Ok(distance_with_norms(a.vector(), a.norm(), b.vector(), b.norm()))
}

/// Outcome of one probe's search: every gallery distance, and the ids at or under the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub probe_id: String,
    /// In gallery order.
    pub matched_gallery_ids: Vec<String>,
    /// One entry per gallery embedding, in gallery order.
    pub distances: Vec<(String, f64)>,
}

impl MatchResult {
    pub fn distance(&self, gallery_id: &str) -> Option<f64> {
        self.distances
            .iter()
            .find(|(id, _)| id == gallery_id)
            .map(|(_, d)| *d)
    }

    pub fn is_match(&self, gallery_id: &str) -> bool {
        self.matched_gallery_ids.iter().any(|id| id == gallery_id)
    }
}

/// Gallery with norms computed once, for repeated searches.
#[derive(Debug, Clone)]
pub struct PreparedGallery {
    entries: Vec<Embedding>,
    norms: Vec<f64>,
}

impl PreparedGallery {
    pub fn new(entries: Vec<Embedding>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::usage("gallery is empty"));
        };
        let dim = first.dim();
        if let Some(bad) = entries.iter().find(|e| e.dim() != dim) {
            return Err(Error::usage(format!(
                "gallery mixes dimensions {dim} and {} ('{}')",
                bad.dim(),
                bad.id()
            )));
        }
        let norms = entries.iter().map(Embedding::norm).collect();
        Ok(PreparedGallery { entries, norms })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].dim()
    }

    pub fn entries(&self) -> &[Embedding] {
        &self.entries
    }

    /// Distance from `probe` to every entry, in gallery order.
    pub fn distances(&self, probe: &Embedding) -> Result<Vec<f64>> {
        if probe.dim() != self.dim() {
            return Err(Error::usage(format!(
                "probe '{}' has dim {} but the gallery uses {}",
                probe.id(),
                probe.dim(),
                self.dim()
            )));
        }
        let probe_norm = probe.norm();
        Ok(self
            .entries
            .iter()
            .zip(&self.norms)
            .map(|(g, &n)| distance_with_norms(probe.vector(), probe_norm, g.vector(), n))
            .collect())
    }

    pub fn search(&self, probe: &Embedding, threshold: f64) -> Result<MatchResult> {
        let distances = self.distances(probe)?;
        let matched_gallery_ids = self
            .entries
            .iter()
            .zip(&distances)
            .filter(|(_, &d)| d <= threshold)
            .map(|(g, _)| g.id().to_string())
            .collect();
        Ok(MatchResult {
            probe_id: probe.id().to_string(),
            matched_gallery_ids,
            distances: self
                .entries
                .iter()
                .zip(distances)
                .map(|(g, d)| (g.id().to_string(), d))
                .collect(),
        })
    }
}

/// Returns every gallery entry within `threshold` (inclusive). There is no rank cut-off.
pub fn search_1_to_n(probe: &Embedding, gallery: &[Embedding], threshold: f64) -> Result<MatchResult> {
    PreparedGallery::new(gallery.to_vec())?.search(probe, threshold)
}
