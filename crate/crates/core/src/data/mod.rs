//! Datasets of frozen embeddings paired with per-class annotation tallies.
//!
//! Embeddings are held as `f32`, matching the on-disk representation, and are
//! promoted to `f64` when a training run builds its input matrix.

mod io;
mod split;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_dataset, read_embeddings, write_dataset, write_embeddings, AnnotationRow, Manifest,
    EMBEDDING_FORMAT_VERSION, EMBEDDING_MAGIC,
};
pub use split::{make_splits, SplitFile, SplitIndices, DEFAULT_SPLIT_RATIOS};
pub use synth::{generate_synthetic, generate_synthetic_with_latent, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub embedding: Vec<f32>,
    pub counts: Vec<u32>,
}

impl Sample {
    pub fn total_annotations(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    name: String,
    num_classes: usize,
    class_names: Vec<String>,
    embedding_dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Builds a dataset, checking every sample against the declared shape.
    pub fn new(
        name: impl Into<String>,
        class_names: Vec<String>,
        embedding_dim: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let num_classes = class_names.len();
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim must be positive"));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id {:?}", s.id)));
            }
            if s.embedding.len() != embedding_dim {
                return Err(Error::DimensionMismatch {
                    what: "embedding length",
                    expected: embedding_dim,
                    found: s.embedding.len(),
                });
            }
            if let Some(bad) = s.embedding.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "sample {:?}: non-finite embedding entry at {bad}",
                    s.id
                )));
            }
            if s.counts.len() != num_classes {
                return Err(Error::DimensionMismatch {
                    what: "counts length",
                    expected: num_classes,
                    found: s.counts.len(),
                });
            }
            if s.counts.iter().all(|&c| c == 0) {
                return Err(Error::invalid(format!(
                    "sample {:?}: all annotation counts are zero",
                    s.id
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            class_names,
            embedding_dim,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps the samples at `indices`, in the order given.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(name, self.class_names.clone(), self.embedding_dim, samples)
    }

    /// Mean annotations per sample (the "Annot./Sample" column of a dataset table).
    pub fn mean_annotations(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let total: u64 = self.samples.iter().map(Sample::total_annotations).sum();
        total as f64 / self.samples.len() as f64
    }
}

pub(crate) fn default_class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| format!("class_{c}")).collect()
}
