//! Training targets built from annotation tallies, and entropy-stratified
//! dataset curation.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::entropy;

/// A probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!("distribution has negative or non-finite entries: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::invalid(format!("distribution sums to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(len: usize, class: usize) -> Self {
        assert!(class < len, "class {class} out of range for {len} classes");
        let mut probs = vec![0.0; len];
        probs[class] = 1.0;
        Self(probs)
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0);
        Self(vec![1.0 / len as f64; len])
    }

    /// Skips validation; callers guarantee the invariants (e.g. softmax output).
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(d: LabelDistribution) -> Self {
        d.0
    }
}

impl AsRef<[f64]> for LabelDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_counts(counts: &[u32]) -> Result<u64> {
    if counts.is_empty() {
        return Err(Error::Empty("counts"));
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return Err(Error::invalid("all annotation counts are zero"));
    }
    Ok(total)
}

/// Normalized annotation tallies.
pub fn soft_target(counts: &[u32]) -> Result<LabelDistribution> {
    let total = check_counts(counts)? as f64;
    Ok(LabelDistribution(counts.iter().map(|&c| c as f64 / total).collect()))
}

/// Majority-vote class; ties go to the lowest class index.
pub fn majority_class(counts: &[u32]) -> Result<usize> {
    check_counts(counts)?;
    Ok(argmax(counts))
}

pub fn hard_target(counts: &[u32]) -> Result<LabelDistribution> {
    Ok(LabelDistribution::one_hot(counts.len(), majority_class(counts)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSpec {
    pub num_bins: usize,
    pub cap_per_bin: usize,
    pub seed: u64,
}

impl Default for CurationSpec {
    fn default() -> Self {
        Self {
            num_bins: 10,
            cap_per_bin: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone)]
pub struct Curation {
    pub dataset: Dataset,
    /// Indices into the source dataset, ascending.
    pub selected: Vec<usize>,
    pub bins: Vec<BinReport>,
}

impl Curation {
    pub fn write_report_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for b in &self.bins {
            out.serialize(b)?;
        }
        out.flush().map_err(|e| Error::io("<curation report>", e))?;
        Ok(())
    }
}

/// Bin of a normalized entropy in `[0, 1]` split into `num_bins` equal-width,
/// right-closed bins. Zero goes to the first bin, anything at or above 1 to
/// the last.
pub fn entropy_bin(h: f64, num_bins: usize) -> usize {
    (0..num_bins)
        .find(|&k| h <= (k + 1) as f64 / num_bins as f64)
        .unwrap_or(num_bins - 1)
}

/// Subsamples up to `cap_per_bin` samples uniformly from each normalized
/// annotation-entropy bin. Output keeps the source order.
pub fn curate_stratified(dataset: &Dataset, spec: &CurationSpec) -> Result<Curation> {
    if spec.num_bins == 0 || spec.cap_per_bin == 0 {
        return Err(Error::invalid("num_bins and cap_per_bin must be positive"));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); spec.num_bins];
    for (i, s) in dataset.samples().iter().enumerate() {
        let h = entropy(&soft_target(&s.counts)?, true);
        members[entropy_bin(h, spec.num_bins)].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut selected = Vec::new();
    let mut bins = Vec::with_capacity(spec.num_bins);
    for (bin, idx) in members.iter().enumerate() {
        let take = idx.len().min(spec.cap_per_bin);
        selected.extend(index::sample(&mut rng, idx.len(), take).into_iter().map(|j| idx[j]));
        bins.push(BinReport {
            bin,
            lower: bin as f64 / spec.num_bins as f64,
            upper: (bin + 1) as f64 / spec.num_bins as f64,
            before: idx.len(),
            after: take,
        });
    }
    selected.sort_unstable();
    let name = format!("{}-curated", dataset.name());
    Ok(Curation {
        dataset: dataset.subset(name, &selected)?,
        selected,
        bins,
    })
}
