use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::targets::majority_class;

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

/// Disjoint train/val/test index sets into `Dataset::samples`, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Checks that the three sets partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            match seen.get_mut(i) {
                None => return Err(Error::invalid(format!("split index {i} out of range 0..{n}"))),
                Some(true) => return Err(Error::invalid(format!("split index {i} appears twice"))),
                Some(s) => *s = true,
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("split does not cover index {missing}")));
        }
        Ok(())
    }

    pub fn to_file(&self, dataset: &Dataset) -> SplitFile {
        let ids = |idx: &[usize]| idx.iter().map(|&i| dataset.samples()[i].id.clone()).collect();
        SplitFile {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

/// On-disk split representation keyed by sample id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn resolve(&self, dataset: &Dataset) -> Result<SplitIndices> {
        let pos: HashMap<&str, usize> = dataset
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let lookup = |ids: &[String]| -> Result<Vec<usize>> {
            let mut out = ids
                .iter()
                .map(|id| {
                    pos.get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("split id {id:?} not in dataset")))
                })
                .collect::<Result<Vec<_>>>()?;
            out.sort_unstable();
            Ok(out)
        };
        let split = SplitIndices {
            train: lookup(&self.train)?,
            val: lookup(&self.val)?,
            test: lookup(&self.test)?,
        };
        split.validate(dataset.len())?;
        Ok(split)
    }
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::invalid(format!("split ratios must be non-negative: {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Stratified, seed-deterministic train/val/test split.
///
/// Val and test sizes are `round(ratio * N)`; train takes the remainder.
/// Each majority-vote class is shuffled independently, then the classes are
/// interleaved by relative position so every prefix of the merged order is
/// close to class-proportional. Val takes the first slice of that order,
/// test the next, train the rest.
pub fn make_splits(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    check_ratios(ratios)?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n);
    let n_test = ((ratios[2] * n as f64).round() as usize).min(n - n_val);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, s) in dataset.samples().iter().enumerate() {
        by_class[majority_class(&s.counts)?].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (class, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let len = members.len() as f64;
        for (rank, &i) in members.iter().enumerate() {
            order.push(((rank as f64 + 0.5) / len, class, i));
        }
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut val: Vec<usize> = order[..n_val].iter().map(|o| o.2).collect();
    let mut test: Vec<usize> = order[n_val..n_val + n_test].iter().map(|o| o.2).collect();
    let mut train: Vec<usize> = order[n_val + n_test..].iter().map(|o| o.2).collect();
    val.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    debug_assert_eq!(
        train.iter().chain(&val).chain(&test).collect::<HashSet<_>>().len(),
        n
    );
    Ok(SplitIndices { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_class_names, Sample};
    use proptest::prelude::*;

    fn dataset(n: usize, classes: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let mut counts = vec![0; classes];
                counts[i % classes] = 3;
                Sample { id: format!("s{i}"), embedding: vec![i as f32], counts }
            })
            .collect();
        Dataset::new("t", default_class_names(classes), 1, samples).unwrap()
    }

    #[test]
    fn sizes_follow_rounded_ratios() {
        let s = make_splits(&dataset(100, 3), [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
    }

    #[test]
    fn deterministic_per_seed() {
        let d = dataset(57, 4);
        assert_eq!(make_splits(&d, DEFAULT_SPLIT_RATIOS, 9).unwrap(), make_splits(&d, DEFAULT_SPLIT_RATIOS, 9).unwrap());
        assert_ne!(make_splits(&d, DEFAULT_SPLIT_RATIOS, 9).unwrap(), make_splits(&d, DEFAULT_SPLIT_RATIOS, 10).unwrap());
    }

    #[test]
    fn degenerate_ratio_puts_everything_in_train() {
        let s = make_splits(&dataset(10, 2), [1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(s.train, (0..10).collect::<Vec<_>>());
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn stratifies_by_majority_class() {
        // 80 of class 0, 20 of class 1: val and test get 12/3 each
        let samples = (0..100)
            .map(|i| Sample {
                id: format!("s{i}"),
                embedding: vec![0.0],
                counts: if i < 80 { vec![2, 1] } else { vec![0, 5] },
            })
            .collect();
        let d = Dataset::new("t", default_class_names(2), 1, samples).unwrap();
        let s = make_splits(&d, DEFAULT_SPLIT_RATIOS, 3).unwrap();
        assert_eq!(s.val.iter().filter(|&&i| i >= 80).count(), 3);
        assert_eq!(s.test.iter().filter(|&&i| i >= 80).count(), 3);
    }

    #[test]
    fn invalid_inputs() {
        assert!(make_splits(&dataset(10, 2), [0.5, 0.5, 0.5], 0).is_err());
        assert!(make_splits(&dataset(10, 2), [1.2, -0.1, -0.1], 0).is_err());
        let empty = Dataset::new("e", default_class_names(2), 1, vec![]).unwrap();
        assert!(matches!(make_splits(&empty, DEFAULT_SPLIT_RATIOS, 0), Err(Error::Empty(_))));
    }

    #[test]
    fn split_file_round_trip() {
        let d = dataset(20, 2);
        let s = make_splits(&d, DEFAULT_SPLIT_RATIOS, 5).unwrap();
        assert_eq!(s.to_file(&d).resolve(&d).unwrap(), s);
    }

    proptest! {
        #[test]
        fn always_partitions(n in 1usize..200, classes in 1usize..6, a in 0.0f64..1.0, b in 0.0f64..1.0, seed: u64) {
            let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
            let ratios = [1.0 - a - b, a, b];
            let d = dataset(n, classes);
            let s = make_splits(&d, ratios, seed).unwrap();
            s.validate(n).unwrap();
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        }
    }
}
