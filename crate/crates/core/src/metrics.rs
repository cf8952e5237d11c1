//! Distributional alignment metrics. All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::{majority_class, LabelDistribution};

/// Floor applied to predicted probabilities inside the KL log ratio.
pub const KL_PROB_FLOOR: f64 = 1e-12;

/// `KL(p || q)` in nats. Terms with `p_i = 0` contribute exactly zero.
pub fn kl_divergence(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    kl_slices(p.probs(), q.probs())
}

pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            what: "distribution length",
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(KL_PROB_FLOOR)).ln())
        .sum())
}

/// Shannon entropy; with `normalized`, divided by `ln C` so it lies in `[0, 1]`.
/// A single-class distribution has normalized entropy 0.
pub fn entropy(p: &LabelDistribution, normalized: bool) -> f64 {
    entropy_slice(p.probs(), normalized)
}

pub(crate) fn entropy_slice(p: &[f64], normalized: bool) -> f64 {
    let h: f64 = -p
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum::<f64>();
    let h = h.max(0.0);
    if !normalized {
        return h;
    }
    if p.len() < 2 {
        return 0.0;
    }
    h / (p.len() as f64).ln()
}

/// Fraction of predictions whose argmax equals the majority-vote class.
pub fn accuracy(predictions: &[LabelDistribution], counts: &[Vec<u32>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != counts.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction/count list length",
            expected: predictions.len(),
            found: counts.len(),
        });
    }
    let mut hits = 0usize;
    for (pred, c) in predictions.iter().zip(counts) {
        if pred.argmax() == majority_class(c)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "pearson input length",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-sample and aggregate alignment between predictions and annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub mean_kl: f64,
    pub accuracy: f64,
    /// Pearson correlation of normalized annotation vs. prediction entropy;
    /// `None` when undefined (fewer than two samples or zero variance).
    pub entropy_correlation: Option<f64>,
    pub per_sample_kl: Vec<f64>,
    pub per_sample_pred_entropy: Vec<f64>,
    pub per_sample_annot_entropy: Vec<f64>,
    pub per_sample_correct: Vec<bool>,
}

impl AlignmentSummary {
    /// Builds the summary; entropies are stored normalized.
    pub fn from_predictions(
        predictions: &[LabelDistribution],
        counts: &[Vec<u32>],
    ) -> Result<Self> {
        let accuracy = accuracy(predictions, counts)?;
        let n = predictions.len();
        let mut per_sample_kl = Vec::with_capacity(n);
        let mut per_sample_pred_entropy = Vec::with_capacity(n);
        let mut per_sample_annot_entropy = Vec::with_capacity(n);
        let mut per_sample_correct = Vec::with_capacity(n);
        for (q, c) in predictions.iter().zip(counts) {
            let p = crate::targets::soft_target(c)?;
            per_sample_kl.push(kl_divergence(&p, q)?);
            per_sample_annot_entropy.push(entropy(&p, true));
            per_sample_pred_entropy.push(entropy(q, true));
            per_sample_correct.push(q.argmax() == p.argmax());
        }
        let mean_kl = per_sample_kl.iter().sum::<f64>() / n as f64;
        let entropy_correlation = pearson(&per_sample_annot_entropy, &per_sample_pred_entropy).ok();
        Ok(Self {
            mean_kl,
            accuracy,
            entropy_correlation,
            per_sample_kl,
            per_sample_pred_entropy,
            per_sample_annot_entropy,
            per_sample_correct,
        })
    }

    /// The entropy correlation, re-deriving the reason when it is undefined.
    pub fn correlation(&self) -> Result<f64> {
        match self.entropy_correlation {
            Some(r) => Ok(r),
            None => pearson(&self.per_sample_annot_entropy, &self.per_sample_pred_entropy),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> LabelDistribution {
        LabelDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&dist(&[0.5, 0.5]), &dist(&[0.5, 0.5])).unwrap(), 0.0);
        let v = kl_divergence(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5])).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        // 0.6 ln 1.2 + 0.4 ln 0.8
        let v = kl_divergence(&dist(&[0.6, 0.4]), &dist(&[0.5, 0.5])).unwrap();
        assert!((v - 0.020_135_513_550_688_873).abs() < 1e-12, "{v}");
    }

    #[test]
    fn kl_length_mismatch() {
        assert!(kl_divergence(&dist(&[1.0]), &dist(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn kl_clamps_zero_predictions() {
        let v = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        assert!((v - 0.5 * (0.5f64 / 1e-12).ln() - 0.5 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&dist(&[0.0, 1.0, 0.0]), false), 0.0);
        for c in 2..12 {
            assert!((entropy(&LabelDistribution::uniform(c), true) - 1.0).abs() < 1e-12);
        }
        let p = dist(&[0.6, 0.4]);
        assert!((entropy(&p, false) - 0.673_011_667_009_256_2).abs() < 1e-12);
        assert!((entropy(&p, true) - 0.970_950_594_454_668_5).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let counts = vec![vec![3, 1], vec![0, 2], vec![5, 0], vec![1, 4], vec![2, 2]];
        let right: Vec<_> = counts.iter().map(|c| crate::targets::hard_target(c).unwrap()).collect();
        assert_eq!(accuracy(&right, &counts).unwrap(), 1.0);
        let wrong: Vec<_> = right.iter().map(|d| LabelDistribution::one_hot(2, 1 - d.argmax())).collect();
        assert_eq!(accuracy(&wrong, &counts).unwrap(), 0.0);
        let mixed = vec![right[0].clone(), right[1].clone(), right[2].clone(), wrong[3].clone(), wrong[4].clone()];
        assert!((accuracy(&mixed, &counts).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 7.5];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // cov = 1.5, var_x = 1, var_y = 7/3  ->  1.5 / sqrt(7/3)
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-12, "{r}");
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance(_))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn summary_single_sample_surfaces_correlation_error() {
        let s = AlignmentSummary::from_predictions(&[dist(&[0.7, 0.3])], &[vec![3, 1]]).unwrap();
        assert!(s.entropy_correlation.is_none());
        assert!(s.correlation().is_err());
        assert_eq!(s.accuracy, 1.0);
        assert!(s.mean_kl > 0.0);
    }

    fn arb_dist(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 2..max_len).prop_filter_map("non-zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn kl_self_and_nonnegativity(p in arb_dist(8), q_raw in proptest::collection::vec(0.01f64..1.0, 8)) {
            let pd = LabelDistribution::from_raw(p.clone());
            prop_assert!(kl_divergence(&pd, &pd).unwrap().abs() <= 1e-9);
            let q: Vec<f64> = q_raw[..p.len()].to_vec();
            let s: f64 = q.iter().sum();
            let qd = LabelDistribution::from_raw(q.iter().map(|x| x / s).collect());
            prop_assert!(kl_divergence(&pd, &qd).unwrap() >= -1e-12);
        }

        #[test]
        fn normalized_entropy_is_permutation_invariant(p in arb_dist(8), rot in 0usize..8) {
            let mut r = p.clone();
            let k = rot % r.len();
            r.rotate_left(k);
            r.reverse();
            let a = entropy_slice(&p, true);
            let b = entropy_slice(&r, true);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a <= 1.0 + 1e-12);
        }

        #[test]
        fn correlation_same_for_raw_and_normalized_entropies(
            rows in proptest::collection::vec(proptest::collection::vec(0u32..30, 4), 5..40),
            seed in 0u64..1000,
        ) {
            let counts: Vec<Vec<u32>> = rows.into_iter().filter(|r| r.iter().any(|&c| c > 0)).collect();
            prop_assume!(counts.len() >= 3);
            let preds: Vec<LabelDistribution> = (0..counts.len())
                .map(|i| {
                    let raw: Vec<f64> = (0..4).map(|k| 1.0 + ((seed as usize + 7 * i + 3 * k) % 11) as f64).collect();
                    let s: f64 = raw.iter().sum();
                    LabelDistribution::from_raw(raw.into_iter().map(|v| v / s).collect())
                })
                .collect();
            let summary = AlignmentSummary::from_predictions(&preds, &counts).unwrap();
            let raw_annot: Vec<f64> = counts.iter().map(|c| entropy(&crate::targets::soft_target(c).unwrap(), false)).collect();
            let raw_pred: Vec<f64> = preds.iter().map(|q| entropy(q, false)).collect();
            match (summary.entropy_correlation, pearson(&raw_annot, &raw_pred)) {
                (Some(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-9),
                (None, Err(_)) => {}
                (a, b) => prop_assert!(false, "defined-ness differs: {:?} vs {:?}", a, b.ok()),
            }
        }

        #[test]
        fn pearson_affine_invariance(
            pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
            a in 0.01f64..100.0, b in -100.0f64..100.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let (Ok(r1), Ok(r2)) = (pearson(&x, &y), pearson(&x.iter().map(|v| a * v + b).collect::<Vec<_>>(), &y)) {
                prop_assert!((r1 - r2).abs() < 1e-12, "{} vs {}", r1, r2);
            }
        }
    }
}
