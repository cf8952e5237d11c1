//! Student t machinery for paired significance tests across seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x) Γ(1 - x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_MAX_ITER: usize = 300;
const CF_TOL: f64 = 1e-12;
const CF_TINY: f64 = 1e-300;

/// Regularized incomplete beta `I_x(a, b)`.
///
/// Evaluated with the modified Lentz continued fraction on whichever of
/// `I_x(a, b)` and `1 - I_{1-x}(b, a)` converges faster. If the fraction
/// has not met the tolerance after the iteration cap, the last estimate is
/// returned.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("incomplete beta needs a, b > 0 (got {a}, {b})")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!("incomplete beta needs x in [0, 1] (got {x})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(beta_cf_scaled(x, a, b))
    } else {
        Ok(1.0 - beta_cf_scaled(1.0 - x, b, a))
    }
}

fn beta_cf_scaled(x: f64, a: f64, b: f64) -> f64 {
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    (ln_front.exp() / a) * beta_continued_fraction(x, a, b)
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    let clamp = |v: f64| if v.abs() < CF_TINY { CF_TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_TOL {
            break;
        }
    }
    h
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `dof`
/// degrees of freedom, via `I_{ν/(ν+t²)}(ν/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> Result<f64> {
    if !(dof >= 1.0) {
        return Err(Error::invalid(format!("degrees of freedom must be >= 1 (got {dof})")));
    }
    if t.is_nan() {
        return Err(Error::invalid("t statistic is NaN"));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = dof / (dof + t * t);
    Ok(regularized_incomplete_beta(x, 0.5 * dof, 0.5)?.clamp(0.0, 1.0))
}

/// Student t CDF.
pub fn student_t_cdf(t: f64, dof: f64) -> Result<f64> {
    let tail = 0.5 * student_t_two_sided_p(t, dof)?;
    Ok(if t >= 0.0 { 1.0 - tail } else { tail })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
    pub mean_difference: f64,
}

impl PairedTTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

/// Paired two-sided t-test on `a[i] - b[i]`.
///
/// All-zero differences give `t = 0, p = 1`; constant non-zero differences
/// give an infinite `t` and `p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "paired sample length",
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = mean(&diffs);
    let sd = sample_std(&diffs);
    let dof = n - 1;
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(PairedTTest { t: 0.0, p: 1.0, dof, mean_difference: 0.0 });
    }
    let t = if sd == 0.0 {
        mean.signum() * f64::INFINITY
    } else {
        mean / (sd / (n as f64).sqrt())
    };
    Ok(PairedTTest {
        t,
        p: student_t_two_sided_p(t, dof as f64)?,
        dof,
        mean_difference: mean,
    })
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); zero for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        Self { mean: mean(v), std: sample_std(v) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(0.1) - 2.252_712_651_734_206).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_boundaries_and_closed_forms() {
        for (a, b) in [(0.5, 0.5), (2.0, 3.0), (10.0, 0.5)] {
            assert_eq!(regularized_incomplete_beta(0.0, a, b).unwrap(), 0.0);
            assert_eq!(regularized_incomplete_beta(1.0, a, b).unwrap(), 1.0);
        }
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 - (1-x)^b
        for &x in &[0.1, 0.37, 0.5, 0.9] {
            assert!((regularized_incomplete_beta(x, 1.0, 1.0).unwrap() - x).abs() < 1e-14);
            assert!((regularized_incomplete_beta(x, 3.5, 1.0).unwrap() - x.powf(3.5)).abs() < 1e-13);
            assert!((regularized_incomplete_beta(x, 1.0, 2.5).unwrap() - (1.0 - (1.0 - x).powf(2.5))).abs() < 1e-13);
        }
        assert!(regularized_incomplete_beta(0.5, 0.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn t_p_values() {
        assert_eq!(student_t_two_sided_p(0.0, 3.0).unwrap(), 1.0);
        assert!(student_t_two_sided_p(1.0, 0.5).is_err());
        // dof = 1 is Cauchy: P(|T| > 1) = 1/2
        assert!((student_t_two_sided_p(1.0, 1.0).unwrap() - 0.5).abs() < 1e-13);
        // dof = 2 has closed form 1 - t / sqrt(2 + t^2)
        for &t in &[0.3, 1.7, 4.0] {
            let want = 1.0 - t / (2.0_f64 + t * t).sqrt();
            assert!((student_t_two_sided_p(t, 2.0).unwrap() - want).abs() < 1e-13);
        }
        assert!((student_t_cdf(0.0, 7.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn paired_examples() {
        let a = [0.3, 0.5, 0.1];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));

        let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert_eq!(r.dof, 4);
        assert!((r.t - 4.242_640_687_119_285).abs() < 1e-12);
        assert!((r.p - 0.013_235_599_563_682_69).abs() < 1e-10);

        let s = paired_t_test(&[0.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.t, -r.t);
        assert_eq!(s.p, r.p);

        let c = paired_t_test(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert!(c.t.is_infinite() && c.p == 0.0);

        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(sample_std(&[4.0]), 0.0);
    }

    proptest! {
        #[test]
        fn reflection_identity(x in 0.0f64..=1.0, a in 0.05f64..60.0, b in 0.05f64..60.0) {
            let lhs = regularized_incomplete_beta(x, a, b).unwrap();
            let rhs = 1.0 - regularized_incomplete_beta(1.0 - x, b, a).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
            prop_assert!((0.0..=1.0).contains(&lhs));
        }

        #[test]
        fn p_monotone_in_abs_t(t1 in 0.0f64..30.0, dt in 0.0f64..5.0, dof in 1usize..50) {
            let p1 = student_t_two_sided_p(t1, dof as f64).unwrap();
            let p2 = student_t_two_sided_p(t1 + dt, dof as f64).unwrap();
            prop_assert!(p2 <= p1 + 1e-15);
            prop_assert!((0.0..=1.0).contains(&p1));
            prop_assert_eq!(student_t_two_sided_p(-t1, dof as f64).unwrap(), p1);
        }

        #[test]
        fn shift_invariance(pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..20), c in -100.0f64..100.0) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r1 = paired_t_test(&a, &b).unwrap();
            let sa: Vec<f64> = a.iter().map(|v| v + c).collect();
            let sb: Vec<f64> = b.iter().map(|v| v + c).collect();
            let r2 = paired_t_test(&sa, &sb).unwrap();
            prop_assert!((r1.p - r2.p).abs() < 1e-9, "{} vs {}", r1.p, r2.p);
        }
    }
}
