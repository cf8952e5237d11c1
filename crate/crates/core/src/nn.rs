//! Two-layer MLP classification head: `W2 · dropout(gelu(W1 x + b1)) + b2`.
//!
//! Matrices are row-major `Vec<f64>`; `w1` is `hidden × input`, `w2` is
//! `classes × hidden`. Everything runs in 64-bit.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::LabelDistribution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden, self.classes)
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.input_dim == other.input_dim && self.hidden == other.hidden && self.classes == other.classes
    }

    pub(crate) fn check_same_shape(&self, other: &MlpParams) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "parameter shape mismatch: ({}, {}, {}) vs ({}, {}, {})",
                self.input_dim, self.hidden, self.classes, other.input_dim, other.hidden, other.classes
            )))
        }
    }

    /// The four tensors in a fixed order: w1, b1, w2, b2.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(seed: u64, input_dim: usize, hidden: usize, classes: usize) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_with(&mut rng, input_dim, hidden, classes)
}

pub(crate) fn init_params_with<R: Rng>(
    rng: &mut R,
    input_dim: usize,
    hidden: usize,
    classes: usize,
) -> MlpParams {
    let mut p = MlpParams::zeros(input_dim, hidden, classes);
    let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
    let a2 = (6.0 / (hidden + classes) as f64).sqrt();
    p.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..=a1));
    p.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..=a2));
    p
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> LabelDistribution {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    LabelDistribution::from_raw(exps.into_iter().map(|e| e / s).collect())
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// `-Σ t_i log softmax(z)_i`, skipping zero-target terms.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    let lse = log_sum_exp(logits);
    target
        .iter()
        .zip(logits)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &z)| -t * (z - lse))
        .sum()
}

/// Dropout configuration for a forward pass. Inverted scaling keeps
/// evaluation a plain pass-through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    Train { dropout: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub post_activation: Vec<f64>,
    /// Per-unit multiplier (0 or 1/(1-rate)); `None` when no dropout was applied.
    pub dropout_mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
}

pub fn forward<R: Rng>(
    params: &MlpParams,
    x: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, ForwardCache)> {
    if x.len() != params.input_dim {
        return Err(Error::DimensionMismatch {
            what: "input length",
            expected: params.input_dim,
            found: x.len(),
        });
    }
    let (d, h, c) = (params.input_dim, params.hidden, params.classes);
    let pre: Vec<f64> = (0..h)
        .map(|j| params.b1[j] + dot(&params.w1[j * d..(j + 1) * d], x))
        .collect();
    let mut post: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();

    let mask = match mode {
        Mode::Train { dropout } if dropout > 0.0 => {
            let keep = 1.0 / (1.0 - dropout);
            let m: Vec<f64> = (0..h)
                .map(|_| if rng.random::<f64>() < dropout { 0.0 } else { keep })
                .collect();
            post.iter_mut().zip(&m).for_each(|(a, k)| *a *= k);
            Some(m)
        }
        _ => None,
    };

    let logits: Vec<f64> = (0..c)
        .map(|k| params.b2[k] + dot(&params.w2[k * h..(k + 1) * h], &post))
        .collect();
    let cache = ForwardCache {
        input: x.to_vec(),
        pre_activation: pre,
        post_activation: post,
        dropout_mask: mask,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Deterministic evaluation-mode prediction.
pub fn predict(params: &MlpParams, x: &[f64]) -> Result<LabelDistribution> {
    let mut unused = NoRng;
    let (logits, _) = forward(params, x, Mode::Eval, &mut unused)?;
    Ok(softmax(&logits))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One training example: an input row and its target distribution.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub input: &'a [f64],
    pub target: &'a [f64],
}

/// Mean cross-entropy over the batch and its exact gradient.
///
/// The logit gradient per sample is `softmax(z) - target`, scaled by `1/B`.
pub fn loss_and_grad<R: Rng>(
    params: &MlpParams,
    batch: &[Example<'_>],
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, MlpParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (d, h, c) = (params.input_dim, params.hidden, params.classes);
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut dhidden = vec![0.0; h];

    for ex in batch {
        if ex.target.len() != c {
            return Err(Error::DimensionMismatch {
                what: "target length",
                expected: c,
                found: ex.target.len(),
            });
        }
        let (logits, cache) = forward(params, ex.input, mode, rng)?;
        loss += cross_entropy(&logits, ex.target);

        let probs = softmax(&logits);
        let dlogits: Vec<f64> = probs
            .probs()
            .iter()
            .zip(ex.target)
            .map(|(p, t)| (p - t) * scale)
            .collect();

        dhidden.iter_mut().for_each(|v| *v = 0.0);
        for (k, &g) in dlogits.iter().enumerate() {
            grads.b2[k] += g;
            let row = &params.w2[k * h..(k + 1) * h];
            let grow = &mut grads.w2[k * h..(k + 1) * h];
            for j in 0..h {
                grow[j] += g * cache.post_activation[j];
                dhidden[j] += g * row[j];
            }
        }
        if let Some(mask) = &cache.dropout_mask {
            dhidden.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        for j in 0..h {
            let dpre = dhidden[j] * gelu_derivative(cache.pre_activation[j]);
            if dpre == 0.0 {
                continue;
            }
            grads.b1[j] += dpre;
            let grow = &mut grads.w1[j * d..(j + 1) * d];
            for (gw, &xi) in grow.iter_mut().zip(&cache.input) {
                *gw += dpre * xi;
            }
        }
    }
    Ok((loss * scale, grads))
}

/// Mean cross-entropy in evaluation mode, no gradient.
pub fn mean_loss(params: &MlpParams, examples: &[Example<'_>]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("examples"));
    }
    let mut unused = NoRng;
    let mut total = 0.0;
    for ex in examples {
        let (logits, _) = forward(params, ex.input, Mode::Eval, &mut unused)?;
        total += cross_entropy(&logits, ex.target);
    }
    Ok(total / examples.len() as f64)
}

/// RNG for evaluation-mode passes, which never draw.
pub(crate) struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation mode draws no randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation mode draws no randomness")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("evaluation mode draws no randomness")
    }
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EALM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON sidecar describing a binary checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Tensor order and shapes inside the binary file.
    pub layout: Vec<String>,
}

/// Writes a float32 little-endian checkpoint (`magic, version u32`, then
/// w1, b1, w2, b2 row-major) and its JSON sidecar.
pub fn save_checkpoint(params: &MlpParams, bin_path: &Path, meta_path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + params.num_params() * 4);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for t in params.tensors() {
        for &v in t {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(bin_path, bytes).map_err(|e| Error::io(bin_path, e))?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        input_dim: params.input_dim,
        hidden: params.hidden,
        classes: params.classes,
        layout: vec![
            format!("w1 [{}, {}]", params.hidden, params.input_dim),
            format!("b1 [{}]", params.hidden),
            format!("w2 [{}, {}]", params.classes, params.hidden),
            format!("b2 [{}]", params.classes),
        ],
    };
    let text = serde_json::to_string_pretty(&meta).expect("checkpoint meta serializes");
    fs::write(meta_path, text + "\n").map_err(|e| Error::io(meta_path, e))
}

pub fn load_checkpoint(bin_path: &Path, meta_path: &Path) -> Result<MlpParams> {
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: meta_path.to_path_buf(),
        source,
    })?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", meta.format_version)));
    }
    let bytes = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
    if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: bad checkpoint magic", bin_path.display())));
    }
    if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("{}: unsupported checkpoint version", bin_path.display())));
    }
    let mut params = MlpParams::zeros(meta.input_dim, meta.hidden, meta.classes);
    let expected = 8 + params.num_params() * 4;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "checkpoint byte length",
            expected,
            found: bytes.len(),
        });
    }
    let mut values = bytes[8..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v = values.next().unwrap());
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::entropy_slice;
    use proptest::prelude::*;

    #[test]
    fn init_is_bounded_deterministic_and_has_zero_bias() {
        let (d, h, c) = (7, 5, 3);
        let p = init_params(42, d, h, c);
        let a1 = (6.0 / (d + h) as f64).sqrt();
        let a2 = (6.0 / (h + c) as f64).sqrt();
        assert!(p.w1.iter().all(|w| w.abs() <= a1));
        assert!(p.w2.iter().all(|w| w.abs() <= a2));
        assert!(p.b1.iter().chain(&p.b2).all(|&b| b == 0.0));
        assert_eq!(p, init_params(42, d, h, c));
        assert_ne!(p, init_params(43, d, h, c));
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        assert!((gelu(1.0) - 0.841_191_990_608_276_7).abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for i in -40..=40 {
            let x = i as f64 * 0.15;
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_derivative(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.3, 0.3, 0.3]).probs(), LabelDistribution::uniform(3).probs());
        let a = softmax(&[1.0, -2.0, 0.5]);
        let b = softmax(&[101.0, 98.0, 100.5]);
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
        let s = softmax(&[0.0, std::f64::consts::LN_2]);
        assert!((s.probs()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.probs()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn forward_examples() {
        let zero = MlpParams::zeros(3, 4, 2);
        let (logits, _) = forward(&zero, &[1.0, 2.0, 3.0], Mode::Eval, &mut NoRng).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);

        let p = MlpParams {
            input_dim: 1,
            hidden: 1,
            classes: 2,
            w1: vec![1.0],
            b1: vec![0.0],
            w2: vec![1.0, 0.0],
            b2: vec![0.0, 0.0],
        };
        let (logits, _) = forward(&p, &[1.0], Mode::Eval, &mut NoRng).unwrap();
        assert!((logits[0] - 0.841_191_990_608_276_7).abs() < 1e-12);
        assert_eq!(logits[1], 0.0);

        assert!(matches!(
            forward(&p, &[1.0, 2.0], Mode::Eval, &mut NoRng),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn eval_is_deterministic_and_zero_dropout_matches_eval() {
        let p = init_params(1, 6, 8, 3);
        let x = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let a = forward(&p, &x, Mode::Eval, &mut NoRng).unwrap().0;
        let b = forward(&p, &x, Mode::Eval, &mut NoRng).unwrap().0;
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = forward(&p, &x, Mode::Train { dropout: 0.0 }, &mut rng).unwrap().0;
        assert_eq!(a, c);
    }

    #[test]
    fn dropout_zeroes_and_rescales() {
        let p = init_params(1, 4, 200, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, cache) = forward(&p, &[1.0, 0.5, -0.5, 2.0], Mode::Train { dropout: 0.25 }, &mut rng).unwrap();
        let mask = cache.dropout_mask.unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.75).abs() < 1e-15));
        let dropped = mask.iter().filter(|&&m| m == 0.0).count();
        assert!((20..80).contains(&dropped), "{dropped}");
    }

    #[test]
    fn matched_target_has_zero_logit_gradient() {
        // With all weights zero except b2, the only gradient flows to b2.
        let mut p = MlpParams::zeros(2, 3, 3);
        p.b2 = vec![0.2, -1.0, 0.7];
        let target = softmax(&p.b2);
        let batch = [Example { input: &[0.5, -0.5], target: target.probs() }];
        let (_, g) = loss_and_grad(&p, &batch, Mode::Eval, &mut NoRng).unwrap();
        assert!(g.b2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn one_hot_target_reduces_to_negative_log_prob() {
        let p = init_params(9, 3, 4, 3);
        let x = [0.3, 0.9, -1.2];
        let t = LabelDistribution::one_hot(3, 2);
        let (loss, _) = loss_and_grad(&p, &[Example { input: &x, target: t.probs() }], Mode::Eval, &mut NoRng).unwrap();
        let q = predict(&p, &x).unwrap();
        assert!((loss + q.probs()[2].ln()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = init_params(5, 4, 6, 3);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        let (b, m) = (dir.path().join("p.bin"), dir.path().join("p.json"));
        save_checkpoint(&p, &b, &m).unwrap();
        assert_eq!(load_checkpoint(&b, &m).unwrap(), p);
        let mut bytes = fs::read(&b).unwrap();
        bytes.pop();
        fs::write(&b, bytes).unwrap();
        assert!(load_checkpoint(&b, &m).is_err());
    }

    proptest! {
        #[test]
        fn loss_at_least_target_entropy(seed: u64, raw in proptest::collection::vec(0.0f64..1.0, 4), x in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let s: f64 = raw.iter().sum();
            prop_assume!(s > 1e-3);
            let t: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let p = init_params(seed, 3, 5, 4);
            let (loss, _) = loss_and_grad(&p, &[Example { input: &x, target: &t }], Mode::Eval, &mut NoRng).unwrap();
            prop_assert!(loss >= entropy_slice(&t, false) - 1e-9);
        }
    }
}
