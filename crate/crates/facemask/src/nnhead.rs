//! The trainable classifier head: average pool 5×5 → flatten → dense 128 +
//! ReLU → dropout 0.5 → dense 2 → softmax, with cross-entropy loss and
//! hand-derived exact gradients.
//!
//! Forward passes accumulate in f64 and store f32 at each layer boundary;
//! backward mirrors the same layout. Dropout is inverted (kept units scaled
//! by 2 at train time) so the eval path is a pure matrix pipeline.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::FeatureMap;
use crate::error::{Error, Result};

/// Width of the hidden dense layer in the on-disk checkpoint format.
pub const HIDDEN_UNITS: usize = 128;
/// Number of output classes in the on-disk checkpoint format.
pub const CLASS_COUNT: usize = 2;
/// Pool window of the head's leading average-pool layer.
pub const POOL: (usize, usize) = (5, 5);

const KEEP_PROBABILITY: f64 = 0.5;
const PROB_FLOOR: f64 = 1e-12;
const CHECKPOINT_MAGIC: &[u8; 8] = b"FMDHEAD1";

/// Logarithm base used by the cross-entropy loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossBase {
    /// Base-2 logarithm; a uniform 2-class prediction costs exactly 1.
    Log2,
    /// Natural logarithm.
    Natural,
}

impl LossBase {
    /// Multiplier taking natural-log losses/gradients into this base.
    fn scale(self) -> f64 {
        match self {
            LossBase::Log2 => std::f64::consts::LOG2_E,
            LossBase::Natural => 1.0,
        }
    }
}

/// Weights and biases of the two dense layers.
///
/// `w1` is `flattened_dim × hidden` (input index major), `w2` is
/// `hidden × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParameters {
    flattened_dim: usize,
    hidden: usize,
    classes: usize,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
}

impl HeadParameters {
    /// Fresh parameters with symmetric uniform(±√(6/(fan_in+fan_out)))
    /// weights and zero biases, drawn from `rng` in declaration order.
    pub fn init(flattened_dim: usize, rng: &mut impl Rng) -> Self {
        Self::init_with_dims(flattened_dim, HIDDEN_UNITS, CLASS_COUNT, rng)
    }

    /// As [`Self::init`] with explicit layer widths (smaller heads keep
    /// numeric tests cheap; the checkpoint format only carries 128×2).
    pub fn init_with_dims(
        flattened_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(flattened_dim > 0 && hidden > 0 && classes > 0);
        let limit1 = (6.0 / (flattened_dim + hidden) as f64).sqrt();
        let limit2 = (6.0 / (hidden + classes) as f64).sqrt();
        let w1 = (0..flattened_dim * hidden)
            .map(|_| rng.gen_range(-limit1..limit1) as f32)
            .collect();
        let w2 = (0..hidden * classes)
            .map(|_| rng.gen_range(-limit2..limit2) as f32)
            .collect();
        HeadParameters {
            flattened_dim,
            hidden,
            classes,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; classes],
        }
    }

    /// Builds parameters from raw tensors, validating shapes and finiteness.
    pub fn from_tensors(
        flattened_dim: usize,
        hidden: usize,
        classes: usize,
        w1: Vec<f32>,
        b1: Vec<f32>,
        w2: Vec<f32>,
        b2: Vec<f32>,
    ) -> Result<Self> {
        if w1.len() != flattened_dim * hidden
            || b1.len() != hidden
            || w2.len() != hidden * classes
            || b2.len() != classes
        {
            return Err(Error::shape("parameter tensor lengths do not match dims"));
        }
        let finite = |t: &[f32]| t.iter().all(|v| v.is_finite());
        if !(finite(&w1) && finite(&b1) && finite(&w2) && finite(&b2)) {
            return Err(Error::shape("parameters contain non-finite values"));
        }
        Ok(HeadParameters {
            flattened_dim,
            hidden,
            classes,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn flattened_dim(&self) -> usize {
        self.flattened_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn w1(&self) -> &[f32] {
        &self.w1
    }

    pub fn b1(&self) -> &[f32] {
        &self.b1
    }

    pub fn w2(&self) -> &[f32] {
        &self.w2
    }

    pub fn b2(&self) -> &[f32] {
        &self.b2
    }

    /// Mutable views over all four tensors in declaration order
    /// (w1, b1, w2, b2) — the optimizer's update surface.
    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn tensors(&self) -> [&[f32]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Writes the checkpoint: magic `FMDHEAD1`, u32 flattened_dim, u32
    /// hidden, u32 classes, then w1, b1, w2, b2 as little-endian f32. The
    /// format fixes hidden=128 and classes=2; other widths are refused so a
    /// written file is always loadable.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.hidden != HIDDEN_UNITS || self.classes != CLASS_COUNT {
            return Err(Error::Checkpoint {
                message: format!(
                    "checkpoint format carries {HIDDEN_UNITS}x{CLASS_COUNT} heads, not {}x{}",
                    self.hidden, self.classes
                ),
            });
        }
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(20 + 4 * (self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()));
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        for d in [self.flattened_dim, self.hidden, self.classes] {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for tensor in self.tensors() {
            for v in tensor {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint written by [`Self::save`], validating magic,
    /// layer widths, exact length, and finiteness.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |message: String| Error::Checkpoint { message };
        if bytes.len() < 20 {
            return Err(fail(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail(format!(
                "bad magic {:?}, expected {CHECKPOINT_MAGIC:?}",
                &bytes[..8]
            )));
        }
        let dim_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let flattened_dim = dim_at(8) as usize;
        let hidden = dim_at(12) as usize;
        let classes = dim_at(16) as usize;
        if hidden != HIDDEN_UNITS || classes != CLASS_COUNT {
            return Err(fail(format!(
                "header declares a {hidden}x{classes} head, expected {HIDDEN_UNITS}x{CLASS_COUNT}"
            )));
        }
        if flattened_dim == 0 || flattened_dim > (1 << 24) {
            return Err(fail(format!("unreasonable flattened_dim {flattened_dim}")));
        }
        let value_count = flattened_dim * hidden + hidden + hidden * classes + classes;
        let expected = 20 + 4 * value_count;
        if bytes.len() != expected {
            return Err(fail(format!(
                "expected {expected} bytes for flattened_dim {flattened_dim}, found {}",
                bytes.len()
            )));
        }
        let mut values = bytes[20..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };
        let w1 = take(flattened_dim * hidden);
        let b1 = take(hidden);
        let w2 = take(hidden * classes);
        let b2 = take(classes);
        Self::from_tensors(flattened_dim, hidden, classes, w1, b1, w2, b2).map_err(|e| {
            fail(format!("invalid tensor data: {e}"))
        })
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    flat: Vec<f32>,
    z1: Vec<f32>,
    a1: Vec<f32>,
    mask: Vec<bool>,
    z2: Vec<f32>,
    probs: Vec<f32>,
    train_mode: bool,
}

impl ForwardTrace {
    pub fn flat(&self) -> &[f32] {
        &self.flat
    }

    pub fn z1(&self) -> &[f32] {
        &self.z1
    }

    /// Post-ReLU activations before dropout.
    pub fn a1(&self) -> &[f32] {
        &self.a1
    }

    /// Dropout keep pattern (all true in eval mode).
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn z2(&self) -> &[f32] {
        &self.z2
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn is_train(&self) -> bool {
        self.train_mode
    }

    /// Hidden activations as the second dense layer saw them (mask and
    /// train-time 2× scaling applied).
    fn dropped(&self, j: usize) -> f64 {
        if !self.mask[j] {
            return 0.0;
        }
        let v = self.a1[j] as f64;
        if self.train_mode {
            v / KEEP_PROBABILITY
        } else {
            v
        }
    }
}

/// Gradients of the loss with respect to each parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub dw1: Vec<f32>,
    pub db1: Vec<f32>,
    pub dw2: Vec<f32>,
    pub db2: Vec<f32>,
}

impl HeadGradients {
    pub fn zeros(params: &HeadParameters) -> Self {
        HeadGradients {
            dw1: vec![0.0; params.w1.len()],
            db1: vec![0.0; params.b1.len()],
            dw2: vec![0.0; params.w2.len()],
            db2: vec![0.0; params.b2.len()],
        }
    }

    pub fn tensors(&self) -> [&[f32]; 4] {
        [&self.dw1, &self.db1, &self.dw2, &self.db2]
    }

    /// Accumulates `other` scaled by `factor` (batch averaging).
    pub fn add_scaled(&mut self, other: &HeadGradients, factor: f32) {
        let pairs = [
            (&mut self.dw1, &other.dw1),
            (&mut self.db1, &other.db1),
            (&mut self.dw2, &other.dw2),
            (&mut self.db2, &other.db2),
        ];
        for (dst, src) in pairs {
            debug_assert_eq!(dst.len(), src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * factor;
            }
        }
    }
}

/// Mean over non-overlapping `pool` windows, stride equal to the window,
/// trailing rows/columns that do not fill a window dropped.
pub fn avgpool(fm: &FeatureMap, pool: (usize, usize)) -> Result<FeatureMap> {
    let (ph, pw) = pool;
    if ph == 0 || pw == 0 {
        return Err(Error::shape("pool window must be positive"));
    }
    if fm.height() < ph || fm.width() < pw {
        return Err(Error::shape(format!(
            "pool {ph}x{pw} does not fit input {}x{}",
            fm.height(),
            fm.width()
        )));
    }
    let oh = fm.height() / ph;
    let ow = fm.width() / pw;
    let c = fm.channels();
    let norm = 1.0 / (ph * pw) as f64;
    let mut values = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut sum = 0.0f64;
                for ky in 0..ph {
                    for kx in 0..pw {
                        sum += fm.get(oy * ph + ky, ox * pw + kx, ch) as f64;
                    }
                }
                values.push((sum * norm) as f32);
            }
        }
    }
    FeatureMap::new(oh, ow, c, values)
}

/// Index of the largest entry; the earliest index wins ties, so a uniform
/// 2-class output resolves to class 0.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max subtraction, f64 exponentials).
pub fn softmax(z: &[f32]) -> Vec<f32> {
    let max = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = z.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Eval-mode forward: dropout is the identity. Pure in (fm, params).
pub fn head_forward_eval(fm: &FeatureMap, params: &HeadParameters) -> Result<ForwardTrace> {
    forward_inner(fm, params, None)
}

/// Train-mode forward: samples a keep-probability-0.5 dropout mask from
/// `rng` and scales kept units by 2.
pub fn head_forward_train(
    fm: &FeatureMap,
    params: &HeadParameters,
    rng: &mut impl Rng,
) -> Result<ForwardTrace> {
    let mask: Vec<bool> = (0..params.hidden)
        .map(|_| rng.gen_bool(KEEP_PROBABILITY))
        .collect();
    forward_inner(fm, params, Some(mask))
}

/// Train-mode forward with an explicit keep mask — the stochastic path with
/// the randomness factored out, used by gradient checks.
pub fn head_forward_masked(
    fm: &FeatureMap,
    params: &HeadParameters,
    mask: &[bool],
) -> Result<ForwardTrace> {
    if mask.len() != params.hidden {
        return Err(Error::shape(format!(
            "mask length {} does not match hidden width {}",
            mask.len(),
            params.hidden
        )));
    }
    forward_inner(fm, params, Some(mask.to_vec()))
}

fn forward_inner(
    fm: &FeatureMap,
    params: &HeadParameters,
    mask: Option<Vec<bool>>,
) -> Result<ForwardTrace> {
    let pooled = avgpool(fm, POOL)?;
    let flat = pooled.values().to_vec();
    if flat.len() != params.flattened_dim {
        return Err(Error::shape(format!(
            "pooled feature length {} does not match head input {}",
            flat.len(),
            params.flattened_dim
        )));
    }
    let train_mode = mask.is_some();
    let mask = mask.unwrap_or_else(|| vec![true; params.hidden]);

    let mut z1 = vec![0.0f32; params.hidden];
    for (j, z) in z1.iter_mut().enumerate() {
        let mut acc = params.b1[j] as f64;
        for (i, &x) in flat.iter().enumerate() {
            acc += x as f64 * params.w1[i * params.hidden + j] as f64;
        }
        *z = acc as f32;
    }
    let a1: Vec<f32> = z1.iter().map(|&v| v.max(0.0)).collect();

    let mut z2 = vec![0.0f32; params.classes];
    for (k, z) in z2.iter_mut().enumerate() {
        let mut acc = params.b2[k] as f64;
        for j in 0..params.hidden {
            let dropped = if mask[j] {
                let v = a1[j] as f64;
                if train_mode {
                    v / KEEP_PROBABILITY
                } else {
                    v
                }
            } else {
                0.0
            };
            acc += dropped * params.w2[j * params.classes + k] as f64;
        }
        *z = acc as f32;
    }
    let probs = softmax(&z2);

    Ok(ForwardTrace {
        flat,
        z1,
        a1,
        mask,
        z2,
        probs,
        train_mode,
    })
}

/// Cross-entropy `−Σ yᵢ·log(pᵢ)` in the given base, probabilities clamped
/// to ≥ 1e-12 before the logarithm.
pub fn cross_entropy_in(probs: &[f32], onehot: &[f32], base: LossBase) -> Result<f64> {
    if probs.len() != onehot.len() {
        return Err(Error::shape(format!(
            "probs length {} vs targets length {}",
            probs.len(),
            onehot.len()
        )));
    }
    let mut loss = 0.0f64;
    for (&p, &y) in probs.iter().zip(onehot) {
        if y != 0.0 {
            loss -= y as f64 * (p as f64).max(PROB_FLOOR).ln();
        }
    }
    Ok(loss * base.scale())
}

/// Base-2 cross-entropy: a uniform 2-class prediction costs exactly 1 bit.
pub fn cross_entropy(probs: &[f32], onehot: &[f32]) -> Result<f64> {
    cross_entropy_in(probs, onehot, LossBase::Log2)
}

/// Exact gradients of the cross-entropy loss for one sample.
///
/// Uses the fused softmax/cross-entropy gradient `dz2 = (probs − onehot)`
/// scaled to the loss base, reapplies the trace's dropout mask on the way
/// back, and kills gradients where ReLU was inactive.
pub fn head_backward(
    trace: &ForwardTrace,
    onehot: &[f32],
    params: &HeadParameters,
    base: LossBase,
) -> Result<HeadGradients> {
    if onehot.len() != params.classes {
        return Err(Error::shape(format!(
            "target length {} vs {} classes",
            onehot.len(),
            params.classes
        )));
    }
    if trace.flat.len() != params.flattened_dim || trace.a1.len() != params.hidden {
        return Err(Error::shape("trace does not match parameter dims"));
    }
    let scale = base.scale();
    let dz2: Vec<f64> = trace
        .probs
        .iter()
        .zip(onehot)
        .map(|(&p, &y)| (p as f64 - y as f64) * scale)
        .collect();

    let mut grads = HeadGradients::zeros(params);
    for k in 0..params.classes {
        grads.db2[k] = dz2[k] as f32;
    }
    for j in 0..params.hidden {
        let dropped = trace.dropped(j);
        for k in 0..params.classes {
            grads.dw2[j * params.classes + k] = (dropped * dz2[k]) as f32;
        }
    }

    let mut dz1 = vec![0.0f64; params.hidden];
    for (j, dz) in dz1.iter_mut().enumerate() {
        if !trace.mask[j] || trace.z1[j] <= 0.0 {
            continue;
        }
        let mut acc = 0.0f64;
        for k in 0..params.classes {
            acc += params.w2[j * params.classes + k] as f64 * dz2[k];
        }
        if trace.train_mode {
            acc /= KEEP_PROBABILITY;
        }
        *dz = acc;
    }
    for (j, &dz) in dz1.iter().enumerate() {
        grads.db1[j] = dz as f32;
    }
    for (i, &x) in trace.flat.iter().enumerate() {
        for (j, &dz) in dz1.iter().enumerate() {
            grads.dw1[i * params.hidden + j] = (x as f64 * dz) as f32;
        }
    }
    Ok(grads)
}
