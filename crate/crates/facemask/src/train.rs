//! The training loop: a fixed schedule of `epochs × steps_per_epoch`
//! optimization steps over the TRAIN split, with a shuffled cycling batch
//! sampler and a per-epoch loss/accuracy/wall-time history.
//!
//! All randomness (parameter init, shuffling, dropout) flows from one
//! configured seed, so a run is bitwise reproducible: identical manifest,
//! backbone data and config give identical final parameters and identical
//! history apart from the wall-clock column.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, FeatureMap};
use crate::dataset::{DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use crate::nnhead::{
    argmax, cross_entropy_in, head_backward, head_forward_train, HeadGradients, HeadParameters,
    LossBase, POOL,
};

/// Which parameter-update rule a step applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Knobs of [`train`]. The defaults encode the published schedule: 80
/// epochs of 42 steps.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub loss_base: LossBase,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            steps_per_epoch: 42,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            loss_base: LossBase::Log2,
        }
    }
}

impl TrainConfig {
    /// Counts must be at least 1; the learning rate must be finite and
    /// non-negative (zero makes every update the identity, which the test
    /// suites rely on).
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "epochs, steps_per_epoch and batch_size must be at least 1",
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "train config".into(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// One epoch's aggregate numbers. `epoch` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

/// Per-epoch records of a completed run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    records: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn records(&self) -> &[EpochStats] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy,seconds\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.accuracy, r.seconds));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let fail = |line: usize, message: String| Error::Manifest {
            path: "<history csv>".into(),
            line,
            message,
        };
        match lines.next() {
            Some((_, "epoch,loss,accuracy,seconds")) => {}
            other => {
                return Err(fail(
                    1,
                    format!("expected header 'epoch,loss,accuracy,seconds', got {other:?}"),
                ))
            }
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(fail(line_no, format!("expected 4 columns, got {}", parts.len())));
            }
            let epoch = parts[0]
                .parse::<usize>()
                .map_err(|e| fail(line_no, format!("bad epoch: {e}")))?;
            let mut nums = [0.0f64; 3];
            for (slot, raw) in nums.iter_mut().zip(&parts[1..]) {
                *slot = raw
                    .parse::<f64>()
                    .map_err(|e| fail(line_no, format!("bad number {raw:?}: {e}")))?;
            }
            records.push(EpochStats {
                epoch,
                loss: nums[0],
                accuracy: nums[1],
                seconds: nums[2],
            });
        }
        Ok(TrainHistory { records })
    }

    pub fn save_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Adam moment buffers (unused under SGD), aligned with
/// `HeadParameters::tensors` order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &HeadParameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Applies one parameter update in place.
pub fn optimizer_step(
    params: &mut HeadParameters,
    grads: &HeadGradients,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    for (p, g) in params.tensors().iter().zip(grads.tensors().iter()) {
        if p.len() != g.len() {
            return Err(Error::shape(format!(
                "gradient tensor length {} does not match parameter length {}",
                g.len(),
                p.len()
            )));
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::shape(format!("non-finite gradient entry {bad}")));
        }
    }
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (pv, &gv) in p.iter_mut().zip(g) {
                    *pv = (*pv as f64 - lr * gv as f64) as f32;
                }
            }
        }
        Optimizer::Adam => {
            state.step += 1;
            let t = state.step as i32;
            let m_corr = 1.0 - ADAM_BETA1.powi(t);
            let v_corr = 1.0 - ADAM_BETA2.powi(t);
            for ((p, g), (m, v)) in params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                for i in 0..p.len() {
                    let gv = g[i] as f64;
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gv;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gv * gv;
                    let m_hat = m[i] / m_corr;
                    let v_hat = v[i] / v_corr;
                    p[i] = (p[i] as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
                }
            }
        }
    }
    Ok(())
}

/// Shuffled cycling sampler: a full permutation per pass, batches taken
/// sequentially and allowed to span pass boundaries.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchSampler {
            order,
            cursor: 0,
            rng,
        }
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let idx = self.order[self.cursor];
        self.cursor += 1;
        idx
    }
}

/// Trains the head over the manifest's TRAIN split. See [`train_with`].
pub fn train(
    manifest: &DatasetManifest,
    backbone: &Backbone,
    cfg: &TrainConfig,
) -> Result<(HeadParameters, TrainHistory)> {
    train_with(manifest, backbone, cfg, |_| {})
}

/// As [`train`], invoking `on_epoch` after each completed epoch (progress
/// reporting hook; the callback cannot influence the run).
pub fn train_with(
    manifest: &DatasetManifest,
    backbone: &Backbone,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(HeadParameters, TrainHistory)> {
    cfg.validate()?;
    let records: Vec<_> = manifest.split_records(Split::Train).collect();
    if records.is_empty() {
        return Err(Error::EmptySplit {
            split: "train".into(),
        });
    }

    // Features are fetched once per record; the head re-pools them per
    // forward, which is cheap next to the dense layers.
    let mut features: Vec<FeatureMap> = Vec::with_capacity(records.len());
    let mut onehots: Vec<[f32; 2]> = Vec::with_capacity(records.len());
    let mut labels: Vec<Label> = Vec::with_capacity(records.len());
    for rec in &records {
        features.push(backbone.features_for_path(&rec.path)?);
        onehots.push(rec.label.one_hot());
        labels.push(rec.label);
    }
    let dims = backbone.feature_dims();
    let flattened_dim = (dims.0 / POOL.0) * (dims.1 / POOL.1) * dims.2;
    if flattened_dim == 0 {
        return Err(Error::shape(format!(
            "feature dims {dims:?} are smaller than the {}x{} pool",
            POOL.0, POOL.1
        )));
    }

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let shuffle_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(master.gen());

    let mut params = HeadParameters::init(flattened_dim, &mut init_rng);
    let mut state = OptimizerState::new(&params);
    let mut sampler = BatchSampler::new(records.len(), shuffle_rng);
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for step in 1..=cfg.steps_per_epoch {
            let mut batch_grads = HeadGradients::zeros(&params);
            let weight = 1.0 / cfg.batch_size as f32;
            let mut batch_loss = 0.0f64;
            for _ in 0..cfg.batch_size {
                let idx = sampler.next_index();
                let trace = head_forward_train(&features[idx], &params, &mut dropout_rng)?;
                batch_loss += cross_entropy_in(trace.probs(), &onehots[idx], cfg.loss_base)?;
                if Label::from_index(argmax(trace.probs())) == labels[idx] {
                    correct += 1;
                }
                let grads = head_backward(&trace, &onehots[idx], &params, cfg.loss_base)?;
                batch_grads.add_scaled(&grads, weight);
            }
            batch_loss /= cfg.batch_size as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            optimizer_step(&mut params, &batch_grads, &mut state, cfg)?;
            loss_sum += batch_loss;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / cfg.steps_per_epoch as f64,
            accuracy: correct as f64 / (cfg.steps_per_epoch * cfg.batch_size) as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.records.push(stats);
    }
    Ok((params, history))
}
