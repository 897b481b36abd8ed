//! Training loop: Adam with bias correction, optional global-norm gradient
//! clipping, deterministic batching, checkpoint/resume, and paired
//! evaluation.
//!
//! Determinism contract: the whole trajectory is a pure function of the
//! model's initialization, the sampler's `(seed, index)` stream, and
//! [`TrainConfig`]. Batches are drawn by global step index, optimizer state
//! serializes losslessly (f64 bits), and resuming from a mid-run checkpoint
//! reproduces the uninterrupted run bit for bit.
//!
//! The loss history is an append-only record of per-term values
//! (step, pixel, structural, perceptual, total); [`history_to_text`] renders
//! the canonical text form the CLI appends to its log file.

use crate::data::PairSampler;
use crate::error::{Error, Result};
use crate::losses::{total_loss_with_gradient, FeatureExtractor, LossWeights};
use crate::metrics::{score_pair, MetricsReport};
use crate::model::{blend_light_source, Checkpoint, Mfdnet, DEFAULT_SATURATION_THRESHOLD};
use crate::nn::{zero_grads, ParamOwner};
use crate::params::Reader;
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

const ADAM_MAGIC: &[u8; 4] = b"MFDA";
const ADAM_VERSION: u16 = 1;

/// Optimization schedule. The patch size lives in the dataset configuration;
/// [`train`] checks it divides the model's extent divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Total optimizer steps; resuming counts steps already taken.
    pub steps: u64,
    pub batch: usize,
    /// Seeds the perceptual feature extractor (data order comes from the
    /// sampler's own seed).
    pub seed: u64,
    pub weights: LossWeights,
    /// Evaluate and snapshot-if-best every this many steps; the final state
    /// always competes. Constant learning rate throughout (no decay).
    pub eval_every: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: DEFAULT_LR,
            steps: 200,
            batch: 2,
            seed: 0,
            weights: LossWeights::default(),
            eval_every: 50,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.batch == 0 {
            return Err(Error::config("batch size must be nonzero"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!(
                    "gradient clip norm must be positive and finite, got {c}"
                )));
            }
        }
        self.weights.validate()
    }
}

/// Per-step loss terms, in the order they are logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub mse: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Canonical text rendering of a loss history: one `step mse ssim perceptual
/// total` line per step after a comment header. Floats print in shortest
/// round-trip form, so the log is reproducible byte for byte.
pub fn history_to_text(history: &[LossRecord]) -> String {
    let mut out = String::from("# step mse ssim perceptual total\n");
    for r in history {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            r.step, r.mse, r.ssim, r.perceptual, r.total
        ));
    }
    out
}

/// Adam with bias correction. Moment estimates are kept and serialized in
/// f64 regardless of the model's scalar type, so optimizer state round-trips
/// losslessly through checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// Steps taken so far (the bias-correction clock).
    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update from the gradients currently stored in `owner`, optionally
    /// scaling them so the global gradient norm is at most `clip_norm`.
    pub fn step<F: Real>(
        &mut self,
        owner: &mut dyn ParamOwner<F>,
        lr: f64,
        clip_norm: Option<f64>,
    ) -> Result<()> {
        let mut sq = 0.0;
        owner.visit_params(&mut |p| sq += p.g.sq_sum_f64());
        let norm = libm::sqrt(sq);
        let clip_scale = match clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - libm::pow(ADAM_BETA1, self.t as f64);
        let bc2 = 1.0 - libm::pow(ADAM_BETA2, self.t as f64);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut err = None;
        owner.visit_params(&mut |p| {
            if err.is_some() {
                return;
            }
            let n = p.v.numel();
            let m = ms.entry(p.name.clone()).or_insert_with(|| alloc::vec![0.0; n]);
            let v = vs.entry(p.name.clone()).or_insert_with(|| alloc::vec![0.0; n]);
            if m.len() != n || v.len() != n {
                err = Some(Error::structure(format!(
                    "optimizer state for {:?} has {} scalars, parameter has {n}",
                    p.name,
                    m.len()
                )));
                return;
            }
            let value = p.v.data_mut();
            let grad = p.g.data();
            for i in 0..n {
                let g = grad[i].to_f64() * clip_scale;
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let update = lr * (m[i] / bc1) / (libm::sqrt(v[i] / bc2) + ADAM_EPS);
                value[i] = F::from_f64(value[i].to_f64() - update);
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Deterministic binary encoding (sorted parameter names, f64 bits).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ADAM_MAGIC);
        out.extend_from_slice(&ADAM_VERSION.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u32).to_le_bytes());
        for (name, m) in &self.m {
            let v = &self.v[name];
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.len() as u64).to_le_bytes());
            for x in m.iter().chain(v.iter()) {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "optimizer magic")?;
        if magic != ADAM_MAGIC {
            return Err(Error::format(0, "not an optimizer state blob"));
        }
        let version = r.u16("optimizer version")?;
        if version != ADAM_VERSION {
            return Err(Error::Version {
                found: version,
                supported: ADAM_VERSION,
            });
        }
        let t = r.u64("optimizer step count")?;
        let count = r.u32("optimizer entry count")?;
        let mut m_map = BTreeMap::new();
        let mut v_map = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16("state name length")? as usize;
            let name = core::str::from_utf8(r.take(name_len, "state name")?)
                .map_err(|_| Error::format(0, "state name is not UTF-8"))?
                .into();
            let numel = r.u64("state length")? as usize;
            let mut read_vec = |what: &str| -> Result<Vec<f64>> {
                let mut out = Vec::with_capacity(numel);
                for _ in 0..numel {
                    out.push(f64::from_bits(r.u64(what)?));
                }
                Ok(out)
            };
            let m = read_vec("first moment")?;
            let v = read_vec("second moment")?;
            if m_map.insert(String::clone(&name), m).is_some() {
                return Err(Error::format(0, format!("duplicate state entry {name:?}")));
            }
            v_map.insert(name, v);
        }
        if !r.exhausted() {
            return Err(Error::format(r.pos, "trailing bytes after optimizer state"));
        }
        Ok(Adam {
            t,
            m: m_map,
            v: v_map,
        })
    }
}

/// Stack single-image tensors into one batch.
pub fn stack_batch<F: Real>(items: &[Tensor<F>]) -> Result<Tensor<F>> {
    let first = items
        .first()
        .ok_or_else(|| Error::dimension("cannot stack an empty batch"))?;
    let (n, c, h, w) = first.shape();
    if n != 1 {
        return Err(Error::dimension("batch items must be single images"));
    }
    let mut out = Tensor::zeros(items.len(), c, h, w);
    for (b, item) in items.iter().enumerate() {
        item.expect_shape((1, c, h, w), "batch item")?;
        let plane = c * h * w;
        out.data_mut()[b * plane..(b + 1) * plane].copy_from_slice(item.data());
    }
    Ok(out)
}

/// Everything a finished (or resumed-and-finished) run produces.
#[derive(Debug)]
pub struct TrainOutcome<F: Real> {
    /// State after the final step.
    pub last: Checkpoint<F>,
    /// Highest-mean-PSNR snapshot among the evaluation points.
    pub best: Checkpoint<F>,
    pub best_psnr: f64,
    /// One record per step taken in this call (empty when resuming past the
    /// configured step count).
    pub history: Vec<LossRecord>,
}

/// Restore + blend + score each (corrupted, ground-truth) pair.
pub fn evaluate_pairs<F: Real>(
    model: &Mfdnet<F>,
    pairs: &[(Tensor<F>, Tensor<F>)],
    sat_threshold: f64,
) -> Result<MetricsReport> {
    let mut scores = Vec::with_capacity(pairs.len());
    for (corrupted, gt) in pairs {
        let deflared = model.deflare(corrupted)?;
        let blended = blend_light_source(corrupted, &deflared, F::from_f64(sat_threshold))?;
        scores.push(score_pair(&blended, gt)?);
    }
    Ok(MetricsReport::from_scores(scores))
}

fn epoch_pairs<F: Real>(sampler: &PairSampler<F>) -> Result<Vec<(Tensor<F>, Tensor<F>)>> {
    (0..sampler.len())
        .map(|i| sampler.pair(i).map(|s| (s.corrupted, s.gt)))
        .collect()
}

/// Run (or resume) training. Batch `s` holds sampler pairs
/// `(s*batch + b) % epoch_len`, so the sampler's epoch length is the number
/// of distinct pairs the run cycles through. `resume` takes the optimizer
/// blob of a previous checkpoint; training continues at the step it had
/// reached and stops at `tc.steps` total.
pub fn train<F: Real>(
    model: &mut Mfdnet<F>,
    sampler: &PairSampler<F>,
    tc: &TrainConfig,
    resume: Option<&[u8]>,
) -> Result<TrainOutcome<F>> {
    tc.validate()?;
    let patch = sampler.config().patch;
    let div = model.cfg.divisor();
    if patch % div != 0 {
        return Err(Error::config(format!(
            "dataset patch {patch} is not a multiple of the model divisor {div}"
        )));
    }
    let mut adam = match resume {
        Some(bytes) => Adam::from_bytes(bytes)?,
        None => Adam::new(),
    };
    let fx = FeatureExtractor::new(tc.seed);
    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint<F>)> = None;
    let start = adam.steps_taken();
    for step in start..tc.steps {
        let mut inputs = Vec::with_capacity(tc.batch);
        let mut targets = Vec::with_capacity(tc.batch);
        for b in 0..tc.batch {
            let idx = (step as usize).wrapping_mul(tc.batch).wrapping_add(b) % sampler.len();
            let s = sampler.pair(idx)?;
            inputs.push(s.corrupted);
            targets.push(s.gt);
        }
        let x = stack_batch(&inputs)?;
        let y = stack_batch(&targets)?;
        let (out, cache) = model.forward_train(&x)?;
        let (breakdown, g_out) = total_loss_with_gradient(&out, &y, &fx, &tc.weights)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite { step });
        }
        zero_grads(model);
        model.backward(&cache, &g_out);
        adam.step(model, tc.lr, tc.clip_norm)?;
        history.push(LossRecord {
            step,
            mse: breakdown.mse,
            ssim: breakdown.ssim,
            perceptual: breakdown.perceptual,
            total: breakdown.total,
        });
        let due = tc.eval_every > 0 && (step + 1) % tc.eval_every == 0;
        if due && step + 1 < tc.steps {
            snapshot_if_best(model, sampler, &adam, &mut best)?;
        }
    }
    // The final state always competes for best.
    snapshot_if_best(model, sampler, &adam, &mut best)?;
    let last = Checkpoint::from_model(model, Some(adam.to_bytes()))?;
    let (best_psnr, best) = best.expect("final evaluation always runs");
    Ok(TrainOutcome {
        last,
        best,
        best_psnr,
        history,
    })
}

fn snapshot_if_best<F: Real>(
    model: &mut Mfdnet<F>,
    sampler: &PairSampler<F>,
    adam: &Adam,
    best: &mut Option<(f64, Checkpoint<F>)>,
) -> Result<()> {
    let pairs = epoch_pairs(sampler)?;
    let report = evaluate_pairs(model, &pairs, DEFAULT_SATURATION_THRESHOLD)?;
    let psnr = report.mean_psnr;
    if best.as_ref().is_none_or(|(b, _)| psnr > *b) {
        *best = Some((psnr, Checkpoint::from_model(model, Some(adam.to_bytes()))?));
    }
    Ok(())
}
