//! Training loop: progressive level schedule, batch sampling, Adam with
//! per-group step counters, loss logging and checkpoints.

pub mod batch;
pub mod objective;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::gate;
use crate::error::{Error, Result};
use crate::field::checkpoint::Checkpoint;
use crate::field::Field;
use crate::losses::{BatchLosses, LossLog, LossWeights};
use crate::render::SamplingConfig;

pub use batch::{build_batch, sample_batch, BatchRay, TrainData, TrainView};
pub use objective::{evaluate, Evaluation, TermScales};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub batch_rays: usize,
    pub lambda_init: f64,
    pub lambda_step_fraction: f64,
    /// When false every level is active from the first iteration.
    pub progressive: bool,
    pub lr_hash: f64,
    pub lr_mlp: f64,
    pub lr_sharpness: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of training after which the learning rates follow a cosine
    /// decay to zero.
    pub decay_start: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub opacity_gate: f64,
    pub jitter_samples: bool,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 100_000,
            batch_rays: 4096,
            lambda_init: 4.0,
            lambda_step_fraction: 0.025,
            progressive: true,
            lr_hash: 1e-2,
            lr_mlp: 1e-3,
            lr_sharpness: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-15,
            decay_start: 0.5,
            seed: 0,
            checkpoint_every: 5000,
            opacity_gate: 0.5,
            jitter_samples: true,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::config("train.total_iters", "must be > 0"));
        }
        if self.batch_rays == 0 {
            return Err(Error::config("train.batch_rays", "must be > 0"));
        }
        if !(self.lambda_step_fraction > 0.0 && self.lambda_step_fraction <= 1.0) {
            return Err(Error::config("train.lambda_step_fraction", "must be in (0, 1]"));
        }
        if !(self.lambda_init >= 1.0) {
            return Err(Error::config("train.lambda_init", "must be >= 1"));
        }
        for (k, v) in [
            ("train.lr_hash", self.lr_hash),
            ("train.lr_mlp", self.lr_mlp),
            ("train.lr_sharpness", self.lr_sharpness),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be a finite value >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("train.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta2", "must be in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("train.adam_eps", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.decay_start) {
            return Err(Error::config("train.decay_start", "must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.opacity_gate) {
            return Err(Error::config("train.opacity_gate", "must be in [0, 1)"));
        }
        self.weights.validate()
    }
}

/// `min(L, λ_init + floor(iter / (fraction · total)))`.
pub fn schedule_lambda(iter: usize, cfg: &TrainConfig, levels: usize) -> f64 {
    let l = levels as f64;
    if !cfg.progressive {
        return l;
    }
    let period = cfg.lambda_step_fraction * cfg.total_iters as f64;
    // tolerate period values like 2500.0000000000005
    let steps = (iter as f64 / period + 1e-9).floor();
    (cfg.lambda_init + steps).min(l)
}

/// Learning-rate multiplier: 1 until `decay_start`, then a cosine to zero.
pub fn lr_factor(iter: usize, cfg: &TrainConfig) -> f64 {
    let start = cfg.decay_start * cfg.total_iters as f64;
    let it = iter as f64;
    if it < start {
        return 1.0;
    }
    let span = (cfg.total_iters as f64 - start).max(1.0);
    0.5 * (1.0 + (std::f64::consts::PI * ((it - start) / span).min(1.0)).cos())
}

/// Parameters plus optimizer state. Step counters: one per hash level, then
/// the MLPs, then `ς`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u32>,
    pub iteration: usize,
}

impl TrainState {
    pub fn new(field: &Field, params: Vec<f64>) -> Self {
        let n = params.len();
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: vec![0; field.grid.config.levels + 2],
            iteration: 0,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration as u32,
            params: self.params.clone(),
            first_moment: self.m.clone(),
            second_moment: self.v.clone(),
            steps: self.steps.clone(),
        }
    }

    pub fn from_checkpoint(field: &Field, ck: Checkpoint) -> Result<Self> {
        if ck.steps.len() != field.grid.config.levels + 2 {
            return Err(Error::Checkpoint(format!(
                "expected {} optimizer groups, found {}",
                field.grid.config.levels + 2,
                ck.steps.len()
            )));
        }
        Ok(Self {
            params: ck.params,
            m: ck.first_moment,
            v: ck.second_moment,
            steps: ck.steps,
            iteration: ck.iteration as usize,
        })
    }
}

/// One Adam update. Gated-off levels are left untouched, including their
/// moments and step counters.
pub fn adam_step(field: &Field, cfg: &TrainConfig, state: &mut TrainState, grad: &[f64], lambda: f64, lr_scale: f64) {
    let gc = &field.grid.config;
    let level_len = gc.table_size() * gc.feature_dim;
    let mut groups: Vec<(std::ops::Range<usize>, f64)> = Vec::new();
    for level in 0..gc.levels {
        if gate(level, lambda) {
            groups.push((level * level_len..(level + 1) * level_len, cfg.lr_hash));
        } else {
            groups.push((0..0, 0.0));
        }
    }
    groups.push((field.layout.mlp_range(), cfg.lr_mlp));
    let ls = field.layout.log_s;
    groups.push((ls..ls + 1, cfg.lr_sharpness));
    for (gi, (range, lr)) in groups.into_iter().enumerate() {
        if range.is_empty() {
            continue;
        }
        state.steps[gi] += 1;
        let t = state.steps[gi] as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let lr = lr * lr_scale;
        for i in range {
            let g = grad[i];
            let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
            state.m[i] = f64::from(m as f32);
            state.v[i] = f64::from(v as f32);
            let step = lr * (state.m[i] / bc1) / ((state.v[i] / bc2).sqrt() + cfg.adam_eps);
            state.params[i] = f64::from((state.params[i] - step) as f32);
        }
    }
}

/// Iteration-specific generator: the stream index is the iteration.
pub fn iteration_rng(seed: u64, iter: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter as u64);
    rng
}

/// Samples a batch, evaluates the objective and applies one optimizer step.
pub fn train_step(
    field: &Field,
    cfg: &TrainConfig,
    sampling: &SamplingConfig,
    data: &TrainData,
    state: &mut TrainState,
    grad_buf: &mut Vec<f64>,
) -> Result<(BatchLosses, f64)> {
    let iter = state.iteration;
    let lambda = schedule_lambda(iter, cfg, field.grid.config.levels);
    let mut rng = iteration_rng(cfg.seed, iter);
    let batch = build_batch(data, cfg.batch_rays, &mut rng)?;
    let samples = sample_batch(
        field,
        &state.params,
        &batch,
        lambda,
        sampling,
        cfg.jitter_samples,
        &mut rng,
    );
    let eval = evaluate(
        field,
        &state.params,
        &batch,
        &samples,
        lambda,
        TermScales::from_weights(&cfg.weights),
        cfg.opacity_gate,
        true,
    )?;
    grad_buf.clear();
    grad_buf.resize(state.params.len(), 0.0);
    eval.grad.as_ref().expect("gradient requested").add_to(grad_buf);
    adam_step(field, cfg, state, grad_buf, lambda, lr_factor(iter, cfg));
    state.iteration += 1;
    Ok((eval.losses, lambda))
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub first: Option<BatchLosses>,
    pub last: Option<BatchLosses>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:06}.bin"))
}

/// Runs from `state.iteration` to `cfg.total_iters`. With `out_dir`, writes
/// `losses.csv`, a checkpoint every `checkpoint_every` iterations and a final
/// `checkpoint_final.bin`.
pub fn train(
    field: &Field,
    cfg: &TrainConfig,
    sampling: &SamplingConfig,
    data: &TrainData,
    state: &mut TrainState,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut log = match out_dir {
        Some(d) => Some(LossLog::create(&d.join("losses.csv"))?),
        None => None,
    };
    let mut report = TrainReport::default();
    let mut grad = Vec::new();
    while state.iteration < cfg.total_iters {
        let iter = state.iteration;
        let (losses, lambda) = match train_step(field, cfg, sampling, data, state, &mut grad) {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => {
                let last = report
                    .checkpoints
                    .last()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "none".into());
                return Err(Error::NonFinite(format!(
                    "{what} at iteration {iter}; last good checkpoint: {last}"
                )));
            }
            Err(e) => return Err(e),
        };
        if report.first.is_none() {
            report.first = Some(losses);
        }
        report.last = Some(losses);
        if let Some(log) = log.as_mut() {
            log.append(iter, &losses, lambda, field.sharpness(&state.params))?;
        }
        if iter.is_multiple_of(500) {
            log::info!(
                "iter {iter} lambda {lambda} total {:.5} color {:.5} depth {:.5} normal {:.5} eikonal {:.5}",
                losses.total,
                losses.parts.color,
                losses.parts.depth,
                losses.parts.normal,
                losses.parts.eikonal
            );
        }
        if let Some(dir) = out_dir {
            let done = state.iteration;
            if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every) && done < cfg.total_iters {
                let p = checkpoint_path(dir, done);
                state.to_checkpoint().write(field, &p)?;
                report.checkpoints.push(p);
            }
        }
    }
    if let Some(log) = log.as_mut() {
        log.flush()?;
    }
    if let Some(dir) = out_dir {
        let p = dir.join("checkpoint_final.bin");
        state.to_checkpoint().write(field, &p)?;
        report.checkpoints.push(p);
    }
    Ok(report)
}
