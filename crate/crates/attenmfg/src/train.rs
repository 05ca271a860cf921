//! REINFORCE with a rollout-mean baseline and Adam.
//!
//! Training is stateless with respect to the RNG: every instance and every
//! rollout seed is derived from `(master seed, epoch, index)`, so resuming
//! from a checkpoint replays the exact stream a straight-through run would
//! have seen.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::eval::EvalError;
use crate::features::assemble_features;
use crate::model::{generate_instance, GeneratorConfig, Instance, ModelError};
use crate::policy::{
    encode, rollout, rollout_features, AdamState, Checkpoint, DecodeMode, PolicyHyper,
    PolicyParams, TrainState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in `{tensor}`")]
    NonFiniteGrad { tensor: String },
    #[error("checkpoint belongs to a different run: config hash {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hyper: PolicyHyper,
    pub epochs: usize,
    pub instances_per_epoch: usize,
    pub batch: usize,
    pub lr: f64,
    /// Rollouts per instance; their mean cost is the baseline.
    pub baseline_rollouts: usize,
    pub seed: u64,
    /// Global-norm gradient clip applied before Adam.
    pub grad_clip: f64,
    /// Fixed instances scored greedily after each epoch.
    pub holdout_instances: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: PolicyHyper::default(),
            epochs: 100,
            instances_per_epoch: 12800,
            batch: 16,
            lr: 1e-4,
            baseline_rollouts: 8,
            seed: 0,
            grad_clip: 1.0,
            holdout_instances: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.hyper.is_valid() {
            return Err(TrainError::Config(format!("bad architecture: {:?}", self.hyper)));
        }
        if self.epochs == 0 || self.instances_per_epoch == 0 || self.batch == 0 {
            return Err(TrainError::Config("epochs, instances, and batch must be >= 1".into()));
        }
        if self.baseline_rollouts < 2 {
            return Err(TrainError::Config("baseline needs at least 2 rollouts".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("bad learning rate {}", self.lr)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(TrainError::Config(format!("bad gradient clip {}", self.grad_clip)));
        }
        if self.holdout_instances == 0 {
            return Err(TrainError::Config("holdout needs at least 1 instance".into()));
        }
        Ok(())
    }
}

/// One row of the per-epoch metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mean_cost: f64,
    pub holdout_greedy_cost: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_mean_cost,holdout_greedy_cost,grad_norm,seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_mean_cost, r.holdout_greedy_cost, r.grad_norm, r.seconds
        ));
    }
    out
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

// ---------------------------------------------------------------------------
// Seed derivation

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic seed for `(master, stream, index)`; streams never collide
/// because each hop feeds the previous hash forward.
pub(crate) fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ splitmix64(index))
}

const STREAM_INIT: u64 = u64::MAX;
const STREAM_HOLDOUT: u64 = u64::MAX - 1;

fn instance_stream(epoch: usize) -> u64 {
    2 * epoch as u64
}

fn rollout_stream(epoch: usize) -> u64 {
    2 * epoch as u64 + 1
}

/// Fingerprint tying checkpoints to the exact (train, generator) pair.
pub fn config_fingerprint(config: &TrainConfig, gen: &GeneratorConfig) -> String {
    #[derive(Serialize)]
    struct Fingerprint<'a> {
        config: &'a TrainConfig,
        gen: &'a GeneratorConfig,
    }
    let json = serde_json::to_vec(&Fingerprint { config, gen }).expect("config is serializable");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Gradient estimator

/// Batch gradient plus the batch's mean rollout cost.
pub struct BatchGrad {
    pub grads: Vec<Array2<f64>>,
    pub mean_cost: f64,
}

/// Per-instance gradient: sample `k` rollouts off one shared encoding,
/// subtract their mean cost, and differentiate the weighted log-likelihood.
fn instance_grad(
    instance: &Instance,
    params: &PolicyParams,
    k: usize,
    seed: u64,
) -> Result<(Vec<Array2<f64>>, f64), TrainError> {
    let features = assemble_features(instance);
    let mut tape = Tape::new();
    let nodes = params.stage(&mut tape);
    let enc = encode(&mut tape, &nodes, &features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rollouts: Vec<_> = (0..k)
        .map(|_| {
            rollout_features(
                &mut tape,
                &nodes,
                &enc,
                &features,
                &instance.economics,
                DecodeMode::Sample(&mut rng),
            )
        })
        .collect::<Result<_, _>>()?;

    let baseline = rollouts.iter().map(|r| r.cost).sum::<f64>() / k as f64;
    let mut terms = Vec::new();
    for r in &rollouts {
        let w = (r.cost - baseline) / k as f64;
        for &node in &r.logp_nodes {
            terms.push((w, node));
        }
    }
    let loss = tape.axpy(terms);
    let grads = tape.backward(loss);
    let out = nodes
        .ids()
        .iter()
        .zip(params.tensors())
        .map(|(&id, t)| grads.get(id).cloned().unwrap_or_else(|| Array2::zeros(t.dim())))
        .collect();
    Ok((out, baseline))
}

/// REINFORCE gradient over a batch, reduced in instance order so the result
/// does not depend on how the work was scheduled.
pub fn reinforce_grad(
    instances: &[Instance],
    params: &PolicyParams,
    k: usize,
    seeds: &[u64],
) -> Result<BatchGrad, TrainError> {
    if k < 2 {
        return Err(TrainError::Config("baseline needs at least 2 rollouts".into()));
    }
    assert_eq!(instances.len(), seeds.len(), "one rollout seed per instance");
    let per_instance: Vec<(Vec<Array2<f64>>, f64)> = instances
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(inst, &seed)| instance_grad(inst, params, k, seed))
        .collect::<Result<_, _>>()?;

    let scale = 1.0 / instances.len() as f64;
    let mut grads: Vec<Array2<f64>> =
        params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
    let mut mean_cost = 0.0;
    for (g, cost) in &per_instance {
        for (acc, gi) in grads.iter_mut().zip(g) {
            *acc += gi;
        }
        mean_cost += cost;
    }
    for g in &mut grads {
        *g *= scale;
    }
    mean_cost *= scale;

    for (g, name) in grads.iter().zip(params.tensor_names()) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGrad { tensor: name });
        }
    }
    Ok(BatchGrad { grads, mean_cost })
}

// ---------------------------------------------------------------------------
// Optimizer

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam step with global-norm clipping. Returns the pre-clip norm.
pub fn adam_step(
    params: &mut PolicyParams,
    grads: &[Array2<f64>],
    adam: &mut AdamState,
    lr: f64,
    grad_clip: f64,
) -> f64 {
    assert_eq!(grads.len(), params.tensors().len());
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    let clip = if norm > grad_clip { grad_clip / norm } else { 1.0 };

    adam.t += 1;
    let bc1 = 1.0 - BETA1.powi(adam.t as i32);
    let bc2 = 1.0 - BETA2.powi(adam.t as i32);
    for (((p, g), m), v) in
        params.tensors_mut().iter_mut().zip(grads).zip(&mut adam.m).zip(&mut adam.v)
    {
        ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            let g = g * clip;
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        });
    }
    norm
}

// ---------------------------------------------------------------------------
// Training loop

fn holdout_set(config: &TrainConfig, gen: &GeneratorConfig) -> Result<Vec<Instance>, TrainError> {
    (0..config.holdout_instances)
        .map(|i| {
            let seed = derive_seed(config.seed, STREAM_HOLDOUT, i as u64);
            Ok(generate_instance(&gen.with_seed(seed))?)
        })
        .collect()
}

fn holdout_greedy_cost(params: &PolicyParams, holdout: &[Instance]) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for inst in holdout {
        sum += rollout(params, inst, DecodeMode::Greedy)?.cost;
    }
    Ok(sum / holdout.len() as f64)
}

fn run_epochs(
    mut params: PolicyParams,
    mut adam: AdamState,
    start_epoch: usize,
    config: &TrainConfig,
    gen: &GeneratorConfig,
) -> Result<TrainOutcome, TrainError> {
    let holdout = holdout_set(config, gen)?;
    let mut metrics = Vec::new();
    for epoch in start_epoch..config.epochs {
        let started = Instant::now();
        let mut cost_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        let mut index = 0usize;
        while index < config.instances_per_epoch {
            let width = config.batch.min(config.instances_per_epoch - index);
            let instances: Vec<Instance> = (index..index + width)
                .map(|i| {
                    let seed = derive_seed(config.seed, instance_stream(epoch), i as u64);
                    Ok::<_, TrainError>(generate_instance(&gen.with_seed(seed))?)
                })
                .collect::<Result<_, _>>()?;
            let seeds: Vec<u64> = (index..index + width)
                .map(|i| derive_seed(config.seed, rollout_stream(epoch), i as u64))
                .collect();
            let batch = reinforce_grad(&instances, &params, config.baseline_rollouts, &seeds)?;
            let norm =
                adam_step(&mut params, &batch.grads, &mut adam, config.lr, config.grad_clip);
            cost_sum += batch.mean_cost * width as f64;
            norm_sum += norm;
            batches += 1;
            index += width;
        }
        metrics.push(EpochMetrics {
            epoch,
            train_mean_cost: cost_sum / config.instances_per_epoch as f64,
            holdout_greedy_cost: holdout_greedy_cost(&params, &holdout)?,
            grad_norm: norm_sum / batches as f64,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let state = TrainState {
        epoch: config.epochs,
        adam_t: adam.t,
        master_seed: config.seed,
        config_hash: config_fingerprint(config, gen),
    };
    Ok(TrainOutcome { checkpoint: Checkpoint { params, train: Some((state, adam)) }, metrics })
}

/// Train from a fresh initialization.
pub fn train(config: &TrainConfig, gen: &GeneratorConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let params = PolicyParams::init(config.hyper, derive_seed(config.seed, STREAM_INIT, 0));
    let adam = AdamState::zeros_like(&params);
    run_epochs(params, adam, 0, config, gen)
}

/// Continue a checkpointed run; the stream layout makes the result
/// bit-identical to never having stopped.
pub fn resume(
    checkpoint: Checkpoint,
    config: &TrainConfig,
    gen: &GeneratorConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let (state, adam) = checkpoint
        .train
        .ok_or_else(|| TrainError::Config("checkpoint carries no training state".into()))?;
    let expected = config_fingerprint(config, gen);
    if state.config_hash != expected {
        return Err(TrainError::ConfigMismatch { expected, found: state.config_hash });
    }
    run_epochs(checkpoint.params, adam, state.epoch, config, gen)
}

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Deterministic surrogate loss for frozen sequences: replay each sequence,
/// weight its log-likelihood by `(cost - mean cost) / k`, and sum. Returns
/// the loss and its analytic gradient.
pub fn frozen_loss_and_grad(
    params: &PolicyParams,
    instance: &Instance,
    seqs: &[Vec<usize>],
) -> Result<(f64, Vec<Array2<f64>>), TrainError> {
    let features = assemble_features(instance);
    let mut tape = Tape::new();
    let nodes = params.stage(&mut tape);
    let enc = encode(&mut tape, &nodes, &features);
    let rollouts: Vec<_> = seqs
        .iter()
        .map(|seq| {
            rollout_features(
                &mut tape,
                &nodes,
                &enc,
                &features,
                &instance.economics,
                DecodeMode::Forced(seq),
            )
        })
        .collect::<Result<_, _>>()?;
    let baseline = rollouts.iter().map(|r| r.cost).sum::<f64>() / seqs.len() as f64;
    let mut terms = Vec::new();
    for r in &rollouts {
        let w = (r.cost - baseline) / seqs.len() as f64;
        for &node in &r.logp_nodes {
            terms.push((w, node));
        }
    }
    let loss = tape.axpy(terms);
    let value = tape.scalar(loss);
    let grads = tape.backward(loss);
    let out = nodes
        .ids()
        .iter()
        .zip(params.tensors())
        .map(|(&id, t)| grads.get(id).cloned().unwrap_or_else(|| Array2::zeros(t.dim())))
        .collect();
    Ok((value, out))
}

/// Central finite differences over every parameter entry against the
/// analytic gradient of [`frozen_loss_and_grad`]. Returns each tensor's
/// worst relative error (absolute where both sides are at most 1).
pub fn finite_difference_per_tensor(
    params: &PolicyParams,
    instance: &Instance,
    seqs: &[Vec<usize>],
    eps: f64,
) -> Result<Vec<(String, f64)>, TrainError> {
    let (_, analytic) = frozen_loss_and_grad(params, instance, seqs)?;
    let mut probe = params.clone();
    let mut report = Vec::with_capacity(params.tensors().len());
    for (ti, name) in params.tensor_names().into_iter().enumerate() {
        let dim = params.tensors()[ti].dim();
        let mut worst = 0.0f64;
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                let orig = params.tensors()[ti][[r, c]];
                probe.tensors_mut()[ti][[r, c]] = orig + eps;
                let (up, _) = frozen_loss_and_grad(&probe, instance, seqs)?;
                probe.tensors_mut()[ti][[r, c]] = orig - eps;
                let (down, _) = frozen_loss_and_grad(&probe, instance, seqs)?;
                probe.tensors_mut()[ti][[r, c]] = orig;
                let fd = (up - down) / (2.0 * eps);
                let ad = analytic[ti][[r, c]];
                let denom = ad.abs().max(fd.abs()).max(1.0);
                worst = worst.max((ad - fd).abs() / denom);
            }
        }
        report.push((name, worst));
    }
    Ok(report)
}

/// Worst case of [`finite_difference_per_tensor`] across all tensors.
pub fn finite_difference_max_rel_err(
    params: &PolicyParams,
    instance: &Instance,
    seqs: &[Vec<usize>],
    eps: f64,
) -> Result<f64, TrainError> {
    let per_tensor = finite_difference_per_tensor(params, instance, seqs, eps)?;
    Ok(per_tensor.into_iter().map(|(_, e)| e).fold(0.0, f64::max))
}
