//! Mini-batch Adam training with a stratified validation holdout and early
//! stopping on validation cross-entropy.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{augment, SamplePair};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{adam_step, argmax, cross_entropy, pairwise_sum, AdamState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub augment: bool,
    /// Worker threads for per-sample gradients; 0 uses the rayon default.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 50,
            learning_rate: 1e-4,
            early_stop_patience: 10,
            min_delta: 1e-4,
            val_fraction: 0.1,
            seed: 0,
            augment: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub train_loss: Vec<f64>,
    /// NaN when the holdout is empty (a single training sample).
    pub val_loss: Vec<f64>,
    pub val_oa: Vec<f64>,
    /// Last epoch run, 1-based.
    pub stopped_epoch: usize,
    /// Epoch whose parameters were restored, 1-based.
    pub best_epoch: usize,
    pub adam_steps: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub wall_seconds: f64,
}

impl RunLog {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_oa\n");
        for e in 0..self.epochs() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e + 1,
                self.train_loss[e],
                self.val_loss[e],
                self.val_oa[e]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Class id in `1..=K` of the largest logit; ties go to the lowest id.
pub fn class_from_logits(logits: &[f64]) -> u32 {
    argmax(logits) as u32 + 1
}

pub fn predict(params: &ModelParams, sample: &SamplePair) -> Result<u32> {
    Ok(class_from_logits(params.forward(sample)?.logits.data()))
}

/// Splits sample indices into (train, val), stratified by label.
fn holdout(samples: &[SamplePair], k: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, s) in samples.iter().enumerate() {
        by_class[s.label as usize - 1].push(i);
    }
    let mut quota: Vec<usize> = by_class
        .iter()
        .map(|c| ((c.len() as f64 * fraction).round() as usize).min(c.len().saturating_sub(1)))
        .collect();
    if quota.iter().sum::<usize>() == 0 {
        if let Some(c) = by_class.iter().position(|c| c.len() >= 2) {
            quota[c] = 1;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (members, q) in by_class.iter_mut().zip(quota) {
        members.shuffle(rng);
        val.extend_from_slice(&members[..q]);
        train.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn check_samples(params: &ModelParams, samples: &[SamplePair]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Validation("no training samples".into()));
    }
    let k = params.config().num_classes as u32;
    if let Some(s) = samples.iter().find(|s| s.label == 0 || s.label > k) {
        return Err(Error::Validation(format!(
            "sample at {:?} has label {} outside 1..={k}",
            s.center, s.label
        )));
    }
    Ok(())
}

/// Mean gradient of one batch, summed in sample order.
fn batch_gradient(
    params: &ModelParams,
    batch: &[&SamplePair],
    chunk: usize,
    acc: &mut [Vec<f64>],
) -> Result<Vec<f64>> {
    for g in acc.iter_mut() {
        g.fill(0.0);
    }
    let mut losses = Vec::with_capacity(batch.len());
    for part in batch.chunks(chunk) {
        let results: Vec<_> = if part.len() == 1 {
            vec![params.loss_and_grads(part[0])?]
        } else {
            part.par_iter()
                .map(|s| params.loss_and_grads(s))
                .collect::<Result<_>>()?
        };
        for (loss, grads) in results {
            losses.push(loss);
            for (a, g) in acc.iter_mut().zip(grads) {
                if let Some(g) = g {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in acc.iter_mut() {
        for x in g.iter_mut() {
            *x *= scale;
        }
    }
    Ok(losses)
}

fn evaluate(params: &ModelParams, samples: &[&SamplePair]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let results: Vec<(f64, bool)> = samples
        .par_iter()
        .map(|s| {
            let out = params.forward(s)?;
            let hit = class_from_logits(out.logits.data()) == s.label;
            let k = out.logits.len();
            let loss = cross_entropy(&out.logits.reshape(vec![1, k])?, &[s.label as usize - 1])?;
            Ok((loss.data()[0], hit))
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = results.iter().map(|r| r.0).collect();
    let correct = results.iter().filter(|r| r.1).count();
    Ok((
        pairwise_sum(&losses) / losses.len() as f64,
        correct as f64 / samples.len() as f64,
    ))
}

/// Trains `params` on `samples` and returns the best-validation parameters.
///
/// Results are bit-identical for any thread count: per-sample gradients are
/// reduced in sample order.
pub fn train(params: ModelParams, samples: &[SamplePair], cfg: &TrainConfig) -> Result<(ModelParams, RunLog)> {
    cfg.validate()?;
    check_samples(&params, samples)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| train_inner(params, samples, cfg))
}

fn train_inner(mut params: ModelParams, samples: &[SamplePair], cfg: &TrainConfig) -> Result<(ModelParams, RunLog)> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = params.config().num_classes;
    let (train_idx, val_idx) = holdout(samples, k, cfg.val_fraction, &mut rng);
    let train_set: Vec<SamplePair> = if cfg.augment {
        train_idx.iter().flat_map(|&i| augment(&samples[i])).collect()
    } else {
        train_idx.iter().map(|&i| samples[i].clone()).collect()
    };
    let val_set: Vec<&SamplePair> = val_idx.iter().map(|&i| &samples[i]).collect();

    let mut adam = AdamState::new(params.tensors());
    let mut acc: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let chunk = rayon::current_num_threads().max(1);
    let mut log = RunLog {
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        ..RunLog::default()
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut best_tracked = f64::INFINITY;
    let mut wait = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(order.len());
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&SamplePair> = idx.iter().map(|&i| &train_set[i]).collect();
            epoch_losses.extend(batch_gradient(&params, &batch, chunk, &mut acc)?);
            adam_step(params.tensors_mut(), &acc, &mut adam, cfg.learning_rate)?;
        }
        let train_loss = pairwise_sum(&epoch_losses) / epoch_losses.len() as f64;
        let (val_loss, val_oa) = evaluate(&params, &val_set)?;
        log.train_loss.push(train_loss);
        log.val_loss.push(val_loss);
        log.val_oa.push(val_oa);
        log.stopped_epoch = epoch;

        let monitored = if val_set.is_empty() { train_loss } else { val_loss };
        if !monitored.is_finite() {
            return Err(Error::Validation(format!("loss diverged at epoch {epoch}")));
        }
        if best.as_ref().map_or(true, |(b, _)| monitored < *b) {
            best = Some((monitored, params.tensors().to_vec()));
            log.best_epoch = epoch;
        }
        if monitored < best_tracked - cfg.min_delta {
            best_tracked = monitored;
            wait = 0;
        } else {
            wait += 1;
            if wait > cfg.early_stop_patience {
                break;
            }
        }
    }
    if let Some((_, tensors)) = best {
        for (dst, src) in params.tensors_mut().iter_mut().zip(tensors) {
            *dst = src;
        }
    }
    log.adam_steps = adam.step_count();
    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok((params, log))
}
