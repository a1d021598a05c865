//! Mini-batch training with Adadelta.
//!
//! Per-example gradients inside a batch run on the rayon pool and are summed
//! in batch order, so a fixed seed gives a bit-identical trajectory no matter
//! how many threads are available.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::Dropout;
use super::params::NmtParams;
use super::NmtError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Adadelta decay constant.
    pub rho: f64,
    /// Adadelta conditioning constant.
    pub eps: f64,
    /// Multiplies every Adadelta step. 1.0 is the optimizer as published.
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub dropout: Dropout,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch: 32,
            rho: 0.95,
            eps: 1e-6,
            lr: 1.0,
            seed: 1,
            shuffle: true,
            dropout: Dropout::default(),
            clip_norm: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, NmtError> {
    value
        .parse()
        .map_err(|_| NmtError::Config(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    /// Sets one field by name. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), NmtError> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "shuffle" => self.shuffle = parse(key, value)?,
            "dropout_emb" => self.dropout.embedding = parse(key, value)?,
            "dropout_hidden" => self.dropout.hidden = parse(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            _ => return Err(NmtError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file: one pair per line, `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), NmtError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NmtError::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| NmtError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), NmtError> {
        let bad = |m: &str| Err(NmtError::Config(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must be in [0, 1)");
        }
        if self.eps <= 0.0 || self.lr <= 0.0 {
            return bad("eps and lr must be positive");
        }
        for rate in [self.dropout.embedding, self.dropout.hidden] {
            if !(0.0..1.0).contains(&rate) {
                return bad("dropout rates must be in [0, 1)");
            }
        }
        Ok(())
    }
}

/// Adadelta state: running averages of squared gradients and squared updates.
#[derive(Debug, Clone)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    sq_grad: Vec<Vec<f64>>,
    sq_delta: Vec<Vec<f64>>,
}

impl Adadelta {
    pub fn new(params: &NmtParams, rho: f64, eps: f64, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Adadelta {
            rho,
            eps,
            lr,
            sq_grad: zeros.clone(),
            sq_delta: zeros,
        }
    }

    pub fn step(&mut self, params: &mut NmtParams, grad: &NmtParams) {
        let (rho, eps, lr) = (self.rho, self.eps, self.lr);
        let grads = grad.tensors();
        for (((p, g), eg), ed) in params
            .slices_mut()
            .into_iter()
            .zip(&grads)
            .zip(&mut self.sq_grad)
            .zip(&mut self.sq_delta)
        {
            for i in 0..p.len() {
                let gi = g.data[i];
                eg[i] = rho * eg[i] + (1.0 - rho) * gi * gi;
                let delta = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * gi;
                ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
                p[i] += lr * delta;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-example loss over each epoch, measured as the epoch runs.
    pub epoch_losses: Vec<f64>,
}

pub fn train(
    params: NmtParams,
    pairs: &[(Vec<usize>, Vec<usize>)],
    config: &TrainConfig,
) -> Result<(NmtParams, TrainReport), NmtError> {
    train_with_progress(params, pairs, config, |_, _| {})
}

/// Like [`train`], calling `on_epoch(epoch, mean_loss)` after every epoch (1-based).
pub fn train_with_progress<F: FnMut(usize, f64)>(
    mut params: NmtParams,
    pairs: &[(Vec<usize>, Vec<usize>)],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(NmtParams, TrainReport), NmtError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(NmtError::EmptyCorpus);
    }
    // Validate everything up front so workers never fail midway.
    for (src, tgt) in pairs {
        params.check_pair(src, tgt)?;
    }

    let mut opt = Adadelta::new(&params, config.rho, config.eps, config.lr);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffler = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut shuffler);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch) {
            let results: Vec<(f64, NmtParams)> = batch
                .par_iter()
                .map(|&idx| {
                    let (src, tgt) = &pairs[idx];
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(((epoch as u64) << 32) | idx as u64);
                    params
                        .loss_and_grad_with_dropout(src, tgt, config.dropout, &mut rng)
                        .expect("pairs validated before training")
                })
                .collect();
            let mut grad = params.zeros_like();
            for (loss, g) in &results {
                epoch_loss += loss;
                grad.add_scaled(g, 1.0);
            }
            grad.scale(1.0 / batch.len() as f64);
            if let Some(max) = config.clip_norm {
                let norm = grad.l2_norm();
                if norm > max {
                    grad.scale(max / norm);
                }
            }
            opt.step(&mut params, &grad);
        }
        let mean = epoch_loss / pairs.len() as f64;
        on_epoch(epoch + 1, mean);
        epoch_losses.push(mean);
    }
    Ok((params, TrainReport { epoch_losses }))
}

/// Greedy-decoding token accuracy against reference targets (markers
/// included in `tgt`, excluded from scoring). Position `i` counts as correct
/// when hypothesis and reference agree there; the denominator is the longer of
/// the two lengths, so extra or missing tokens count as errors.
pub fn token_accuracy(
    params: &NmtParams,
    pairs: &[(Vec<usize>, Vec<usize>)],
    max_len: usize,
) -> Result<f64, NmtError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (src, tgt) in pairs {
        if tgt.len() < 2 {
            return Err(NmtError::EmptyTarget);
        }
        let reference = &tgt[1..tgt.len() - 1];
        let hyp = params.translate(src, max_len)?;
        correct += hyp.iter().zip(reference).filter(|(a, b)| a == b).count();
        total += hyp.len().max(reference.len());
    }
    Ok(if total == 0 { 1.0 } else { correct as f64 / total as f64 })
}
