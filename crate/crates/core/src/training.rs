//! Negative sampling, Adam, and the epoch loop with validation-MRR model
//! selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Quadruple};
use crate::diff::{self, GradientSet};
use crate::error::{Error, Result};
use crate::evaluation::{self, RankReport};
use crate::exec::Execution;
use crate::params::{init_params, CurvatureSpec, ModelParams, ParamKind};

pub use crate::diff::batch_loss;

/// Training hyper-parameters. Defaults follow the reference recipe: 500
/// epochs, batches of 256, 500 negatives, Adam at a constant 0.001.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Validation cadence in epochs; 0 disables validation.
    pub valid_every: usize,
    pub dim: usize,
    pub spec: CurvatureSpec,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 256,
            negatives: 500,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            valid_every: 20,
            dim: 20,
            spec: CurvatureSpec::RelationTime,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("dim", self.dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!("dim must be even, got {}", self.dim)));
        }
        if !(self.learning_rate > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Config(
                "learning rate and Adam epsilon must be positive".into(),
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `k` uniform draws from `[0, num_entities)`. The true object is not
/// excluded.
pub fn sample_negatives<R: Rng>(rng: &mut R, k: usize, num_entities: usize) -> Result<Vec<usize>> {
    if num_entities == 0 {
        return Err(Error::InvalidArgument(
            "cannot sample negatives from an empty entity set".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument(
            "at least one negative is required".into(),
        ));
    }
    Ok((0..k).map(|_| rng.gen_range(0..num_entities)).collect())
}

/// Adam moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update of every allocated array.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if let Some((kind, i)) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!(
            "gradient {}[{i}] = {}",
            kind.name(),
            grads.array(kind).unwrap()[i]
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for kind in ParamKind::ALL {
        let (Some(p), Some(g)) = (params.array_mut(kind), grads.array(kind)) else {
            continue;
        };
        let m = state
            .first
            .array_mut(kind)
            .expect("moment shapes follow params");
        let v = state
            .second
            .array_mut(kind)
            .expect("moment shapes follow params");
        for (((pi, gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

/// One row of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mrr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h10: Option<f64>,
    pub seconds: f64,
}

/// Passed to the per-epoch observer.
pub struct EpochEvent<'a> {
    pub log: &'a EpochLog,
    pub params: &'a ModelParams,
    /// True when this epoch produced a new best validation MRR.
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParams,
    /// Epoch of the retained model (the final epoch when no validation ran).
    pub best_epoch: usize,
    pub best_valid: Option<RankReport>,
    pub last: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Trains from scratch; see [`train_with`].
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(config, dataset, |_| Ok(()))
}

/// Runs `config.epochs` epochs of shuffled mini-batches over the augmented
/// training split. Every `valid_every` epochs the filtered validation MRR is
/// computed and the best model retained. `observer` sees every epoch.
pub fn train_with(
    config: &TrainConfig,
    dataset: &Dataset,
    mut observer: impl FnMut(&EpochEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let sizes = dataset.sizes();
    let mut params = init_params(sizes, config.dim, config.spec, config.seed)?;
    let mut adam = AdamState::new(&params, config.beta1, config.beta2, config.adam_eps);
    // independent stream from the initialisation
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let train = dataset.augmented(&dataset.train);
    let valid = dataset.augmented(&dataset.valid);
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<Quadruple> = Vec::with_capacity(config.batch_size);
    let mut negatives: Vec<Vec<usize>> = Vec::with_capacity(config.batch_size);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(ModelParams, usize, RankReport)> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            negatives.clear();
            for &i in idx {
                batch.push(train[i]);
                negatives.push(sample_negatives(
                    &mut rng,
                    config.negatives,
                    sizes.entities,
                )?);
            }
            let (loss, grads) =
                diff::loss_and_grads(&params, config.spec, &batch, &negatives, config.execution)?;
            adam_step(&mut params, &grads, &mut adam, config.learning_rate)?;
            total += loss * batch.len() as f64;
        }
        let mut row = EpochLog {
            epoch,
            loss: total / train.len() as f64,
            mrr: None,
            h1: None,
            h3: None,
            h10: None,
            seconds: 0.0,
        };

        let mut improved = false;
        if config.valid_every > 0 && epoch % config.valid_every == 0 && !valid.is_empty() {
            let report = evaluation::evaluate(
                &params,
                config.spec,
                &valid,
                &dataset.filter,
                config.execution,
            )?;
            row.mrr = Some(report.mrr);
            row.h1 = Some(report.hits1);
            row.h3 = Some(report.hits3);
            row.h10 = Some(report.hits10);
            if best.as_ref().is_none_or(|(_, _, b)| report.mrr > b.mrr) {
                best = Some((params.clone(), epoch, report));
                improved = true;
            }
        }
        row.seconds = started.elapsed().as_secs_f64();
        observer(&EpochEvent {
            log: &row,
            params: &params,
            improved,
        })?;
        log.push(row);
    }

    Ok(match best {
        Some((best, best_epoch, report)) => TrainOutcome {
            best,
            best_epoch,
            best_valid: Some(report),
            last: params,
            log,
        },
        None => TrainOutcome {
            best: params.clone(),
            best_epoch: config.epochs,
            best_valid: None,
            last: params,
            log,
        },
    })
}
