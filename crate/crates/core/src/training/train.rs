use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::gnn::{check_compatible, predict, save_checkpoint, GnnHyperparams, GnnParameters};
use crate::metrics::{evaluate_all, MetricsSummary};
use crate::system::{derive_seed, ChannelSample};

use super::objective::loss_and_gradients;
use super::optim::{cosine_lr, Adam, AdamConfig};

const INIT_TAG: u64 = 0x696e_6974;
const SHUFFLE_TAG: u64 = 0x7368_7566;

/// Optimization settings and dataset sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 4e-4,
            batch_size: 256,
            epochs: 60,
            train_samples: 20_000,
            test_samples: 500,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reduced budget used for acceptance runs.
    pub fn desk_scale() -> Self {
        TrainConfig {
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn full_scale() -> Self {
        TrainConfig {
            train_samples: 100_000,
            test_samples: 2_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("train_samples", self.train_samples),
            ("test_samples", self.test_samples),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.batch_size > self.train_samples {
            return Err(Error::config(
                "batch_size",
                format!(
                    "{} exceeds train_samples {}",
                    self.batch_size, self.train_samples
                ),
            ));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(0.0..1.0).contains(&beta1)
            || !(0.0..1.0).contains(&beta2)
            || eps.is_nan()
            || eps <= 0.0
        {
            return Err(Error::config(
                "adam",
                "betas must lie in [0, 1) and eps be positive",
            ));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.batch_size)
    }
}

/// One line of the training history, written after every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_objective: f64,
    pub test_sum_rate: f64,
    pub test_sensing_snr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the highest mean test objective seen after any epoch.
    pub best: GnnParameters<f32>,
    pub best_epoch: usize,
    pub last: GnnParameters<f32>,
    pub history: Vec<HistoryRow>,
}

impl TrainOutcome {
    /// Writes `best.ckpt`, `last.ckpt` and `history.csv` into `dir` and
    /// returns the checkpoint hashes.
    pub fn save(&self, dir: impl AsRef<Path>, system: &SystemConfig) -> Result<(String, String)> {
        let dir = dir.as_ref();
        let best = save_checkpoint(dir.join("best.ckpt"), &self.best, Some(system))?;
        let last = save_checkpoint(dir.join("last.ckpt"), &self.last, Some(system))?;
        write_history(dir.join("history.csv"), &self.history)?;
        Ok((best, last))
    }
}

pub fn write_history(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Mean test metrics of a network.
pub fn evaluate_network(
    params: &GnnParameters<f32>,
    config: &SystemConfig,
    samples: &[ChannelSample],
) -> Result<MetricsSummary> {
    let beams = predict(params, config, samples)?;
    MetricsSummary::from_reports(&evaluate_all(config, samples, &beams)?)
}

/// Initial parameters for a training run with this seed.
pub fn initial_parameters(hyper: GnnHyperparams, seed: u64) -> Result<GnnParameters<f32>> {
    GnnParameters::init(hyper, derive_seed(seed, INIT_TAG))
}

/// Trains from scratch. `on_epoch` sees each history row as it is produced.
pub fn train(
    system: &SystemConfig,
    config: &TrainConfig,
    hyper: GnnHyperparams,
    train_set: &[ChannelSample],
    test_set: &[ChannelSample],
    mut on_epoch: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    hyper.validate()?;
    check_compatible(system, &hyper)?;
    if train_set.len() < config.batch_size {
        return Err(Error::config(
            "batch_size",
            format!(
                "{} exceeds the {} training samples",
                config.batch_size,
                train_set.len()
            ),
        ));
    }
    if test_set.is_empty() {
        return Err(Error::config("test_samples", "test set is empty"));
    }
    for (i, s) in train_set.iter().chain(test_set).enumerate() {
        s.check_dims(system)
            .map_err(|e| Error::DimensionMismatch(format!("sample {i}: {e}")))?;
    }

    let mut params = initial_parameters(hyper, config.seed)?;
    let mut adam = Adam::new(config.adam, params.tensors());
    let per_epoch = config.steps_per_epoch(train_set.len());
    let total_steps = per_epoch * config.epochs;
    let shuffle_seed = derive_seed(config.seed, SHUFFLE_TAG);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, GnnParameters<f32>)> = None;
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            shuffle_seed,
            epoch as u64,
        )));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&ChannelSample> = idx.iter().map(|i| &train_set[*i]).collect();
            let (loss, grads) = match loss_and_gradients(&params, &batch, system, true) {
                Err(Error::Domain { .. }) => {
                    return Err(Error::Divergence {
                        step,
                        loss: f64::NAN,
                    })
                }
                other => other?,
            };
            let finite = grads.iter().all(|g| g.data().iter().all(|x| x.is_finite()));
            if !loss.is_finite() || !finite {
                return Err(Error::Divergence { step, loss });
            }
            lr = cosine_lr(step, total_steps, config.learning_rate);
            adam.step(params.tensors_mut(), &grads, lr)?;
            loss_sum += loss;
            step += 1;
        }
        let test = evaluate_network(&params, system, test_set)?;
        let row = HistoryRow {
            step,
            lr,
            train_loss: loss_sum / per_epoch as f64,
            test_objective: test.mean_objective,
            test_sum_rate: test.mean_sum_rate,
            test_sensing_snr: test.mean_sensing_snr,
        };
        on_epoch(&row);
        history.push(row);
        if best
            .as_ref()
            .is_none_or(|(obj, _, _)| test.mean_objective > *obj)
        {
            best = Some((test.mean_objective, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        history,
    })
}
