//! Mini-batch training of [`GnnModel`] on standardized labels.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encode_sample, Architecture, FeatureNorms, GnnError, GnnModel, GraphBatch, GraphSample};
use crate::cascade::{is_blackout, SampleSet, Split};
use crate::grid::Grid;
use crate::influence::AugmentedTopology;
use crate::neural::{optimizer_step, AdamConfig, OptimizerState, Parameters};

pub const CHECKPOINT_VERSION: &str = "blackout-gnn v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Population {
    /// Every sample.
    Mixed,
    /// Only samples whose label is a blackout.
    BlackoutOnly,
}

impl Population {
    pub fn admits(self, label_mw: f64) -> bool {
        match self {
            Population::Mixed => true,
            Population::BlackoutOnly => is_blackout(label_mw),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub architecture: Architecture,
    pub population: Population,
    /// Graphs per gradient work unit. Gradients of the units are summed in
    /// index order, so results do not depend on the thread count.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 128,
            epochs: 50,
            patience: 10,
            seed: 0,
            architecture: Architecture::default(),
            population: Population::Mixed,
            chunk_size: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Epoch 0 is the full train-set loss before any update; later epochs
    /// report the mean of the mini-batch losses seen during the epoch.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_val: usize,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), GnnError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| GnnError::Checkpoint(e.to_string());
        w.write_record(["epoch", "train_mse", "val_mse"]).map_err(io)?;
        for e in &self.epochs {
            let val = e.val_mse.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([e.epoch.to_string(), e.train_mse.to_string(), val]).map_err(io)?;
        }
        w.flush().map_err(|e| GnnError::Checkpoint(e.to_string()))
    }
}

/// Everything needed to reuse or resume a trained regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnCheckpoint {
    pub version: String,
    pub config: TrainConfig,
    pub topology: AugmentedTopology,
    pub model: GnnModel,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
}

impl GnnCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), GnnError> {
        serde_json::to_writer(out, self).map_err(|e| GnnError::Checkpoint(e.to_string()))
    }

    pub fn read<R: Read>(input: R) -> Result<Self, GnnError> {
        let ckpt: Self = serde_json::from_reader(input).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(GnnError::Checkpoint(format!("unsupported version `{}`", ckpt.version)));
        }
        Ok(ckpt)
    }
}

fn encode_indices(
    grid: &Grid,
    set: &SampleSet,
    topology: &AugmentedTopology,
    norms: &FeatureNorms,
    indices: &[usize],
) -> Result<Vec<GraphSample>, GnnError> {
    indices
        .par_iter()
        .map(|&i| {
            let s = &set.samples[i];
            encode_sample(grid, set.state_of(s), &s.failures, topology, norms, s.blackout_mw)
        })
        .collect()
}

/// Sum of squared errors on normalized labels over `samples`.
fn sum_squared_error(model: &GnnModel, samples: &[GraphSample], chunk: usize) -> Result<f64, GnnError> {
    let parts = samples
        .par_chunks(chunk.max(1))
        .map(|c| {
            let batch = GraphBatch::new(c, &model.norms)?;
            let out = model.infer_batch(&batch)?;
            Ok(out.iter().zip(&batch.targets).map(|(o, t)| (o - t).powi(2)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>, GnnError>>()?;
    Ok(parts.iter().sum())
}

fn mean_squared_error(model: &GnnModel, samples: &[GraphSample], chunk: usize) -> Result<Option<f64>, GnnError> {
    if samples.is_empty() {
        return Ok(None);
    }
    Ok(Some(sum_squared_error(model, samples, chunk)? / samples.len() as f64))
}

/// Gradient of the batch mean squared error and the batch squared-error sum.
fn batch_gradient(model: &GnnModel, batch: &[&GraphSample], chunk: usize) -> Result<(GnnModel, f64), GnnError> {
    let scale = 2.0 / batch.len() as f64;
    let parts = batch
        .par_chunks(chunk.max(1))
        .map(|c| {
            let b = GraphBatch::from_refs(c, &model.norms)?;
            let (out, cache) = model.forward_batch(&b)?;
            let residual: Vec<f64> = out.iter().zip(&b.targets).map(|(o, t)| o - t).collect();
            let d_out: Vec<f64> = residual.iter().map(|r| scale * r).collect();
            let grads = model.backward_batch(&b, &cache, &d_out)?;
            Ok((grads, residual.iter().map(|r| r * r).sum::<f64>()))
        })
        .collect::<Result<Vec<_>, GnnError>>()?;
    let mut parts = parts.into_iter();
    let (mut total, mut sse) = parts.next().expect("nonempty batch");
    for (g, s) in parts {
        total.accumulate(&g);
        sse += s;
    }
    Ok((total, sse))
}

/// Trains on the train split of the chosen population and keeps the
/// parameters with the lowest validation loss (train loss when the
/// validation split is empty).
pub fn train_gnn(
    grid: &Grid,
    set: &SampleSet,
    topology: &AugmentedTopology,
    config: &TrainConfig,
) -> Result<GnnCheckpoint, GnnError> {
    let admitted = |split: Split| -> Vec<usize> {
        set.indices_in(split).into_iter().filter(|&i| config.population.admits(set.samples[i].blackout_mw)).collect()
    };
    let train_idx = admitted(Split::Train);
    let val_idx = admitted(Split::Val);
    if train_idx.is_empty() {
        return Err(GnnError::EmptyPopulation);
    }
    let norms = FeatureNorms::fit(
        grid,
        topology,
        train_idx.iter().map(|&i| {
            let s = &set.samples[i];
            (set.state_of(s), s.failures.as_slice(), s.blackout_mw)
        }),
    );
    let train = encode_indices(grid, set, topology, &norms, &train_idx)?;
    let val = encode_indices(grid, set, topology, &norms, &val_idx)?;

    let mut model = GnnModel::init(config.architecture, norms, config.seed);
    let adam = AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() };
    let mut optimizer = OptimizerState::new(adam, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7A1B_5EED);
    let chunk = config.chunk_size.max(1);
    let batch_size = config.batch_size.max(1);

    let mut log = TrainLog { n_train: train.len(), n_val: val.len(), ..TrainLog::default() };
    let train_mse = sum_squared_error(&model, &train, chunk)? / train.len() as f64;
    let val_mse = mean_squared_error(&model, &val, chunk)?;
    log.epochs.push(EpochLog { epoch: 0, train_mse, val_mse });
    let mut best = (val_mse.unwrap_or(train_mse), model.clone(), optimizer.clone());
    let mut since_best = 0;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for batch_ids in order.chunks(batch_size) {
            let batch: Vec<&GraphSample> = batch_ids.iter().map(|&i| &train[i]).collect();
            let (grads, batch_sse) = batch_gradient(&model, &batch, chunk)?;
            optimizer_step(&mut model, &grads, &mut optimizer)?;
            sse += batch_sse;
        }
        let train_mse = sse / train.len() as f64;
        let val_mse = mean_squared_error(&model, &val, chunk)?;
        log.epochs.push(EpochLog { epoch, train_mse, val_mse });
        log::info!("epoch {epoch}: train_mse {train_mse:.6} val_mse {val_mse:?}");
        let score = val_mse.unwrap_or(train_mse);
        if score < best.0 {
            best = (score, model.clone(), optimizer.clone());
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (_, model, optimizer) = best;
    Ok(GnnCheckpoint {
        version: CHECKPOINT_VERSION.to_string(),
        config: config.clone(),
        topology: topology.clone(),
        model,
        optimizer,
        log,
    })
}

/// Estimates in MW for the given sample indices, in the same order.
pub fn predict_samples(
    model: &GnnModel,
    grid: &Grid,
    set: &SampleSet,
    topology: &AugmentedTopology,
    indices: &[usize],
) -> Result<Vec<f64>, GnnError> {
    let encoded = encode_indices(grid, set, topology, &model.norms, indices)?;
    let parts = encoded
        .par_chunks(64)
        .map(|c| {
            let batch = GraphBatch::new(c, &model.norms)?;
            Ok(model.infer_batch(&batch)?.into_iter().map(|v| model.norms.denormalize_label(v)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, GnnError>>()?;
    Ok(parts.concat())
}
