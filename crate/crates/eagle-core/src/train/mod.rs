//! Reproducible training loop: seeded shuffling, batched forward/backward,
//! AdamW updates, validation-driven LR plateau schedule, early stopping, and
//! checkpoint-on-best.

pub mod adamw;
pub mod checkpoint;
pub mod schedule;

pub use adamw::{AdamW, OptimConfig};
pub use checkpoint::{CheckpointError, CheckpointHeader};
pub use schedule::{ProgressState, StopReason, IMPROVEMENT_EPS};

use crate::data::{augment::augment, io::DataError, Sample};
use crate::loss::{combined_loss, LossWeights};
use crate::metrics::{ConfusionCounts, SegMetrics};
use crate::model::Eagle;
use crate::precision::Real;
use crate::rng::Rng;
use crate::tensor::{no_grad, Mode, Tensor, TensorError};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite training loss at epoch {epoch}; last good checkpoint retained")]
    NonFiniteLoss { epoch: usize },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub optim: OptimConfig,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Apply the stochastic augmentation pipeline to training samples.
    pub augment: bool,
    /// Binarization threshold used for reported metrics.
    pub threshold: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            optim: OptimConfig::default(),
            loss_weights: LossWeights::default(),
            seed: 0,
            augment: false,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
        }
    }
}

/// One line of the machine-readable metrics log.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Stack same-shape samples into `([B, 1, H, W], [B, 1, H, W])`.
pub fn stack_batch<T: Real>(samples: &[&Sample<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = samples.first().ok_or(TrainError::EmptySplit("batch"))?;
    let shape = first.image.shape().to_vec();
    let mut images = Vec::with_capacity(samples.len() * first.image.numel());
    let mut masks = Vec::with_capacity(images.capacity());
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(TensorError::shape(
                "stack_batch",
                format!("sample {} has shape {:?}, expected {:?}", s.meta.id, s.image.shape(), shape),
            )
            .into());
        }
        images.extend(s.image.to_vec());
        masks.extend(s.mask.to_vec());
    }
    let b = samples.len();
    let t_images = Tensor::from_vec(&[b, shape[0], shape[1], shape[2]], images)?;
    let t_masks = Tensor::from_vec(&[b, shape[0], shape[1], shape[2]], masks)?;
    Ok((t_images, t_masks))
}

/// Evaluation over a sample list: sample-weighted combined loss plus metrics
/// counted jointly over all pixels. Runs in eval mode without recording
/// gradients.
pub fn evaluate<T: Real>(
    model: &Eagle<T>,
    samples: &[Sample<T>],
    weights: &LossWeights,
    threshold: f64,
    batch: usize,
) -> Result<(f64, SegMetrics)> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("eval"));
    }
    let mut loss_sum = 0.0;
    let mut counts = ConfusionCounts::default();
    no_grad(|| -> Result<()> {
        for chunk in samples.chunks(batch.max(1)) {
            let refs: Vec<&Sample<T>> = chunk.iter().collect();
            let (images, masks) = stack_batch(&refs)?;
            let prob = model.forward(&images, Mode::Eval)?;
            let loss = combined_loss(&masks, &prob, weights)?;
            loss_sum += loss.item().to_f64() * chunk.len() as f64;
            counts.accumulate(&ConfusionCounts::from_tensors(&masks, &prob, threshold)?);
        }
        Ok(())
    })?;
    Ok((
        loss_sum / samples.len() as f64,
        SegMetrics {
            dsc: counts.dsc(),
            precision: counts.precision(),
            recall: counts.recall(),
        },
    ))
}

fn write_record(run_dir: &Path, record: &EpochRecord) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join("metrics.jsonl"))?;
    writeln!(file, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

/// Run the full optimization loop. With `run_dir` set, writes `best.ckpt`,
/// `last.ckpt`, and appends one JSON record per epoch to `metrics.jsonl`.
/// `observer` sees every epoch record; returning `false` stops training.
pub fn train_loop<T: Real>(
    model: &Eagle<T>,
    train_samples: &[Sample<T>],
    val_samples: &[Sample<T>],
    opts: &TrainOptions,
    run_dir: Option<&Path>,
    mut observer: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    if train_samples.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_samples.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    opts.optim.validate()?;
    opts.loss_weights.validate()?;
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir)?;
        // truncate any previous log so reruns overwrite deterministically
        fs::write(dir.join("metrics.jsonl"), b"")?;
    }

    let params: Vec<Tensor<T>> = model.named_params().into_iter().map(|(_, p)| p).collect();
    let mut optimizer = AdamW::new(params, opts.optim.clone())?;
    let mut progress = ProgressState::new(
        opts.optim.lr0,
        opts.optim.plateau_patience,
        opts.optim.plateau_factor,
        opts.optim.early_stop_patience,
    );
    let shuffle_base = Rng::new(opts.seed);
    let mut records = Vec::new();
    let mut best_epoch = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=opts.optim.max_epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        shuffle_base.derive(epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(opts.optim.batch) {
            let originals: Vec<&Sample<T>> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let augmented: Vec<Sample<T>>;
            let batch_refs: Vec<&Sample<T>> = if opts.augment {
                augmented = chunk
                    .iter()
                    .zip(&originals)
                    .map(|(&i, s)| {
                        let aug_seed = shuffle_base.derive(epoch as u64).derive(i as u64).next_u64();
                        augment(s, aug_seed)
                    })
                    .collect::<crate::tensor::Result<_>>()?;
                augmented.iter().collect()
            } else {
                originals
            };
            let (images, masks) = stack_batch(&batch_refs)?;
            optimizer.zero_grads();
            let prob = model.forward(&images, Mode::Train)?;
            let loss = combined_loss(&masks, &prob, &opts.loss_weights)?;
            let loss_val = loss.item().to_f64();
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            loss.backward()?;
            optimizer.step(progress.lr)?;
            loss_sum += loss_val * batch_refs.len() as f64;
        }
        let train_loss = loss_sum / train_samples.len() as f64;

        let (val_loss, metrics) = evaluate(
            model,
            val_samples,
            &opts.loss_weights,
            opts.threshold,
            opts.optim.batch,
        )?;
        let lr_at_epoch = progress.lr;
        let obs = progress.observe_validation(val_loss);
        if obs.improved {
            best_epoch = epoch;
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: lr_at_epoch,
            dsc: metrics.dsc,
            precision: metrics.precision,
            recall: metrics.recall,
        };
        if let Some(dir) = run_dir {
            write_record(dir, &record)?;
            let header = CheckpointHeader {
                config: model.cfg.clone(),
                epoch: epoch as u64,
                val_loss,
                seed: opts.seed,
            };
            checkpoint::save(&dir.join("last.ckpt"), model, &header)?;
            if obs.improved {
                checkpoint::save(&dir.join("best.ckpt"), model, &header)?;
            }
        }
        let keep_going = observer(&record);
        records.push(record);

        if progress.should_stop() {
            stop_reason = StopReason::EarlyStop;
            break;
        }
        if !keep_going {
            stop_reason = StopReason::Requested;
            break;
        }
    }

    Ok(TrainOutcome {
        records,
        stop_reason,
        best_epoch,
        best_val_loss: progress.best_val_loss,
    })
}
