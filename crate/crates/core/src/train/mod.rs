//! Binary cross-entropy training with Adam and best-validation selection.

mod adam;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;

use crate::dataset::{Batch, SampleLoader};
use crate::error::{usage_err, Error, Result};
use crate::eval::{binarize, dice, evaluate, tensor_to_rasters, DEFAULT_THRESHOLD};
use crate::imaging::AugmentParams;
use crate::rng::derive_seed;
use crate::tensor::{kernels, Graph, Scalar, Tensor};
use crate::unet::{save_checkpoint, UNet};

pub use adam::{AdamState, DEFAULT_LR};

/// Mean binary cross-entropy of probabilities against a 0/1 target, with
/// predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    kernels::bce_forward(pred, target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: bool,
    pub augment_params: AugmentParams,
    /// Where the best-validation checkpoint is written, if anywhere.
    pub checkpoint: Option<PathBuf>,
    /// Log a progress line every this many epochs (0 disables logging).
    pub report_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            lr: DEFAULT_LR,
            seed: 0,
            augment: true,
            augment_params: AugmentParams::default(),
            checkpoint: None,
            report_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.augment_params.validate()
    }
}

/// Loss and mean per-image Dice of one optimizer step, measured on the
/// predictions before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub dice: f64,
}

/// A network together with its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar = f32> {
    pub net: UNet<T>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: UNet<T>, lr: f64) -> Self {
        let adam = AdamState::new(net.params(), lr);
        Trainer { net, adam }
    }

    /// Forward, backward and one Adam update on `batch`.
    pub fn step(&mut self, batch: &Batch) -> Result<StepStats> {
        let mut graph = Graph::<T>::checked();
        let vars = self.net.register(&mut graph);
        let x = graph.constant(batch.images.cast());
        let pred = self.net.forward_tracked(&mut graph, &vars, x)?;
        let target: Tensor<T> = batch.masks.cast();
        let loss_var = graph.bce_loss(pred, target)?;
        let loss = graph.value(loss_var)?.data()[0].as_f64();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }
        let stats = StepStats {
            loss,
            dice: batch_dice(graph.value(pred)?, &batch.masks)?,
        };
        let grads = graph.backward(loss_var)?;
        let mut by_name = BTreeMap::new();
        for (name, &v) in &vars {
            by_name.insert(name.clone(), grads.get_or_zeros(&graph, v)?);
        }
        self.adam.step(self.net.params_mut(), &by_name)?;
        Ok(stats)
    }
}

/// Mean per-image Dice between thresholded probabilities and 0/1 masks.
pub fn batch_dice<T: Scalar, U: Scalar>(pred: &Tensor<T>, masks: &Tensor<U>) -> Result<f64> {
    let p = tensor_to_rasters(pred)?;
    let m = tensor_to_rasters(masks)?;
    let mut total = 0.0;
    for (p, m) in p.iter().zip(&m) {
        total += dice(&binarize(p, DEFAULT_THRESHOLD), &binarize(m, 0.5))?;
    }
    Ok(total / p.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar = f32> {
    /// Parameters from the epoch with the highest validation Dice.
    pub best: UNet<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Network state after the final epoch.
    pub last: UNet<T>,
}

/// History as TSV (`epoch, train_loss, val_loss, val_dice`) with `header`
/// lines prepended as `#` comments.
pub fn history_tsv(header: &[String], history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("epoch\ttrain_loss\tval_loss\tval_dice\n");
    for r in history {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            r.epoch, r.train_loss, r.val_loss, r.val_dice
        );
    }
    out
}

/// Mean BCE of `net` over every sample of `loader`.
pub fn mean_loss<T: Scalar>(net: &UNet<T>, loader: &mut SampleLoader, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in loader.sequential(batch_size)? {
        let batch = batch?;
        let n = batch.indices.len();
        let pred = net.forward(&batch.images.cast())?;
        total += bce_loss(&pred, &batch.masks.cast())?.as_f64() * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

fn locate(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

/// Runs `cfg.epochs` epochs over `train`, evaluating on `val` after each.
/// Epoch `e` shuffles and augments with a seed derived from `(cfg.seed, e)`,
/// so a fixed seed reproduces the whole run.
pub fn train_epochs<T: Scalar>(
    net: UNet<T>,
    cfg: &TrainConfig,
    train: &mut SampleLoader,
    val: &mut SampleLoader,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(usage_err!("training and validation sets must be non-empty"));
    }
    let mut trainer = Trainer::new(net, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, UNet<T>)> = None;
    let augment = cfg.augment.then_some(cfg.augment_params);

    for epoch in 1..=cfg.epochs {
        let seed = derive_seed(cfg.seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, batch) in train.batches(cfg.batch_size, seed, augment)?.enumerate() {
            let batch = batch?;
            let n = batch.indices.len();
            let stats = trainer.step(&batch).map_err(|e| locate(e, epoch, b))?;
            loss_sum += stats.loss * n as f64;
            seen += n;
        }
        let val_loss = mean_loss(&trainer.net, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: validation loss is {val_loss}")));
        }
        let val_dice = evaluate(&trainer.net, val, DEFAULT_THRESHOLD, cfg.batch_size)?.mean;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_dice,
        };
        history.push(record);
        if cfg.report_every > 0 && (epoch % cfg.report_every == 0 || epoch == cfg.epochs) {
            info!(
                "epoch {epoch}/{}: train_loss {:.5} val_loss {:.5} val_dice {:.5}",
                cfg.epochs, record.train_loss, val_loss, val_dice
            );
        }
        if best.as_ref().is_none_or(|(d, _, _)| val_dice > *d) {
            if let Some(path) = &cfg.checkpoint {
                save_checkpoint(&trainer.net, path)?;
            }
            best = Some((val_dice, epoch, trainer.net.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        last: trainer.net,
    })
}
