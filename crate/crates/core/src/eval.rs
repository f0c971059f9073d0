//! Thresholding, confusion counts, Dice and evaluation reports.

use std::fmt::Write as _;

use crate::dataset::SampleLoader;
use crate::error::{shape_err, usage_err, Result};
use crate::imaging::{normalize, resize, resize_mask, BinaryMask, FloatImage, GrayImage, Raster, ResizeMode};
use crate::tensor::{Scalar, Tensor};
use crate::unet::UNet;

/// Default foreground threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Published Dice scores (percent) shown for comparison in every report.
pub const REFERENCE_ROWS: [(&str, f64); 4] = [
    ("Candemir et al.", 94.1),
    ("ED-CNN", 97.4),
    ("FCN", 97.7),
    ("Proposed U-Net", 98.6),
];

pub const REFERENCE_LABEL: &str = "paper-reported, not locally reproduced";

/// `pixel >= threshold` is foreground, so a value equal to the threshold
/// counts as lung.
pub fn binarize(pred: &FloatImage, threshold: f64) -> BinaryMask {
    pred.map(|p| p as f64 >= threshold)
}

/// Rejects thresholds outside `[0, 1]`.
pub fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage_err!("threshold must be in [0, 1], got {threshold}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2·tp / (2·tp + fn + fp)`, or 1.0 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fn_ + self.fp;
        if denom == 0 {
            return 1.0;
        }
        (2 * self.tp) as f64 / denom as f64
    }
}

pub fn confusion(s: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if s.dims() != gt.dims() {
        return Err(shape_err!(
            "confusion: {}x{} vs {}x{}",
            s.width(),
            s.height(),
            gt.width(),
            gt.height()
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&a, &b) in s.pixels().iter().zip(gt.pixels()) {
        match (a, b) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn dice(s: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(confusion(s, gt)?.dice())
}

/// Splits a `[N, 1, H, W]` probability tensor into rasters.
pub fn tensor_to_rasters<T: Scalar>(t: &Tensor<T>) -> Result<Vec<FloatImage>> {
    let &[n, c, h, w] = t.shape() else {
        return Err(shape_err!("expected [N, 1, H, W], got {:?}", t.shape()));
    };
    if c != 1 {
        return Err(shape_err!("expected a single output channel, got {c}"));
    }
    Ok(t.data()
        .chunks(h * w)
        .take(n)
        .map(|px| Raster::new(w, h, px.iter().map(|v| v.as_f64() as f32).collect()).expect("chunk size"))
        .collect())
}

/// Segments one 8-bit image of any size: it is resized to the network input,
/// thresholded, and the mask is resized back with nearest sampling.
pub fn predict_mask<T: Scalar>(net: &UNet<T>, image: &GrayImage, threshold: f64) -> Result<BinaryMask> {
    check_threshold(threshold)?;
    let s = net.config().input_size;
    let x = resize(&normalize(image), s, s, ResizeMode::Bilinear)?;
    let input = Tensor::new(
        vec![1, 1, s, s],
        x.pixels().iter().map(|&v| T::from_f64(v as f64)).collect(),
    )?;
    let probs = tensor_to_rasters(&net.forward(&input)?)?;
    resize_mask(&binarize(&probs[0], threshold), image.width(), image.height())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(sample id, dice)` in loader order.
    pub per_sample: Vec<(String, f64)>,
    pub mean: f64,
    /// Population standard deviation of the per-sample values.
    pub std: f64,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_scores(per_sample: Vec<(String, f64)>, threshold: f64) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(usage_err!("nothing to evaluate"));
        }
        let n = per_sample.len() as f64;
        let mean = per_sample.iter().map(|(_, d)| d).sum::<f64>() / n;
        let var = per_sample.iter().map(|(_, d)| (d - mean).powi(2)).sum::<f64>() / n;
        Ok(EvalReport {
            per_sample,
            mean,
            std: var.sqrt(),
            threshold,
        })
    }

    /// `id<TAB>dice` rows under a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tdice\n");
        for (id, d) in &self.per_sample {
            let _ = writeln!(out, "{id}\t{d:.6}");
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples\t{}", self.per_sample.len());
        let _ = writeln!(out, "threshold\t{}", self.threshold);
        let _ = writeln!(out, "mean_dice\t{:.6}", self.mean);
        let _ = writeln!(out, "std_dice\t{:.6}", self.std);
        let _ = writeln!(out, "# reference Dice (%), {REFERENCE_LABEL}:");
        for (name, score) in REFERENCE_ROWS {
            let _ = writeln!(out, "reference\t{name}\t{score:.1}");
        }
        out
    }
}

/// Mean per-image Dice of `net` over every sample in `loader`, without
/// augmentation.
pub fn evaluate<T: Scalar>(
    net: &UNet<T>,
    loader: &mut SampleLoader,
    threshold: f64,
    batch_size: usize,
) -> Result<EvalReport> {
    check_threshold(threshold)?;
    let mut scores = Vec::with_capacity(loader.len());
    let mut ids = Vec::new();
    let mut batches = loader.sequential(batch_size)?;
    while let Some(batch) = batches.next() {
        let batch = batch?;
        let probs = net.forward(&batch.images.cast())?;
        let truth = tensor_to_rasters(&batch.masks)?;
        for ((p, t), &i) in tensor_to_rasters(&probs)?.iter().zip(&truth).zip(&batch.indices) {
            scores.push(dice(&binarize(p, threshold), &binarize(t, 0.5))?);
            ids.push(i);
        }
    }
    drop(batches);
    let rows = ids
        .into_iter()
        .zip(scores)
        .map(|(i, d)| (loader.id(i).to_string(), d))
        .collect();
    EvalReport::from_scores(rows, threshold)
}
