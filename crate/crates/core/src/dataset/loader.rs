use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Manifest, SampleRecord, Source, Split};
use crate::error::{usage_err, Result};
use crate::imaging::{
    augment, dilate, io, normalize, resize, resize_mask, union_masks, AugmentParams, BinaryMask,
    FloatImage, ResizeMode,
};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

/// Per-sample preprocessing applied before augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preprocess {
    /// Side length S of the square network input.
    pub size: usize,
    /// 3×3 dilation passes on the combined Montgomery mask; 0 disables it.
    pub dilate_iterations: usize,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            size: 512,
            dilate_iterations: 1,
        }
    }
}

impl Preprocess {
    /// Loads one record: masks are merged (and dilated for Montgomery), the
    /// image is scaled to [0, 1] and both are resized to S×S.
    pub fn load_record(&self, record: &SampleRecord) -> Result<(FloatImage, BinaryMask)> {
        record.validate()?;
        let image = normalize(&io::read_gray(&record.image)?);
        let mut mask = io::read_mask(&record.masks[0])?;
        if record.source == Source::Montgomery {
            mask = union_masks(&mask, &io::read_mask(&record.masks[1])?)?;
            if self.dilate_iterations > 0 {
                mask = dilate(&mask, self.dilate_iterations);
            }
        }
        image.same_dims(&mask, &format!("image/mask dimension mismatch for {}", record.id))?;
        self.fit(&image, &mask)
    }

    /// Resizes an in-memory pair to S×S (bilinear image, nearest mask).
    pub fn fit(&self, image: &FloatImage, mask: &BinaryMask) -> Result<(FloatImage, BinaryMask)> {
        let s = self.size;
        let image = if image.dims() == (s, s) {
            image.clone()
        } else {
            resize(image, s, s, ResizeMode::Bilinear)?
        };
        let mask = if mask.dims() == (s, s) {
            mask.clone()
        } else {
            resize_mask(mask, s, s)?
        };
        Ok((image, mask))
    }
}

#[derive(Debug, Clone)]
enum Item {
    Record(SampleRecord),
    Ready(FloatImage, BinaryMask),
}

/// One subset of a dataset, loaded lazily and cached after preprocessing.
#[derive(Debug, Clone)]
pub struct SampleLoader {
    items: Vec<(String, Item)>,
    preprocess: Preprocess,
    cache: Vec<Option<(FloatImage, BinaryMask)>>,
    caching: bool,
}

/// Images and masks stacked as `[N, 1, S, S]`; masks hold 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub masks: Tensor,
    /// Positions of the samples within the loader.
    pub indices: Vec<usize>,
}

impl SampleLoader {
    /// The records of `manifest` assigned to `split`.
    pub fn new(manifest: &Manifest, split: Split, preprocess: Preprocess) -> Result<Self> {
        let items: Vec<_> = manifest
            .indices(split)
            .into_iter()
            .map(|i| {
                let r = &manifest.records()[i];
                (r.id.clone(), Item::Record(r.clone()))
            })
            .collect();
        if items.is_empty() {
            return Err(usage_err!("split {split} is empty"));
        }
        Ok(Self::from_items(items, preprocess))
    }

    /// In-memory samples named `0`, `1`, ...
    pub fn from_samples(samples: Vec<(FloatImage, BinaryMask)>, preprocess: Preprocess) -> Result<Self> {
        if samples.is_empty() {
            return Err(usage_err!("no samples given"));
        }
        let mut items = Vec::with_capacity(samples.len());
        for (i, (img, mask)) in samples.into_iter().enumerate() {
            img.same_dims(&mask, "sample image/mask dimension mismatch")?;
            items.push((i.to_string(), Item::Ready(img, mask)));
        }
        Ok(Self::from_items(items, preprocess))
    }

    fn from_items(items: Vec<(String, Item)>, preprocess: Preprocess) -> Self {
        let cache = vec![None; items.len()];
        SampleLoader {
            items,
            preprocess,
            cache,
            caching: true,
        }
    }

    /// Keeps preprocessed samples in memory (the default). Turn off for
    /// large inputs.
    pub fn with_cache(mut self, on: bool) -> Self {
        self.caching = on;
        if !on {
            self.cache.iter_mut().for_each(|c| *c = None);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn preprocess(&self) -> Preprocess {
        self.preprocess
    }

    pub fn id(&self, index: usize) -> &str {
        &self.items[index].0
    }

    /// Preprocessed sample `index` (no augmentation).
    pub fn sample(&mut self, index: usize) -> Result<(FloatImage, BinaryMask)> {
        if let Some(hit) = &self.cache[index] {
            return Ok(hit.clone());
        }
        let loaded = match &self.items[index].1 {
            Item::Record(r) => self.preprocess.load_record(r)?,
            Item::Ready(img, mask) => self.preprocess.fit(img, mask)?,
        };
        if self.caching {
            self.cache[index] = Some(loaded.clone());
        }
        Ok(loaded)
    }

    /// Batches for one epoch. Order is a permutation seeded by `epoch_seed`;
    /// sample `i` is augmented with its own stream derived from the same seed.
    pub fn batches<'a>(
        &'a mut self,
        batch_size: usize,
        epoch_seed: u64,
        augment: Option<AugmentParams>,
    ) -> Result<BatchIter<'a>> {
        if batch_size == 0 {
            return Err(usage_err!("batch_size must be at least 1"));
        }
        if let Some(p) = &augment {
            p.validate()?;
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        Ok(BatchIter {
            loader: self,
            order,
            pos: 0,
            batch_size,
            epoch_seed,
            augment,
        })
    }

    /// Batches in loader order without shuffling or augmentation.
    pub fn sequential(&mut self, batch_size: usize) -> Result<BatchIter<'_>> {
        if batch_size == 0 {
            return Err(usage_err!("batch_size must be at least 1"));
        }
        let order = (0..self.len()).collect();
        Ok(BatchIter {
            loader: self,
            order,
            pos: 0,
            batch_size,
            epoch_seed: 0,
            augment: None,
        })
    }
}

pub struct BatchIter<'a> {
    loader: &'a mut SampleLoader,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    epoch_seed: u64,
    augment: Option<AugmentParams>,
}

impl BatchIter<'_> {
    fn assemble(&mut self, indices: Vec<usize>) -> Result<Batch> {
        let s = self.loader.preprocess.size;
        let n = indices.len();
        let mut images = Vec::with_capacity(n * s * s);
        let mut masks = Vec::with_capacity(n * s * s);
        for &i in &indices {
            let (mut img, mut mask) = self.loader.sample(i)?;
            if let Some(p) = &self.augment {
                let mut rng = stream_rng(self.epoch_seed, i as u64);
                (img, mask) = augment(&img, &mask, &mut rng, p)?;
            }
            images.extend_from_slice(img.pixels());
            masks.extend(mask.pixels().iter().map(|&m| if m { 1.0f32 } else { 0.0 }));
        }
        Ok(Batch {
            images: Tensor::new(vec![n, 1, s, s], images)?,
            masks: Tensor::new(vec![n, 1, s, s], masks)?,
            indices,
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.assemble(indices))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}
