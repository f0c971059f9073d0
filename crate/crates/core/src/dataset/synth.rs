use std::fs;
use std::path::Path;

use super::{Manifest, SampleRecord, Source, Split};
use crate::error::{usage_err, Error, Result};
use crate::imaging::{io, synth_phantom, PHANTOM_MIN_SIZE};
use crate::rng::stream_rng;

/// Writes `count` phantoms as `phantom_NNNN.png` / `phantom_NNNN_mask.png`
/// (the generic layout) plus `manifest.tsv`. Phantom `i` depends only on
/// `(seed, i)`.
pub fn write_synthetic(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<Manifest> {
    let dir = dir.as_ref();
    if count == 0 {
        return Err(usage_err!("count must be at least 1"));
    }
    if size < PHANTOM_MIN_SIZE {
        return Err(usage_err!(
            "phantom size must be at least {PHANTOM_MIN_SIZE}, got {size}"
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let (img, mask) = synth_phantom(&mut stream_rng(seed, i as u64), size)?;
        let id = format!("phantom_{i:04}");
        let image = dir.join(format!("{id}.png"));
        let mask_path = dir.join(format!("{id}_mask.png"));
        io::write_gray(&image, &img.to_gray())?;
        io::write_mask(&mask_path, &mask)?;
        records.push(SampleRecord {
            id,
            image,
            masks: vec![mask_path],
            source: Source::Synthetic,
            split: Split::Unassigned,
        });
    }
    let mut manifest = Manifest::new(records)?;
    manifest
        .provenance
        .push(format!("synthetic count={count} size={size} seed={seed}"));
    manifest.save(dir.join("manifest.tsv"))?;
    Ok(manifest)
}
