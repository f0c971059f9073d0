//! Directory layouts:
//!
//! * `montgomery`: `CXR_png/<stem>.png` with `ManualMask/leftMask/<stem>.png`
//!   and `ManualMask/rightMask/<stem>.png`.
//! * `shenzhen`: `CXR_png/<stem>.png` with `mask/<stem>_mask.png` (or
//!   `masks/`, and a bare `<stem>.png` is accepted in the mask directory).
//! * `generic`: `<stem>.png` next to `<stem>_mask.png`.
//!
//! `.pgm` is accepted wherever `.png` is. When the `CXR_png` or mask
//! directories are missing, the root itself is searched.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{Manifest, SampleRecord, Source, Split};
use crate::error::{usage_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Montgomery,
    Shenzhen,
    Generic,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "montgomery" => Ok(Layout::Montgomery),
            "shenzhen" => Ok(Layout::Shenzhen),
            "generic" => Ok(Layout::Generic),
            other => Err(usage_err!("unknown dataset layout {other:?}")),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Montgomery => "montgomery",
            Layout::Shenzhen => "shenzhen",
            Layout::Generic => "generic",
        })
    }
}

/// An image that could not be paired, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub manifest: Manifest,
    pub skipped: Vec<Skipped>,
}

impl ScanOutcome {
    /// Plain-text report, one `path<TAB>reason` per line.
    pub fn skipped_report(&self) -> String {
        report(&self.skipped)
    }
}

fn report(skipped: &[Skipped]) -> String {
    skipped
        .iter()
        .map(|s| format!("{}\t{}\n", s.path.display(), s.reason))
        .collect()
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pgm"))
}

/// Image files in `dir`, keyed by file stem.
fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.entry(stem.to_string()).or_insert(path);
        }
    }
    Ok(out)
}

fn first_dir(root: &Path, candidates: &[&str]) -> PathBuf {
    candidates
        .iter()
        .map(|c| root.join(c))
        .find(|p| p.is_dir())
        .unwrap_or_else(|| root.to_path_buf())
}

/// Discovers image/mask pairs under `root`.
pub fn scan_dataset(root: impl AsRef<Path>, layout: Layout) -> Result<ScanOutcome> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut miss = |path: &Path, reason: String| {
        skipped.push(Skipped {
            path: path.to_path_buf(),
            reason,
        })
    };

    match layout {
        Layout::Montgomery => {
            let images = list_images(&first_dir(root, &["CXR_png"]))?;
            let masks = first_dir(root, &["ManualMask"]);
            let left = list_images(&first_dir(&masks, &["leftMask"]))?;
            let right = list_images(&first_dir(&masks, &["rightMask"]))?;
            for (stem, image) in images {
                match (left.get(&stem), right.get(&stem)) {
                    (Some(l), Some(r)) if *l != image && *r != image => records.push(SampleRecord {
                        id: stem,
                        image,
                        masks: vec![l.clone(), r.clone()],
                        source: Source::Montgomery,
                        split: Split::Unassigned,
                    }),
                    (None, Some(_)) => miss(&image, "missing left mask".into()),
                    (Some(_), None) => miss(&image, "missing right mask".into()),
                    _ => miss(&image, "missing left and right masks".into()),
                }
            }
        }
        Layout::Shenzhen => {
            let image_dir = first_dir(root, &["CXR_png"]);
            let mask_dir = first_dir(root, &["mask", "masks"]);
            let images = list_images(&image_dir)?;
            let masks = list_images(&mask_dir)?;
            let separate = image_dir != mask_dir;
            for (stem, image) in images {
                if stem.ends_with("_mask") {
                    continue;
                }
                let found = masks
                    .get(&format!("{stem}_mask"))
                    .or_else(|| separate.then(|| masks.get(&stem)).flatten());
                match found {
                    Some(m) => records.push(SampleRecord {
                        id: stem,
                        image,
                        masks: vec![m.clone()],
                        source: Source::Shenzhen,
                        split: Split::Unassigned,
                    }),
                    None => miss(&image, "missing mask".into()),
                }
            }
        }
        Layout::Generic => {
            let files = list_images(root)?;
            for (stem, image) in &files {
                if stem.ends_with("_mask") {
                    continue;
                }
                match files.get(&format!("{stem}_mask")) {
                    Some(m) => records.push(SampleRecord {
                        id: stem.clone(),
                        image: image.clone(),
                        masks: vec![m.clone()],
                        source: Source::Generic,
                        split: Split::Unassigned,
                    }),
                    None => miss(image, "missing mask".into()),
                }
            }
        }
    }

    if records.is_empty() {
        return Err(usage_err!(
            "no image/mask pairs found under {} ({layout} layout); skipped:\n{}",
            root.display(),
            report(&skipped)
        ));
    }
    let mut manifest = Manifest::new(records)?;
    manifest
        .provenance
        .push(format!("scan root={} layout={layout}", root.display()));
    Ok(ScanOutcome { manifest, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(p: &Path) {
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, b"x").unwrap();
    }

    #[test]
    fn montgomery_triplets() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        for i in 0..3 {
            touch(&r.join(format!("CXR_png/MCUCXR_{i:04}_0.png")));
            touch(&r.join(format!("ManualMask/leftMask/MCUCXR_{i:04}_0.png")));
            touch(&r.join(format!("ManualMask/rightMask/MCUCXR_{i:04}_0.png")));
        }
        touch(&r.join("CXR_png/MCUCXR_0099_1.png"));
        touch(&r.join("ManualMask/leftMask/MCUCXR_0099_1.png"));
        let out = scan_dataset(r, Layout::Montgomery).unwrap();
        assert_eq!(out.manifest.len(), 3);
        assert!(out.manifest.records().iter().all(|r| r.masks.len() == 2));
        assert_eq!(out.skipped.len(), 1);
        assert!(out.skipped_report().contains("MCUCXR_0099_1.png\tmissing right mask"));
    }

    #[test]
    fn shenzhen_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        touch(&r.join("CXR_png/CHNCXR_0001_0.png"));
        touch(&r.join("mask/CHNCXR_0001_0_mask.png"));
        touch(&r.join("CXR_png/CHNCXR_0002_0.png"));
        touch(&r.join("mask/CHNCXR_0002_0.png"));
        touch(&r.join("CXR_png/CHNCXR_0003_1.png"));
        let out = scan_dataset(r, Layout::Shenzhen).unwrap();
        assert_eq!(out.manifest.len(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.manifest.records()[0].source, Source::Shenzhen);
    }

    #[test]
    fn generic_pairs_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        touch(&r.join("a.png"));
        touch(&r.join("a_mask.png"));
        touch(&r.join("b.pgm"));
        touch(&r.join("b_mask.pgm"));
        touch(&r.join("lonely.png"));
        touch(&r.join("notes.txt"));
        let out = scan_dataset(r, Layout::Generic).unwrap();
        let ids: Vec<_> = out.manifest.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(out.skipped[0].path, r.join("lonely.png"));
    }

    #[test]
    fn empty_and_missing_roots() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("only.png"));
        let err = scan_dataset(dir.path(), Layout::Generic).unwrap_err();
        assert!(matches!(err, Error::Usage(ref m) if m.contains("only.png")));
        assert!(matches!(
            scan_dataset(dir.path().join("nope"), Layout::Generic),
            Err(Error::Io { .. })
        ));
    }
}
