//! Dataset discovery, train/val/test assignment and batch streaming.

mod loader;
mod scan;
mod split;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{usage_err, Error, Result};

pub use loader::{Batch, BatchIter, Preprocess, SampleLoader};
pub use scan::{scan_dataset, Layout, ScanOutcome, Skipped};
pub use split::{split, SplitCounts, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC};
pub use synth::write_synthetic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Montgomery,
    Shenzhen,
    Generic,
    Synthetic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Montgomery => "montgomery",
            Source::Shenzhen => "shenzhen",
            Source::Generic => "generic",
            Source::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "montgomery" => Ok(Source::Montgomery),
            "shenzhen" => Ok(Source::Shenzhen),
            "generic" => Ok(Source::Generic),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(usage_err!("unknown source tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(usage_err!("unknown split {other:?}")),
        }
    }
}

/// One radiograph and its mask file(s).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub image: PathBuf,
    /// Left and right masks for Montgomery, a single mask otherwise.
    pub masks: Vec<PathBuf>,
    pub source: Source,
    pub split: Split,
}

impl SampleRecord {
    pub fn validate(&self) -> Result<()> {
        let want = if self.source == Source::Montgomery { 2 } else { 1 };
        if self.masks.len() != want {
            return Err(usage_err!(
                "{} record {} has {} mask paths, expected {want}",
                self.source,
                self.id,
                self.masks.len()
            ));
        }
        Ok(())
    }
}

/// Ordered dataset index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    records: Vec<SampleRecord>,
    /// Free-form lines describing how the manifest was produced.
    pub provenance: Vec<String>,
}

const TSV_HEADER: &str = "id\timage_path\tmask_paths\tsource\tsplit";

impl Manifest {
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(usage_err!("duplicate sample id {}", r.id));
            }
        }
        Ok(Manifest {
            records,
            provenance: Vec::new(),
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Indices of the records assigned to `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    /// Concatenates manifests, keeping ids unique.
    pub fn merge(parts: impl IntoIterator<Item = Manifest>) -> Result<Self> {
        let mut records = Vec::new();
        let mut provenance = Vec::new();
        for m in parts {
            records.extend(m.records);
            provenance.extend(m.provenance);
        }
        let mut out = Manifest::new(records)?;
        out.provenance = provenance;
        Ok(out)
    }

    /// Copy with every record in `split` (use for evaluation subsets).
    pub fn with_split(&self, split: Split) -> Self {
        Manifest {
            records: self
                .records
                .iter()
                .cloned()
                .map(|r| SampleRecord { split, ..r })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for line in &self.provenance {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(TSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let masks: Vec<String> = r.masks.iter().map(|p| p.display().to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.id,
                r.image.display(),
                masks.join(";"),
                r.source,
                r.split
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut provenance = Vec::new();
        let mut records = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            if let Some(note) = line.strip_prefix('#') {
                provenance.push(note.trim_start().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line != TSV_HEADER {
                    return Err(Error::Format(format!("manifest header mismatch: {line:?}")));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, image, masks, source, split] = cols[..] else {
                return Err(Error::Format(format!(
                    "manifest line {} has {} columns, expected 5",
                    lineno + 1,
                    cols.len()
                )));
            };
            records.push(SampleRecord {
                id: id.to_string(),
                image: image.into(),
                masks: masks.split(';').map(PathBuf::from).collect(),
                source: source.parse()?,
                split: split.parse()?,
            });
        }
        let mut m = Manifest::new(records)?;
        m.provenance = provenance;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    pub(crate) fn records_mut(&mut self) -> &mut [SampleRecord] {
        &mut self.records
    }
}
