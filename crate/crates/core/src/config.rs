//! Flat `key=value` run configuration.
//!
//! Values are resolved in three layers: the named profile's defaults, then a
//! config file, then command-line overrides. Unknown keys are rejected.
//!
//! ```text
//! # comment
//! profile = desk
//! epochs = 10
//! augment = false
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{Layout, Preprocess, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLD;
use crate::train::TrainConfig;
use crate::unet::UNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 64×64 input, depth 3, base 8, 20 epochs.
    Desk,
    /// 512×512 input, depth 4, base 64, 200 epochs.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub dilate_iterations: usize,
    pub test_frac: f64,
    pub val_frac: f64,
    pub threshold: f64,
    pub layout: Layout,
    pub history: Option<PathBuf>,
}

/// Keys accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "profile",
    "input_size",
    "depth",
    "base_channels",
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "augment",
    "zoom_range",
    "shift_range",
    "hflip_prob",
    "dilate_iterations",
    "test_frac",
    "val_frac",
    "threshold",
    "report_every",
    "layout",
    "checkpoint",
    "history",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (unet, epochs) = match profile {
            Profile::Desk => (UNetConfig::desk(), 20),
            Profile::Paper => (UNetConfig::paper(), 200),
        };
        RunConfig {
            profile,
            unet,
            train: TrainConfig {
                epochs,
                ..TrainConfig::default()
            },
            dilate_iterations: 1,
            test_frac: DEFAULT_TEST_FRAC,
            val_frac: DEFAULT_VAL_FRAC,
            threshold: DEFAULT_THRESHOLD,
            layout: Layout::Generic,
            history: None,
        }
    }

    /// Sets one key. `profile` cannot be changed here; see [`RunConfig::resolve`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "profile" => {
                let p: Profile = v.parse()?;
                if p != self.profile {
                    return Err(Error::Config("profile must be chosen before other keys".into()));
                }
            }
            "input_size" => self.unet.input_size = parse(key, v)?,
            "depth" => self.unet.depth = parse(key, v)?,
            "base_channels" => self.unet.base_channels = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "augment" => self.train.augment = parse_bool(key, v)?,
            "zoom_range" => self.train.augment_params.zoom_range = parse(key, v)?,
            "shift_range" => self.train.augment_params.shift_range = parse(key, v)?,
            "hflip_prob" => self.train.augment_params.hflip_prob = parse(key, v)?,
            "dilate_iterations" => self.dilate_iterations = parse(key, v)?,
            "test_frac" => self.test_frac = parse(key, v)?,
            "val_frac" => self.val_frac = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "report_every" => self.train.report_every = parse(key, v)?,
            "layout" => {
                self.layout = v.parse().map_err(|_| Error::Config(format!("unknown layout {v:?}")))?
            }
            "checkpoint" => self.train.checkpoint = Some(v.into()),
            "history" => self.history = Some(v.into()),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies defaults ← `file` ← `overrides`. The profile is taken from
    /// `profile` if given, else from the file, else `desk`.
    pub fn resolve(
        profile: Option<Profile>,
        file: &[(String, String)],
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let from_file = file
            .iter()
            .rev()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.parse())
            .transpose()?;
        let mut cfg = RunConfig::for_profile(profile.or(from_file).unwrap_or(Profile::Desk));
        for (k, v) in file.iter().chain(overrides) {
            if k != "profile" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.train.validate().map_err(|e| match e {
            Error::Usage(m) => Error::Config(m),
            other => other,
        })?;
        for (name, f) in [("test_frac", self.test_frac), ("val_frac", self.val_frac)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {f}")));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            size: self.unet.input_size,
            dilate_iterations: self.dilate_iterations,
        }
    }

    /// Every resolved value as `key=value`, in [`KEYS`] order.
    pub fn header_lines(&self) -> Vec<String> {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let a = &self.train.augment_params;
        let values: Vec<String> = vec![
            self.profile.to_string(),
            self.unet.input_size.to_string(),
            self.unet.depth.to_string(),
            self.unet.base_channels.to_string(),
            self.train.epochs.to_string(),
            self.train.batch_size.to_string(),
            self.train.lr.to_string(),
            self.train.seed.to_string(),
            self.train.augment.to_string(),
            a.zoom_range.to_string(),
            a.shift_range.to_string(),
            a.hflip_prob.to_string(),
            self.dilate_iterations.to_string(),
            self.test_frac.to_string(),
            self.val_frac.to_string(),
            self.threshold.to_string(),
            self.train.report_every.to_string(),
            self.layout.to_string(),
            opt(&self.train.checkpoint),
            opt(&self.history),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k}={v}")).collect()
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)));
        };
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown config key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}
