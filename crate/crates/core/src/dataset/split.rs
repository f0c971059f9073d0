use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Manifest, Split};
use crate::error::{usage_err, Result};

/// Fraction of the pooled dataset held out for testing.
pub const DEFAULT_TEST_FRAC: f64 = 0.2;
/// Fraction of the remaining training data used for validation.
pub const DEFAULT_VAL_FRAC: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

fn round_half_up(x: f64) -> usize {
    // The epsilon absorbs representation error in products like 0.1 * 45.
    (x + 0.5 + 1e-9).floor() as usize
}

impl SplitCounts {
    /// `test = round(test_frac * n)`, `val = round(val_frac * (n - test))`,
    /// remainder train; halves round up.
    pub fn for_len(n: usize, test_frac: f64, val_frac: f64) -> Result<Self> {
        if n < 3 {
            return Err(usage_err!("need at least 3 samples to split, got {n}"));
        }
        for (name, f) in [("test_frac", test_frac), ("val_frac", val_frac)] {
            if !(0.0..1.0).contains(&f) {
                return Err(usage_err!("{name} must be in [0, 1), got {f}"));
            }
        }
        let test = round_half_up(n as f64 * test_frac).min(n);
        let val = round_half_up((n - test) as f64 * val_frac).min(n - test);
        let train = n - test - val;
        if train == 0 {
            return Err(usage_err!("split of {n} samples leaves no training data"));
        }
        Ok(SplitCounts { train, val, test })
    }
}

/// Seeded shuffle, then the first `test` samples go to test, the next `val`
/// to validation and the rest to training.
pub fn split(manifest: &Manifest, seed: u64, test_frac: f64, val_frac: f64) -> Result<Manifest> {
    if let Some(r) = manifest.records().iter().find(|r| r.split != Split::Unassigned) {
        return Err(usage_err!("record {} is already assigned to {}", r.id, r.split));
    }
    let counts = SplitCounts::for_len(manifest.len(), test_frac, val_frac)?;
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut out = manifest.clone();
    let records = out.records_mut();
    for (rank, &i) in order.iter().enumerate() {
        records[i].split = if rank < counts.test {
            Split::Test
        } else if rank < counts.test + counts.val {
            Split::Val
        } else {
            Split::Train
        };
    }
    out.provenance.push(format!(
        "split seed={seed} test_frac={test_frac} val_frac={val_frac} train={} val={} test={}",
        counts.train, counts.val, counts.test
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{SampleRecord, Source};
    use super::*;

    pub(crate) fn synthetic(n: usize) -> Manifest {
        Manifest::new(
            (0..n)
                .map(|i| SampleRecord {
                    id: format!("s{i}"),
                    image: format!("s{i}.png").into(),
                    masks: vec![format!("s{i}_mask.png").into()],
                    source: Source::Synthetic,
                    split: Split::Unassigned,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hundred_splits_72_8_20() {
        let m = split(&synthetic(100), 1, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC).unwrap();
        assert_eq!(
            (m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)),
            (72, 8, 20)
        );
        assert_eq!(m.count(Split::Unassigned), 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split(&synthetic(30), 5, 0.2, 0.1).unwrap();
        let b = split(&synthetic(30), 5, 0.2, 0.1).unwrap();
        let c = split(&synthetic(30), 6, 0.2, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.indices(Split::Test), c.indices(Split::Test));
    }

    #[test]
    fn rounding_half_up() {
        // 0.1 * 45 = 4.5 rounds to 5.
        assert_eq!(SplitCounts::for_len(45, 0.0, 0.1).unwrap().val, 5);
        assert_eq!(
            SplitCounts::for_len(753, 0.2, 0.1).unwrap(),
            SplitCounts {
                train: 542,
                val: 60,
                test: 151
            }
        );
    }

    #[test]
    fn too_small_and_reassignment_rejected() {
        assert!(split(&synthetic(2), 0, 0.2, 0.1).is_err());
        let m = split(&synthetic(10), 0, 0.2, 0.1).unwrap();
        assert!(split(&m, 0, 0.2, 0.1).is_err());
    }
}
