use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::montage::{SOURCE_NAMES, TARGET_NAMES};
use super::segment::Segment;
use crate::error::{invalid, Result};
use crate::util::rng_from;

/// Lower bound applied to channel standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and standard deviation over training data, 17 channels
/// in source-then-target order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Pooled statistics over every sample of `segments` (all must carry targets).
    pub fn compute(segments: &[Segment]) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("channel statistics need at least one segment"));
        }
        let mut sum = [0.0f64; 17];
        let mut count = 0usize;
        for seg in segments {
            let rows = seg.all_rows()?;
            for (c, row) in rows.rows().into_iter().enumerate() {
                sum[c] += row.sum();
            }
            count += seg.len();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = [0.0f64; 17];
        for seg in segments {
            let rows = seg.all_rows()?;
            for (c, row) in rows.rows().into_iter().enumerate() {
                sq[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let channels: Vec<String> = SOURCE_NAMES.iter().chain(TARGET_NAMES.iter()).map(|s| s.to_string()).collect();
        let std = sq
            .iter()
            .zip(&channels)
            .map(|(s, name)| {
                let sd = (s / count as f64).sqrt();
                if sd < STD_FLOOR {
                    log::warn!("channel {name} is constant over the training data; using std floor {STD_FLOOR}");
                    STD_FLOOR
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { channels, mean, std })
    }

    /// Statistics over the training subjects of `split` only.
    pub fn from_split(segments: &[Segment], split: &Split) -> Result<Self> {
        let train: Vec<Segment> = segments
            .iter()
            .filter(|s| split.train.contains(&s.subject))
            .cloned()
            .collect();
        Self::compute(&train)
    }

    fn check(&self) -> Result<()> {
        if self.mean.len() != 17 || self.std.len() != 17 {
            return Err(invalid("channel statistics must cover 17 channels"));
        }
        Ok(())
    }

    pub fn source_mean(&self) -> &[f64] {
        &self.mean[..4]
    }

    pub fn source_std(&self) -> &[f64] {
        &self.std[..4]
    }

    pub fn target_mean(&self) -> &[f64] {
        &self.mean[4..]
    }

    pub fn target_std(&self) -> &[f64] {
        &self.std[4..]
    }

    fn apply(a: &Array2<f64>, mean: &[f64], std: &[f64], forward: bool) -> Result<Array2<f64>> {
        if a.nrows() != mean.len() {
            return Err(invalid(format!("{} rows but statistics for {}", a.nrows(), mean.len())));
        }
        let mut out = a.clone();
        for (c, mut row) in out.rows_mut().into_iter().enumerate() {
            if forward {
                row.mapv_inplace(|v| (v - mean[c]) / std[c]);
            } else {
                row.mapv_inplace(|v| v * std[c] + mean[c]);
            }
        }
        Ok(out)
    }

    pub fn normalize_sources(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check()?;
        Self::apply(x, self.source_mean(), self.source_std(), true)
    }

    pub fn normalize_targets(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        self.check()?;
        Self::apply(y, self.target_mean(), self.target_std(), true)
    }

    pub fn denormalize_sources(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check()?;
        Self::apply(x, self.source_mean(), self.source_std(), false)
    }

    pub fn denormalize_targets(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        self.check()?;
        Self::apply(y, self.target_mean(), self.target_std(), false)
    }
}

/// Subject-disjoint partition of a roster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Default train/validation/test proportions.
pub const SPLIT_RATIOS: [usize; 3] = [95, 11, 13];

/// Sizes of the validation and test partitions for a roster of `n`: each is
/// the rounded proportional share, at least 1.
pub fn split_sizes(n: usize, ratios: [usize; 3]) -> Result<[usize; 3]> {
    if n < 3 {
        return Err(invalid(format!("need at least 3 subjects to split, got {n}")));
    }
    let total: usize = ratios.iter().sum();
    if total == 0 || ratios.contains(&0) {
        return Err(invalid("split ratios must be positive"));
    }
    let share = |r: usize| ((n * r) as f64 / total as f64).round().max(1.0) as usize;
    let val = share(ratios[1]);
    let test = share(ratios[2]);
    if val + test >= n {
        return Ok([n - 2, 1, 1]);
    }
    Ok([n - val - test, val, test])
}

impl Split {
    /// Deterministic shuffle of the sorted roster followed by proportional cuts.
    pub fn new(roster: &[String], seed: u64, ratios: [usize; 3]) -> Result<Self> {
        let mut ids: Vec<String> = roster.to_vec();
        ids.sort();
        ids.dedup();
        let [ntr, nva, _] = split_sizes(ids.len(), ratios)?;
        ids.shuffle(&mut rng_from(&[seed, 0x5b11]));
        let mut train = ids[..ntr].to_vec();
        let mut val = ids[ntr..ntr + nva].to_vec();
        let mut test = ids[ntr + nva..].to_vec();
        train.sort();
        val.sort();
        test.sort();
        Ok(Self { seed, train, val, test })
    }

    pub fn role(&self, subject: &str) -> Option<&'static str> {
        if self.train.iter().any(|s| s == subject) {
            Some("train")
        } else if self.val.iter().any(|s| s == subject) {
            Some("val")
        } else if self.test.iter().any(|s| s == subject) {
            Some("test")
        } else {
            None
        }
    }

    pub fn select<'a>(&self, segments: &'a [Segment], role: &str) -> Vec<&'a Segment> {
        segments.iter().filter(|s| self.role(&s.subject) == Some(role)).collect()
    }
}
