use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{load_segments, synth_dataset, ChannelStats, Segment, Split, SynthConfig, SPLIT_RATIOS};
use crate::dsp::PsdConfig;
use crate::error::{invalid, Result};
use crate::model::ArchConfig;
use crate::perturb::{Condition, PerturbParams};
use crate::trainer::TrainConfig;
use crate::util::sha256_hex;

/// Where segments come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Generated on the fly from the experiment seed.
    Synth {
        subjects: usize,
        segments_per_subject: usize,
        #[serde(default)]
        synth: SynthConfig,
    },
    /// A directory written by `save_segments`.
    Dir { path: PathBuf },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Synth {
            subjects: 60,
            segments_per_subject: 2,
            synth: SynthConfig::default(),
        }
    }
}

/// Everything a command needs. The experiment seed drives data synthesis, the
/// split, initialisation, shuffling and perturbations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSpec,
    pub checkpoint: Option<PathBuf>,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Spectral settings for evaluation metrics and figures.
    pub eval_psd: PsdConfig,
    pub conditions: Vec<Condition>,
    pub perturb: PerturbParams,
    pub repeats: usize,
    /// Spectral loss weights trained by the sweep command.
    pub sweep: Vec<f64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSpec::default(),
            checkpoint: None,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            eval_psd: PsdConfig::default(),
            conditions: Condition::ALL.to_vec(),
            perturb: PerturbParams::default(),
            repeats: 3,
            sweep: vec![0.0, 0.05, 0.1, 0.2],
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Laptop-sized setup: 128 Hz, 256-sample segments, toy architecture.
    pub fn toy() -> Self {
        let mut train = TrainConfig {
            psd: TrainConfig::toy_psd(),
            max_epochs: 20,
            ..TrainConfig::default()
        };
        train.optimizer.lr = 1e-2;
        Self {
            data: DataSpec::Synth {
                subjects: 60,
                segments_per_subject: 2,
                synth: SynthConfig::toy(),
            },
            arch: ArchConfig::toy(),
            train,
            eval_psd: TrainConfig::toy_psd(),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training settings with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        self.perturb.validate()?;
        self.eval_psd.validate()?;
        if self.repeats == 0 {
            return Err(invalid("repeats must be at least 1"));
        }
        if self.conditions.is_empty() {
            return Err(invalid("at least one perturbation condition is required"));
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if self.conditions[..i].contains(c) {
                return Err(invalid(format!("condition `{c}` listed twice")));
            }
        }
        if self.sweep.is_empty() || self.sweep.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(invalid(format!("sweep weights must be a non-empty list in [0, 1], got {:?}", self.sweep)));
        }
        if self.train.psd.fs != self.eval_psd.fs {
            return Err(invalid(format!(
                "training and evaluation spectra use different rates: {} vs {} Hz",
                self.train.psd.fs, self.eval_psd.fs
            )));
        }
        if let DataSpec::Synth {
            subjects,
            segments_per_subject,
            synth,
        } = &self.data
        {
            synth.validate()?;
            if *subjects < 3 || *segments_per_subject == 0 {
                return Err(invalid("synthetic data needs at least 3 subjects and 1 segment each"));
            }
            self.check_signal(synth.fs, synth.samples)?;
        }
        Ok(())
    }

    fn check_signal(&self, fs: f64, samples: usize) -> Result<()> {
        if fs != self.eval_psd.fs {
            return Err(invalid(format!("data sampled at {fs} Hz but spectra configured for {} Hz", self.eval_psd.fs)));
        }
        if samples != self.arch.samples {
            return Err(invalid(format!(
                "segments have {samples} samples but the architecture expects {}",
                self.arch.samples
            )));
        }
        Ok(())
    }
}

/// Short SHA-256 of the configuration with the output directory cleared, so
/// the same experiment written elsewhere hashes identically.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.out = PathBuf::new();
    Ok(sha256_hex(&serde_json::to_vec(&c)?)[..16].to_string())
}

/// Segments with their subject split and training-split channel statistics.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub segments: Vec<Segment>,
    pub split: Split,
    pub stats: ChannelStats,
}

impl Dataset {
    pub fn role(&self, role: &str) -> Vec<&Segment> {
        self.split.select(&self.segments, role)
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let segments = match &cfg.data {
        DataSpec::Synth {
            subjects,
            segments_per_subject,
            synth,
        } => synth_dataset(cfg.seed, *subjects, *segments_per_subject, synth)?,
        DataSpec::Dir { path } => {
            if !path.is_dir() {
                return Err(invalid(format!("data directory {} does not exist", path.display())));
            }
            load_segments(path)?
        }
    };
    let first = segments.first().ok_or_else(|| invalid("dataset is empty"))?;
    cfg.check_signal(first.fs, first.len())?;
    let roster: Vec<String> = segments.iter().map(|s| s.subject.clone()).collect();
    let split = Split::new(&roster, cfg.seed, SPLIT_RATIOS)?;
    for s in &segments {
        if s.targets.is_none() {
            return Err(invalid(format!("segment of subject {} has no targets", s.subject)));
        }
    }
    let stats = ChannelStats::from_split(&segments, &split)?;
    Ok(Dataset { segments, split, stats })
}
