//! Seeded corruption of source channels. Targets are never touched.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::dataset::{to_f32, Segment};
use crate::dsp::hann;
use crate::error::{invalid, FavcError, Result};
use crate::util::{fnv1a, rng_from};

pub const EMG_BAND: (f64, f64) = (20.0, 45.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Awgn,
    Emg,
    Dropout,
    Gain,
    Mixed,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Clean,
        Condition::Awgn,
        Condition::Emg,
        Condition::Dropout,
        Condition::Gain,
        Condition::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Awgn => "awgn",
            Condition::Emg => "emg",
            Condition::Dropout => "dropout",
            Condition::Gain => "gain",
            Condition::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = FavcError;
    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown perturbation condition `{s}`")))
    }
}

/// Component parameters shared by every condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbParams {
    pub awgn_snr_db: f64,
    pub emg_snr_db: f64,
    pub n_bursts: usize,
    /// Burst duration range in seconds.
    pub burst_range: (f64, f64),
    pub channel_prob: f64,
    /// Dropout window in seconds.
    pub dropout: f64,
    /// Gain factors are drawn from `U(1 - rho, 1 + rho)`.
    pub gain_rho: f64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            awgn_snr_db: 10.0,
            emg_snr_db: 10.0,
            n_bursts: 2,
            burst_range: (0.30, 0.80),
            channel_prob: 0.50,
            dropout: 0.50,
            gain_rho: 0.20,
        }
    }
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.burst_range;
        if !(self.awgn_snr_db.is_finite() && self.emg_snr_db.is_finite()) {
            return Err(invalid("SNR must be finite"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) || !(self.dropout > 0.0 && self.dropout.is_finite()) {
            return Err(invalid(format!(
                "durations must be positive: bursts {:?}, dropout {}",
                self.burst_range, self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.channel_prob) {
            return Err(invalid(format!("channel probability {} outside [0, 1]", self.channel_prob)));
        }
        if !(0.0..1.0).contains(&self.gain_rho) {
            return Err(invalid(format!("gain spread {} outside [0, 1)", self.gain_rho)));
        }
        Ok(())
    }
}

/// A condition together with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub condition: Condition,
    #[serde(default)]
    pub params: PerturbParams,
}

impl PerturbSpec {
    pub fn new(condition: Condition) -> Self {
        Self {
            condition,
            params: PerturbParams::default(),
        }
    }
}

/// Stream for one `(seed, condition, repeat, segment)` cell.
pub struct DeterministicRng;

impl DeterministicRng {
    pub fn derive(seed: u64, condition: &str, repeat: u64, index: u64) -> ChaCha8Rng {
        rng_from(&[seed, fnv1a(condition.as_bytes()), repeat, index])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Window {
    pub channel: usize,
    pub start: usize,
    pub len: usize,
}

/// What was applied, for inspection and tests.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PerturbLog {
    pub gains: Option<Vec<f64>>,
    pub noise_sigma: Option<Vec<f64>>,
    pub bursts: Vec<Window>,
    pub dropout: Option<Window>,
}

fn rms(x: ArrayView1<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn snr_factor(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0).sqrt()
}

/// Adds white noise with per-channel standard deviation `RMS(x_c) / sqrt(10^(snr/10))`.
pub fn awgn(x: &mut Array2<f64>, snr_db: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !snr_db.is_finite() {
        return Err(invalid("AWGN SNR must be finite"));
    }
    let mut sigmas = Vec::with_capacity(x.nrows());
    for mut row in x.rows_mut() {
        let sigma = rms(row.view()) / snr_factor(snr_db);
        sigmas.push(sigma);
        if sigma == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
        for v in row.iter_mut() {
            *v += dist.sample(rng);
        }
    }
    Ok(sigmas)
}

/// White noise restricted to `[lo, hi]` Hz by zeroing FFT bins.
pub fn band_limited_noise(len: usize, fs: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.sample::<f64, _>(rand_distr::StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * fs / len as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re / len as f64).collect()
}

/// Hann-enveloped 20-45 Hz bursts added to randomly selected channels, each
/// calibrated so the burst-support RMS sits `snr_db` below the channel RMS.
pub fn emg_burst(x: &mut Array2<f64>, fs: f64, p: &PerturbParams, rng: &mut ChaCha8Rng) -> Result<Vec<Window>> {
    let t = x.ncols();
    let (lo, hi) = p.burst_range;
    let max_len = (hi * fs).round() as usize;
    if max_len > t || (lo * fs).round() < 2.0 {
        return Err(invalid(format!(
            "burst durations {:?} s do not fit {t} samples at {fs} Hz",
            p.burst_range
        )));
    }
    let mut windows = Vec::new();
    for c in 0..x.nrows() {
        if !rng.random_bool(p.channel_prob) {
            continue;
        }
        let target = rms(x.row(c)) / snr_factor(p.emg_snr_db);
        for _ in 0..p.n_bursts {
            let dur = rng.random_range(lo..=hi);
            let len = ((dur * fs).round() as usize).clamp(2, t);
            let start = rng.random_range(0..=t - len);
            let env = hann(len)?;
            let noise = band_limited_noise(len, fs, EMG_BAND.0, EMG_BAND.1, rng);
            let burst: Vec<f64> = noise.iter().zip(&env).map(|(n, e)| n * e).collect();
            let r = (burst.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
            let scale = if r > 0.0 { target / r } else { 0.0 };
            let mut row = x.row_mut(c);
            for (i, b) in burst.iter().enumerate() {
                row[start + i] += scale * b;
            }
            windows.push(Window { channel: c, start, len });
        }
    }
    Ok(windows)
}

/// Zeroes one contiguous window of `round(duration * fs)` samples in one channel.
pub fn dropout(x: &mut Array2<f64>, fs: f64, duration: f64, rng: &mut ChaCha8Rng) -> Result<Window> {
    let len = (duration * fs).round() as usize;
    if len == 0 || len > x.ncols() || x.nrows() == 0 {
        return Err(invalid(format!(
            "dropout of {duration} s does not fit {} samples at {fs} Hz",
            x.ncols()
        )));
    }
    let channel = rng.random_range(0..x.nrows());
    let start = rng.random_range(0..=x.ncols() - len);
    x.row_mut(channel)
        .slice_mut(ndarray::s![start..start + len])
        .fill(0.0);
    Ok(Window { channel, start, len })
}

/// Scales each channel by a constant drawn from `U(1 - rho, 1 + rho)`.
pub fn gain_mismatch(x: &mut Array2<f64>, rho: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid(format!("gain spread {rho} outside [0, 1)")));
    }
    let mut gains = Vec::with_capacity(x.nrows());
    for mut row in x.rows_mut() {
        let g = if rho == 0.0 {
            1.0
        } else {
            rng.random_range(1.0 - rho..=1.0 + rho)
        };
        row *= g;
        gains.push(g);
    }
    Ok(gains)
}

/// Which components of the mixed condition run. Disabled components draw nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Components {
    pub gain: bool,
    pub awgn: bool,
    pub emg: bool,
    pub dropout: bool,
}

impl Components {
    pub const ALL: Self = Self {
        gain: true,
        awgn: true,
        emg: true,
        dropout: true,
    };
    pub const NONE: Self = Self {
        gain: false,
        awgn: false,
        emg: false,
        dropout: false,
    };

    pub fn of(condition: Condition) -> Self {
        match condition {
            Condition::Clean => Self::NONE,
            Condition::Awgn => Self { awgn: true, ..Self::NONE },
            Condition::Emg => Self { emg: true, ..Self::NONE },
            Condition::Dropout => Self {
                dropout: true,
                ..Self::NONE
            },
            Condition::Gain => Self { gain: true, ..Self::NONE },
            Condition::Mixed => Self::ALL,
        }
    }
}

/// Applies components in the fixed order gain, AWGN, EMG, dropout from one stream.
pub fn apply_components(
    x: &mut Array2<f64>,
    fs: f64,
    p: &PerturbParams,
    which: Components,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbLog> {
    p.validate()?;
    let mut log = PerturbLog::default();
    if which.gain {
        log.gains = Some(gain_mismatch(x, p.gain_rho, rng)?);
    }
    if which.awgn {
        log.noise_sigma = Some(awgn(x, p.awgn_snr_db, rng)?);
    }
    if which.emg {
        log.bursts = emg_burst(x, fs, p, rng)?;
    }
    if which.dropout {
        log.dropout = Some(dropout(x, fs, p.dropout, rng)?);
    }
    Ok(log)
}

/// Mixed stress: every component in the fixed order.
pub fn mixed(x: &mut Array2<f64>, fs: f64, p: &PerturbParams, rng: &mut ChaCha8Rng) -> Result<PerturbLog> {
    apply_components(x, fs, p, Components::ALL, rng)
}

/// Perturbs the sources of one segment; targets are copied unchanged.
pub fn perturb_segment(
    seg: &Segment,
    spec: &PerturbSpec,
    seed: u64,
    repeat: u64,
    index: u64,
) -> Result<(Segment, PerturbLog)> {
    if spec.condition == Condition::Clean {
        return Ok((seg.clone(), PerturbLog::default()));
    }
    let mut rng = DeterministicRng::derive(seed, spec.condition.name(), repeat, index);
    let mut x = seg.sources_f64();
    let log = apply_components(&mut x, seg.fs, &spec.params, Components::of(spec.condition), &mut rng)?;
    let out = Segment {
        subject: seg.subject.clone(),
        fs: seg.fs,
        sources: to_f32(&x),
        targets: seg.targets.clone(),
    };
    Ok((out, log))
}
