//! Synthetic scalp EEG: a few band-limited latent processes at scalp
//! locations, mixed into every electrode with Gaussian distance decay.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::montage::Montage;
use super::segment::Segment;
use crate::error::{invalid, Result};
use crate::util::{derive_seed, rng_from};

/// One latent generator: a frequency band (or 1/f shape) anchored at a scalp position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// `Some(k)` shapes the amplitude spectrum as `f^(-k/2)` inside `[lo, hi]`; `None` is flat.
    pub exponent: Option<f64>,
    pub gain: f64,
    /// Anchor `(inclination, azimuth)` in degrees.
    pub anchor: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub fs: f64,
    pub samples: usize,
    pub latents: Vec<Latent>,
    /// Gaussian width of the distance decay, in chord units of the unit sphere.
    pub spatial_width: f64,
    /// Independent per-channel noise RMS relative to the channel's mixed signal.
    pub channel_noise: f64,
    /// Per-subject anchor jitter, degrees.
    pub anchor_jitter: f64,
    /// Per-subject multiplicative gain jitter: factors drawn from `U(1-g, 1+g)`.
    pub gain_jitter: f64,
    /// Per-subject target RMS range in microvolts.
    pub rms_range: (f64, f64),
}

fn latent(name: &str, lo: f64, hi: f64, exponent: Option<f64>, gain: f64, anchor: (f64, f64)) -> Latent {
    Latent {
        name: name.to_string(),
        lo,
        hi,
        exponent,
        gain,
        anchor,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fs: 500.0,
            samples: 3000,
            latents: vec![
                latent("delta", 0.5, 4.0, None, 1.0, (55.0, 10.0)),
                latent("theta", 4.0, 8.0, None, 0.8, (30.0, -20.0)),
                latent("alpha", 8.0, 13.0, None, 1.5, (65.0, 180.0)),
                latent("beta", 13.0, 30.0, None, 0.6, (45.0, 95.0)),
                latent("low_gamma", 30.0, 45.0, None, 0.35, (80.0, -105.0)),
                latent("aperiodic", 0.5, 45.0, Some(1.0), 1.0, (10.0, 0.0)),
            ],
            spatial_width: 0.8,
            channel_noise: 0.15,
            anchor_jitter: 8.0,
            gain_jitter: 0.25,
            rms_range: (8.0, 15.0),
        }
    }
}

impl SynthConfig {
    /// Short, low-rate variant for fast experiments.
    pub fn toy() -> Self {
        Self {
            fs: 128.0,
            samples: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) || self.samples < 16 {
            return Err(invalid("synthetic data needs fs > 0 and at least 16 samples"));
        }
        if self.latents.is_empty() {
            return Err(invalid("synthetic data needs at least one latent"));
        }
        for l in &self.latents {
            if !(l.lo >= 0.0 && l.lo < l.hi && l.hi <= self.fs / 2.0) {
                return Err(invalid(format!("latent `{}` band [{}, {}] is invalid", l.name, l.lo, l.hi)));
            }
        }
        if !(self.spatial_width > 0.0) || !(self.rms_range.0 > 0.0 && self.rms_range.0 <= self.rms_range.1) {
            return Err(invalid("spatial width and RMS range must be positive"));
        }
        if !(0.0..1.0).contains(&self.gain_jitter) || self.channel_noise < 0.0 {
            return Err(invalid("gain jitter must lie in [0, 1) and channel noise must be non-negative"));
        }
        Ok(())
    }
}

fn sphere(inclination: f64, azimuth: f64) -> [f64; 3] {
    let (i, a) = (inclination.to_radians(), azimuth.to_radians());
    [i.sin() * a.sin(), i.sin() * a.cos(), i.cos()]
}

/// Subject-level constants: mixing matrix, per-latent gains and global scale.
struct SubjectModel {
    /// `17 x latents`, montage row order.
    mixing: Array2<f64>,
    gains: Vec<f64>,
    scale: f64,
}

fn subject_model(cfg: &SynthConfig, montage: &Montage, rng: &mut ChaCha8Rng) -> SubjectModel {
    let nl = cfg.latents.len();
    let mut mixing = Array2::zeros((montage.len(), nl));
    let mut gains = Vec::with_capacity(nl);
    for (l, lat) in cfg.latents.iter().enumerate() {
        let j = cfg.anchor_jitter;
        let inc = (lat.anchor.0 + rng.random_range(-j..=j)).clamp(0.0, 110.0);
        let az = lat.anchor.1 + rng.random_range(-j..=j);
        let p = sphere(inc, az);
        for c in 0..montage.len() {
            let q = montage.xyz(c);
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            mixing[[c, l]] = (-d2 / (2.0 * cfg.spatial_width * cfg.spatial_width)).exp();
        }
        let g = cfg.gain_jitter;
        gains.push(lat.gain * rng.random_range((1.0 - g)..=(1.0 + g)));
    }
    // Latents have unit variance, so the expected channel variance is
    // (1 + noise^2) * sum_l (m_cl g_l)^2.
    let mean_var = (0..montage.len())
        .map(|c| (0..nl).map(|l| (mixing[[c, l]] * gains[l]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / montage.len() as f64
        * (1.0 + cfg.channel_noise.powi(2));
    let level = rng.random_range(cfg.rms_range.0..=cfg.rms_range.1);
    SubjectModel {
        mixing,
        gains,
        scale: level / mean_var.sqrt(),
    }
}

/// Gaussian noise shaped in the frequency domain and normalized to unit RMS.
fn shaped_noise(
    n: usize,
    fs: f64,
    lo: f64,
    hi: f64,
    exponent: Option<f64>,
    planner: &mut FftPlanner<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        let amp = if f >= lo && f <= hi && f > 0.0 {
            exponent.map_or(1.0, |e| f.powf(-e / 2.0))
        } else {
            0.0
        };
        *b *= amp;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        x.iter().map(|v| v / rms).collect()
    } else {
        x
    }
}

/// `n_segments` windows for one subject, fully determined by `seed`.
pub fn synth_subject(seed: u64, subject: &str, n_segments: usize, cfg: &SynthConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let montage = Montage::standard();
    let mut rng = rng_from(&[seed, 0x5e_9a]);
    let model = subject_model(cfg, &montage, &mut rng);
    let mut planner = FftPlanner::new();
    let n = cfg.samples;
    let (lo_all, hi_all) = cfg
        .latents
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), l| (a.min(l.lo), b.max(l.hi)));

    let mut out = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let latents: Vec<Vec<f64>> = cfg
            .latents
            .iter()
            .map(|l| shaped_noise(n, cfg.fs, l.lo, l.hi, l.exponent, &mut planner, &mut rng))
            .collect();
        let mut rows = Array2::<f64>::zeros((montage.len(), n));
        for c in 0..montage.len() {
            let mut row = vec![0.0; n];
            for (l, lat) in latents.iter().enumerate() {
                let w = model.mixing[[c, l]] * model.gains[l];
                row.iter_mut().zip(lat).for_each(|(r, v)| *r += w * v);
            }
            let sig_rms = (row.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            let noise = shaped_noise(n, cfg.fs, lo_all, hi_all, None, &mut planner, &mut rng);
            for (t, r) in row.iter_mut().enumerate() {
                *r = model.scale * (*r + cfg.channel_noise * sig_rms * noise[t]);
            }
            rows.row_mut(c).iter_mut().zip(row).for_each(|(d, v)| *d = v);
        }
        let pick = |idx: &[usize]| {
            let mut a = Array2::<f32>::zeros((idx.len(), n));
            for (r, &c) in idx.iter().enumerate() {
                a.row_mut(r).iter_mut().zip(rows.row(c)).for_each(|(d, &v)| *d = v as f32);
            }
            a
        };
        out.push(Segment::new(
            subject,
            cfg.fs,
            pick(montage.sources()),
            Some(pick(montage.targets())),
        )?);
    }
    Ok(out)
}

/// Subject identifier used by [`synth_dataset`].
pub fn subject_id(i: usize) -> String {
    format!("S{:03}", i + 1)
}

/// `n_subjects` subjects with `n_segments` windows each.
pub fn synth_dataset(seed: u64, n_subjects: usize, n_segments: usize, cfg: &SynthConfig) -> Result<Vec<Segment>> {
    let mut all = Vec::with_capacity(n_subjects * n_segments);
    for i in 0..n_subjects {
        all.extend(synth_subject(derive_seed(&[seed, i as u64]), &subject_id(i), n_segments, cfg)?);
    }
    Ok(all)
}
