use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Symmetric Hann window `0.5 - 0.5 cos(2 pi l / (n - 1))`.
pub fn hann(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(invalid(format!("Hann window needs at least 2 samples, got {n}")));
    }
    let d = (n - 1) as f64;
    Ok((0..n)
        .map(|l| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * l as f64 / d).cos())
        .collect())
}

/// Welch estimator settings and the retained frequency band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdConfig {
    pub fs: f64,
    pub nwin: usize,
    pub hop: usize,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Default for PsdConfig {
    fn default() -> Self {
        Self {
            fs: 500.0,
            nwin: 1000,
            hop: 500,
            f_lo: 0.5,
            f_hi: 45.0,
        }
    }
}

impl PsdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) || self.nwin < 2 || self.nwin % 2 != 0 || self.hop == 0 {
            return Err(invalid(format!(
                "Welch settings need fs > 0, even nwin >= 2 and hop > 0, got {self:?}"
            )));
        }
        if !(self.f_lo <= self.f_hi) || self.f_hi > self.fs / 2.0 {
            return Err(invalid(format!("retained band [{}, {}] is invalid", self.f_lo, self.f_hi)));
        }
        if self.bins().is_empty() {
            return Err(invalid("retained band contains no frequency bins"));
        }
        Ok(())
    }

    /// Bin spacing in Hz.
    pub fn resolution(&self) -> f64 {
        self.fs / self.nwin as f64
    }

    /// DFT bin indices whose centre frequency lies in `[f_lo, f_hi]`.
    pub fn bins(&self) -> Vec<usize> {
        let df = self.resolution();
        let tol = 1e-9 * df;
        (0..=self.nwin / 2)
            .filter(|&k| {
                let f = k as f64 * df;
                f >= self.f_lo - tol && f <= self.f_hi + tol
            })
            .collect()
    }

    pub fn freqs(&self) -> Vec<f64> {
        let df = self.resolution();
        self.bins().into_iter().map(|k| k as f64 * df).collect()
    }

    /// Number of Welch frames for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.nwin {
            return Err(invalid(format!(
                "signal of {len} samples is shorter than one {}-sample window",
                self.nwin
            )));
        }
        Ok((len - self.nwin) / self.hop + 1)
    }
}

/// Per-channel spectra on a shared frequency grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    /// `channels x bins`, units of signal^2 / Hz.
    pub power: Array2<f64>,
}

/// Reusable Welch estimator (window and FFT plan built once).
pub struct Welch {
    cfg: PsdConfig,
    window: Vec<f64>,
    norm: f64,
    bins: Vec<usize>,
    fft: Arc<dyn Fft<f64>>,
}

impl Welch {
    pub fn new(cfg: PsdConfig) -> Result<Self> {
        cfg.validate()?;
        let window = hann(cfg.nwin)?;
        let norm = cfg.fs * window.iter().map(|w| w * w).sum::<f64>();
        let bins = cfg.bins();
        let fft = FftPlanner::new().plan_fft_forward(cfg.nwin);
        Ok(Self {
            cfg,
            window,
            norm,
            bins,
            fft,
        })
    }

    pub fn config(&self) -> &PsdConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn freqs(&self) -> Vec<f64> {
        self.cfg.freqs()
    }

    pub fn bin_indices(&self) -> &[usize] {
        &self.bins
    }

    /// `S(f) = (1/N) sum_m |sum_l w_l x_m[l] e^{-i 2 pi f l / f_s}|^2 / (f_s sum_l w_l^2)`
    /// on the retained bins.
    pub fn psd(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let frames = self.cfg.frame_count(signal.len())?;
        let n = self.cfg.nwin;
        let mut acc = vec![0.0; self.bins.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in 0..frames {
            let frame = &signal[m * self.cfg.hop..][..n];
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex64::new(x * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (a, &k) in acc.iter_mut().zip(&self.bins) {
                *a += buf[k].norm_sqr();
            }
        }
        let scale = 1.0 / (frames as f64 * self.norm);
        acc.iter_mut().for_each(|a| *a *= scale);
        Ok(acc)
    }

    /// Spectrum of every row of `signals` (`channels x samples`).
    pub fn psd_rows(&self, signals: ArrayView2<f64>) -> Result<PsdEstimate> {
        let mut power = Array2::zeros((signals.nrows(), self.bins.len()));
        for (r, row) in signals.rows().into_iter().enumerate() {
            let row = row.to_vec();
            let p = self.psd(&row)?;
            power.row_mut(r).iter_mut().zip(p).for_each(|(d, s)| *d = s);
        }
        Ok(PsdEstimate {
            freqs: self.freqs(),
            power,
        })
    }
}

/// One-shot Welch PSD of a single signal.
pub fn welch_psd(signal: &[f64], cfg: &PsdConfig) -> Result<Vec<f64>> {
    Welch::new(cfg.clone())?.psd(signal)
}
