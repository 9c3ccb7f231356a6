use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::EPS;

/// Frequency interval `[lo, hi)`, or `[lo, hi]` when `closed` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl Band {
    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && (f < self.hi || (self.closed && f <= self.hi))
    }
}

/// Ordered, disjoint frequency bands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    bands: Vec<Band>,
}

impl Default for BandSet {
    fn default() -> Self {
        Self::standard()
    }
}

impl BandSet {
    /// delta, theta, alpha, beta, low-gamma over 0.5 to 45 Hz.
    pub fn standard() -> Self {
        let b = |name: &str, lo, hi, closed| Band {
            name: name.to_string(),
            lo,
            hi,
            closed,
        };
        Self {
            bands: vec![
                b("delta", 0.5, 4.0, false),
                b("theta", 4.0, 8.0, false),
                b("alpha", 8.0, 13.0, false),
                b("beta", 13.0, 30.0, false),
                b("low_gamma", 30.0, 45.0, true),
            ],
        }
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }

    /// Band index for every frequency (None when outside every band).
    pub fn assign(&self, freqs: &[f64]) -> Vec<Option<usize>> {
        freqs
            .iter()
            .map(|&f| self.bands.iter().position(|b| b.contains(f)))
            .collect()
    }

    /// Raw per-band bin sums of `psd`.
    pub fn band_sums(&self, psd: &[f64], freqs: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.bands.len()];
        for (&p, band) in psd.iter().zip(self.assign(freqs)) {
            if let Some(k) = band {
                sums[k] += p;
            }
        }
        sums
    }

    /// `rho_k = sum_{f in B_k} S(f) / (sum_f S(f) + eps)`.
    pub fn fractions(&self, psd: &[f64], freqs: &[f64]) -> Vec<f64> {
        let total: f64 = psd.iter().sum::<f64>() + EPS;
        self.band_sums(psd, freqs).into_iter().map(|s| s / total).collect()
    }

    /// `log(sum_{f in B_k} S(f) + eps)`.
    pub fn log_power(&self, psd: &[f64], freqs: &[f64], band: usize) -> f64 {
        (self.band_sums(psd, freqs)[band] + EPS).ln()
    }

    /// Bin-to-band membership matrix `[bins, bands]`, row-major.
    pub fn membership(&self, freqs: &[f64]) -> Vec<f64> {
        let k = self.bands.len();
        let mut m = vec![0.0; freqs.len() * k];
        for (i, band) in self.assign(freqs).into_iter().enumerate() {
            if let Some(b) = band {
                m[i * k + b] = 1.0;
            }
        }
        m
    }
}

/// Least-squares slope of `log(S + eps)` on `log f` as fixed weights:
/// returns `(bin positions, w)` so that `beta = sum_j w_j log(S[pos_j] + eps)`.
pub fn slope_weights(freqs: &[f64], fit_lo: f64, fit_hi: f64) -> Result<(Vec<usize>, Vec<f64>)> {
    let pos: Vec<usize> = freqs
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= fit_lo && f <= fit_hi && f > 0.0)
        .map(|(i, _)| i)
        .collect();
    if pos.len() < 3 {
        return Err(invalid(format!(
            "slope fit range [{fit_lo}, {fit_hi}] Hz holds {} bins, need at least 3",
            pos.len()
        )));
    }
    let lf: Vec<f64> = pos.iter().map(|&i| freqs[i].ln()).collect();
    let mean = lf.iter().sum::<f64>() / lf.len() as f64;
    let sxx: f64 = lf.iter().map(|v| (v - mean).powi(2)).sum();
    let w = lf.iter().map(|v| (v - mean) / sxx).collect();
    Ok((pos, w))
}

/// Log-log spectral slope over `[fit_lo, fit_hi]` Hz.
pub fn spectral_slope(psd: &[f64], freqs: &[f64], fit_lo: f64, fit_hi: f64) -> Result<f64> {
    let (pos, w) = slope_weights(freqs, fit_lo, fit_hi)?;
    Ok(pos.iter().zip(&w).map(|(&i, w)| w * (psd[i] + EPS).ln()).sum())
}
