//! Filtering and spectral estimation on plain `f64` slices.

mod bands;
mod filter;
mod welch;

pub use bands::{slope_weights, spectral_slope, Band, BandSet};
pub use filter::{bandpass, BandPass, Section};
pub use welch::{hann, welch_psd, PsdConfig, PsdEstimate, Welch};

/// Default slope fit range in Hz.
pub const SLOPE_FIT: (f64, f64) = (2.0, 40.0);
