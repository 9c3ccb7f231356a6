//! Zero-phase Butterworth band-pass as a cascade of second-order sections.

use rustfft::num_complex::Complex64;

use crate::error::{invalid, Result};

/// One biquad, `a0` normalized to 1: `[b0, b1, b2, a1, a2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    /// Transposed direct-form II state after an infinitely long unit input.
    fn step_state(&self) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        [dc - self.b[0], self.b[2] - self.a[1] * dc]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Digital Butterworth band-pass of the given analog-prototype order.
#[derive(Clone, Debug)]
pub struct BandPass {
    sections: Vec<Section>,
    settle: usize,
}

impl BandPass {
    pub fn design(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(invalid("filter order must be positive"));
        }
        if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
            return Err(invalid(format!(
                "band edges must satisfy 0 < lo < hi < fs/2, got lo={lo}, hi={hi}, fs={fs}"
            )));
        }
        let k = 2.0 * fs;
        let w1 = k * (std::f64::consts::PI * lo / fs).tan();
        let w2 = k * (std::f64::consts::PI * hi / fs).tan();
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();

        let mut sections = Vec::with_capacity(order);
        for j in 0..order {
            let theta = std::f64::consts::PI * (2 * j + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let half = p * (bw / 2.0);
            let root = (half * half - w0 * w0).sqrt();
            for s in [half + root, half - root] {
                let z = (k + s) / (k - s);
                if z.im > 0.0 {
                    sections.push(Section {
                        b: [1.0, 0.0, -1.0],
                        a: [-2.0 * z.re, z.norm_sqr()],
                    });
                }
            }
        }
        if sections.len() != order {
            return Err(invalid("band too narrow for a conjugate-pair section layout"));
        }

        let center = Complex64::from_polar(1.0, 2.0 * (w0 / k).atan());
        let gain = sections.iter().map(|s| s.response(center)).product::<Complex64>().norm();
        let per = gain.powf(-1.0 / order as f64);
        for s in &mut sections {
            s.b.iter_mut().for_each(|b| *b *= per);
        }
        // Roughly three periods of the lower edge; the high-pass ringing decays slowly.
        let settle = (3.0 * fs / lo).ceil() as usize;
        Ok(Self { sections, settle })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Magnitude of the single-pass frequency response at `f` Hz.
    pub fn gain_at(&self, f: f64, fs: f64) -> f64 {
        let z = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * f / fs);
        self.sections.iter().map(|s| s.response(z)).product::<Complex64>().norm()
    }

    /// Causal filtering with initial state `zi` scaled per section.
    fn run(&self, x: &mut [f64], scale: f64) {
        let mut upstream = 1.0;
        for s in &self.sections {
            let [z1, z2] = s.step_state();
            let (mut z1, mut z2) = (z1 * upstream * scale, z2 * upstream * scale);
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[0] * y + z2;
                z2 = s.b[2] * xin - s.a[1] * y;
                *v = y;
            }
            upstream *= s.dc_gain();
        }
    }

    /// Shortest signal [`BandPass::filtfilt`] accepts, minus one.
    pub fn min_pad(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Forward-backward filtering with odd-reflection padding and
    /// steady-state initial conditions. Padding covers about three periods
    /// of the lower band edge, limited by the signal length.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let min_pad = self.min_pad();
        if n <= min_pad {
            return Err(invalid(format!("signal of {n} samples is too short for padding {min_pad}")));
        }
        let pad = self.settle.clamp(min_pad, n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Zero-phase 4th-order Butterworth band-pass.
pub fn bandpass(signal: &[f64], fs: f64, lo: f64, hi: f64) -> Result<Vec<f64>> {
    BandPass::design(4, lo, hi, fs)?.filtfilt(signal)
}
