use serde::{Deserialize, Serialize};

use crate::dsp::{hann, slope_weights, BandSet, PsdConfig, SLOPE_FIT};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{NodeId, Tape, Tensor, EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub wave: f64,
    pub psd: f64,
    pub log: f64,
    pub band: f64,
    pub slope: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            wave: 0.9,
            psd: 0.1,
            log: 1.0,
            band: 1.0,
            slope: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.wave, self.psd, self.log, self.band, self.slope];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if (self.wave + self.psd - 1.0).abs() > 1e-12 {
            return Err(invalid(format!(
                "waveform and spectral weights must sum to 1, got {} + {}",
                self.wave, self.psd
            )));
        }
        Ok(())
    }
}

/// Mean of `|pred - target| / sigma_c` over every element; channels on axis -2.
pub fn wave_loss(tape: &mut Tape, pred: NodeId, target: NodeId, sigma: &[f64]) -> Result<NodeId> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(shape_err(
            "wave_loss",
            format!("{:?} vs {:?}", tape.shape(pred), tape.shape(target)),
        ));
    }
    let inv: Vec<f64> = sigma.iter().map(|s| 1.0 / s.max(EPS)).collect();
    let d = tape.sub(pred, target)?;
    let d = tape.abs(d)?;
    let d = tape.channel_affine(d, &inv, &vec![0.0; inv.len()])?;
    tape.mean_all(d)
}

/// Differentiable Welch spectrum plus the band/slope projections used by the
/// spectral loss.
#[derive(Clone, Debug)]
pub struct SpectralLoss {
    cfg: PsdConfig,
    window: Vec<f64>,
    norm: f64,
    bins: Vec<usize>,
    /// `[bands, bins]`.
    membership: Vec<f64>,
    bands: usize,
    /// `[1, bins]`, zero outside the slope fit range.
    slope: Vec<f64>,
}

impl SpectralLoss {
    pub fn new(cfg: PsdConfig, bands: &BandSet) -> Result<Self> {
        cfg.validate()?;
        let window = hann(cfg.nwin)?;
        let norm = cfg.fs * window.iter().map(|w| w * w).sum::<f64>();
        let freqs = cfg.freqs();
        let bins = cfg.bins();
        let m = bands.membership(&freqs);
        let k = bands.len();
        let mut membership = vec![0.0; k * bins.len()];
        for f in 0..bins.len() {
            for b in 0..k {
                membership[b * bins.len() + f] = m[f * k + b];
            }
        }
        let (pos, w) = slope_weights(&freqs, SLOPE_FIT.0, SLOPE_FIT.1)?;
        let mut slope = vec![0.0; bins.len()];
        for (&p, &w) in pos.iter().zip(&w) {
            slope[p] = w;
        }
        Ok(Self {
            cfg,
            window,
            norm,
            bins,
            membership,
            bands: k,
            slope,
        })
    }

    pub fn config(&self) -> &PsdConfig {
        &self.cfg
    }

    /// Welch PSD along the last axis: `[.., T] -> [.., bins]`.
    pub fn psd(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let frames = tape.frames(x, self.cfg.nwin, self.cfg.hop)?;
        let w = tape.constant(Tensor::from_vec(self.window.clone()))?;
        let windowed = tape.mul(frames, w)?;
        let power = tape.rfft_power(windowed)?;
        let avg = tape.mean_axis(power, -2)?;
        let kept = tape.index_select(avg, -1, &self.bins)?;
        tape.scale(kept, 1.0 / self.norm)
    }

    /// `(log-PSD term, band-fraction term, slope term)` between two signals.
    pub fn terms(&self, tape: &mut Tape, pred: NodeId, target: NodeId) -> Result<[NodeId; 3]> {
        let sp = self.psd(tape, pred)?;
        let st = self.psd(tape, target)?;
        let lp = tape.log_eps(sp, EPS)?;
        let lt = tape.log_eps(st, EPS)?;

        let d = tape.sub(lp, lt)?;
        let d = tape.abs(d)?;
        let log_term = tape.mean_all(d)?;

        let memb = tape.constant(Tensor::new(vec![self.bands, self.bins.len()], self.membership.clone())?)?;
        let rho = |tape: &mut Tape, s: NodeId| -> Result<NodeId> {
            let sums = tape.linear(s, memb, None)?;
            let total = tape.sum_axis(s, -1)?;
            let total = tape.add_scalar(total, EPS)?;
            let mut shape = tape.shape(total).to_vec();
            shape.push(1);
            let total = tape.reshape(total, &shape)?;
            tape.div(sums, total)
        };
        let rp = rho(tape, sp)?;
        let rt = rho(tape, st)?;
        let d = tape.sub(rp, rt)?;
        let d = tape.abs(d)?;
        let band_term = tape.mean_all(d)?;

        let sw = tape.constant(Tensor::new(vec![1, self.bins.len()], self.slope.clone())?)?;
        let bp = tape.linear(lp, sw, None)?;
        let bt = tape.linear(lt, sw, None)?;
        let d = tape.sub(bp, bt)?;
        let d = tape.abs(d)?;
        let slope_term = tape.mean_all(d)?;
        Ok([log_term, band_term, slope_term])
    }

    pub fn loss(&self, tape: &mut Tape, pred: NodeId, target: NodeId, w: &LossWeights) -> Result<NodeId> {
        let [a, b, c] = self.terms(tape, pred, target)?;
        weighted_sum(tape, &[(a, w.log), (b, w.band), (c, w.slope)])
    }
}

fn weighted_sum(tape: &mut Tape, parts: &[(NodeId, f64)]) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for &(node, w) in parts {
        let term = tape.scale(node, w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| invalid("empty weighted sum"))
}

/// Nodes of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub wave: NodeId,
    pub psd: Option<NodeId>,
}

/// Dual-domain objective on raw-scale signals. Counts spectral evaluations so
/// callers can verify where the spectral term runs.
#[derive(Clone, Debug)]
pub struct Objective {
    pub weights: LossWeights,
    pub spectral: SpectralLoss,
    pub sigma: Vec<f64>,
    psd_evaluations: usize,
}

impl Objective {
    pub fn new(weights: LossWeights, psd: PsdConfig, bands: &BandSet, sigma: Vec<f64>) -> Result<Self> {
        weights.validate()?;
        if sigma.is_empty() {
            return Err(invalid("objective needs per-channel scales"));
        }
        Ok(Self {
            weights,
            spectral: SpectralLoss::new(psd, bands)?,
            sigma,
            psd_evaluations: 0,
        })
    }

    pub fn psd_evaluations(&self) -> usize {
        self.psd_evaluations
    }

    /// `w_wave * wave + w_psd * psd`; the spectral path is skipped entirely when `w_psd == 0`.
    pub fn total(&mut self, tape: &mut Tape, pred: NodeId, target: NodeId) -> Result<LossNodes> {
        let wave = wave_loss(tape, pred, target, &self.sigma)?;
        if self.weights.psd == 0.0 {
            let total = tape.scale(wave, self.weights.wave)?;
            return Ok(LossNodes { total, wave, psd: None });
        }
        let psd = self.spectral.loss(tape, pred, target, &self.weights)?;
        self.psd_evaluations += 1;
        let total = weighted_sum(tape, &[(wave, self.weights.wave), (psd, self.weights.psd)])?;
        Ok(LossNodes {
            total,
            wave,
            psd: Some(psd),
        })
    }
}
