use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dsp::{BandSet, PsdConfig, PsdEstimate, Welch};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::EPS;

/// `a / max(b, eps)` for non-negative `b`.
fn ratio(a: f64, b: f64) -> f64 {
    a / b.max(EPS)
}

fn check_same(op: &'static str, a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() || a.is_empty() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn pop_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Per-channel mean absolute error, in signal units.
pub fn raw_mae(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_same("raw_mae", &pred, &target)?;
    Ok(pred
        .rows()
        .into_iter()
        .zip(target.rows())
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
        .collect())
}

/// Per-channel MAE divided by the channel's training standard deviation.
pub fn nmae(pred: ArrayView2<f64>, target: ArrayView2<f64>, sigma: &[f64]) -> Result<Vec<f64>> {
    if sigma.len() != pred.nrows() {
        return Err(shape_err("nmae", format!("{} scales for {} channels", sigma.len(), pred.nrows())));
    }
    Ok(raw_mae(pred, target)?
        .into_iter()
        .zip(sigma)
        .map(|(m, &s)| ratio(m, s))
        .collect())
}

/// Pearson correlation of two equal-length sequences; 0 when either is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let den = (saa * sbb).sqrt();
    if den <= EPS * EPS {
        return 0.0;
    }
    sab / den
}

/// Per-channel Pearson correlation.
pub fn pearson(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_same("pearson", &pred, &target)?;
    Ok(pred
        .rows()
        .into_iter()
        .zip(target.rows())
        .map(|(p, t)| correlation(&p.to_vec(), &t.to_vec()))
        .collect())
}

/// `ln(max(v, eps))`: the guard only engages for (near-)zero power, so scale
/// identities hold exactly for ordinary spectra.
fn safe_ln(v: f64) -> f64 {
    v.max(EPS).ln()
}

fn log_grid(s: ArrayView2<f64>) -> Array2<f64> {
    s.mapv(safe_ln)
}

/// Root mean square of the log-power difference over channels and bins.
pub fn lsd(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_same("lsd", &pred, &target)?;
    let d = log_grid(pred) - log_grid(target);
    Ok((d.mapv(|v| v * v).sum() / d.len() as f64).sqrt())
}

/// Mean over channels of `KL(p || p_hat)` between frequency-normalized spectra.
pub fn psd_kl(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_same("psd_kl", &pred, &target)?;
    let norm = |row: Vec<f64>| {
        let total: f64 = row.iter().sum();
        row.into_iter().map(move |v| ratio(v, total))
    };
    let per: Vec<f64> = pred
        .rows()
        .into_iter()
        .zip(target.rows())
        .map(|(q, p)| {
            norm(p.to_vec())
                .zip(norm(q.to_vec()))
                .map(|(p, q)| if p > 0.0 { p * (safe_ln(p) - safe_ln(q)) } else { 0.0 })
                .sum::<f64>()
        })
        .collect();
    Ok(mean(&per))
}

/// Pearson correlation of the flattened log-spectral grids.
pub fn cftc(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_same("cftc", &pred, &target)?;
    let a: Vec<f64> = log_grid(pred).iter().copied().collect();
    let b: Vec<f64> = log_grid(target).iter().copied().collect();
    if pop_std(&a) == 0.0 || pop_std(&b) == 0.0 {
        log::warn!("cross-frequency correlation of a constant log-spectral grid is undefined; reporting 0");
        return Ok(0.0);
    }
    Ok(correlation(&a, &b))
}

/// Mean pairwise Euclidean distance between channel rows.
fn mean_pairwise(rows: &Array2<f64>) -> f64 {
    let n = rows.nrows();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let d = &rows.row(i) - &rows.row(j);
            total += d.dot(&d).sqrt();
            pairs += 1;
        }
    }
    total / pairs.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sci {
    pub sci: f64,
    pub pair: f64,
    pub topo: f64,
    /// Per-band ratio of predicted to true cross-channel std of log band power.
    pub btvr: Vec<f64>,
}

/// Spectral-collapse index: half pairwise spectral diversity loss, half
/// shrinkage of band topographies.
pub fn sci(pred: ArrayView2<f64>, target: ArrayView2<f64>, freqs: &[f64], bands: &BandSet) -> Result<Sci> {
    check_same("sci", &pred, &target)?;
    if freqs.len() != pred.ncols() {
        return Err(shape_err("sci", format!("{} frequencies for {} bins", freqs.len(), pred.ncols())));
    }
    let pair = (1.0 - ratio(mean_pairwise(&log_grid(pred)), mean_pairwise(&log_grid(target)))).max(0.0);
    let band_logs = |s: &ArrayView2<f64>, k: usize| -> Vec<f64> {
        s.rows()
            .into_iter()
            .map(|r| bands.log_power(&r.to_vec(), freqs, k))
            .collect()
    };
    let btvr: Vec<f64> = (0..bands.len())
        .map(|k| ratio(pop_std(&band_logs(&pred, k)), pop_std(&band_logs(&target, k))))
        .collect();
    let topo = mean(&btvr.iter().map(|b| (1.0 - b).max(0.0)).collect::<Vec<_>>());
    Ok(Sci {
        sci: 0.5 * pair + 0.5 * topo,
        pair,
        topo,
        btvr,
    })
}

/// Every metric for one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub subject: String,
    pub nmae: Vec<f64>,
    pub raw_mae: Vec<f64>,
    pub pearson: Vec<f64>,
    pub lsd: f64,
    pub psd_kl: f64,
    pub cftc: f64,
    pub sci: Sci,
}

/// Scalar metric names accepted by [`SegmentMetrics::scalar`], with "lower is better" flags.
pub const SCALAR_METRICS: [(&str, bool); 7] = [
    ("nmae", true),
    ("raw_mae", true),
    ("pearson", false),
    ("lsd", true),
    ("psd_kl", true),
    ("sci", true),
    ("cftc", false),
];

impl SegmentMetrics {
    /// Pooled value of a named metric (channel means for per-channel metrics,
    /// band mean for `btvr`).
    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "nmae" => mean(&self.nmae),
            "raw_mae" => mean(&self.raw_mae),
            "pearson" => mean(&self.pearson),
            "lsd" => self.lsd,
            "psd_kl" => self.psd_kl,
            "cftc" => self.cftc,
            "sci" => self.sci.sci,
            "sci_pair" => self.sci.pair,
            "sci_topo" => self.sci.topo,
            "btvr" => mean(&self.sci.btvr),
            other => return Err(invalid(format!("unknown metric `{other}`"))),
        })
    }
}

/// Computes [`SegmentMetrics`] with fixed spectral settings and channel scales.
pub struct Evaluator {
    welch: Welch,
    bands: BandSet,
    sigma: Vec<f64>,
}

impl Evaluator {
    pub fn new(psd: PsdConfig, bands: BandSet, sigma: Vec<f64>) -> Result<Self> {
        Ok(Self {
            welch: Welch::new(psd)?,
            bands,
            sigma,
        })
    }

    pub fn welch(&self) -> &Welch {
        &self.welch
    }

    pub fn bands(&self) -> &BandSet {
        &self.bands
    }

    pub fn spectra(&self, x: ArrayView2<f64>) -> Result<PsdEstimate> {
        self.welch.psd_rows(x)
    }

    /// Metrics of a raw-scale prediction against raw-scale targets (`channels x T`).
    pub fn segment(&self, subject: &str, pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<SegmentMetrics> {
        check_same("segment metrics", &pred, &target)?;
        let sp = self.spectra(pred)?;
        let st = self.spectra(target)?;
        self.from_parts(subject, pred, target, &sp.power, &st.power)
    }

    /// Spectral metrics only (time-domain entries left empty).
    pub fn spectral(&self, subject: &str, pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<SegmentMetrics> {
        check_same("spectral metrics", &pred, &target)?;
        let sp = self.spectra(pred)?;
        let st = self.spectra(target)?;
        let freqs = self.welch.freqs();
        Ok(SegmentMetrics {
            subject: subject.to_string(),
            nmae: vec![],
            raw_mae: vec![],
            pearson: vec![],
            lsd: lsd(sp.power.view(), st.power.view())?,
            psd_kl: psd_kl(sp.power.view(), st.power.view())?,
            cftc: cftc(sp.power.view(), st.power.view())?,
            sci: sci(sp.power.view(), st.power.view(), &freqs, &self.bands)?,
        })
    }

    fn from_parts(
        &self,
        subject: &str,
        pred: ArrayView2<f64>,
        target: ArrayView2<f64>,
        sp: &Array2<f64>,
        st: &Array2<f64>,
    ) -> Result<SegmentMetrics> {
        let freqs = self.welch.freqs();
        Ok(SegmentMetrics {
            subject: subject.to_string(),
            nmae: nmae(pred, target, &self.sigma)?,
            raw_mae: raw_mae(pred, target)?,
            pearson: pearson(pred, target)?,
            lsd: lsd(sp.view(), st.view())?,
            psd_kl: psd_kl(sp.view(), st.view())?,
            cftc: cftc(sp.view(), st.view())?,
            sci: sci(sp.view(), st.view(), &freqs, &self.bands)?,
        })
    }
}

/// Cross-subject summary of one scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Per-subject means, sorted by subject id.
    pub subjects: Vec<(String, f64)>,
    pub mean: f64,
    /// Sample standard deviation across subjects (0 for a single subject).
    pub std: f64,
}

/// Averages values within each subject first, then across subjects.
pub fn subject_aggregate(values: &[(String, f64)]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(invalid("no segments to aggregate"));
    }
    let mut groups: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (s, v) in values {
        let e = groups.entry(s.as_str()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let subjects: Vec<(String, f64)> = groups
        .into_iter()
        .map(|(s, (sum, n))| (s.to_string(), sum / n as f64))
        .collect();
    let means: Vec<f64> = subjects.iter().map(|(_, v)| *v).collect();
    let m = mean(&means);
    let std = if means.len() > 1 {
        (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Aggregate { subjects, mean: m, std })
}

/// Subject-level aggregate of a named scalar over segment reports.
pub fn aggregate_metric(reports: &[SegmentMetrics], name: &str) -> Result<Aggregate> {
    let values = reports
        .iter()
        .map(|r| Ok((r.subject.clone(), r.scalar(name)?)))
        .collect::<Result<Vec<_>>>()?;
    subject_aggregate(&values)
}

/// Per-channel subject-level means for a per-channel metric.
pub fn aggregate_channels(reports: &[SegmentMetrics], name: &str) -> Result<Vec<Aggregate>> {
    let pick = |r: &SegmentMetrics| -> Result<Vec<f64>> {
        Ok(match name {
            "nmae" => r.nmae.clone(),
            "raw_mae" => r.raw_mae.clone(),
            "pearson" => r.pearson.clone(),
            other => return Err(invalid(format!("`{other}` is not a per-channel metric"))),
        })
    };
    let first = pick(reports.first().ok_or_else(|| invalid("no segments to aggregate"))?)?;
    let mut per_channel: Vec<Vec<(String, f64)>> = vec![Vec::new(); first.len()];
    for r in reports {
        for (c, v) in pick(r)?.into_iter().enumerate() {
            per_channel
                .get_mut(c)
                .ok_or_else(|| invalid("segments disagree on channel count"))?
                .push((r.subject.clone(), v));
        }
    }
    per_channel.iter().map(|v| subject_aggregate(v)).collect()
}
