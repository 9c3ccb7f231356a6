use ndarray::Array2;

use crate::dsp::BandPass;
use crate::error::{invalid, Result};

/// One multichannel window in microvolts.
///
/// Samples are stored as `f32`, the on-disk precision, so a store round trip
/// is bit-exact. Computation happens in `f64` via [`Segment::sources_f64`] and
/// [`Segment::targets_f64`].
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub subject: String,
    pub fs: f64,
    /// `4 x T`, rows Fp1, Fp2, F7, F8.
    pub sources: Array2<f32>,
    /// `13 x T` in target row order, when known.
    pub targets: Option<Array2<f32>>,
}

impl Segment {
    pub fn new(subject: impl Into<String>, fs: f64, sources: Array2<f32>, targets: Option<Array2<f32>>) -> Result<Self> {
        let seg = Self {
            subject: subject.into(),
            fs,
            sources,
            targets,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.nrows() != 4 {
            return Err(invalid(format!("expected 4 source rows, got {}", self.sources.nrows())));
        }
        if let Some(t) = &self.targets {
            if t.nrows() != 13 || t.ncols() != self.sources.ncols() {
                return Err(invalid(format!(
                    "targets {:?} do not match sources {:?}",
                    t.dim(),
                    self.sources.dim()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("non-finite target sample in subject {}", self.subject)));
            }
        }
        if self.sources.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite source sample in subject {}", self.subject)));
        }
        if !(self.fs > 0.0) {
            return Err(invalid("sampling rate must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sources.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.ncols() == 0
    }

    pub fn sources_f64(&self) -> Array2<f64> {
        self.sources.mapv(f64::from)
    }

    pub fn targets_f64(&self) -> Option<Array2<f64>> {
        self.targets.as_ref().map(|t| t.mapv(f64::from))
    }

    /// All 17 rows (sources then targets) in `f64`.
    pub fn all_rows(&self) -> Result<Array2<f64>> {
        let t = self
            .targets
            .as_ref()
            .ok_or_else(|| invalid(format!("segment of subject {} has no targets", self.subject)))?;
        let mut out = Array2::zeros((17, self.len()));
        for (r, row) in self.sources.rows().into_iter().chain(t.rows()).enumerate() {
            out.row_mut(r).iter_mut().zip(row).for_each(|(d, &s)| *d = f64::from(s));
        }
        Ok(out)
    }
}

/// Converts an `f64` grid back to storage precision.
pub fn to_f32(a: &Array2<f64>) -> Array2<f32> {
    a.mapv(|v| v as f32)
}

/// Zero-phase band-pass of every row of a segment.
pub fn bandpass_segment(seg: &Segment, lo: f64, hi: f64) -> Result<Segment> {
    let filter = BandPass::design(4, lo, hi, seg.fs)?;
    let run = |a: &Array2<f32>| -> Result<Array2<f32>> {
        let mut out = Array2::zeros(a.dim());
        for (r, row) in a.rows().into_iter().enumerate() {
            let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
            let y = filter.filtfilt(&x)?;
            out.row_mut(r).iter_mut().zip(y).for_each(|(d, v)| *d = v as f32);
        }
        Ok(out)
    };
    Segment::new(
        seg.subject.clone(),
        seg.fs,
        run(&seg.sources)?,
        seg.targets.as_ref().map(run).transpose()?,
    )
}

/// Cuts a continuous `channels x samples` recording into non-overlapping windows of `len` samples.
pub fn segment_recording(
    subject: &str,
    fs: f64,
    sources: &Array2<f32>,
    targets: Option<&Array2<f32>>,
    len: usize,
) -> Result<Vec<Segment>> {
    if len == 0 {
        return Err(invalid("segment length must be positive"));
    }
    let count = sources.ncols() / len;
    (0..count)
        .map(|k| {
            let cols = ndarray::s![.., k * len..(k + 1) * len];
            Segment::new(
                subject,
                fs,
                sources.slice(cols).to_owned(),
                targets.map(|t| t.slice(cols).to_owned()),
            )
        })
        .collect()
}
