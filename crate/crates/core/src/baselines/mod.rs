//! Classical interpolation from the source electrodes to the targets.
//!
//! Each method reduces to a fixed `[targets, sources]` weight matrix, so every
//! prediction is linear in the input.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dataset::Montage;
use crate::error::{invalid, shape_err, FavcError, Result};

pub const SPLINE_ORDER: u32 = 4;
pub const SPLINE_TERMS: usize = 7;
pub const SPLINE_RIDGE: f64 = 1e-5;
pub const IDW_POWER: f64 = 2.0;

/// `P_0(x) ..= P_n(x)` by Bonnet's recurrence.
pub fn legendre(x: f64, n: usize) -> Vec<f64> {
    let mut p = vec![1.0, x];
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        p.push(next);
    }
    p.truncate(n + 1);
    p
}

/// Perrin's spherical-spline kernel truncated at `n_max` terms.
pub fn legendre_g(x: f64, m: u32, n_max: usize) -> f64 {
    let p = legendre(x, n_max);
    let mut acc = 0.0;
    for (n, pn) in p.iter().enumerate().skip(1) {
        let nf = n as f64;
        acc += (2.0 * nf + 1.0) / (nf * (nf + 1.0)).powi(m as i32) * pn;
    }
    acc / (4.0 * PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Nni,
    Idw { power: f64 },
    Spline { order: u32, terms: usize, ridge: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Nni => "nni",
            Method::Idw { .. } => "idw",
            Method::Spline { .. } => "spline",
        }
    }

    /// The three comparators with their default settings.
    pub fn standard() -> [Method; 3] {
        [
            Method::Nni,
            Method::Idw { power: IDW_POWER },
            Method::Spline {
                order: SPLINE_ORDER,
                terms: SPLINE_TERMS,
                ridge: SPLINE_RIDGE,
            },
        ]
    }
}

/// Condition estimate above which the unregularized system is rescued by the ridge.
pub const SPLINE_MAX_CONDITION: f64 = 1e10;

/// Bordered spline system `[[G + ridge I, 1], [1^T, 0]]` over the sources,
/// factorized once and reused for every sample. The plain system is used when
/// it is well conditioned; otherwise the ridge is added.
#[derive(Clone, Debug)]
pub struct SplineSystem {
    pub order: u32,
    pub terms: usize,
    pub ridge: f64,
    /// Ridge actually in the factorized matrix: 0 or `ridge`.
    pub applied_ridge: f64,
    pub condition: f64,
    gram: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn bordered(gram: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let k = gram.nrows();
    let mut a = DMatrix::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = gram[(i, j)] + if i == j { ridge } else { 0.0 };
        }
        a[(i, k)] = 1.0;
        a[(k, i)] = 1.0;
    }
    a
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

impl SplineSystem {
    pub fn new(montage: &Montage, order: u32, terms: usize, ridge: f64) -> Result<Self> {
        if order == 0 || terms == 0 || !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(invalid(format!(
                "spline needs positive order/terms and non-negative ridge, got m={order}, n={terms}, ridge={ridge}"
            )));
        }
        let src = montage.sources();
        let k = src.len();
        let gram = DMatrix::from_fn(k, k, |i, j| legendre_g(montage.cos_angle(src[i], src[j]), order, terms));
        for applied in [0.0, ridge] {
            let a = bordered(&gram, applied);
            let lu = a.clone().lu();
            let Some(inv) = lu.try_inverse() else { continue };
            let condition = norm1(&a) * norm1(&inv);
            let resid = (&a * &inv - DMatrix::identity(k + 1, k + 1)).amax();
            if condition.is_finite() && condition < SPLINE_MAX_CONDITION && resid < 1e-8 {
                return Ok(Self {
                    order,
                    terms,
                    ridge,
                    applied_ridge: applied,
                    condition,
                    gram,
                    lu,
                });
            }
            log::debug!("spline system with ridge {applied} has condition {condition:.3e}");
        }
        Err(FavcError::Numerical(format!(
            "spline system singular even with ridge {ridge} for montage {}",
            montage.fingerprint()
        )))
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Spline coefficients `(c, c0)` for one vector of source values.
    pub fn coefficients(&self, values: &[f64]) -> Result<(Vec<f64>, f64)> {
        let k = self.gram.nrows();
        if values.len() != k {
            return Err(shape_err("spline", format!("expected {k} values, got {}", values.len())));
        }
        let mut rhs = DVector::zeros(k + 1);
        for (i, v) in values.iter().enumerate() {
            rhs[i] = *v;
        }
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| FavcError::Numerical("spline solve failed".into()))?;
        Ok((sol.iter().take(k).copied().collect(), sol[k]))
    }

    /// Kernel row for an arbitrary unit vector: `[g(cos theta_j) ..., 1]`.
    fn kernel_row(&self, montage: &Montage, point: usize) -> Vec<f64> {
        let mut row: Vec<f64> = montage
            .sources()
            .iter()
            .map(|&s| legendre_g(montage.cos_angle(point, s), self.order, self.terms))
            .collect();
        row.push(1.0);
        row
    }

    /// `[points, sources]` matrix mapping source values to estimates at `points`.
    pub fn weights(&self, montage: &Montage, points: &[usize]) -> Result<Array2<f64>> {
        let k = self.gram.nrows();
        // Column j of A^{-1} restricted to the value block.
        let mut cols = Vec::with_capacity(k);
        for j in 0..k {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            let (c, c0) = self.coefficients(&e)?;
            cols.push((c, c0));
        }
        let mut w = Array2::zeros((points.len(), k));
        for (r, &p) in points.iter().enumerate() {
            let kr = self.kernel_row(montage, p);
            for (j, (c, c0)) in cols.iter().enumerate() {
                w[[r, j]] = kr[..k].iter().zip(c).map(|(a, b)| a * b).sum::<f64>() + kr[k] * c0;
            }
        }
        Ok(w)
    }
}

/// Inverse-distance weights from `point` to each source; a coincident source is copied.
pub fn idw_weights(montage: &Montage, point: usize, power: f64) -> Vec<f64> {
    let d: Vec<f64> = montage.sources().iter().map(|&s| montage.chord(point, s)).collect();
    if let Some(hit) = d.iter().position(|&v| v == 0.0) {
        let mut w = vec![0.0; d.len()];
        w[hit] = 1.0;
        return w;
    }
    let raw: Vec<f64> = d.iter().map(|v| v.powf(-power)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Row index of the chord-nearest source. Distances within 1e-12 relative
/// count as ties and the earlier row wins.
pub fn nearest_source(montage: &Montage, point: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &s) in montage.sources().iter().enumerate() {
        let d = montage.chord(point, s);
        if d < best_d - 1e-12 * best_d.min(1e3) {
            best = j;
            best_d = d;
        }
    }
    best
}

/// A baseline frozen to a montage: `prediction = W X`.
#[derive(Clone, Debug)]
pub struct Interpolator {
    pub method: Method,
    weights: Array2<f64>,
}

impl Interpolator {
    pub fn new(method: Method, montage: &Montage) -> Result<Self> {
        let targets = montage.targets();
        let k = montage.sources().len();
        let weights = match method {
            Method::Nni => {
                let mut w = Array2::zeros((targets.len(), k));
                for (r, &t) in targets.iter().enumerate() {
                    w[[r, nearest_source(montage, t)]] = 1.0;
                }
                w
            }
            Method::Idw { power } => {
                if !(power > 0.0 && power.is_finite()) {
                    return Err(invalid(format!("IDW power must be positive, got {power}")));
                }
                let mut w = Array2::zeros((targets.len(), k));
                for (r, &t) in targets.iter().enumerate() {
                    for (j, v) in idw_weights(montage, t, power).into_iter().enumerate() {
                        w[[r, j]] = v;
                    }
                }
                w
            }
            Method::Spline { order, terms, ridge } => {
                SplineSystem::new(montage, order, terms, ridge)?.weights(montage, targets)?
            }
        };
        Ok(Self { method, weights })
    }

    pub fn name(&self) -> &'static str {
        self.method.name()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// `[sources, T] -> [targets, T]`.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.weights.ncols() {
            return Err(shape_err(
                "baseline",
                format!("expected {} source rows, got {}", self.weights.ncols(), x.nrows()),
            ));
        }
        if self.method == Method::Nni {
            // Exact row copies, no arithmetic.
            let mut out = Array2::zeros((self.weights.nrows(), x.ncols()));
            for (r, w) in self.weights.rows().into_iter().enumerate() {
                let j = w.iter().position(|&v| v == 1.0).unwrap_or(0);
                out.row_mut(r).assign(&x.row(j));
            }
            return Ok(out);
        }
        Ok(self.weights.dot(&x))
    }
}

/// The three standard interpolators for a montage.
pub fn standard_baselines(montage: &Montage) -> Result<Vec<Interpolator>> {
    Method::standard().into_iter().map(|m| Interpolator::new(m, montage)).collect()
}
