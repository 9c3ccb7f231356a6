use crate::dataset::Montage;
use crate::error::{invalid, Result};

/// Distance prior over the 13 targets and the derived neighbour lists.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialPrior {
    pub tau: f64,
    /// `13 x 13`, row-major.
    pub prior: Vec<f64>,
    /// `neighbors[t]` lists the targets with the largest prior, self excluded,
    /// ties broken by lower index.
    pub neighbors: Vec<Vec<usize>>,
}

/// Lower median of the pairwise squared projected distances, divided by ln 2.
pub fn default_tau(montage: &Montage) -> Result<f64> {
    let t = montage.targets();
    let mut d: Vec<f64> = Vec::new();
    for a in 0..t.len() {
        for b in a + 1..t.len() {
            d.push(montage.plane_dist2(t[a], t[b]));
        }
    }
    if d.is_empty() {
        return Err(invalid("prior needs at least two targets"));
    }
    d.sort_by(f64::total_cmp);
    Ok(d[(d.len() - 1) / 2] / std::f64::consts::LN_2)
}

impl SpatialPrior {
    pub fn new(montage: &Montage, tau: Option<f64>, k: usize) -> Result<Self> {
        let t = montage.targets();
        let n = t.len();
        for a in 0..n {
            for b in a + 1..n {
                if montage.plane_dist2(t[a], t[b]) < 1e-12 {
                    return Err(invalid(format!(
                        "electrodes {} and {} coincide",
                        montage.names()[t[a]],
                        montage.names()[t[b]]
                    )));
                }
            }
        }
        if k == 0 || k >= n {
            return Err(invalid(format!("neighbour count {k} must lie in 1..{}", n - 1)));
        }
        let tau = match tau {
            Some(v) if v > 0.0 => v,
            Some(v) => return Err(invalid(format!("prior temperature {v} must be positive"))),
            None => default_tau(montage)?,
        };
        let mut prior = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                prior[a * n + b] = (-montage.plane_dist2(t[a], t[b]) / tau).exp();
            }
        }
        let neighbors = (0..n)
            .map(|a| {
                let mut others: Vec<usize> = (0..n).filter(|&b| b != a).collect();
                others.sort_by(|&x, &y| prior[a * n + y].total_cmp(&prior[a * n + x]).then(x.cmp(&y)));
                others.truncate(k);
                others
            })
            .collect();
        Ok(Self { tau, prior, neighbors })
    }

    pub fn targets(&self) -> usize {
        self.neighbors.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.prior[a * self.targets() + b]
    }
}
