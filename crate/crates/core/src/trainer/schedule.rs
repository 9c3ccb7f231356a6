use serde::{Deserialize, Serialize};

/// Tracks validation losses against the best so far. An entry improves when it
/// is below `best * (1 - threshold)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub stop_patience: usize,
    pub threshold: f64,
    pub best: f64,
    /// Consecutive non-improving entries since the last improvement.
    pub stale: usize,
    /// Non-improving entries since the last improvement or reduction.
    pub since_reduce: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub reduce: bool,
    pub stop: bool,
}

impl Plateau {
    /// `reference` is the loss everything must beat first (the pre-training validation loss).
    pub fn new(reference: f64, factor: f64, patience: usize, stop_patience: usize, threshold: f64) -> Self {
        Self {
            factor,
            patience,
            stop_patience,
            threshold,
            best: reference,
            stale: 0,
            since_reduce: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        let improved = loss < self.best - self.threshold * self.best.abs();
        if improved {
            self.best = loss;
            self.stale = 0;
            self.since_reduce = 0;
        } else {
            self.stale += 1;
            self.since_reduce += 1;
        }
        let reduce = self.since_reduce >= self.patience;
        if reduce {
            self.since_reduce = 0;
        }
        Verdict {
            improved,
            reduce,
            stop: self.stale >= self.stop_patience,
        }
    }
}

/// Replays a history: returns the number of learning-rate reductions and whether
/// training would have stopped by the end.
pub fn replay(reference: f64, history: &[f64], factor: f64, patience: usize, stop_patience: usize, threshold: f64) -> (usize, bool) {
    let mut p = Plateau::new(reference, factor, patience, stop_patience, threshold);
    let mut reductions = 0;
    let mut stop = false;
    for &h in history {
        let v = p.observe(h);
        reductions += v.reduce as usize;
        stop |= v.stop;
    }
    (reductions, stop)
}
