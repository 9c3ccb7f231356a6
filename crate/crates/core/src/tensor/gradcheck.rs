//! Central finite-difference checks for tape gradients.
//!
//! Non-scalar outputs are projected to a scalar with fixed random weights, so
//! one backward pass checks the full Jacobian-vector product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NodeId, Tape, Tensor};
use crate::error::Result;

/// Step used by [`check`].
pub const STEP: f64 = 1e-5;

/// Denominator floor: gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `max |a - n| / max(|a|, |n|, FLOOR)` over every checked coordinate.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Relative difference with the [`FLOOR`] guard.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

fn project(tape: &mut Tape, y: NodeId, seed: u64) -> Result<NodeId> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    if n == 1 {
        return tape.sum_all(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = tape.constant(Tensor::new(shape, r)?)?;
    let p = tape.mul(y, r)?;
    tape.sum_all(p)
}

fn eval<F>(inputs: &[Tensor], f: &F, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids = inputs
        .iter()
        .map(|t| tape.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let y = f(&mut tape, &ids)?;
    let s = project(&mut tape, y, seed)?;
    Ok(tape.value(s).data()[0])
}

/// Compares analytic and numeric gradients of `f` with respect to every input.
pub fn check_many<F>(inputs: &[Tensor], f: F, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids = inputs
        .iter()
        .map(|t| tape.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let y = f(&mut tape, &ids)?;
    let s = project(&mut tape, y, seed)?;
    let grads = tape.backward(s)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (slot, &id) in ids.iter().enumerate() {
        let analytic = grads.wrt(id);
        for k in 0..inputs[slot].len() {
            let orig = work[slot].data()[k];
            work[slot].data_mut()[k] = orig + STEP;
            let up = eval(&work, &f, seed)?;
            work[slot].data_mut()[k] = orig - STEP;
            let down = eval(&work, &f, seed)?;
            work[slot].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[k];
            report.max_rel_error = report.max_rel_error.max(rel_error(a, numeric));
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Single-input form of [`check_many`].
pub fn check<F>(input: &Tensor, f: F, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    check_many(std::slice::from_ref(input), |t, ids| f(t, ids[0]), seed)
}
