//! Gradient evaluation and central-difference verification.

use crate::error::{Error, Result};
use crate::numcore::ParamVector;

/// A scalar objective over a parameter vector with an exact gradient.
pub trait Objective {
    fn value(&self, params: &ParamVector) -> Result<f64>;

    fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, ParamVector)>;
}

/// Objective assembled from a pair of closures.
pub struct FnObjective<F, G> {
    value: F,
    grad: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&ParamVector) -> Result<f64>,
    G: Fn(&ParamVector) -> Result<ParamVector>,
{
    pub fn new(value: F, grad: G) -> Self {
        Self { value, grad }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&ParamVector) -> Result<f64>,
    G: Fn(&ParamVector) -> Result<ParamVector>,
{
    fn value(&self, params: &ParamVector) -> Result<f64> {
        (self.value)(params)
    }

    fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        Ok(((self.value)(params)?, (self.grad)(params)?))
    }
}

/// Exact gradient of `loss` at `at`. A non-finite loss value is an error.
pub fn grad(loss: &dyn Objective, at: &ParamVector) -> Result<ParamVector> {
    let (value, g) = loss.value_and_grad(at)?;
    if !value.is_finite() {
        return Err(Error::GradientEvaluation(value));
    }
    if !g.same_structure(at) {
        return Err(Error::invalid("gradient structure differs from parameters"));
    }
    if !g.is_finite() {
        return Err(Error::GradientEvaluation(f64::NAN));
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct SegmentReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Index within the segment of the worst coordinate.
    pub worst_index: usize,
    /// Coordinates (within the segment) whose relative error exceeds tolerance.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub segments: Vec<SegmentReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.segments.iter().all(|s| s.flagged.is_empty())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the analytic gradient against central differences
/// `(L(θ+he) − L(θ−he)) / 2h` for every coordinate.
pub fn finite_diff_check(
    loss: &dyn Objective,
    at: &ParamVector,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let analytic = grad(loss, at)?;
    finite_diff_against(loss, at, &analytic, step, tol)
}

/// Same as [`finite_diff_check`] with a caller-supplied gradient; used to
/// verify that injected faults are caught.
pub fn finite_diff_against(
    loss: &dyn Objective,
    at: &ParamVector,
    analytic: &ParamVector,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    finite_diff_multi_step(loss, at, analytic, &[step], tol)
}

/// Central differences at several steps; each coordinate is scored by the
/// step that agrees best with the analytic value. Truncation error dominates
/// at large steps and cancellation at small ones, so no single step suits
/// every coordinate.
pub fn finite_diff_multi_step(
    loss: &dyn Objective,
    at: &ParamVector,
    analytic: &ParamVector,
    steps: &[f64],
    tol: f64,
) -> Result<GradCheckReport> {
    if steps.is_empty() || steps.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::invalid(format!(
            "finite-difference steps must be > 0, got {steps:?}"
        )));
    }
    let mut probe = at.clone();
    let mut segments = Vec::with_capacity(at.num_segments());
    let mut flat = 0;
    for (name, seg) in at.segments() {
        let mut report = SegmentReport {
            name: name.to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            flagged: Vec::new(),
        };
        for i in 0..seg.len() {
            let x = at.coord(flat);
            let mut err = f64::INFINITY;
            for &step in steps {
                probe.set_coord(flat, x + step);
                let up = loss.value(&probe)?;
                probe.set_coord(flat, x - step);
                let down = loss.value(&probe)?;
                probe.set_coord(flat, x);
                if !up.is_finite() || !down.is_finite() {
                    return Err(Error::GradientEvaluation(if up.is_finite() {
                        down
                    } else {
                        up
                    }));
                }
                let numeric = (up - down) / (2.0 * step);
                err = err.min(relative_error(analytic.coord(flat), numeric));
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = i;
            }
            if err > tol {
                report.flagged.push(i);
            }
            flat += 1;
        }
        segments.push(report);
    }
    Ok(GradCheckReport { segments, tol })
}
