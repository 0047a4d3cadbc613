//! Finite-difference verification of the analytic gradients.
//!
//! The harness is generic over the element type: f32 checks match training
//! precision (expect ~1e-3 agreement), f64 checks de-noise the central
//! differences enough to separate a wrong adjoint from rounding (~1e-6).

use crate::element::Element;
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Coordinates where a perturbed evaluation produced NaN or Inf.
    pub non_finite_coords: Vec<usize>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.non_finite_coords.is_empty() && self.max_rel_err < tolerance
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    // The floor keeps absolute rounding noise at near-zero gradients from
    // registering as a huge relative error.
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Compares the analytic gradient of a scalar-valued function against
/// central finite differences at every coordinate of `point`.
pub fn gradient_check<E: Element, F>(
    f: F,
    point: &Tensor<E>,
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<E>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    gradient_check_at(f, point, step, &coords)
}

/// As [`gradient_check`], restricted to a subset of coordinates. Network
/// level checks sample coordinates instead of walking millions of weights.
pub fn gradient_check_at<E: Element, F>(
    f: F,
    point: &Tensor<E>,
    step: f64,
    coords: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<E>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.leaf(point.clone(), true);
        let y = f(&mut tape, x)?;
        tape.backward(y)?;
        tape.grad(x).expect("leaf requires grad").clone()
    };

    let eval = |p: Tensor<E>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p, false);
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item().as_f64())
    };

    let h = E::from_f64(step);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        non_finite_coords: Vec::new(),
        coords_checked: coords.len(),
    };
    for &i in coords {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let (fp, fm) = match (eval(plus), eval(minus)) {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => (a, b),
            _ => {
                report.non_finite_coords.push(i);
                continue;
            }
        };
        let numeric = (fp - fm) / (2.0 * step);
        let err = rel_err(analytic.data()[i].as_f64(), numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_coord = i;
            report.worst_analytic = analytic.data()[i].as_f64();
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
