//! Central finite-difference gradient checker.
//!
//! Every hand-derived gradient in the stack is validated against this
//! oracle: central differences with step 1e-5 at 64-bit precision.

use crate::error::Result;

const FD_STEP: f64 = 1e-5;

/// Outcome of a finite-difference sweep over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Number of coordinates checked.
    pub checked: usize,
    /// Largest relative error observed.
    pub max_rel_err: f64,
    /// Name of the span containing the worst coordinate.
    pub worst_name: String,
    /// Offset of the worst coordinate within its span.
    pub worst_coord: usize,
    /// Tolerance the sweep was run at.
    pub tol: f64,
    /// Whether every coordinate met the tolerance.
    pub passed: bool,
}

/// Checks `analytic` against central finite differences of `f` at `params`.
///
/// `spans` names consecutive segments of the flat vector (for error
/// reporting); the span lengths must sum to `params.len()`. The error
/// measure is `|fd - a| / (|fd| + |a| + 1e-4)`: for gradients of ordinary
/// magnitude this is the usual symmetric relative error, while the additive
/// term keeps coordinates far below the finite-difference noise floor from
/// producing spurious failures.
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    analytic: &[f64],
    spans: &[(String, usize)],
    tol: f64,
) -> Result<GradCheckReport> {
    assert_eq!(params.len(), analytic.len(), "analytic gradient length mismatch");
    let span_total: usize = spans.iter().map(|(_, n)| n).sum();
    assert_eq!(span_total, params.len(), "span lengths must cover the parameter vector");

    let mut probe = params.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst = 0usize;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = f(&probe)?;
        probe[i] = orig - FD_STEP;
        let down = f(&probe)?;
        probe[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (fd - a).abs() / (fd.abs() + a.abs() + 1e-4);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = i;
        }
    }

    let (worst_name, worst_coord) = resolve_span(spans, worst);
    Ok(GradCheckReport {
        checked: params.len(),
        max_rel_err,
        worst_name,
        worst_coord,
        tol,
        passed: max_rel_err <= tol,
    })
}

fn resolve_span(spans: &[(String, usize)], flat_index: usize) -> (String, usize) {
    let mut offset = 0;
    for (name, len) in spans {
        if flat_index < offset + len {
            return (name.clone(), flat_index - offset);
        }
        offset += len;
    }
    ("<unknown>".to_string(), flat_index)
}
