//! Central finite-difference gradient oracle.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDiffReport {
    /// max over checked elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Elements whose difference interval crosses a relu/pool/abs switch.
    pub skipped_at_kinks: usize,
}

fn evaluate<R, F>(f: &F, x: &Tensor<R>) -> Result<(f64, u64)>
where
    R: Real,
    F: Fn(&mut Tape<R>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone())?;
    let out = f(&mut tape, xv)?;
    let value = tape.value(out).item()?.f64();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    Ok((value, tape.kink_signature()))
}

/// Compares the tape gradient of `f` at `x` against central differences.
///
/// `f` builds a scalar from the leaf it is handed. Elements whose `±step`
/// interval changes any piecewise-linear switching decision are not
/// differentiable there and are counted in `skipped_at_kinks` instead.
pub fn finite_diff_report<R, F>(f: F, x: &Tensor<R>, step: f64) -> Result<FiniteDiffReport>
where
    R: Real,
    F: Fn(&mut Tape<R>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_diff_report_at(f, x, step, &all)
}

/// Like [`finite_diff_report`] but only probes the listed elements.
pub fn finite_diff_report_at<R, F>(f: F, x: &Tensor<R>, step: f64, indices: &[usize]) -> Result<FiniteDiffReport>
where
    R: Real,
    F: Fn(&mut Tape<R>, Var) -> Result<Var>,
{
    if let Some(&bad) = indices.iter().find(|&&j| j >= x.numel()) {
        return Err(Error::InvalidArgument(format!("element {bad} out of range for {} elements", x.numel())));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone())?;
    let out = f(&mut tape, xv)?;
    let base = tape.value(out).item()?.f64();
    if !base.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    let signature = tape.kink_signature();
    let analytic = tape.backward(out)?.expect(xv)?.clone();

    let (again, _) = evaluate(&f, x)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic { first: base, second: again });
    }

    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_at_kinks: 0,
    };
    let mut probe = x.clone();
    for &j in indices {
        let orig = x.data()[j];
        let hi = orig + R::of(step);
        let lo = orig - R::of(step);
        probe.data_mut()[j] = hi;
        let (f_hi, sig_hi) = evaluate(&f, &probe)?;
        probe.data_mut()[j] = lo;
        let (f_lo, sig_lo) = evaluate(&f, &probe)?;
        probe.data_mut()[j] = orig;
        if sig_hi != signature || sig_lo != signature {
            report.skipped_at_kinks += 1;
            continue;
        }
        // divide by the step actually taken after rounding
        let numeric = (f_hi - f_lo) / (hi - lo).f64();
        let a = analytic.data()[j].f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_index = Some(j);
        }
    }
    Ok(report)
}

/// Maximum relative error between the tape gradient and central differences.
pub fn finite_diff_check<R, F>(f: F, x: &Tensor<R>, step: f64) -> Result<f64>
where
    R: Real,
    F: Fn(&mut Tape<R>, Var) -> Result<Var>,
{
    Ok(finite_diff_report(f, x, step)?.max_rel_error)
}
