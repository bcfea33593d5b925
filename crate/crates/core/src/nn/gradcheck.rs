use alloc::format;
use alloc::string::String;

use super::{NnError, ParamStore, Tape, Var};

const STEP: f64 = 1e-5;
/// Floor on the relative-error denominator so near-zero gradients compare
/// absolutely.
const FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// parameter name and flat index of the worst coordinate
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares tape gradients of every trainable parameter against central
/// differences with step 1e-5. The store's gradients are left zeroed.
pub fn finite_diff_check<F>(store: &mut ParamStore, tolerance: f64, mut build: F) -> Result<GradReport, NnError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, NnError>,
{
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        let grads = tape.backward(loss)?;
        store.accumulate(&tape, &grads);
    }
    let mut eval = |store: &ParamStore| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(NnError::NonFinite("loss".into()));
        }
        Ok(v)
    };

    let ids: alloc::vec::Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    let mut report = GradReport { max_rel_error: 0.0, worst: None, checked: 0, passed: true };
    for id in ids {
        let analytic = store.grad(id).clone();
        if !analytic.is_finite() {
            return Err(NnError::NonFinite(format!("gradient of {}", store.name(id))));
        }
        for k in 0..analytic.data().len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + STEP;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - STEP;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).into(), k));
            }
        }
    }
    store.zero_grad();
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}
