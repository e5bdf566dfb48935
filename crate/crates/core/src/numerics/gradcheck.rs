//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::numerics::{ParamId, ParamStore, Tape, Var};

/// Entries whose analytic and numeric magnitudes both fall below this are
/// compared by absolute difference instead of relative error.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub flagged: usize,
    pub entries: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.flagged == 0)
    }

    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_error).fold(0.0, f64::max)
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }
}

pub fn compare(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < ABSOLUTE_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Compares analytic gradients of the scalar built by `f` against
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)` for every entry of every listed parameter.
///
/// Parameter gradients in `store` are zeroed first and hold the analytic
/// gradients on return.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    f: F,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    assert!(eps > 0.0, "eps must be positive");
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        Ok(t.scalar(l))
    };

    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        tol,
    };
    for &id in params {
        let analytic = store.grad(id).clone();
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            max_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            flagged: 0,
            entries: analytic.len(),
        };
        for k in 0..analytic.len() {
            let orig = store.value(id).as_slice()[k];
            store.get_mut(id).value.as_mut_slice()[k] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).value.as_mut_slice()[k] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).value.as_mut_slice()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.as_slice()[k];
            let err = compare(a, numeric);
            if err > tol {
                check.flagged += 1;
            }
            if err > check.max_error {
                check.max_error = err;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
