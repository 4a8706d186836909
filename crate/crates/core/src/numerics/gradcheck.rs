//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{BicError, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub eps: f64,
    /// Pass threshold on the per-parameter max relative error.
    pub tol: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (evenly strided).
    pub max_coords: Option<usize>,
}

impl GradCheckConfig {
    pub fn with_tol(tol: f64) -> Self {
        GradCheckConfig {
            tol,
            ..Self::default()
        }
    }
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            tol: 1e-4,
            floor: 1e-6,
            max_coords: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop gradients of the scalar built by `f` against central
/// differences for every parameter in `params`. `f` must be deterministic.
pub fn grad_check<F>(
    params: &mut ParamStore<f64>,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    if !tape.value(out).all_finite() {
        return Err(BicError::Numeric {
            param: "<output>".into(),
            message: "objective is not finite".into(),
        });
    }
    let mut grads = tape.backward(out)?;
    let analytic = bound.collect(&mut grads);

    let mut eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let b = params.bind_frozen(&mut t);
        let o = f(&mut t, &b)?;
        Ok(t.value(o).item())
    };

    let ids: Vec<_> = params.ids().collect();
    let mut checks = Vec::with_capacity(ids.len());
    for id in ids {
        let name = params.name(id).to_string();
        let n = params.get(id).len();
        let stride = cfg.max_coords.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            coords_checked: 0,
        };
        for i in (0..n).step_by(stride) {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + cfg.eps;
            let plus = eval(params)?;
            params.get_mut(id).data_mut()[i] = orig - cfg.eps;
            let minus = eval(params)?;
            params.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g.data()[i]);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(BicError::Numeric {
                    param: name,
                    message: format!("non-finite gradient at index {i} (analytic {a}, numeric {numeric})"),
                });
            }
            let err = relative_error(a, numeric, cfg.floor);
            check.coords_checked += 1;
            if err > check.max_rel_error || check.coords_checked == 1 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        checks.push(check);
    }
    Ok(GradCheckReport {
        tol: cfg.tol,
        params: checks,
    })
}
