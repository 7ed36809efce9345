//! Plain gradient descent on the penalised energy. Used directly and as the
//! fallback route for non-quadratic distance kinds.

use crate::error::{Error, Result};
use crate::scm::{Antecedent, Scm};
use crate::vector::StructuredVector;

use super::{
    energy_grad, finish_result, BacktrackingConfig, CounterfactualResult,
    GRADIENT_CONVERGENCE_TOL,
};

pub(crate) fn run_first_order(
    scm: &Scm,
    x: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
    free_cols: Option<&[usize]>,
) -> Result<CounterfactualResult> {
    scm.check_antecedent(antecedent)?;
    let u0 = scm.abduct(x)?;
    let mut u = u0.clone();
    let eta = config.step_size();
    let mask = free_cols.map(|cols| {
        let mut keep = vec![false; u0.len()];
        for &c in cols {
            keep[c] = true;
        }
        keep
    });

    let (e0, mut g) = energy_grad(scm, &u, &u0, antecedent, config)?;
    if !e0.is_finite() {
        return Err(Error::NonFinite {
            context: "first-order energy".to_string(),
            step: 0,
        });
    }
    if let Some(keep) = &mask {
        for (i, gv) in g.iter_mut().enumerate() {
            if !keep[i] {
                *gv = 0.0;
            }
        }
    }
    let mut trace = vec![e0];
    let mut iterations = 0;
    for t in 1..=config.iterations() {
        if g.amax() < GRADIENT_CONVERGENCE_TOL {
            break;
        }
        for (uv, gv) in u.flat_mut().iter_mut().zip(g.iter()) {
            *uv -= eta * gv;
        }
        if !u.is_finite() {
            return Err(Error::NonFinite {
                context: "first-order iterate".to_string(),
                step: t,
            });
        }
        let (e, g_next) = energy_grad(scm, &u, &u0, antecedent, config)?;
        if !e.is_finite() {
            return Err(Error::NonFinite {
                context: "first-order energy".to_string(),
                step: t,
            });
        }
        g = g_next;
        if let Some(keep) = &mask {
            for (i, gv) in g.iter_mut().enumerate() {
                if !keep[i] {
                    *gv = 0.0;
                }
            }
        }
        trace.push(e);
        iterations = t;
    }
    finish_result(scm, u, antecedent, trace, iterations)
}

/// Gradient-descent variant of the mode solver. Stops early once the
/// gradient's infinity norm falls below 1e-10.
pub fn mode_deepbc_first_order(
    scm: &Scm,
    x: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
) -> Result<CounterfactualResult> {
    run_first_order(scm, x, antecedent, config, None)
}
