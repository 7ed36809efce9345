//! Mode solver: iterated constraint linearization.
//!
//! Each step linearizes the selected reduced form at the current iterate
//! and minimises the resulting quadratic exactly:
//!
//! `u_hat = (lambda^-1 W + J^T J + eps I)^+ (lambda^-1 W u0 + J^T x_tilde)`
//!
//! with `x_tilde = x*_S + J u_bar - F_S(u_bar)`. For `eps = 0` the system
//! matrix is nonsingular (W is positive diagonal), and the solve is routed
//! through the equivalent dual system
//!
//! `(lambda^-1 I + J W^-1 J^T) gamma = x_tilde - J u0`, `u_hat = u0 + W^-1 J^T gamma`
//!
//! which is algebraically identical but keeps the condition number bounded
//! by the antecedent block instead of `lambda`, so penalty weights up to
//! 1e9 stay accurate. With explicit damping the primal form is solved
//! directly, since `eps I` changes the two systems in different ways.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::linalg::{pinv_solve_sym, PINV_RELATIVE_CUTOFF};
use crate::scm::{Antecedent, Scm};
use crate::vector::StructuredVector;

use super::first_order::run_first_order;
use super::{
    check_latent_layouts, energy, finish_result, BacktrackingConfig, CounterfactualResult,
    ENERGY_CONVERGENCE_TOL, OSCILLATION_RETRY_DAMPING, OSCILLATION_RUN,
};

/// Latent coordinate indices covered by `ids`, sorted and deduplicated.
pub(crate) fn latent_columns(scm: &Scm, ids: &[NodeId]) -> Result<Vec<usize>> {
    let layout = scm.latent_layout();
    let mut cols = BTreeSet::new();
    for &id in ids {
        let pos = layout
            .position(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        let off = layout.offset_at(pos);
        for k in 0..layout.dim_at(pos) {
            cols.insert(off + k);
        }
    }
    Ok(cols.into_iter().collect())
}

/// One closed-form linearization step, optionally restricted to a subset of
/// latent coordinates (the rest stay bitwise at the factual latents).
pub(crate) fn linearized_step(
    scm: &Scm,
    u_bar: &StructuredVector,
    u_factual: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
    free_cols: Option<&[usize]>,
) -> Result<StructuredVector> {
    let ids = antecedent.ids();
    let (x_bar, jac) = scm.forward_with_jacobian(u_bar, &ids)?;
    let f_bar = scm.stack_blocks(&x_bar, &ids)?;
    let target = antecedent.stacked_values();

    let all_cols: Vec<usize>;
    let cols: &[usize] = match free_cols {
        Some(c) => c,
        None => {
            all_cols = (0..jac.ncols()).collect();
            &all_cols
        }
    };
    let s = target.len();
    let j_f = jac.select_columns(cols.iter());
    let w_full = config.latent_weight_vector(scm);
    let w_f = DVector::from_iterator(cols.len(), cols.iter().map(|&c| w_full[c]));
    let u_bar_f = DVector::from_iterator(cols.len(), cols.iter().map(|&c| u_bar.flat()[c]));
    let u0_f = DVector::from_iterator(cols.len(), cols.iter().map(|&c| u_factual.flat()[c]));

    let lambda = config.lambda();
    let mut u_hat = u_factual.clone();
    if config.damping() == 0.0 {
        // Dual solve in the antecedent block.
        let rho = &target - &f_bar + &j_f * (&u_bar_f - &u0_f);
        let mut jw = j_f.clone();
        for (ci, mut col) in jw.column_iter_mut().enumerate() {
            col /= w_f[ci];
        }
        let mut b = &jw * j_f.transpose();
        for k in 0..s {
            b[(k, k)] += 1.0 / lambda;
        }
        let gamma = pinv_solve_sym(&b, &rho, PINV_RELATIVE_CUTOFF)?;
        for (ci, &c) in cols.iter().enumerate() {
            u_hat.flat_mut()[c] = u0_f[ci] + j_f.column(ci).dot(&gamma) / w_f[ci];
        }
    } else {
        let x_tilde = &target - &f_bar + &j_f * &u_bar_f;
        let mut m = j_f.transpose() * &j_f;
        for i in 0..cols.len() {
            m[(i, i)] += w_f[i] / lambda + config.damping();
        }
        let mut rhs = j_f.transpose() * &x_tilde;
        for i in 0..cols.len() {
            rhs[i] += w_f[i] / lambda * u0_f[i];
        }
        let sol = pinv_solve_sym(&m, &rhs, PINV_RELATIVE_CUTOFF)?;
        for (ci, &c) in cols.iter().enumerate() {
            u_hat.flat_mut()[c] = sol[ci];
        }
    }
    if !u_hat.is_finite() {
        return Err(Error::NumericalFailure(
            "linearized update produced non-finite latents".to_string(),
        ));
    }
    Ok(u_hat)
}

/// Closed-form minimiser of the energy linearized at `u_bar`.
pub fn linearized_update(
    scm: &Scm,
    u_bar: &StructuredVector,
    u_factual: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
) -> Result<StructuredVector> {
    check_latent_layouts(scm, u_bar, u_factual)?;
    scm.check_antecedent(antecedent)?;
    linearized_step(scm, u_bar, u_factual, antecedent, config, None)
}

fn run_linearized(
    scm: &Scm,
    x: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
    free_cols: Option<&[usize]>,
) -> Result<CounterfactualResult> {
    let u0 = scm.abduct(x)?;
    let mut u_cur = u0.clone();
    let mut trace = vec![energy(scm, &u_cur, &u0, antecedent, config)?];
    let mut iterations = 0;
    let mut rising = 0usize;
    for t in 1..=config.iterations() {
        let u_next = linearized_step(scm, &u_cur, &u0, antecedent, config, free_cols)?;
        let e = energy(scm, &u_next, &u0, antecedent, config)?;
        if !e.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "mode energy non-finite at iteration {t}"
            )));
        }
        let prev = *trace.last().unwrap();
        trace.push(e);
        u_cur = u_next;
        iterations = t;
        if e > prev {
            rising += 1;
            if rising >= OSCILLATION_RUN {
                return Err(Error::OscillationDetected(t));
            }
        } else {
            rising = 0;
        }
        if (e - prev).abs() < ENERGY_CONVERGENCE_TOL {
            break;
        }
    }
    finish_result(scm, u_cur, antecedent, trace, iterations)
}

fn run_with_oscillation_retry(
    scm: &Scm,
    x: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
    free_cols: Option<&[usize]>,
) -> Result<CounterfactualResult> {
    match run_linearized(scm, x, antecedent, config, free_cols) {
        Err(Error::OscillationDetected(_)) if config.damping() == 0.0 => {
            let damped = config.clone().with_damping(OSCILLATION_RETRY_DAMPING)?;
            run_linearized(scm, x, antecedent, &damped, free_cols)
        }
        other => other,
    }
}

/// Most-likely backtracking counterfactual for `antecedent` given the
/// factual observation `x`.
///
/// Quadratic distances use iterated constraint linearization; any
/// non-quadratic distance routes the whole solve to plain gradient descent
/// (`mode_deepbc_first_order`). On detected oscillation the linearized
/// iteration is retried once with a small damping term before the error is
/// surfaced.
pub fn mode_deepbc(
    scm: &Scm,
    x: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
) -> Result<CounterfactualResult> {
    if !config.all_quadratic() {
        return super::mode_deepbc_first_order(scm, x, antecedent, config);
    }
    scm.check_antecedent(antecedent)?;
    run_with_oscillation_retry(scm, x, antecedent, config, None)
}

/// Mode solve over the latent blocks of `free` only; every other latent
/// block stays bitwise at its abducted factual value.
pub fn mode_deepbc_restricted(
    scm: &Scm,
    x: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
    free: &[NodeId],
) -> Result<CounterfactualResult> {
    if free.is_empty() {
        return Err(Error::InvalidPlan(
            "restricted solve needs at least one free node".to_string(),
        ));
    }
    scm.check_antecedent(antecedent)?;
    let cols = latent_columns(scm, free)?;
    let mut mask: Vec<NodeId> = free.to_vec();
    mask.sort_unstable();
    mask.dedup();
    let mut result = if config.all_quadratic() {
        run_with_oscillation_retry(scm, x, antecedent, config, Some(&cols))?
    } else {
        run_first_order(scm, x, antecedent, config, Some(&cols))?
    };
    result.changed_mask = Some(mask);
    Ok(result)
}
