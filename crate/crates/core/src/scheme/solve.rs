//! Value and policy iteration for the discrete Bellman system.

use rayon::prelude::*;

use super::{bellman_apply, DiscreteBellmanSystem, SchemeError};
use crate::linalg::sup_norm_diff;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub nodal_solution: Vec<f64>,
    pub policy: Vec<usize>,
    /// Bellman sweeps (value iteration) or policy improvements (policy iteration).
    pub iterations: usize,
    /// Frozen-policy sweeps spent in policy evaluation.
    pub inner_iterations: usize,
    /// Sup-norm of the last update (value iteration) or Bellman residual
    /// `|T u - u|` (policy iteration).
    pub residual: f64,
    pub converged: bool,
    /// Sup-norm update per sweep or per improvement.
    pub update_history: Vec<f64>,
}

fn contraction(system: &DiscreteBellmanSystem) -> Result<f64, SchemeError> {
    let q = system.contraction_factor();
    if !(q < 1.0) {
        return Err(SchemeError::Unsupported(format!(
            "discount must be positive, min c = {}",
            system.min_discount()
        )));
    }
    Ok(q)
}

/// Iterates `u <- T u` from zero until the update is at most
/// `tol (1 - q) / q` with `q = e^{-h c0}`, which bounds the distance to the
/// fixed point by `tol`.
pub fn solve_value_iteration(
    system: &DiscreteBellmanSystem,
    tol: f64,
    max_iter: usize,
) -> Result<SolveOutcome, SchemeError> {
    if !(tol > 0.0) {
        return Err(SchemeError::Unsupported(format!("tolerance must be positive, got {tol}")));
    }
    let q = contraction(system)?;
    let stop = tol * (1.0 - q) / q;
    let mut u = vec![0.0; system.vertex_count()];
    let mut history = Vec::new();
    loop {
        let (next, policy) = bellman_apply(system, &u)?;
        let diff = sup_norm_diff(&next, &u);
        history.push(diff);
        u = next;
        let done = diff <= stop;
        if done || history.len() >= max_iter {
            let outcome = SolveOutcome {
                nodal_solution: u,
                policy,
                iterations: history.len(),
                inner_iterations: 0,
                residual: diff,
                converged: done,
                update_history: history,
            };
            return if done {
                Ok(outcome)
            } else {
                Err(SchemeError::NotConverged(Box::new(outcome)))
            };
        }
    }
}

/// Evaluates a frozen policy by fixed-point iteration from `u` until the
/// distance to its fixed point is below `tol`.
fn evaluate(
    system: &DiscreteBellmanSystem,
    policy: &[usize],
    u: &mut Vec<f64>,
    tol: f64,
    q: f64,
    max_sweeps: usize,
) -> Result<usize, SchemeError> {
    let stop = tol * (1.0 - q) / q;
    for sweep in 1..=max_sweeps {
        let next = system.apply_policy(policy, u)?;
        let diff = sup_norm_diff(&next, u);
        *u = next;
        if diff <= stop {
            return Ok(sweep);
        }
    }
    Ok(max_sweeps)
}

/// Howard's algorithm: alternates policy evaluation (inner iteration to
/// `tol / 10`) with improvement. A vertex switches control only when the
/// gain exceeds a small threshold, so near-ties cannot cycle. Stops when
/// the policy is stable and the Bellman residual certifies `|u - u*| <= tol`.
pub fn solve_policy_iteration(
    system: &DiscreteBellmanSystem,
    tol: f64,
    max_outer: usize,
) -> Result<SolveOutcome, SchemeError> {
    if !(tol > 0.0) {
        return Err(SchemeError::Unsupported(format!("tolerance must be positive, got {tol}")));
    }
    let q = contraction(system)?;
    let nv = system.vertex_count();
    let threshold = 1e-3 * tol * (1.0 - q);
    let max_sweeps = ((tol * (1.0 - q)).ln() / q.ln()).ceil().max(10.0) as usize * 20;
    let mut u = vec![0.0; nv];
    let (_, mut policy) = bellman_apply(system, &u)?;
    let mut inner_tol = tol / 10.0;
    let mut inner = 0;
    let mut history = Vec::new();
    for outer in 1..=max_outer {
        inner += evaluate(system, &policy, &mut u, inner_tol, q, max_sweeps)?;
        let improved: Vec<usize> = (0..nv)
            .into_par_iter()
            .map(|i| {
                let current = system.control_value(policy[i], i, &u);
                let mut best = (system.control_value(0, i, &u), 0);
                for v in 1..system.control_count() {
                    let val = system.control_value(v, i, &u);
                    if val < best.0 {
                        best = (val, v);
                    }
                }
                if best.0 < current - threshold {
                    best.1
                } else {
                    policy[i]
                }
            })
            .collect();
        let changed = improved != policy;
        let (tu, greedy) = bellman_apply(system, &u)?;
        let residual = sup_norm_diff(&tu, &u);
        history.push(residual);
        if !changed && residual <= tol * (1.0 - q) {
            return Ok(SolveOutcome {
                nodal_solution: tu,
                policy: greedy,
                iterations: outer,
                inner_iterations: inner,
                residual,
                converged: true,
                update_history: history,
            });
        }
        if changed {
            policy = improved;
        } else {
            inner_tol *= 0.1;
        }
    }
    let (tu, final_policy) = bellman_apply(system, &u)?;
    let residual = sup_norm_diff(&tu, &u);
    Err(SchemeError::NotConverged(Box::new(SolveOutcome {
        nodal_solution: tu,
        policy: final_policy,
        iterations: max_outer,
        inner_iterations: inner,
        residual,
        converged: false,
        update_history: history,
    })))
}
