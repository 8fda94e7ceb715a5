//! High-accuracy evaluation of the continuous operators and the
//! manufactured-solution factory.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::functions::{SharedFunction, TestFunction};
use super::AnalysisError;
use crate::control_problem::{EquationForm, ProblemSpec};
use crate::levy_measure::annulus::gauss_legendre;
use crate::levy_measure::{AnnulusOptions, LevyModel, TruncatedMeasure};
use crate::linalg::{dot, Mat};
use crate::scheme::CompensatedCoefficients;

/// Integration settings for the oracles.
#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub annulus: AnnulusOptions,
    /// Radius separating the Taylor-remainder integrand from the plain
    /// difference integrand; the `J` compensator always uses `|z| < 1`.
    pub split: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            annulus: AnnulusOptions::default(),
            split: 1.0,
        }
    }
}

fn unit_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_legendre(8);
        (x.iter().map(|t| 0.5 * (t + 1.0)).collect(), w.iter().map(|w| 0.5 * w).collect())
    })
}

/// `u(x + eta) - u(x) - eta . Du(x)` written as
/// `int_0^1 (1 - s) eta^T D^2u(x + s eta) eta ds`, free of cancellation for small `eta`.
pub fn taylor_remainder(u: &dyn TestFunction, x: &[f64], eta: &[f64]) -> f64 {
    let (s, w) = unit_rule();
    let mut y = vec![0.0; x.len()];
    let mut acc = 0.0;
    for (s, w) in s.iter().zip(w) {
        for i in 0..x.len() {
            y[i] = x[i] + s * eta[i];
        }
        let h = u.hessian(&y);
        acc += w * (1.0 - s) * dot(eta, &h.matvec(eta));
    }
    acc
}

fn shifted(x: &[f64], eta: &[f64]) -> Vec<f64> {
    x.iter().zip(eta).map(|(a, b)| a + b).collect()
}

/// Jump part of the operator at `(x, v)` with jumps restricted to `|z| < outer`:
/// `int [u(x+eta) - u(x)] nu` (form F) or
/// `int [u(x+eta) - u(x) - 1_{|z|<1} eta . Du(x)] nu` (form J).
pub fn jump_oracle(
    spec: &ProblemSpec,
    model: &LevyModel,
    x: &[f64],
    v: usize,
    u: &dyn TestFunction,
    outer: f64,
    opts: &OracleOptions,
) -> Result<f64, AnalysisError> {
    let n = spec.dim();
    let e = spec.eta1(x, v);
    let shape = spec.jump_shape();
    let form = spec.form();
    let split = match form {
        EquationForm::F => opts.split,
        EquationForm::J => 1.0,
    };
    if form == EquationForm::F && model.alpha() >= 1.0 {
        return Err(AnalysisError::Invalid(format!(
            "form F with alpha = {} has no convergent first moment near 0",
            model.alpha()
        )));
    }
    let u0 = u.value(x);
    let grad = u.gradient(x);
    let cut = split.min(outer);
    let mut total = 0.0;
    // The first moment only exists for form F.
    let width = if form == EquationForm::F { 1 + n } else { 1 };
    let inner = model.integrate_vec(
        0.0,
        cut,
        width,
        |z, o| {
            let p = shape.eval(z);
            let eta = e.matvec(&p);
            o[0] = taylor_remainder(u, x, &eta);
            if width > 1 {
                o[1..].copy_from_slice(&eta);
            }
        },
        &opts.annulus,
    )?;
    total += inner[0];
    if form == EquationForm::F {
        total += dot(&inner[1..], &grad);
    }
    if outer > cut {
        total += model.integrate_vec(
            cut,
            outer,
            1,
            |z, o| {
                let eta = e.matvec(&shape.eval(z));
                o[0] = u.value(&shifted(x, &eta)) - u0;
            },
            &opts.annulus,
        )?[0];
    }
    Ok(total)
}

fn local_part(a: &Mat, b: &[f64], u: &dyn TestFunction, x: &[f64]) -> f64 {
    a.frobenius_dot(&u.hessian(x)) + dot(b, &u.gradient(x))
}

/// `tr(a D^2u) + b . Du + jump part` of the untruncated equation.
pub fn generator_oracle(
    spec: &ProblemSpec,
    model: Option<&LevyModel>,
    x: &[f64],
    v: usize,
    u: &dyn TestFunction,
    opts: &OracleOptions,
) -> Result<f64, AnalysisError> {
    let local = local_part(&spec.diffusion_matrix(x, v), &spec.drift(x, v), u, x);
    let jump = match model {
        Some(m) => jump_oracle(spec, m, x, v, u, f64::INFINITY, opts)?,
        None => 0.0,
    };
    Ok(local + jump)
}

/// `tr(a D^2u) + b . Du - c u + f + jump part`.
pub fn continuous_operator_oracle(
    spec: &ProblemSpec,
    model: Option<&LevyModel>,
    x: &[f64],
    v: usize,
    u: &dyn TestFunction,
) -> Result<f64, AnalysisError> {
    let g = generator_oracle(spec, model, x, v, u, &OracleOptions::default())?;
    Ok(g - spec.discount(x, v) * u.value(x) + spec.source(x, v))
}

/// Generator of the truncated, compensated equation:
/// `tr(a_bar D^2u) + b_eff . Du + int_{r<|z|<R} [u(x+eta) - u(x)] nu`.
/// With `diffusion_compensator = false` the small-jump diffusion is dropped.
pub fn truncated_generator_oracle(
    spec: &ProblemSpec,
    coeffs: &CompensatedCoefficients,
    measure: Option<&TruncatedMeasure>,
    x: &[f64],
    v: usize,
    u: &dyn TestFunction,
    diffusion_compensator: bool,
) -> Result<f64, AnalysisError> {
    let a = if diffusion_compensator {
        let (p, q) = coeffs.sigma_pair(spec, x, v);
        p.matmul(&p.transpose()).add(&q.matmul(&q.transpose())).scale(0.25)
    } else {
        spec.diffusion_matrix(x, v)
    };
    let local = local_part(&a, &coeffs.drift(spec, x, v), u, x);
    let Some(m) = measure else {
        return Ok(local);
    };
    let e = spec.eta1(x, v);
    let shape = spec.jump_shape();
    let u0 = u.value(x);
    let jump = m.integrate_vec(
        0.0,
        f64::INFINITY,
        1,
        |z, o| {
            let eta = e.matvec(&shape.eval(z));
            o[0] = u.value(&shifted(x, &eta)) - u0;
        },
        &AnnulusOptions::default(),
    )?[0];
    Ok(local + jump)
}

/// Problem whose exact solution is `u_star`.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub u_star: SharedFunction,
    pub problem: ProblemSpec,
    pub model: Option<LevyModel>,
    pub oracle_tol: f64,
    /// Control that attains the minimum everywhere.
    pub optimal_control: usize,
    /// Largest HJB residual found by the construction check.
    pub residual: f64,
}

/// Tolerance of the operator oracle used by [`manufacture`].
pub const ORACLE_TOL: f64 = 1e-8;

/// Sets `f(x, v) = c u* - L^v u* + offset [v != optimal]` so that `u_star`
/// solves the equation and `optimal` attains the minimum everywhere.
///
/// The construction is checked at 50 random points of `spec.sample_region`
/// by re-evaluating the residual with a tighter integration tolerance and a
/// different split radius; a residual above `10 * ORACLE_TOL` is an error.
pub fn manufacture(
    u_star: SharedFunction,
    spec: &ProblemSpec,
    model: Option<&LevyModel>,
    optimal: usize,
    offset: f64,
) -> Result<ManufacturedCase, AnalysisError> {
    if !(offset >= 0.0) {
        return Err(AnalysisError::Invalid("control offset must be nonnegative".into()));
    }
    if optimal >= spec.control_count() {
        return Err(AnalysisError::Invalid(format!("optimal control {optimal} out of range")));
    }
    let base = spec.clone();
    let model_owned = model.cloned();
    let u = u_star.clone();
    let source = Arc::new(move |x: &[f64], v: usize| {
        let g = generator_oracle(&base, model_owned.as_ref(), x, v, u.as_ref(), &OracleOptions::default())
            .unwrap_or(f64::NAN);
        let shift = if v == optimal { 0.0 } else { offset };
        base.discount(x, v) * u.value(x) - g + shift
    });
    let problem = spec.with_source_field(source);

    let check = OracleOptions {
        annulus: AnnulusOptions {
            rel_tol: 1e-12,
            ..AnnulusOptions::default()
        },
        split: 0.5,
    };
    let region = &spec.sample_region;
    let mut rng = ChaCha8Rng::seed_from_u64(0xcafe);
    let mut residual: f64 = 0.0;
    for _ in 0..50 {
        let x: Vec<f64> = (0..spec.dim()).map(|a| rng.gen_range(region.lo[a]..=region.hi[a])).collect();
        let mut sup = f64::NEG_INFINITY;
        for v in 0..spec.control_count() {
            let g = generator_oracle(&problem, model, &x, v, u_star.as_ref(), &check)?;
            let r = -g + problem.discount(&x, v) * u_star.value(&x) - problem.source(&x, v);
            sup = sup.max(r);
        }
        residual = residual.max(sup.abs());
    }
    if !(residual <= 10.0 * ORACLE_TOL) {
        return Err(AnalysisError::ResidualTooLarge(residual));
    }
    Ok(ManufacturedCase {
        u_star,
        problem,
        model: model.cloned(),
        oracle_tol: ORACLE_TOL,
        optimal_control: optimal,
        residual,
    })
}
