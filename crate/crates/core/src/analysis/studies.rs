//! Consistency, truncation, convergence, continuous-dependence and spatial
//! refinement studies.

use std::sync::Arc;
use std::time::Instant;

use super::functions::TestFunction;
use super::oracle::{jump_oracle, truncated_generator_oracle, ManufacturedCase, OracleOptions};
use super::params::Discretization;
use super::pipeline::{Pipeline, Solved, SolverOptions};
use super::{AnalysisError, Gate, StudyLevel, StudyReport};
use crate::control_problem::{Bounds, ProblemSpec};
use crate::levy_measure::{truncate, LevyModel, TruncatedMeasure};
use crate::linalg::{dot, Mat};
use crate::scheme::{compensate, semi_discrete_apply, CompensatedCoefficients};

/// Error model `C1 h (K/e + K/e^2 + K/e^3) + C2 h lambda ((1 + |m|) K + K/e)`
/// of the scheme consistency estimate. Reported only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyFunction {
    pub c1: f64,
    pub c2: f64,
    /// `|int eta 1_{|z|<1} nu|`.
    pub drift_moment: f64,
}

impl ConsistencyFunction {
    pub fn eval(&self, k_tilde: f64, h: f64, eps: f64, lambda: f64) -> f64 {
        self.c1 * h * (k_tilde / eps + k_tilde / eps.powi(2) + k_tilde / eps.powi(3))
            + self.c2 * h * lambda * ((1.0 + self.drift_moment) * k_tilde + k_tilde / eps)
    }
}

/// Errors below this are treated as roundoff and not fitted.
pub const ROUNDOFF_LEVEL: f64 = 1e-12;

fn strictly_decreasing(xs: &[f64], what: &str) -> Result<(), AnalysisError> {
    if xs.is_empty() || xs.iter().any(|x| !(*x > 0.0)) || xs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(AnalysisError::Invalid(format!("{what} must be positive and strictly decreasing")));
    }
    Ok(())
}

fn level(disc: Discretization, abscissa: f64, error: f64) -> StudyLevel {
    StudyLevel {
        disc,
        abscissa,
        error,
        iterations: 0,
        seconds: 0.0,
        error_wider: None,
    }
}

/// Drops the fit when every error is at roundoff level.
fn finish(mut report: StudyReport) -> StudyReport {
    if report.levels.iter().all(|l| l.error <= ROUNDOFF_LEVEL) {
        report.fitted_order = None;
        report.details.push("errors at roundoff level, order fit skipped".into());
    }
    report
}

/// `max |semi_discrete_apply - truncated generator|` over points and controls,
/// per `h`. The measure (hence `lambda`) is fixed across levels.
pub fn consistency_study(
    spec: &ProblemSpec,
    coeffs: &CompensatedCoefficients,
    measure: Option<&TruncatedMeasure>,
    phi: &dyn TestFunction,
    h_list: &[f64],
    points: &[Vec<f64>],
) -> Result<StudyReport, AnalysisError> {
    strictly_decreasing(h_list, "h_list")?;
    let (r, big_r) = measure.map_or((0.0, 0.0), |m| (m.r(), m.big_r()));
    let mut reference = Vec::new();
    for x in points {
        for v in 0..spec.control_count() {
            reference.push(truncated_generator_oracle(spec, coeffs, measure, x, v, phi, true)?);
        }
    }
    let mut levels = Vec::new();
    for &h in h_list {
        let start = Instant::now();
        let mut err: f64 = 0.0;
        let mut idx = 0;
        for x in points {
            for v in 0..spec.control_count() {
                let s = semi_discrete_apply(spec, coeffs, measure, h, v, &|y| phi.value(y), x)?;
                err = err.max((s - reference[idx]).abs());
                idx += 1;
            }
        }
        let mut l = level(
            Discretization {
                h,
                k: 0.0,
                dz: 0.0,
                r,
                big_r,
            },
            h,
            err,
        );
        l.seconds = start.elapsed().as_secs_f64();
        levels.push(l);
    }
    Ok(finish(StudyReport::new("consistency", "h", levels, Gate::AtLeast(0.9))))
}

/// Operator error of truncation plus compensation, per `r`:
/// `|truncated compensated generator - generator with jumps |z| < R|`.
/// Without the diffusion compensator the small jumps contribute only their drift.
pub fn truncation_study(
    spec: &ProblemSpec,
    model: &LevyModel,
    phi: &dyn TestFunction,
    r_list: &[f64],
    big_r: f64,
    points: &[Vec<f64>],
    diffusion_compensator: bool,
) -> Result<StudyReport, AnalysisError> {
    strictly_decreasing(r_list, "r_list")?;
    let opts = OracleOptions::default();
    let mut reference = Vec::new();
    for x in points {
        for v in 0..spec.control_count() {
            let a = spec.diffusion_matrix(x, v);
            let local = a.frobenius_dot(&phi.hessian(x)) + dot(&spec.drift(x, v), &phi.gradient(x));
            reference.push(local + jump_oracle(spec, model, x, v, phi, big_r, &opts)?);
        }
    }
    let mut levels = Vec::new();
    for &r in r_list {
        let start = Instant::now();
        let measure = truncate(model, r, big_r)?;
        let coeffs = compensate(spec, &measure)?;
        let mut err: f64 = 0.0;
        let mut idx = 0;
        for x in points {
            for v in 0..spec.control_count() {
                let t = truncated_generator_oracle(spec, &coeffs, Some(&measure), x, v, phi, diffusion_compensator)?;
                err = err.max((t - reference[idx]).abs());
                idx += 1;
            }
        }
        let mut l = level(
            Discretization {
                h: 0.0,
                k: 0.0,
                dz: 0.0,
                r,
                big_r,
            },
            r,
            err,
        );
        l.seconds = start.elapsed().as_secs_f64();
        levels.push(l);
    }
    let alpha = model.alpha();
    let target = if diffusion_compensator { 3.0 - alpha } else { 2.0 - alpha };
    let name = if diffusion_compensator {
        "truncation"
    } else {
        "truncation_uncompensated"
    };
    Ok(StudyReport::new(name, "r", levels, Gate::Within { target, tol: 0.15 }))
}

/// Largest nodal error against `exact` at vertices at least `margin` inside the box.
pub fn interior_error(solved: &Solved, bounds: &Bounds, exact: &dyn TestFunction, margin: f64) -> f64 {
    let mesh = &solved.level.mesh;
    let u = &solved.outcome.nodal_solution;
    (0..mesh.vertex_count())
        .filter(|&i| bounds.inner_distance(mesh.vertex(i)) >= margin)
        .map(|i| (u[i] - exact.value(mesh.vertex(i))).abs())
        .fold(0.0, f64::max)
}

fn interior_vertices(solved: &Solved, bounds: &Bounds, margin: f64) -> Vec<usize> {
    let mesh = &solved.level.mesh;
    (0..mesh.vertex_count())
        .filter(|&i| bounds.inner_distance(mesh.vertex(i)) >= margin)
        .collect()
}

/// Solves the manufactured case on each coupled level and records the
/// interior sup-norm error, excluding a boundary layer of one-step reach.
pub fn convergence_study(
    name: &str,
    case: &ManufacturedCase,
    bounds: &Bounds,
    h_list: &[f64],
    coupling: &dyn Fn(f64) -> Discretization,
    solver: &SolverOptions,
    gate: Gate,
) -> Result<StudyReport, AnalysisError> {
    strictly_decreasing(h_list, "h_list")?;
    let u = case.u_star.clone();
    let pipeline = Pipeline::new(case.problem.clone(), case.model.clone(), bounds.clone())
        .with_exterior(Arc::new(move |x: &[f64]| u.value(x)));
    let mut levels = Vec::new();
    let mut details = Vec::new();
    for &h in h_list {
        let disc = coupling(h);
        let solved = pipeline.solve(&disc, solver)?;
        let reach = solved.level.reach;
        let spacing = disc.k / (bounds.dim() as f64).sqrt();
        let error = interior_error(&solved, bounds, case.u_star.as_ref(), reach);
        let wider = interior_error(&solved, bounds, case.u_star.as_ref(), reach + spacing);
        let inner = interior_vertices(&solved, bounds, reach);
        let optimal = inner
            .iter()
            .filter(|&&i| solved.outcome.policy[i] == case.optimal_control)
            .count();
        let msg = format!(
            "h={h} vertices={} interior={} reach={reach:.4} lambda_Q={:.4} iterations={} optimal_policy={}/{}",
            solved.level.mesh.vertex_count(),
            inner.len(),
            solved.level.system.lambda,
            solved.outcome.iterations,
            optimal,
            inner.len()
        );
        log::info!("{name}: {msg} error={error:.3e}");
        details.push(msg);
        levels.push(StudyLevel {
            disc,
            abscissa: h,
            error,
            iterations: solved.outcome.iterations,
            seconds: solved.seconds,
            error_wider: Some(wider),
        });
    }
    let mut report = StudyReport::new(name, "h", levels, gate);
    report.details = details;
    Ok(report)
}

/// Direction of the constant shift: coefficient `g` becomes `g + w s` with
/// weight `w` per field (0 leaves the field unchanged).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub f: f64,
    pub c: f64,
    pub b: f64,
    pub sigma: f64,
}

impl Perturbation {
    pub const ALL: Self = Self {
        f: 1.0,
        c: 1.0,
        b: 1.0,
        sigma: 1.0,
    };
    /// `f` up and `c` down, so both raise the solution.
    pub const ALIGNED: Self = Self {
        f: 1.0,
        c: -1.0,
        b: 1.0,
        sigma: 1.0,
    };
    pub const SOURCE: Self = Self {
        f: 1.0,
        c: 0.0,
        b: 0.0,
        sigma: 0.0,
    };

    /// Shifts the selected coefficients of `spec` by `s` times their weight.
    pub fn apply(&self, spec: &ProblemSpec, s: f64) -> ProblemSpec {
        let mut out = spec.clone();
        if self.f != 0.0 {
            let (f, d) = (spec.source_field(), self.f * s);
            out = out.with_source_field(Arc::new(move |x: &[f64], v: usize| f(x, v) + d));
        }
        if self.c != 0.0 {
            let (c, d) = (spec.discount_field(), self.c * s);
            out = out.with_discount_field(Arc::new(move |x: &[f64], v: usize| c(x, v) + d));
        }
        if self.b != 0.0 {
            let (b, d) = (spec.drift_field(), self.b * s);
            out = out.with_drift_field(Arc::new(move |x: &[f64], v: usize| b(x, v).into_iter().map(|y| y + d).collect()));
        }
        if self.sigma != 0.0 {
            let (g, d) = (spec.sigma_field(), self.sigma * s);
            let (n, m) = (spec.dim(), spec.noise_dim());
            out = out.with_sigma_field(Arc::new(move |x: &[f64], v: usize| {
                g(x, v).add(&Mat::from_row_major(n, m, vec![d; n * m]))
            }));
        }
        out
    }
}

/// `|u_h - u_h(perturbed)|_inf` per shift `s`, fitted against `s`.
/// The report details carry `K = error / s` at the smallest shift.
pub fn continuous_dependence_study(
    pipeline: &Pipeline,
    disc: &Discretization,
    s_list: &[f64],
    perturbation: Perturbation,
    solver: &SolverOptions,
) -> Result<StudyReport, AnalysisError> {
    strictly_decreasing(s_list, "perturbation sizes")?;
    let base = pipeline.solve(disc, solver)?;
    let mut levels = Vec::new();
    for &s in s_list {
        let p = pipeline.with_spec(perturbation.apply(&pipeline.spec, s));
        let solved = p.solve(disc, solver)?;
        let error = base
            .outcome
            .nodal_solution
            .iter()
            .zip(&solved.outcome.nodal_solution)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        levels.push(StudyLevel {
            disc: *disc,
            abscissa: s,
            error,
            iterations: solved.outcome.iterations,
            seconds: solved.seconds,
            error_wider: None,
        });
    }
    let mut report = StudyReport::new("continuous_dependence", "s", levels, Gate::Within { target: 1.0, tol: 0.1 });
    if let Some(last) = report.levels.last() {
        report.details.push(format!("K_hat={:.6e}", last.error / last.abscissa));
    }
    Ok(report)
}

/// With `h`, `r`, `R` fixed and `k = dz` running through `k_list`, records
/// the change between successive levels at vertices of the coarser mesh
/// that lie in `region` and at least one step reach inside the mesh box,
/// fitted against the coarser `k`.
pub fn spatial_refinement_study(
    pipeline: &Pipeline,
    region: &Bounds,
    h: f64,
    r: f64,
    big_r: f64,
    k_list: &[f64],
    solver: &SolverOptions,
) -> Result<StudyReport, AnalysisError> {
    strictly_decreasing(k_list, "k_list")?;
    let mut solved = Vec::new();
    for &k in k_list {
        let disc = Discretization { h, k, dz: k, r, big_r };
        solved.push(pipeline.solve(&disc, solver)?);
    }
    let bounds = &pipeline.bounds;
    let mut levels = Vec::new();
    for pair in solved.windows(2) {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let margin = coarse.level.reach.max(fine.level.reach);
        let mut diff: f64 = 0.0;
        for i in interior_vertices(coarse, bounds, margin) {
            let x = coarse.level.mesh.vertex(i);
            if !region.contains(x) {
                continue;
            }
            let uf = fine.level.mesh.interpolate(&fine.outcome.nodal_solution, x)?;
            diff = diff.max((coarse.outcome.nodal_solution[i] - uf).abs());
        }
        levels.push(StudyLevel {
            disc: coarse.level.disc,
            abscissa: coarse.level.disc.k,
            error: diff,
            iterations: coarse.outcome.iterations,
            seconds: coarse.seconds,
            error_wider: None,
        });
    }
    Ok(StudyReport::new("spatial_refinement", "k", levels, Gate::AtLeast(0.9)))
}
