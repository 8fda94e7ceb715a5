//! Resolution of a [`RunConfig`] into a pipeline, and the three commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ipde_hjb::analysis::functions::Sinusoid;
use ipde_hjb::analysis::oracle::ManufacturedCase;
use ipde_hjb::analysis::params::{select_parameters, Discretization, ParameterCase};
use ipde_hjb::analysis::pipeline::{cells_for_spacing, solve, Pipeline, SolverKind, SolverOptions};
use ipde_hjb::analysis::presets::{build_preset, Preset, PresetCase};
use ipde_hjb::analysis::studies::{consistency_study, convergence_study};
use ipde_hjb::analysis::{AnalysisError, Gate};
use ipde_hjb::control_problem::{Bounds, ControlSet, ProblemBuilder, ProblemSpec};
use ipde_hjb::levy_measure::{builtin_model, JumpShape, LevyModel};
use ipde_hjb::linalg::Mat;
use ipde_hjb::scheme::{write_solution, SchemeError, SolveOutcome};
use thiserror::Error;

use crate::config::{AffineProblem, AffineTable, ConfigError, ProblemSource, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("scheme: {0}")]
    Scheme(#[from] SchemeError),
    #[error("measure: {0}")]
    Levy(#[from] ipde_hjb::levy_measure::LevyError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Study,
    Check,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Study => "study",
            Command::Check => "check",
        }
    }
}

/// Result of a command: whether every gate passed, and the text printed to stdout.
pub struct Report {
    pub pass: bool,
    pub stdout: String,
}

/// Problem, coupling and discretization after resolving presets and defaults.
pub struct Setup {
    pub pipeline: Pipeline,
    pub disc: Discretization,
    pub preset: Option<PresetCase>,
    pub manufactured: Option<ManufacturedCase>,
    pub case: ParameterCase,
    pub alpha: f64,
    pub ell: f64,
}

fn field<T: Send + Sync + 'static>(
    tables: &[AffineTable],
    f: impl Fn(Vec<f64>) -> T + Send + Sync + 'static,
) -> impl Fn(&[f64], usize) -> T + Send + Sync + 'static {
    let tables = tables.to_vec();
    move |x: &[f64], v: usize| f(tables[v].eval(x))
}

fn affine_spec(p: &AffineProblem) -> ProblemSpec {
    let (n, d) = (p.dim, p.noise_dim);
    ProblemBuilder::new(n, ControlSet::indexed(p.controls).expect("controls >= 1"))
        .noise_dim(d)
        .sigma(field(&p.sigma, move |v| Mat::from_row_major(n, d, v)))
        .drift(field(&p.drift, |v| v))
        .discount(field(&p.discount, |v| v[0]))
        .source(field(&p.source, |v| v[0]))
        .eta1(field(&p.eta1, move |v| Mat::from_row_major(n, 1, v)))
        .jump_shape(JumpShape::identity(1))
        .form(p.form)
        .build()
}

fn default_case(model: Option<&LevyModel>) -> ParameterCase {
    match model {
        None => ParameterCase::Bounded,
        Some(m) if m.is_bounded() => ParameterCase::Bounded,
        Some(m) if m.alpha() < 1.0 => ParameterCase::CaseI,
        Some(_) => ParameterCase::CaseII,
    }
}

fn key_err(key: &str, msg: &str) -> RunError {
    RunError::Config(ConfigError::Key {
        key: key.into(),
        msg: msg.into(),
    })
}

impl Setup {
    pub fn resolve(cfg: &RunConfig) -> Result<Self, RunError> {
        let (mut pipeline, preset, default_h) = match &cfg.problem {
            ProblemSource::Preset(p) => {
                let case = build_preset(*p)?;
                let h = case.default_h;
                (case.pipeline.clone(), Some(case), Some(h))
            }
            ProblemSource::Affine(a) => {
                let model = match &cfg.measure {
                    Some(m) => Some(builtin_model(m.model, &m.params)?),
                    None => None,
                };
                let Some((lo, hi)) = &cfg.domain else {
                    return Err(key_err("domain.lo", "is required without problem.preset"));
                };
                if lo.len() != a.dim {
                    return Err(key_err("domain.lo", "must have problem.dim entries"));
                }
                let spec = affine_spec(a);
                (Pipeline::new(spec, model, Bounds::new(lo.clone(), hi.clone())), None, None)
            }
        };
        if let (Some((lo, hi)), Some(_)) = (&cfg.domain, &preset) {
            if lo.len() != pipeline.bounds.dim() {
                return Err(key_err("domain.lo", "must match the preset dimension"));
            }
            pipeline.bounds = Bounds::new(lo.clone(), hi.clone());
        }
        if let Some(cells) = &cfg.discretization.cells {
            if cells.len() != pipeline.bounds.dim() {
                return Err(key_err("discretization.cells", "must have one entry per dimension"));
            }
            pipeline.cells = Some(cells.clone());
        }
        let (case, alpha, ell) = match &preset {
            Some(p) => (cfg.discretization.case.unwrap_or(p.coupling), p.alpha, p.ell),
            None => {
                let m = pipeline.model.as_ref();
                (
                    cfg.discretization.case.unwrap_or_else(|| default_case(m)),
                    m.map_or(0.0, |m| m.alpha()),
                    m.map_or(1.0, |m| m.tail_rate()),
                )
            }
        };
        let h = cfg
            .discretization
            .h
            .or(default_h)
            .ok_or_else(|| key_err("discretization.h", "is required without problem.preset"))?;
        let mut setup = Self {
            manufactured: preset.as_ref().and_then(|p| p.manufactured.clone()),
            pipeline,
            disc: Discretization {
                h,
                k: 0.0,
                dz: 0.0,
                r: 0.0,
                big_r: 0.0,
            },
            preset,
            case,
            alpha,
            ell,
        };
        setup.disc = setup.discretization(cfg, h)?;
        Ok(setup)
    }

    /// Coupled parameters at `h` with explicit config values taking precedence.
    pub fn discretization(&self, cfg: &RunConfig, h: f64) -> Result<Discretization, RunError> {
        let d = &cfg.discretization;
        let base = if d.auto {
            select_parameters(h, self.alpha, self.ell, self.case)
        } else {
            let k = d
                .k
                .ok_or_else(|| key_err("discretization.k", "is required when discretization.auto = false"))?;
            Discretization {
                h,
                k,
                dz: k,
                r: 0.0,
                big_r: 2.0,
            }
        };
        Ok(Discretization {
            h,
            k: d.k.unwrap_or(base.k),
            dz: d.dz.unwrap_or(base.dz),
            r: d.r.unwrap_or(base.r),
            big_r: d.big_r.unwrap_or(base.big_r),
        })
    }

    pub fn cells(&self) -> Vec<usize> {
        self.pipeline
            .cells
            .clone()
            .unwrap_or_else(|| cells_for_spacing(&self.pipeline.bounds, self.disc.k))
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Comment header with the given entries and every resolved value.
pub fn header(command: Command, cfg: &RunConfig, setup: &Setup) -> String {
    let mut s = String::new();
    writeln!(s, "# ipde-hjb {}", command.name()).unwrap();
    for (k, v) in &cfg.entries {
        writeln!(s, "# {k} = {v}").unwrap();
    }
    let d = &setup.disc;
    let b = &setup.pipeline.bounds;
    let cells: Vec<String> = setup.cells().iter().map(|c| c.to_string()).collect();
    let solver = match cfg.solver.kind {
        SolverKind::Value => "value",
        SolverKind::Policy => "policy",
    };
    let problem = match &cfg.problem {
        ProblemSource::Preset(p) => p.name().to_string(),
        ProblemSource::Affine(_) => "affine".into(),
    };
    let model = setup.pipeline.model.as_ref().map_or("none".to_string(), |m| m.name().to_string());
    for line in [
        format!("resolved.problem = {problem}"),
        format!("resolved.measure = {model}"),
        format!("resolved.case = {:?}", setup.case),
        format!("resolved.alpha = {}", setup.alpha),
        format!("resolved.ell = {}", setup.ell),
        format!("resolved.h = {}", d.h),
        format!("resolved.k = {}", d.k),
        format!("resolved.dz = {}", d.dz),
        format!("resolved.r = {}", d.r),
        format!("resolved.R = {}", d.big_r),
        format!("resolved.cells = {}", cells.join(" ")),
        format!("resolved.domain.lo = {}", join(&b.lo)),
        format!("resolved.domain.hi = {}", join(&b.hi)),
        format!("resolved.solver.kind = {solver}"),
        format!("resolved.solver.tol = {}", cfg.solver.tol),
        format!("resolved.solver.max_iter = {}", cfg.solver.max_iter),
    ] {
        writeln!(s, "# {line}").unwrap();
    }
    s
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<Report, RunError> {
    let setup = Setup::resolve(cfg)?;
    match command {
        Command::Solve => run_solve(cfg, &setup, out),
        Command::Study => run_study(cfg, &setup, out),
        Command::Check => run_check(cfg, &setup, out),
    }
}

fn run_solve(cfg: &RunConfig, setup: &Setup, out: &Path) -> Result<Report, RunError> {
    let level = setup.pipeline.discretize(&setup.disc)?;
    log::info!(
        "assembled {} vertices, {} controls, lambda_Q = {}",
        level.system.vertex_count(),
        level.system.control_count(),
        level.system.lambda
    );
    let outcome = solve(&level.system, &cfg.solver)?;
    let text = header(Command::Solve, cfg, setup) + &write_solution(&level.system, &level.mesh, &outcome);
    let path = write_file(out, "solution.txt", &text)?;
    let u = &outcome.nodal_solution;
    let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let mut stdout = String::new();
    writeln!(
        stdout,
        "solved {} vertices in {} iterations, residual {:.3e}, u in [{lo:.6}, {hi:.6}]",
        u.len(),
        outcome.iterations,
        outcome.residual
    )
    .unwrap();
    for w in &level.system.warnings {
        writeln!(stdout, "warning: {w}").unwrap();
    }
    writeln!(stdout, "wrote {}", path.display()).unwrap();
    Ok(Report { pass: true, stdout })
}

fn run_study(cfg: &RunConfig, setup: &Setup, out: &Path) -> Result<Report, RunError> {
    let Some(case) = &setup.manufactured else {
        return Err(key_err("problem.preset", "study needs a preset with a manufactured solution"));
    };
    if !cfg.discretization.auto {
        return Err(key_err("discretization.auto", "must be true for a study"));
    }
    let h_list = cfg
        .study_h
        .clone()
        .or_else(|| setup.preset.as_ref().map(|p| p.study_h.clone()))
        .unwrap_or_default();
    let gate = setup.preset.as_ref().map_or(Gate::Informational, |p| p.gate);
    let coupling = |h: f64| setup.discretization(cfg, h).expect("auto coupling resolves");
    let name = setup.preset.as_ref().map_or("custom", |p| p.preset.name());
    let report = convergence_study(name, case, &setup.pipeline.bounds, &h_list, &coupling, &cfg.solver, gate)?;
    let head: Vec<String> = header(Command::Study, cfg, setup)
        .lines()
        .map(|l| l.trim_start_matches("# ").to_string())
        .collect();
    let csv = report.to_csv(&head, cfg.timing);
    let path = write_file(out, "study.csv", &csv)?;
    let pass = report.pass() != Some(false);
    let mut stdout = String::new();
    for l in &report.levels {
        writeln!(stdout, "h={} error={:.4e} iterations={}", l.disc.h, l.error, l.iterations).unwrap();
    }
    let order = report.fitted_order.map_or("nofit".to_string(), |o| format!("{o:.4}"));
    writeln!(
        stdout,
        "fitted order {order}, gate {}: {}",
        report.gate.describe(),
        if pass { "PASS" } else { "FAIL" }
    )
    .unwrap();
    writeln!(stdout, "wrote {}", path.display()).unwrap();
    Ok(Report { pass, stdout })
}

/// Update ratios are compared only above this fraction of `max(1, |u|)`,
/// where roundoff in the update is negligible.
const RATIO_FLOOR: f64 = 1e-4;

fn contraction_excess(outcome: &SolveOutcome, q: f64) -> f64 {
    let scale = outcome.nodal_solution.iter().fold(1.0f64, |m, u| m.max(u.abs()));
    outcome
        .update_history
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1] > RATIO_FLOOR * scale)
        .map(|w| w[1] / w[0] - q)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn run_check(cfg: &RunConfig, setup: &Setup, out: &Path) -> Result<Report, RunError> {
    let tol = cfg.solver.tol;
    let vi = SolverOptions {
        kind: SolverKind::Value,
        ..cfg.solver
    };
    let level = setup.pipeline.discretize(&setup.disc)?;
    let sys = &level.system;
    let base = solve(sys, &vi)?;
    let mut lines: Vec<(bool, String)> = Vec::new();

    if setup.preset.as_ref().is_some_and(|p| p.preset == Preset::Constant) {
        let h = sys.h;
        let expected = h * sys.f[0][0] / (1.0 - (-h * sys.c[0][0]).exp());
        let dev = base
            .nodal_solution
            .iter()
            .map(|u| (u - expected).abs())
            .fold(0.0, f64::max);
        lines.push((
            dev <= tol,
            format!(
                "closed_form fixed point value {:.6} (h f / (1 - e^(-h c)) = {expected:.6}, max deviation {dev:.1e})",
                base.nodal_solution[0]
            ),
        ));
    }

    let (defect, min_entry) = sys.m.iter().chain(&sys.p).fold((0.0f64, f64::INFINITY), |(d, m), s| {
        (d.max(s.stochasticity_defect()), m.min(s.min_entry()))
    });
    lines.push((
        defect <= 1e-12 && min_entry >= 0.0,
        format!("row_sums max |row sum + exterior - 1| {defect:.2e}, min entry {min_entry:.2e}"),
    ));

    let spec = &setup.pipeline.spec;
    let f = spec.source_field();
    let bumped = spec.with_source_field(Arc::new(move |x: &[f64], v: usize| f(x, v) + 0.1 * (1.0 + x[0].sin())));
    let upper = setup.pipeline.with_spec(bumped).solve(&setup.disc, &vi)?;
    let worst = base
        .nodal_solution
        .iter()
        .zip(&upper.outcome.nodal_solution)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    lines.push((
        worst <= 2.0 * tol,
        format!("monotonicity f1 <= f2 gives max(u1 - u2) = {worst:.2e} (limit {:.1e})", 2.0 * tol),
    ));

    let q = sys.contraction_factor();
    let excess = contraction_excess(&base, q).max(contraction_excess(&upper.outcome, q));
    lines.push((
        excess <= 1e-10,
        format!(
            "contraction max update ratio - e^(-h c0) = {excess:.2e} (q = {q:.6}, updates above {RATIO_FLOOR:.0e} max(1, |u|))"
        ),
    ));

    let policy = solve(
        sys,
        &SolverOptions {
            kind: SolverKind::Policy,
            max_iter: 1000,
            ..cfg.solver
        },
    )?;
    let gap = base
        .nodal_solution
        .iter()
        .zip(&policy.nodal_solution)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    lines.push((
        gap <= 2.0 * tol,
        format!("cross_solver max |u_value - u_policy| = {gap:.2e} (limit {:.1e})", 2.0 * tol),
    ));

    let b = &setup.pipeline.bounds;
    let n = b.dim();
    let points: Vec<Vec<f64>> = [0.5, 0.3, 0.7]
        .iter()
        .map(|t| (0..n).map(|a| b.lo[a] + t * (b.hi[a] - b.lo[a])).collect())
        .collect();
    let phi = Sinusoid {
        k: vec![1.0; n],
        phase: 0.3,
        amp: 1.0,
    };
    let h_list: Vec<f64> = (3..=8).map(|p| 2f64.powi(-p)).collect();
    let consistency = consistency_study(spec, &level.coeffs, level.measure.as_ref(), &phi, &h_list, &points)?;
    let ok = consistency.fitted_order.map_or(true, |o| o >= 0.9);
    let order = consistency.fitted_order.map_or("nofit (roundoff)".to_string(), |o| format!("{o:.3}"));
    lines.push((ok, format!("consistency order {order} over h = 2^-3..2^-8 (gate >= 0.9)")));

    let pass = lines.iter().all(|l| l.0);
    let mut body = String::new();
    for (ok, msg) in &lines {
        let (name, rest) = msg.split_once(' ').unwrap_or((msg, ""));
        writeln!(body, "{name} {} {rest}", if *ok { "PASS" } else { "FAIL" }).unwrap();
    }
    writeln!(body, "overall {}", if pass { "PASS" } else { "FAIL" }).unwrap();
    let path = write_file(out, "check.txt", &(header(Command::Check, cfg, setup) + &body))?;
    Ok(Report {
        pass,
        stdout: format!("{body}wrote {}\n", path.display()),
    })
}
