//! From a problem and a discretization to an assembled, solved system.

use std::sync::Arc;
use std::time::Instant;

use super::params::Discretization;
use super::AnalysisError;
use crate::control_problem::{exterior_value, Bounds, ProblemSpec};
use crate::levy_measure::{truncate, LevyModel, TruncatedMeasure};
use crate::mesh::{build_box_mesh, ExteriorRule, Triangulation};
use crate::quadrature::{build_annulus_rule, QuadratureRule, DEFAULT_MAX_NODES};
use crate::scheme::{
    assemble, compensate, one_step_reach, solve_policy_iteration, solve_value_iteration, AssemblyOptions,
    CompensatedCoefficients, DiscreteBellmanSystem, SchemeError, SolveOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Value,
    Policy,
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "value" | "value_iteration" => Ok(Self::Value),
            "policy" | "policy_iteration" => Ok(Self::Policy),
            other => Err(format!("unknown solver `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub kind: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Value,
            tol: 1e-8,
            max_iter: 1_000_000,
        }
    }
}

/// Runs the chosen solver; a non-converged run is an error carrying the outcome.
pub fn solve(system: &DiscreteBellmanSystem, opts: &SolverOptions) -> Result<SolveOutcome, SchemeError> {
    match opts.kind {
        SolverKind::Value => solve_value_iteration(system, opts.tol, opts.max_iter),
        SolverKind::Policy => solve_policy_iteration(system, opts.tol, opts.max_iter),
    }
}

/// Problem data shared by every level of a study.
#[derive(Clone)]
pub struct Pipeline {
    pub spec: ProblemSpec,
    pub model: Option<LevyModel>,
    pub bounds: Bounds,
    /// Values outside the mesh; `None` uses `min_v f / c` of the current spec.
    pub exterior: Option<ExteriorRule>,
    pub assembly: AssemblyOptions,
    pub max_nodes: usize,
    /// Cells per axis; `None` derives them from `k`.
    pub cells: Option<Vec<usize>>,
}

/// Everything produced for one discretization level.
pub struct Discretized {
    pub disc: Discretization,
    pub mesh: Triangulation,
    pub measure: Option<TruncatedMeasure>,
    pub rule: Option<QuadratureRule>,
    pub coeffs: CompensatedCoefficients,
    pub system: DiscreteBellmanSystem,
    /// Sup-norm reach of one scheme step from the mesh vertices.
    pub reach: f64,
}

/// Cells per axis so that the Kuhn cell diagonal is at most `k`.
pub fn cells_for_spacing(bounds: &Bounds, k: f64) -> Vec<usize> {
    let spacing = k / (bounds.dim() as f64).sqrt();
    bounds
        .lo
        .iter()
        .zip(&bounds.hi)
        .map(|(lo, hi)| (((hi - lo) / spacing) - 1e-9).ceil().max(1.0) as usize)
        .collect()
}

impl Pipeline {
    pub fn new(spec: ProblemSpec, model: Option<LevyModel>, bounds: Bounds) -> Self {
        Self {
            spec,
            model,
            bounds,
            exterior: None,
            assembly: AssemblyOptions::default(),
            max_nodes: DEFAULT_MAX_NODES,
            cells: None,
        }
    }

    pub fn with_exterior(mut self, rule: ExteriorRule) -> Self {
        self.exterior = Some(rule);
        self
    }

    pub fn with_spec(&self, spec: ProblemSpec) -> Self {
        let mut out = self.clone();
        out.spec = spec;
        out
    }

    pub fn mesh(&self, k: f64) -> Result<Triangulation, AnalysisError> {
        let cells = self.cells.clone().unwrap_or_else(|| cells_for_spacing(&self.bounds, k));
        let rule = self.exterior.clone().unwrap_or_else(|| {
            let s = self.spec.clone();
            Arc::new(move |x: &[f64]| exterior_value(&s, x))
        });
        Ok(build_box_mesh(&self.bounds, &cells)?.with_exterior_rule(rule))
    }

    /// Truncates the measure, builds the quadrature, compensates and assembles.
    pub fn discretize(&self, disc: &Discretization) -> Result<Discretized, AnalysisError> {
        let mesh = self.mesh(disc.k)?;
        self.discretize_on(disc, mesh)
    }

    pub fn discretize_on(&self, disc: &Discretization, mesh: Triangulation) -> Result<Discretized, AnalysisError> {
        let (measure, rule, coeffs) = match &self.model {
            Some(model) => {
                let measure = truncate(model, disc.r, disc.big_r)?;
                let rule = build_annulus_rule(&measure, disc.dz, self.max_nodes)?;
                let coeffs = compensate(&self.spec, &measure)?;
                (Some(measure), Some(rule), coeffs)
            }
            None => (None, None, CompensatedCoefficients::without_jumps(&self.spec)),
        };
        let system = assemble(
            &self.spec,
            &coeffs,
            measure.as_ref(),
            &mesh,
            rule.as_ref(),
            disc.h,
            &self.assembly,
        )?;
        let samples: Vec<Vec<f64>> = (0..mesh.vertex_count()).map(|i| mesh.vertex(i).to_vec()).collect();
        let reach = one_step_reach(&self.spec, &coeffs, measure.as_ref(), disc.h, &samples);
        Ok(Discretized {
            disc: *disc,
            mesh,
            measure,
            rule,
            coeffs,
            system,
            reach,
        })
    }
}

/// A solved level with its wall-clock time (assembly plus solve).
pub struct Solved {
    pub level: Discretized,
    pub outcome: SolveOutcome,
    pub seconds: f64,
}

impl Pipeline {
    pub fn solve(&self, disc: &Discretization, opts: &SolverOptions) -> Result<Solved, AnalysisError> {
        let start = Instant::now();
        let level = self.discretize(disc)?;
        let outcome = solve(&level.system, opts)?;
        Ok(Solved {
            level,
            outcome,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_problem::{ControlSet, ProblemBuilder};
    use crate::levy_measure::{builtin_model, BuiltinModel};
    use crate::linalg::Mat;

    #[test]
    fn cells_cover_the_box() {
        let b = Bounds::cube(2, 0.75);
        let cells = cells_for_spacing(&b, 0.1);
        assert_eq!(cells, vec![22, 22]);
        assert!(build_box_mesh(&b, &cells).unwrap().k() <= 0.1 + 1e-12);
    }

    #[test]
    fn constant_problem_reaches_discrete_fixed_point() {
        let spec = ProblemBuilder::new(1, ControlSet::indexed(1).unwrap())
            .source(|_, _| 1.0)
            .discount(|_, _| 2.0)
            .sigma(|_, _| Mat::scalar(0.3))
            .eta1(|_, _| Mat::scalar(0.1))
            .build();
        let model = builtin_model(BuiltinModel::Merton, &[1.0, 0.3, 0.0]).unwrap();
        let fixed = 0.1 / (1.0 - (-0.2f64).exp());
        let p = Pipeline::new(spec, Some(model), Bounds::cube(1, 1.0)).with_exterior(Arc::new(move |_: &[f64]| fixed));
        let disc = Discretization {
            h: 0.1,
            k: 0.1,
            dz: 0.05,
            r: 0.0,
            big_r: 2.0,
        };
        let s = p.solve(&disc, &SolverOptions::default()).unwrap();
        assert!(s.outcome.nodal_solution.iter().all(|u| (u - fixed).abs() < 1e-7));
        assert!(s.level.reach > 0.0);
    }
}
