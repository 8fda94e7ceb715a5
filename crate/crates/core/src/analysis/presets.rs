//! Ready-made problems covering the bounded, first-order, and singular
//! (alpha < 1 and alpha > 1) regimes in 1-D, plus a 2-D bounded problem.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::functions::{Constant, Gaussian, SharedFunction, Sinusoid, Sum};
use super::oracle::{manufacture, ManufacturedCase};
use super::params::{select_parameters, Discretization, ParameterCase};
use super::pipeline::Pipeline;
use super::{AnalysisError, Gate};
use crate::control_problem::{Bounds, ControlSet, EquationForm, ProblemBuilder, ProblemSpec};
use crate::levy_measure::{builtin_model, BuiltinModel, JumpShape, LevyModel};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Constant,
    FirstOrder1d,
    DiffusionMerton1d,
    TemperedStable05,
    TemperedStable15,
    Diffusion2dBounded,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Constant,
        Preset::FirstOrder1d,
        Preset::DiffusionMerton1d,
        Preset::TemperedStable05,
        Preset::TemperedStable15,
        Preset::Diffusion2dBounded,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Constant => "constant",
            Preset::FirstOrder1d => "first_order_1d",
            Preset::DiffusionMerton1d => "diffusion_merton_1d",
            Preset::TemperedStable05 => "tempered_stable_05",
            Preset::TemperedStable15 => "tempered_stable_15",
            Preset::Diffusion2dBounded => "diffusion_2d_bounded",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| AnalysisError::Invalid(format!("unknown preset `{s}`")))
    }
}

/// A preset with its coupling and study settings.
#[derive(Clone)]
pub struct PresetCase {
    pub preset: Preset,
    pub pipeline: Pipeline,
    /// Exact solution when the source is manufactured.
    pub manufactured: Option<ManufacturedCase>,
    pub coupling: ParameterCase,
    pub alpha: f64,
    pub ell: f64,
    pub default_h: f64,
    pub study_h: Vec<f64>,
    pub gate: Gate,
}

impl PresetCase {
    pub fn discretization(&self, h: f64) -> Discretization {
        select_parameters(h, self.alpha, self.ell, self.coupling)
    }
}

/// Interval used by every 1-D manufactured preset.
pub const BOX_1D: f64 = 0.75;

/// `exp(-(x - 0.1)^2 / 0.64) + 0.3 sin(2x + 0.4)`.
pub fn reference_solution_1d() -> SharedFunction {
    Arc::new(Sum(vec![
        Arc::new(Gaussian {
            center: vec![0.1],
            width: 0.8,
            amp: 1.0,
        }),
        Arc::new(Sinusoid {
            k: vec![2.0],
            phase: 0.4,
            amp: 0.3,
        }),
    ]))
}

fn powers(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|p| 2f64.powi(-p)).collect()
}

fn builder_1d(sigma: bool) -> ProblemBuilder {
    let b = ProblemBuilder::new(1, ControlSet::indexed(2).unwrap())
        .discount(|x, _| 2.5 + 0.5 * x[0].cos())
        .eta1(|x, v| Mat::scalar(if v == 0 { 0.05 * (1.0 + 0.3 * x[0].sin()) } else { 0.04 }))
        .jump_shape(JumpShape::identity(1));
    if sigma {
        b.sigma(|x, v| Mat::scalar(if v == 0 { 0.3 * (1.0 + 0.2 * x[0].sin()) } else { 0.2 }))
            .drift(|x, v| vec![if v == 0 { 0.2 * x[0].cos() } else { -0.1 }])
    } else {
        b.drift(|x, v| vec![if v == 0 { 0.5 + 0.2 * x[0].sin() } else { -0.3 + 0.1 * x[0] }])
    }
}

fn manufactured_case(
    preset: Preset,
    spec: ProblemSpec,
    model: LevyModel,
    coupling: ParameterCase,
    study_h: Vec<f64>,
    gate: Gate,
) -> Result<PresetCase, AnalysisError> {
    let bounds = Bounds::cube(1, BOX_1D);
    let mut spec = spec;
    spec.sample_region = bounds.clone();
    let case = manufacture(reference_solution_1d(), &spec, Some(&model), 0, 0.25)?;
    let u = case.u_star.clone();
    let pipeline = Pipeline::new(case.problem.clone(), Some(model.clone()), bounds)
        .with_exterior(Arc::new(move |x: &[f64]| u.value(x)));
    Ok(PresetCase {
        preset,
        pipeline,
        manufactured: Some(case),
        coupling,
        alpha: model.alpha(),
        ell: model.tail_rate(),
        default_h: 2f64.powi(-6),
        study_h,
        gate,
    })
}

/// Builds a preset; manufactured presets run their residual check here.
pub fn build_preset(preset: Preset) -> Result<PresetCase, AnalysisError> {
    match preset {
        Preset::Constant => {
            let mut spec = ProblemBuilder::new(1, ControlSet::indexed(1).unwrap())
                .source(|_, _| 1.0)
                .discount(|_, _| 1.0)
                .build();
            let bounds = Bounds::cube(1, 1.0);
            spec.sample_region = bounds.clone();
            let case = manufacture(Arc::new(Constant { dim: 1, value: 1.0 }), &spec, None, 0, 0.0)?;
            Ok(PresetCase {
                preset,
                pipeline: Pipeline::new(case.problem.clone(), None, bounds),
                manufactured: Some(case),
                coupling: ParameterCase::Bounded,
                alpha: 0.0,
                ell: 1.0,
                default_h: 0.1,
                study_h: powers(3, 7),
                gate: Gate::AtLeast(0.9),
            })
        }
        Preset::FirstOrder1d => {
            let model = builtin_model(BuiltinModel::Merton, &[1.0, 0.3, 0.1, 10.0])?;
            manufactured_case(
                preset,
                builder_1d(false).build(),
                model,
                ParameterCase::FirstOrder,
                powers(4, 8),
                Gate::AtLeast(0.4),
            )
        }
        Preset::DiffusionMerton1d => {
            let model = builtin_model(BuiltinModel::Merton, &[1.0, 0.3, 0.1, 10.0])?;
            manufactured_case(
                preset,
                builder_1d(true).build(),
                model,
                ParameterCase::Bounded,
                powers(4, 8),
                Gate::AtLeast(0.25),
            )
        }
        Preset::TemperedStable05 => {
            let model = builtin_model(BuiltinModel::TemperedStable, &[0.5, 0.5, 1.0, 2.0, 2.0])?;
            manufactured_case(
                preset,
                builder_1d(true).form(EquationForm::F).build(),
                model,
                ParameterCase::CaseI,
                powers(4, 8),
                Gate::AtLeast(0.25),
            )
        }
        Preset::TemperedStable15 => {
            let model = builtin_model(BuiltinModel::TemperedStable, &[1.5, 0.5, 1.0, 2.0, 2.0])?;
            manufactured_case(
                preset,
                builder_1d(true).form(EquationForm::J).build(),
                model,
                ParameterCase::CaseII,
                powers(4, 8),
                Gate::Informational,
            )
        }
        Preset::Diffusion2dBounded => {
            let delta: f64 = 0.3;
            let norm = 1.0 / (2.0 * std::f64::consts::PI * delta * delta);
            let model = LevyModel::custom(
                "gaussian_2d",
                2,
                0.0,
                10.0,
                Arc::new(move |z: &[f64]| norm * (-(z[0] * z[0] + z[1] * z[1]) / (2.0 * delta * delta)).exp()),
            )?
            .with_bounded_density(true);
            let bounds = Bounds::cube(2, BOX_1D);
            let mut spec = ProblemBuilder::new(2, ControlSet::indexed(2).unwrap())
                .noise_dim(2)
                .sigma(|_, v| {
                    if v == 0 {
                        Mat::diagonal(&[0.3, 0.2])
                    } else {
                        Mat::from_row_major(2, 2, vec![0.2, 0.1, 0.0, 0.25])
                    }
                })
                .drift(|x, v| {
                    if v == 0 {
                        vec![0.2 * x[1].sin(), -0.1 * x[0]]
                    } else {
                        vec![-0.1, 0.1]
                    }
                })
                .discount(|x, _| 2.5 + 0.3 * (x[0] + x[1]).cos())
                .source(|x, v| x[0].cos() * x[1].sin() + 0.5 + 0.3 * v as f64)
                .eta1(|_, _| Mat::identity(2).scale(0.05))
                .jump_shape(JumpShape::identity(2))
                .build();
            spec.sample_region = bounds.clone();
            Ok(PresetCase {
                preset,
                pipeline: Pipeline::new(spec, Some(model), bounds),
                manufactured: None,
                coupling: ParameterCase::Bounded,
                alpha: 0.0,
                ell: 10.0,
                default_h: 2f64.powi(-4),
                study_h: Vec::new(),
                gate: Gate::Informational,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::pipeline::SolverOptions;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn constant_preset_fixed_point() {
        let c = build_preset(Preset::Constant).unwrap();
        let d = c.discretization(0.1);
        let s = c
            .pipeline
            .solve(&d, &SolverOptions {
                tol: 1e-12,
                ..Default::default()
            })
            .unwrap();
        let exact = 0.1 / (1.0 - (-0.1f64).exp());
        assert!(s.outcome.nodal_solution.iter().all(|u| (u - exact).abs() < 1e-10));
    }

    #[test]
    fn manufactured_presets_pass_their_residual_check() {
        for p in [Preset::FirstOrder1d, Preset::TemperedStable05, Preset::TemperedStable15] {
            let c = build_preset(p).unwrap();
            let m = c.manufactured.unwrap();
            assert!(m.residual <= 10.0 * m.oracle_tol, "{p}: {}", m.residual);
        }
    }
}
