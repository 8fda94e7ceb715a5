//! Empirical verification harness: oracles, manufactured solutions,
//! parameter couplings and convergence studies.

pub mod functions;
pub mod oracle;
pub mod params;
pub mod pipeline;
pub mod presets;
pub mod studies;

use std::fmt::Write as _;

use thiserror::Error;

use crate::levy_measure::LevyError;
use crate::mesh::MeshError;
use crate::quadrature::QuadratureError;
use crate::scheme::SchemeError;

pub use functions::TestFunction;
pub use oracle::{
    continuous_operator_oracle, generator_oracle, jump_oracle, manufacture, truncated_generator_oracle,
    ManufacturedCase, OracleOptions,
};
pub use params::{select_parameters, Discretization, ParameterCase};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Invalid(String),
    #[error("manufactured residual {0:.3e} exceeds 10 x oracle tolerance")]
    ResidualTooLarge(f64),
    #[error(transparent)]
    Levy(#[from] LevyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Minimum number of levels for a fitted order.
pub const MIN_FIT_LEVELS: usize = 4;

/// Acceptance rule applied to a fitted order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    AtLeast(f64),
    Within { target: f64, tol: f64 },
    /// Reported only.
    Informational,
}

impl Gate {
    pub fn accepts(&self, order: f64) -> Option<bool> {
        match *self {
            Gate::AtLeast(t) => Some(order >= t),
            Gate::Within { target, tol } => Some((order - target).abs() <= tol),
            Gate::Informational => None,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Gate::AtLeast(t) => format!(">={t}"),
            Gate::Within { target, tol } => format!("{target}+-{tol}"),
            Gate::Informational => "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyLevel {
    pub disc: Discretization,
    /// Variable the error is fitted against (h, r, k or s).
    pub abscissa: f64,
    pub error: f64,
    pub iterations: usize,
    pub seconds: f64,
    /// Error with the excluded boundary layer widened by one cell.
    pub error_wider: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub name: String,
    pub abscissa_name: String,
    pub levels: Vec<StudyLevel>,
    pub gate: Gate,
    /// `None` with fewer than [`MIN_FIT_LEVELS`] usable levels.
    pub fitted_order: Option<f64>,
    pub details: Vec<String>,
}

impl StudyReport {
    pub fn new(name: impl Into<String>, abscissa_name: impl Into<String>, levels: Vec<StudyLevel>, gate: Gate) -> Self {
        let usable: Vec<&StudyLevel> = levels
            .iter()
            .filter(|l| l.error > 0.0 && l.error.is_finite() && l.abscissa > 0.0)
            .collect();
        let fitted_order = (usable.len() >= MIN_FIT_LEVELS).then(|| {
            let xs: Vec<f64> = usable.iter().map(|l| l.abscissa).collect();
            let ys: Vec<f64> = usable.iter().map(|l| l.error).collect();
            fit_slope(&xs, &ys)
        });
        Self {
            name: name.into(),
            abscissa_name: abscissa_name.into(),
            levels,
            gate,
            fitted_order,
            details: Vec::new(),
        }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.error).collect()
    }

    /// `None` when ungated or unfitted.
    pub fn pass(&self) -> Option<bool> {
        self.fitted_order.and_then(|o| self.gate.accepts(o))
    }

    /// CSV rows `h,k,dz,r,R,error,iterations,seconds` and a summary
    /// `fitted_order,threshold,pass`. Lines starting with `#` are comments;
    /// `header` lines are written first as comments. With `timing = false`
    /// the seconds column is zero so output is byte-reproducible.
    pub fn to_csv(&self, header: &[String], timing: bool) -> String {
        let mut s = String::new();
        for h in header {
            writeln!(s, "# {h}").unwrap();
        }
        writeln!(s, "# study={} abscissa={}", self.name, self.abscissa_name).unwrap();
        writeln!(s, "h,k,dz,r,R,error,iterations,seconds").unwrap();
        for l in &self.levels {
            let d = &l.disc;
            let secs = if timing { l.seconds } else { 0.0 };
            writeln!(
                s,
                "{},{},{},{},{},{:e},{},{:.3}",
                d.h, d.k, d.dz, d.r, d.big_r, l.error, l.iterations, secs
            )
            .unwrap();
        }
        writeln!(s, "fitted_order,threshold,pass").unwrap();
        let order = self.fitted_order.map_or("nofit".to_string(), |o| format!("{o:.4}"));
        let pass = self.pass().map_or("n/a".to_string(), |p| p.to_string());
        writeln!(s, "{order},{},{pass}", self.gate.describe()).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(x: f64, e: f64) -> StudyLevel {
        StudyLevel {
            disc: Discretization {
                h: x,
                k: x,
                dz: x,
                r: 0.0,
                big_r: 2.0,
            },
            abscissa: x,
            error: e,
            iterations: 1,
            seconds: 0.5,
            error_wider: None,
        }
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [0.5, 0.25, 0.125, 0.0625];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((fit_slope(&xs, &ys) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn fewer_than_four_levels_are_not_fitted() {
        let r = StudyReport::new("t", "h", vec![level(0.5, 0.1), level(0.25, 0.05), level(0.125, 0.025)], Gate::AtLeast(0.9));
        assert_eq!(r.fitted_order, None);
        assert_eq!(r.pass(), None);
        assert!(r.to_csv(&[], true).ends_with("nofit,>=0.9,n/a\n"));
    }

    #[test]
    fn csv_layout() {
        let levels = (1..=4).map(|i| level(2f64.powi(-i), 2f64.powi(-i))).collect();
        let r = StudyReport::new("t", "h", levels, Gate::AtLeast(0.9));
        let csv = r.to_csv(&["config a=1".into()], false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# config a=1");
        assert_eq!(lines[2], "h,k,dz,r,R,error,iterations,seconds");
        assert_eq!(lines[3], "0.5,0.5,0.5,0,2,5e-1,1,0.000");
        assert_eq!(lines[7], "fitted_order,threshold,pass");
        assert_eq!(lines[8], "1.0000,>=0.9,true");
    }
}
