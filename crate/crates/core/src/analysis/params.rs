//! Parameter couplings `(r, R, k, dz)` as functions of the time step.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParameterCase {
    /// Bounded measure with diffusion: `k = dz = h^{5/4}`, no small-jump cut.
    Bounded,
    /// Bounded measure, `sigma = 0`: `k = dz = h^{3/2}`.
    FirstOrder,
    /// `alpha < 1`, form F: `r = h^{3/(6+alpha)}`.
    CaseI,
    /// `alpha >= 1`, form J: `r = h^{3/(3+5 alpha)}`.
    CaseII,
}

impl std::str::FromStr for ParameterCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bounded" => Ok(Self::Bounded),
            "first_order" => Ok(Self::FirstOrder),
            "case_i" => Ok(Self::CaseI),
            "case_ii" => Ok(Self::CaseII),
            other => Err(format!("unknown parameter case `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub h: f64,
    pub k: f64,
    pub dz: f64,
    pub r: f64,
    pub big_r: f64,
}

/// Couples `(r, R, k, dz)` to `h`. `R = max(2, ln(1/h) / ell)` makes the
/// tail term `e^{-ell R}` at most `h`.
pub fn select_parameters(h: f64, alpha: f64, ell: f64, case: ParameterCase) -> Discretization {
    let r = match case {
        ParameterCase::Bounded | ParameterCase::FirstOrder => 0.0,
        ParameterCase::CaseI => h.powf(3.0 / (6.0 + alpha)),
        ParameterCase::CaseII => h.powf(3.0 / (3.0 + 5.0 * alpha)),
    };
    let big_r = (h.recip().ln() / ell).max(2.0);
    let k = match case {
        ParameterCase::FirstOrder => h.powf(1.5),
        _ => h.powf(1.25),
    };
    Discretization { h, k, dz: k, r, big_r }
}
