//! Nonnegative-weight midpoint rules on the truncation annulus.

use std::f64::consts::PI;

use thiserror::Error;

use crate::levy_measure::TruncatedMeasure;
use crate::linalg::pairwise_sum;

/// Default cap on the number of quadrature nodes.
pub const DEFAULT_MAX_NODES: usize = 2_000_000;

/// Radius below which shells are refined proportionally to their radius.
const GRADING_RADIUS: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature needs {needed} nodes, above the cap of {cap}")]
    BudgetExceeded { needed: usize, cap: usize },
    #[error("quadrature step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("jump dimension {0} unsupported by the annulus rule")]
    UnsupportedDimension(usize),
}

/// Quadrature nodes `z_j` with weights `omega_j = cell measure * m(z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    dz: f64,
    total: f64,
}

/// Radial cells `(lo, hi)` covering `[r, R]`.
///
/// Shells `[r 2^j, r 2^{j+1}]` below the grading radius are split at spacing
/// `dz * shell_inner / 0.5`, the rest at spacing `dz`. A zero inner radius
/// starts with a uniform shell `[0, min(0.5, R)]`.
fn radial_cells(r: f64, big_r: f64, dz: f64) -> Vec<(f64, f64, f64)> {
    let mut shells = Vec::new();
    let mut lo = if r > 0.0 { r } else { GRADING_RADIUS.min(big_r) };
    if r == 0.0 {
        shells.push((0.0, lo));
    }
    while lo < big_r {
        let hi = (2.0 * lo).min(big_r);
        shells.push((lo, hi));
        lo = hi;
    }
    let mut cells = Vec::new();
    for (a, b) in shells {
        let spacing = if a == 0.0 { dz } else { dz * (a / GRADING_RADIUS).min(1.0) };
        let n = ((b - a) / spacing - 1e-9).ceil().max(1.0) as usize;
        let w = (b - a) / n as f64;
        for i in 0..n {
            let c_lo = a + i as f64 * w;
            let c_hi = if i + 1 == n { b } else { a + (i + 1) as f64 * w };
            cells.push((c_lo, c_hi, spacing));
        }
    }
    cells
}

/// Midpoint rule on `{r < |z| < R}` with density folded into the weights.
///
/// In 1-D the radial cells are mirrored to both signs. In 2-D each radial
/// cell is split into polar sectors whose arc length at the mid radius is at
/// most the local spacing; the cell measure `rho_mid * d_rho * d_theta` is the
/// exact polar-cell area.
pub fn build_annulus_rule(
    measure: &TruncatedMeasure,
    dz: f64,
    max_nodes: usize,
) -> Result<QuadratureRule, QuadratureError> {
    if !(dz > 0.0) || !dz.is_finite() {
        return Err(QuadratureError::InvalidStep(dz));
    }
    let dim = measure.model().dim();
    let cells = radial_cells(measure.r(), measure.big_r(), dz);
    let sectors = |c: &(f64, f64, f64)| -> usize {
        let mid = 0.5 * (c.0 + c.1);
        ((2.0 * PI * mid / c.2).ceil() as usize).max(4)
    };
    let needed: usize = match dim {
        1 => 2 * cells.len(),
        2 => cells.iter().map(sectors).sum(),
        d => return Err(QuadratureError::UnsupportedDimension(d)),
    };
    if needed > max_nodes {
        return Err(QuadratureError::BudgetExceeded {
            needed,
            cap: max_nodes,
        });
    }
    let model = measure.model();
    let mut nodes = Vec::with_capacity(needed * dim);
    let mut weights = Vec::with_capacity(needed);
    for c in &cells {
        let mid = 0.5 * (c.0 + c.1);
        let len = c.1 - c.0;
        if dim == 1 {
            for z in [-mid, mid] {
                nodes.push(z);
                weights.push(len * model.density(&[z]));
            }
        } else {
            let n = sectors(c);
            let dtheta = 2.0 * PI / n as f64;
            for s in 0..n {
                let theta = (s as f64 + 0.5) * dtheta;
                let z = [mid * theta.cos(), mid * theta.sin()];
                nodes.extend_from_slice(&z);
                weights.push(mid * len * dtheta * model.density(&z));
            }
        }
    }
    let total = pairwise_sum(&weights);
    Ok(QuadratureRule {
        dim,
        nodes,
        weights,
        dz,
        total,
    })
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..][..self.dim]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sum of the weights, `lambda_Q`.
    pub fn total_weight(&self) -> f64 {
        self.total
    }

    /// `sum_j g(z_j) omega_j` with pairwise summation.
    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = (0..self.len()).map(|j| g(self.node(j)) * self.weights[j]).collect();
        pairwise_sum(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_measure::{builtin_model, truncate, BuiltinModel, LevyModel};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn flat(dim: usize) -> LevyModel {
        LevyModel::custom("flat", dim, 0.0, 1.0, Arc::new(|_| 1.0)).unwrap().with_bounded_density(true)
    }

    fn power(alpha: f64) -> LevyModel {
        LevyModel::custom("power", 1, alpha, 1.0, Arc::new(move |z: &[f64]| z[0].abs().powf(-1.0 - alpha))).unwrap()
    }

    #[test]
    fn uniform_rule_on_flat_density() {
        let m = truncate(&flat(1), 0.5, 1.5).unwrap();
        let q = build_annulus_rule(&m, 0.25, DEFAULT_MAX_NODES).unwrap();
        assert_eq!(q.len(), 8);
        assert!(q.weights().iter().all(|w| (w - 0.25).abs() < 1e-15));
        assert!((q.total_weight() - 2.0).abs() < 1e-15);
        assert!((0..q.len()).all(|j| {
            let z = q.node(j)[0].abs();
            z > 0.5 && z < 1.5
        }));
        assert_eq!(q.integrate(|_| 1.0), q.total_weight());
    }

    #[test]
    fn singular_density_mass_within_two_percent() {
        let m = truncate(&power(0.5), 0.1, 1.0).unwrap();
        let q = build_annulus_rule(&m, 0.001, DEFAULT_MAX_NODES).unwrap();
        // 2 * int_{0.1}^{1} z^{-1.5} dz
        let exact = 4.0 * (0.1f64.powf(-0.5) - 1.0);
        assert!((q.total_weight() / exact - 1.0).abs() < 0.02, "{} {exact}", q.total_weight());
        assert!((m.mass() / exact - 1.0).abs() < 1e-9);
    }

    #[test]
    fn polar_rule_area() {
        let m = truncate(&flat(2), 0.25, 2.0).unwrap();
        let q = build_annulus_rule(&m, 0.05, DEFAULT_MAX_NODES).unwrap();
        let exact = PI * (4.0 - 0.0625);
        assert!((q.total_weight() - exact).abs() < 1e-12);
        let second = q.integrate(|z| z[0] * z[0]);
        let exact2 = PI / 4.0 * (16.0 - 0.25f64.powi(4));
        assert!((second / exact2 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bounded_rule_starts_at_origin() {
        let merton = builtin_model(BuiltinModel::Merton, &[1.0, 0.3, 0.1]).unwrap();
        let m = truncate(&merton, 0.0, 2.0).unwrap();
        let q = build_annulus_rule(&m, 0.01, DEFAULT_MAX_NODES).unwrap();
        assert!((q.total_weight() / m.mass() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn budget_is_enforced() {
        let m = truncate(&flat(2), 0.1, 2.0).unwrap();
        assert!(matches!(
            build_annulus_rule(&m, 1e-3, 1000),
            Err(QuadratureError::BudgetExceeded { cap: 1000, .. })
        ));
        assert!(matches!(build_annulus_rule(&m, -1.0, 1000), Err(QuadratureError::InvalidStep(_))));
    }

    #[test]
    fn first_order_convergence_on_lipschitz_integrand() {
        let ts = builtin_model(BuiltinModel::TemperedStable, &[0.5, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let m = truncate(&ts, 0.2, 2.0).unwrap();
        let g = |z: &[f64]| (z[0] - 0.37).abs();
        let exact = m.integrate(g).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for p in 4..=9 {
            let dz = 2f64.powi(-p);
            let q = build_annulus_rule(&m, dz, DEFAULT_MAX_NODES).unwrap();
            xs.push(dz.ln());
            ys.push((q.integrate(g) - exact).abs().ln());
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        assert!(slope >= 0.9, "slope {slope}");
    }

    #[test]
    fn total_weight_converges_to_mass() {
        let merton = builtin_model(BuiltinModel::Merton, &[1.0, 0.5, 0.2]).unwrap();
        let m = truncate(&merton, 0.1, 3.0).unwrap();
        let err = |dz: f64| (build_annulus_rule(&m, dz, DEFAULT_MAX_NODES).unwrap().total_weight() - m.mass()).abs();
        assert!(err(0.01) < err(0.04) / 3.5);
    }

    proptest! {
        #[test]
        fn monotone_and_linear(a in -3.0f64..3.0, s in 0.0f64..2.0, t in -1.0f64..1.0) {
            let m = truncate(&power(1.2), 0.05, 2.0).unwrap();
            let q = build_annulus_rule(&m, 0.05, DEFAULT_MAX_NODES).unwrap();
            let g1 = |z: &[f64]| (z[0] * s + t).sin();
            let g2 = |z: &[f64]| (z[0] * s + t).sin() + z[0].abs();
            prop_assert!(q.integrate(g1) <= q.integrate(g2));
            prop_assert!(q.integrate(|z| g1(z).abs()) >= 0.0);
            let lhs = q.integrate(|z| a * g1(z) + g2(z));
            let rhs = a * q.integrate(g1) + q.integrate(g2);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
