use crate::control_problem::ProblemSpec;
use crate::levy_measure::{AnnulusOptions, TruncatedMeasure};

use super::{CompensatedCoefficients, SchemeError};

/// Mesh-free generator of the scheme at `x` for control `v`:
/// `e^{-h lambda} L_h phi + (1 - e^{-h lambda}) / (h lambda) int [phi(x + eta) - phi(x)] nu_{r,R}`,
/// where `L_h phi = (1 / (K h)) sum_k [phi(x + h b + D_k) - phi(x)]` over the
/// `K` semi-Lagrangian foot points and `lambda` is the analytic mass.
pub fn semi_discrete_apply(
    spec: &ProblemSpec,
    coeffs: &CompensatedCoefficients,
    measure: Option<&TruncatedMeasure>,
    h: f64,
    v: usize,
    phi: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
) -> Result<f64, SchemeError> {
    let n = spec.dim();
    let p0 = phi(x);
    let disp = coeffs.displacements(spec, x, v, h);
    let mut y = vec![0.0; n];
    let mut local = 0.0;
    for d in &disp {
        for a in 0..n {
            y[a] = x[a] + d[a];
        }
        local += phi(&y) - p0;
    }
    local /= disp.len() as f64 * h;
    let Some(m) = measure else {
        return Ok(local);
    };
    let lambda = m.mass();
    if lambda == 0.0 {
        return Ok(local);
    }
    let e = spec.eta1(x, v);
    let shape = spec.jump_shape();
    let jump = m.integrate_vec(
        0.0,
        f64::INFINITY,
        1,
        |z, o| {
            let eta = e.matvec(&shape.eval(z));
            let y: Vec<f64> = x.iter().zip(&eta).map(|(a, b)| a + b).collect();
            o[0] = phi(&y) - p0;
        },
        &AnnulusOptions::default(),
    )?[0];
    let keep = (-h * lambda).exp();
    Ok(keep * local + (1.0 - keep) / (h * lambda) * jump)
}
