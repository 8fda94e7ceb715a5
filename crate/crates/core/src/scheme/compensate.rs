//! Drift and diffusion corrections replacing the truncated small jumps.

use crate::control_problem::{EquationForm, ProblemSpec};
use crate::levy_measure::{AnnulusOptions, TruncatedMeasure};
use crate::linalg::{sqrt_psd, Mat};

use super::SchemeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensationCase {
    /// No small jumps removed (`r = 0`).
    Bounded,
    /// `b + eta1 int_{0<|z|<r} phi nu`; requires `alpha < 1`.
    CompensatedF,
    /// `b - eta1 int_{r<|z|<1} phi nu`.
    CompensatedJ,
}

/// Measure-side constants of the compensated scheme. Per-point coefficients
/// are `O(1)` to evaluate thanks to the factorization `eta = eta1 phi`.
#[derive(Debug, Clone)]
pub struct CompensatedCoefficients {
    pub case: CompensationCase,
    /// `sqrt(int_{0<|z|<r} phi phi^T nu)`, symmetric PSD, `N x N`.
    pub root: Mat,
    /// Measure-side drift correction, multiplied by `eta1(x, v)`.
    pub drift_shift: Vec<f64>,
    /// Column count of the padded diffusion factors.
    pub columns: usize,
    /// Whether the four-point (split diffusion) stencil is used.
    pub split: bool,
}

/// Computes the compensators for `spec` against `measure`.
///
/// With `r = 0` the case is [`CompensationCase::Bounded`]; the `J` form
/// still carries its `-eta1 int_{|z|<1} phi nu` drift there.
pub fn compensate(spec: &ProblemSpec, measure: &TruncatedMeasure) -> Result<CompensatedCoefficients, SchemeError> {
    let n = spec.dim();
    let shape = spec.jump_shape();
    if shape.out_dim() != n {
        return Err(SchemeError::Unsupported(format!(
            "jump shape maps into R^{}, state space is R^{n}",
            shape.out_dim()
        )));
    }
    let model = measure.model();
    let r = measure.r();
    let opts = AnnulusOptions::default();
    let phi = |z: &[f64], o: &mut [f64]| o.copy_from_slice(&shape.eval(z));
    let j_shift = |lo: f64| -> Result<Vec<f64>, SchemeError> {
        if lo >= 1.0 {
            return Ok(vec![0.0; n]);
        }
        let v = model.integrate_vec(lo, 1.0, n, phi, &opts)?;
        Ok(v.into_iter().map(|x| -x).collect())
    };
    let d = spec.noise_dim();
    if r == 0.0 {
        let drift_shift = match spec.form() {
            EquationForm::F => vec![0.0; n],
            EquationForm::J => j_shift(0.0)?,
        };
        return Ok(CompensatedCoefficients {
            case: CompensationCase::Bounded,
            root: Mat::zeros(n, n),
            drift_shift,
            columns: d,
            split: false,
        });
    }
    let (case, drift_shift) = match spec.form() {
        EquationForm::F => {
            if model.alpha() >= 1.0 {
                return Err(SchemeError::Unsupported(format!(
                    "form F needs alpha < 1 for a finite small-jump drift, got alpha = {}",
                    model.alpha()
                )));
            }
            (CompensationCase::CompensatedF, model.integrate_vec(0.0, r, n, phi, &opts)?)
        }
        EquationForm::J => (CompensationCase::CompensatedJ, j_shift(r)?),
    };
    let second = model.integrate_outer_product(0.0, r, n, |z| shape.eval(z))?;
    Ok(CompensatedCoefficients {
        case,
        root: sqrt_psd(&second),
        drift_shift,
        columns: d.max(n),
        split: true,
    })
}

impl CompensatedCoefficients {
    /// Coefficients for a problem without jumps: plain `sigma` and `b`.
    pub fn without_jumps(spec: &ProblemSpec) -> Self {
        let n = spec.dim();
        Self {
            case: CompensationCase::Bounded,
            root: Mat::zeros(n, n),
            drift_shift: vec![0.0; n],
            columns: spec.noise_dim(),
            split: false,
        }
    }

    /// Effective drift at `(x, v)`.
    pub fn drift(&self, spec: &ProblemSpec, x: &[f64], v: usize) -> Vec<f64> {
        let mut b = spec.drift(x, v);
        if self.drift_shift.iter().any(|s| *s != 0.0) {
            let e = spec.eta1(x, v).matvec(&self.drift_shift);
            for (bi, ei) in b.iter_mut().zip(e) {
                *bi += ei;
            }
        }
        b
    }

    /// The pair `sigma +- eta1 C`, padded to [`columns`](Self::columns)
    /// columns. In the bounded case both entries equal `sigma`.
    pub fn sigma_pair(&self, spec: &ProblemSpec, x: &[f64], v: usize) -> (Mat, Mat) {
        let s = spec.sigma(x, v).pad_cols(self.columns);
        if !self.split {
            return (s.clone(), s);
        }
        let j = spec.eta1(x, v).matmul(&self.root).pad_cols(self.columns);
        (s.add(&j), s.sub(&j))
    }

    /// Number of foot points per row: `2d` or `4d'`.
    pub fn stencil_size(&self) -> usize {
        if self.split {
            4 * self.columns
        } else {
            2 * self.columns
        }
    }

    /// Foot-point displacements `h b + D_k` for the semi-Lagrangian stencil.
    pub fn displacements(&self, spec: &ProblemSpec, x: &[f64], v: usize, h: f64) -> Vec<Vec<f64>> {
        let n = spec.dim();
        let b = self.drift(spec, x, v);
        let (sp, sm) = self.sigma_pair(spec, x, v);
        let scale = (self.columns as f64 * h).sqrt();
        let mats: Vec<&Mat> = if self.split { vec![&sp, &sm] } else { vec![&sp] };
        let mut out = Vec::with_capacity(self.stencil_size());
        for m in mats {
            for col in 0..self.columns {
                for sign in [1.0, -1.0] {
                    out.push((0..n).map(|i| h * b[i] + sign * scale * m[(i, col)]).collect());
                }
            }
        }
        out
    }
}
