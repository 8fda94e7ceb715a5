//! Levy jump densities, two-scale truncation and annulus integrals.

pub mod annulus;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::Mat;
pub use annulus::AnnulusOptions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevyError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate annulus: inner radius {inner} must be below outer radius {outer}")]
    DegenerateAnnulus { inner: f64, outer: f64 },
    #[error("annulus integral did not converge: {0}")]
    NonConvergent(String),
    #[error("jump dimension {0} is unsupported (only 1 and 2)")]
    UnsupportedDimension(usize),
}

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A Levy jump density `m` on `R^M \ {0}`.
#[derive(Clone)]
pub struct LevyModel {
    name: String,
    dim: usize,
    alpha: f64,
    tail_rate: f64,
    bounded: bool,
    density: DensityFn,
}

impl fmt::Debug for LevyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("tail_rate", &self.tail_rate)
            .field("bounded", &self.bounded)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinModel {
    Merton,
    VarianceGamma,
    TemperedStable,
}

impl FromStr for BuiltinModel {
    type Err = LevyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "merton" => Ok(Self::Merton),
            "variance_gamma" => Ok(Self::VarianceGamma),
            "tempered_stable" => Ok(Self::TemperedStable),
            other => Err(LevyError::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }
}

impl LevyModel {
    /// Wraps a user density. `alpha` is the singularity exponent at the
    /// origin and `tail_rate` the exponential decay rate at infinity.
    pub fn custom(
        name: impl Into<String>,
        dim: usize,
        alpha: f64,
        tail_rate: f64,
        density: DensityFn,
    ) -> Result<Self, LevyError> {
        if dim == 0 || dim > 2 {
            return Err(LevyError::UnsupportedDimension(dim));
        }
        if !(0.0..2.0).contains(&alpha) {
            return Err(LevyError::InvalidParameter(format!(
                "alpha must lie in [0, 2), got {alpha}"
            )));
        }
        if !(tail_rate > 0.0) {
            return Err(LevyError::InvalidParameter(format!(
                "tail_rate must be positive, got {tail_rate}"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            alpha,
            tail_rate,
            bounded: false,
            density,
        })
    }

    /// Marks the density as bounded near the origin (finite total mass), which
    /// allows truncation with inner radius 0.
    pub fn with_bounded_density(mut self, bounded: bool) -> Self {
        self.bounded = bounded;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tail_rate(&self) -> f64 {
        self.tail_rate
    }

    pub fn is_bounded(&self) -> bool {
        self.bounded
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        (self.density)(z)
    }

    pub fn density_fn(&self) -> &DensityFn {
        &self.density
    }

    /// Vector-valued annulus integral `int_{inner<|z|<outer} g(z) m(z) dz`.
    pub fn integrate_vec<G>(
        &self,
        inner: f64,
        outer: f64,
        out_dim: usize,
        g: G,
        opts: &AnnulusOptions,
    ) -> Result<Vec<f64>, LevyError>
    where
        G: Fn(&[f64], &mut [f64]),
    {
        let density = |z: &[f64]| (self.density)(z);
        annulus::integrate(self.dim, &density, inner, outer, out_dim, g, opts)
    }

    pub fn integrate<G>(&self, inner: f64, outer: f64, g: G) -> Result<f64, LevyError>
    where
        G: Fn(&[f64]) -> f64,
    {
        self.integrate_vec(inner, outer, 1, |z, o| o[0] = g(z), &AnnulusOptions::default())
            .map(|v| v[0])
    }

    /// Matrix-valued integral of `g(z) g(z)^T`, symmetrized.
    pub fn integrate_outer_product<G>(&self, inner: f64, outer: f64, n: usize, g: G) -> Result<Mat, LevyError>
    where
        G: Fn(&[f64]) -> Vec<f64>,
    {
        let flat = self.integrate_vec(
            inner,
            outer,
            n * n,
            |z, o| {
                let v = g(z);
                for i in 0..n {
                    for j in 0..n {
                        o[i * n + j] = v[i] * v[j];
                    }
                }
            },
            &AnnulusOptions::default(),
        )?;
        let mut m = Mat::from_row_major(n, n, flat);
        for i in 0..n {
            for j in (i + 1)..n {
                let s = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = s;
                m[(j, i)] = s;
            }
        }
        Ok(m)
    }

    /// Empirical envelope constants `(C_near, C_far)` such that
    /// `m(z) <= C_near |z|^{-(M+alpha)}` for sampled `|z| <= 1` and
    /// `m(z) <= C_far exp(-tail_rate |z|)` for sampled `1 < |z| <= 30`.
    pub fn envelope_constants(&self) -> (f64, f64) {
        let dirs: Vec<Vec<f64>> = match self.dim {
            1 => vec![vec![1.0], vec![-1.0]],
            _ => (0..8)
                .map(|k| {
                    let t = k as f64 * PI / 4.0;
                    vec![t.cos(), t.sin()]
                })
                .collect(),
        };
        let mut near = 0.0_f64;
        let mut far = 0.0_f64;
        let exponent = self.dim as f64 + self.alpha;
        for i in 0..=60 {
            let rho = 10f64.powf(-6.0 + 6.0 * i as f64 / 60.0);
            for d in &dirs {
                let z: Vec<f64> = d.iter().map(|c| c * rho).collect();
                near = near.max(self.density(&z) * rho.powf(exponent));
            }
        }
        for i in 1..=60 {
            let rho = 1.0 + 29.0 * i as f64 / 60.0;
            for d in &dirs {
                let z: Vec<f64> = d.iter().map(|c| c * rho).collect();
                far = far.max(self.density(&z) * (self.tail_rate * rho).exp());
            }
        }
        (near, far)
    }
}

/// Builds one of the built-in 1-D models.
///
/// Parameter layouts:
/// * `merton`: `[lambda, delta, mu]` (optional 4th entry: declared tail rate, default 1)
/// * `variance_gamma`: `[c, g, m]` with density `c e^{-g|z|}/|z|` (z<0), `c e^{-m z}/z` (z>0)
/// * `tempered_stable`: `[alpha, c_minus, c_plus, lambda_minus, lambda_plus]`
pub fn builtin_model(kind: BuiltinModel, params: &[f64]) -> Result<LevyModel, LevyError> {
    let bad = |msg: String| Err(LevyError::InvalidParameter(msg));
    if params.iter().any(|p| !p.is_finite()) {
        return bad("parameters must be finite".into());
    }
    match kind {
        BuiltinModel::Merton => {
            if params.len() != 3 && params.len() != 4 {
                return bad(format!("merton expects [lambda, delta, mu], got {} values", params.len()));
            }
            let (lambda, delta, mu) = (params[0], params[1], params[2]);
            let tail = params.get(3).copied().unwrap_or(1.0);
            if lambda < 0.0 || delta <= 0.0 {
                return bad("merton needs lambda >= 0 and delta > 0".into());
            }
            let norm = lambda / (delta * (2.0 * PI).sqrt());
            let density: DensityFn =
                Arc::new(move |z: &[f64]| norm * (-(z[0] - mu).powi(2) / (2.0 * delta * delta)).exp());
            Ok(LevyModel::custom("merton", 1, 0.0, tail, density)?.with_bounded_density(true))
        }
        BuiltinModel::VarianceGamma => {
            if params.len() != 3 {
                return bad(format!("variance_gamma expects [c, g, m], got {} values", params.len()));
            }
            let (c, g, m) = (params[0], params[1], params[2]);
            if c <= 0.0 || g <= 0.0 || m <= 0.0 {
                return bad("variance_gamma needs c, g, m > 0".into());
            }
            let density: DensityFn = Arc::new(move |z: &[f64]| {
                let x = z[0];
                if x > 0.0 {
                    c * (-m * x).exp() / x
                } else if x < 0.0 {
                    c * (g * x).exp() / (-x)
                } else {
                    0.0
                }
            });
            LevyModel::custom("variance_gamma", 1, 0.0, g.min(m), density)
        }
        BuiltinModel::TemperedStable => {
            if params.len() != 5 {
                return bad(format!(
                    "tempered_stable expects [alpha, c_minus, c_plus, lambda_minus, lambda_plus], got {} values",
                    params.len()
                ));
            }
            let (alpha, cm, cp, lm, lp) = (params[0], params[1], params[2], params[3], params[4]);
            if !(alpha > 0.0 && alpha < 2.0) {
                return bad(format!("tempered_stable needs alpha in (0, 2), got {alpha}"));
            }
            if cm < 0.0 || cp < 0.0 || lm < 0.0 || lp < 0.0 {
                return bad("tempered_stable needs c_minus, c_plus, lambda_minus, lambda_plus >= 0".into());
            }
            if cm + cp == 0.0 {
                return bad("tempered_stable needs c_minus + c_plus > 0".into());
            }
            let mut tail = f64::INFINITY;
            if cm > 0.0 {
                tail = tail.min(lm);
            }
            if cp > 0.0 {
                tail = tail.min(lp);
            }
            if !(tail > 0.0) {
                return bad("tempered_stable needs positive tempering on every side carrying mass".into());
            }
            let p = 1.0 + alpha;
            let density: DensityFn = Arc::new(move |z: &[f64]| {
                let x = z[0];
                if x > 0.0 {
                    cp * (-lp * x).exp() / x.powf(p)
                } else if x < 0.0 {
                    cm * (lm * x).exp() / (-x).powf(p)
                } else {
                    0.0
                }
            });
            LevyModel::custom("tempered_stable", 1, alpha, tail, density)
        }
    }
}

/// The restriction of a Levy measure to the annulus `{r < |z| < R}`.
#[derive(Debug, Clone)]
pub struct TruncatedMeasure {
    model: LevyModel,
    r: f64,
    big_r: f64,
    mass: f64,
}

/// Truncates `model` to `{r < |z| < R}` and computes its mass.
///
/// `r = 0` is accepted only for models with bounded density.
pub fn truncate(model: &LevyModel, r: f64, big_r: f64) -> Result<TruncatedMeasure, LevyError> {
    if !(r >= 0.0) || !big_r.is_finite() {
        return Err(LevyError::InvalidParameter(format!(
            "truncation radii must satisfy 0 <= r and finite R, got r={r}, R={big_r}"
        )));
    }
    if r >= big_r {
        return Err(LevyError::DegenerateAnnulus {
            inner: r,
            outer: big_r,
        });
    }
    if r == 0.0 && !model.is_bounded() {
        return Err(LevyError::InvalidParameter(
            "inner radius 0 requires a bounded density".into(),
        ));
    }
    let mass = model.integrate(r, big_r, |_| 1.0)?;
    Ok(TruncatedMeasure {
        model: model.clone(),
        r,
        big_r,
        mass,
    })
}

impl TruncatedMeasure {
    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn big_r(&self) -> f64 {
        self.big_r
    }

    /// Total mass `lambda_{r,R}`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// True when no small jumps were removed (`r = 0`).
    pub fn is_untruncated_near_origin(&self) -> bool {
        self.r == 0.0
    }

    /// Density of the truncated measure (zero outside the annulus).
    pub fn density(&self, z: &[f64]) -> f64 {
        let n = crate::linalg::norm(z);
        if n > self.r && n < self.big_r {
            self.model.density(z)
        } else {
            0.0
        }
    }

    /// Integral of `g` against the truncated measure restricted further to
    /// `{inner < |z| < outer}`.
    pub fn integrate_vec<G>(
        &self,
        inner: f64,
        outer: f64,
        out_dim: usize,
        g: G,
        opts: &AnnulusOptions,
    ) -> Result<Vec<f64>, LevyError>
    where
        G: Fn(&[f64], &mut [f64]),
    {
        let lo = inner.max(self.r);
        let hi = outer.min(self.big_r);
        if hi <= lo {
            return Ok(vec![0.0; out_dim]);
        }
        self.model.integrate_vec(lo, hi, out_dim, g, opts)
    }

    pub fn integrate<G>(&self, g: G) -> Result<f64, LevyError>
    where
        G: Fn(&[f64]) -> f64,
    {
        self.integrate_vec(0.0, f64::INFINITY, 1, |z, o| o[0] = g(z), &AnnulusOptions::default())
            .map(|v| v[0])
    }
}

/// Factor `phi` of a jump amplitude `eta(x, v, z) = eta1(x, v) phi(z)`.
#[derive(Clone)]
pub struct JumpShape {
    phi: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    out_dim: usize,
    /// Envelope constant for `|D phi(z)| <= deriv_bound e^{|z|}`.
    pub deriv_bound: f64,
}

impl fmt::Debug for JumpShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpShape")
            .field("out_dim", &self.out_dim)
            .field("deriv_bound", &self.deriv_bound)
            .finish()
    }
}

impl JumpShape {
    pub fn new(out_dim: usize, deriv_bound: f64, phi: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>) -> Self {
        Self {
            phi,
            out_dim,
            deriv_bound,
        }
    }

    /// `phi(z) = z`.
    pub fn identity(dim: usize) -> Self {
        Self::new(dim, 1.0, Arc::new(|z: &[f64]| z.to_vec()))
    }

    /// `phi(z) = (z_1, 0, ..., 0)` embedding a 1-D jump in `R^n`.
    pub fn first_axis(n: usize) -> Self {
        Self::new(
            n,
            1.0,
            Arc::new(move |z: &[f64]| {
                let mut v = vec![0.0; n];
                v[0] = z[0];
                v
            }),
        )
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        (self.phi)(z)
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Largest `|phi(z)| / (e^{|z|} - 1)` over a radial sample in `(0, 10]`.
    pub fn envelope_constant(&self, jump_dim: usize) -> f64 {
        let mut c = 0.0_f64;
        for i in 1..=200 {
            let rho = 10f64.powf(-4.0 + 5.0 * i as f64 / 200.0);
            let dirs: Vec<Vec<f64>> = if jump_dim == 1 {
                vec![vec![rho], vec![-rho]]
            } else {
                (0..8)
                    .map(|k| {
                        let t = k as f64 * PI / 4.0;
                        vec![rho * t.cos(), rho * t.sin()]
                    })
                    .collect()
            };
            for z in dirs {
                c = c.max(crate::linalg::norm(&self.eval(&z)) / rho.exp_m1());
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(alpha: f64, cm: f64, cp: f64, lm: f64, lp: f64) -> LevyModel {
        builtin_model(BuiltinModel::TemperedStable, &[alpha, cm, cp, lm, lp]).unwrap()
    }

    #[test]
    fn merton_peak_value() {
        let m = builtin_model(BuiltinModel::Merton, &[1.0, 1.0, 0.0]).unwrap();
        assert!((m.density(&[0.0]) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(m.alpha(), 0.0);
        assert!(m.is_bounded());
    }

    #[test]
    fn tempered_stable_value_at_one() {
        let m = ts(0.5, 1.0, 1.0, 1.0, 1.0);
        assert!((m.density(&[1.0]) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((m.density(&[-1.0]) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(m.alpha(), 0.5);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(builtin_model(BuiltinModel::TemperedStable, &[2.0, 1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(builtin_model(BuiltinModel::TemperedStable, &[0.5, -1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(builtin_model(BuiltinModel::Merton, &[1.0, -1.0, 0.0]).is_err());
        assert!(builtin_model(BuiltinModel::VarianceGamma, &[1.0, 0.0, 1.0]).is_err());
        assert!("nig".parse::<BuiltinModel>().is_err());
    }

    #[test]
    fn exponential_density_truncated_mass() {
        let m = LevyModel::custom("exp", 1, 0.0, 1.0, Arc::new(|z: &[f64]| (-z[0].abs()).exp())).unwrap();
        let t = truncate(&m, 0.1, 5.0).unwrap();
        let exact = 2.0 * ((-0.1f64).exp() - (-5.0f64).exp());
        assert!((t.mass() - exact).abs() < 1e-12);
        assert!((exact - 1.796_199).abs() < 1e-6);
    }

    #[test]
    fn degenerate_annulus_is_an_error() {
        let m = ts(0.5, 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(truncate(&m, 2.0, 2.0), Err(LevyError::DegenerateAnnulus { .. })));
        assert!(truncate(&m, 0.0, 2.0).is_err());
    }

    #[test]
    fn empty_annulus_limit() {
        let m = ts(0.5, 1.0, 1.0, 1.0, 1.0);
        let t = truncate(&m, 2.0 - 1e-9, 2.0).unwrap();
        assert!(t.mass() < 1e-8);
    }

    #[test]
    fn variance_gamma_mass_grows_logarithmically() {
        // mass over r<|z|<1 ~ 2c log(1/r) for small r
        let m = builtin_model(BuiltinModel::VarianceGamma, &[1.0, 1.0, 1.0]).unwrap();
        let rs = [1e-2, 1e-3, 1e-4, 1e-5];
        let masses: Vec<f64> = rs.iter().map(|r| truncate(&m, *r, 1.0).unwrap().mass()).collect();
        for w in masses.windows(2) {
            let inc = w[1] - w[0];
            // each decade adds 2 ln 10 (1 - O(r))
            assert!((inc - 2.0 * 10f64.ln()).abs() < 0.02, "{inc}");
        }
    }

    #[test]
    fn outer_product_is_rank_one_psd() {
        let m = LevyModel::custom(
            "gauss2",
            2,
            0.0,
            1.0,
            Arc::new(|z: &[f64]| (-(z[0] * z[0] + z[1] * z[1])).exp()),
        )
        .unwrap()
        .with_bounded_density(true);
        let c = m.integrate_outer_product(0.0, 2.0, 2, |z| vec![z[0], 0.0]).unwrap();
        assert!(c[(0, 0)] > 0.0);
        assert!(c[(0, 1)].abs() < 1e-14 && c[(1, 1)].abs() < 1e-14);
    }

    #[test]
    fn envelope_constants_are_finite() {
        let m = ts(1.5, 1.0, 0.5, 2.0, 3.0);
        let (near, far) = m.envelope_constants();
        assert!(near.is_finite() && near <= 1.0 + 1e-12);
        assert!(far.is_finite() && far <= 1.0 + 1e-12);
        let shape = JumpShape::identity(1);
        assert!(shape.envelope_constant(1) <= 1.0 + 1e-12);
    }
}
