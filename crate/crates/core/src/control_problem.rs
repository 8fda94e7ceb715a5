//! Controlled coefficient fields, assumption checks and the bounded-domain cutoff.
//!
//! Coefficient callables must be pure: the solver evaluates them concurrently
//! and in no particular order.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::levy_measure::JumpShape;
use crate::linalg::{norm, Mat};

pub type MatField = Arc<dyn Fn(&[f64], usize) -> Mat + Send + Sync>;
pub type VecField = Arc<dyn Fn(&[f64], usize) -> Vec<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

/// Which integral operator the target equation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquationForm {
    /// `int [u(x+eta) - u(x)] nu(dz)`.
    F,
    /// `int [u(x+eta) - u(x) - 1_{|z|<1} eta . Du(x)] nu(dz)`.
    J,
}

/// Finite control set; controls are addressed by dense indices `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    values: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(values: Vec<Vec<f64>>) -> Option<Self> {
        if values.is_empty() {
            None
        } else {
            Some(Self { values })
        }
    }

    pub fn scalar(values: &[f64]) -> Option<Self> {
        Self::new(values.iter().map(|v| vec![*v]).collect())
    }

    /// Index-only controls with no attached value.
    pub fn indexed(count: usize) -> Option<Self> {
        Self::new((0..count).map(|i| vec![i as f64]).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, index: usize) -> &[f64] {
        &self.values[index]
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "bounds dimension mismatch");
        Self { lo, hi }
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    /// Distance from `x` (inside) to the nearest face.
    pub fn inner_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (l, h))| (x - l).min(h - x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn enlarge(&self, by: f64) -> Self {
        Self::new(
            self.lo.iter().map(|l| l - by).collect(),
            self.hi.iter().map(|h| h + by).collect(),
        )
    }
}

/// Radial C^1 cutoff: 1 on `|x| <= 1/mu`, 0 beyond `1/mu + transition_width`,
/// cubic smoothstep in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSpec {
    pub mu: f64,
    pub transition_width: f64,
}

impl CutoffSpec {
    pub fn inner_radius(&self) -> f64 {
        1.0 / self.mu
    }

    pub fn outer_radius(&self) -> f64 {
        1.0 / self.mu + self.transition_width
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        let s = (r - self.inner_radius()) / self.transition_width;
        if s <= 0.0 {
            1.0
        } else if s >= 1.0 {
            0.0
        } else {
            1.0 - s * s * (3.0 - 2.0 * s)
        }
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        norm(x) < self.outer_radius()
    }
}

/// Coefficients of a controlled jump-diffusion HJB equation with factorized
/// jump amplitude `eta(x, v, z) = eta1(x, v) phi(z)`.
#[derive(Clone)]
pub struct ProblemSpec {
    dim: usize,
    noise_dim: usize,
    controls: ControlSet,
    sigma: MatField,
    drift: VecField,
    discount: ScalarField,
    source: ScalarField,
    eta1: MatField,
    jump_shape: JumpShape,
    form: EquationForm,
    cutoff: Option<CutoffSpec>,
    /// Declared Lipschitz constants `(L1, L2)`, if any.
    pub declared_lipschitz: Option<(f64, f64)>,
    /// Region sampled by [`validate`].
    pub sample_region: Bounds,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("controls", &self.controls.len())
            .field("form", &self.form)
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

/// Builder for [`ProblemSpec`]; unspecified fields default to zero, except the
/// discount which defaults to 1.
pub struct ProblemBuilder {
    dim: usize,
    noise_dim: usize,
    controls: ControlSet,
    sigma: Option<MatField>,
    drift: Option<VecField>,
    discount: Option<ScalarField>,
    source: Option<ScalarField>,
    eta1: Option<MatField>,
    jump_shape: Option<JumpShape>,
    form: EquationForm,
}

impl ProblemBuilder {
    pub fn new(dim: usize, controls: ControlSet) -> Self {
        Self {
            dim,
            noise_dim: dim,
            controls,
            sigma: None,
            drift: None,
            discount: None,
            source: None,
            eta1: None,
            jump_shape: None,
            form: EquationForm::F,
        }
    }

    pub fn noise_dim(mut self, d: usize) -> Self {
        self.noise_dim = d;
        self
    }

    pub fn sigma(mut self, f: impl Fn(&[f64], usize) -> Mat + Send + Sync + 'static) -> Self {
        self.sigma = Some(Arc::new(f));
        self
    }

    pub fn drift(mut self, f: impl Fn(&[f64], usize) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn discount(mut self, f: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static) -> Self {
        self.discount = Some(Arc::new(f));
        self
    }

    pub fn source(mut self, f: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(Arc::new(f));
        self
    }

    pub fn eta1(mut self, f: impl Fn(&[f64], usize) -> Mat + Send + Sync + 'static) -> Self {
        self.eta1 = Some(Arc::new(f));
        self
    }

    pub fn jump_shape(mut self, shape: JumpShape) -> Self {
        self.jump_shape = Some(shape);
        self
    }

    pub fn form(mut self, form: EquationForm) -> Self {
        self.form = form;
        self
    }

    pub fn build(self) -> ProblemSpec {
        let n = self.dim;
        let d = self.noise_dim;
        ProblemSpec {
            dim: n,
            noise_dim: d,
            controls: self.controls,
            sigma: self.sigma.unwrap_or_else(|| Arc::new(move |_, _| Mat::zeros(n, d))),
            drift: self.drift.unwrap_or_else(|| Arc::new(move |_, _| vec![0.0; n])),
            discount: self.discount.unwrap_or_else(|| Arc::new(|_, _| 1.0)),
            source: self.source.unwrap_or_else(|| Arc::new(|_, _| 0.0)),
            eta1: self.eta1.unwrap_or_else(|| Arc::new(move |_, _| Mat::zeros(n, n))),
            jump_shape: self.jump_shape.unwrap_or_else(|| JumpShape::identity(n)),
            form: self.form,
            cutoff: None,
            declared_lipschitz: None,
            sample_region: Bounds::cube(n, 1.0),
        }
    }
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    pub fn form(&self) -> EquationForm {
        self.form
    }

    pub fn jump_shape(&self) -> &JumpShape {
        &self.jump_shape
    }

    pub fn cutoff(&self) -> Option<&CutoffSpec> {
        self.cutoff.as_ref()
    }

    fn xi(&self, x: &[f64]) -> f64 {
        self.cutoff.map_or(1.0, |c| c.value(x))
    }

    /// Diffusion matrix `sigma(x, v)` (N x d), cutoff applied.
    pub fn sigma(&self, x: &[f64], v: usize) -> Mat {
        let s = (self.sigma)(x, v);
        match self.cutoff {
            Some(_) => s.scale(self.xi(x)),
            None => s,
        }
    }

    pub fn drift(&self, x: &[f64], v: usize) -> Vec<f64> {
        let b = (self.drift)(x, v);
        match self.cutoff {
            Some(_) => {
                let xi = self.xi(x);
                b.into_iter().map(|bi| bi * xi).collect()
            }
            None => b,
        }
    }

    pub fn discount(&self, x: &[f64], v: usize) -> f64 {
        (self.discount)(x, v)
    }

    pub fn source(&self, x: &[f64], v: usize) -> f64 {
        (self.source)(x, v)
    }

    pub fn eta1(&self, x: &[f64], v: usize) -> Mat {
        let e = (self.eta1)(x, v);
        match self.cutoff {
            Some(_) => e.scale(self.xi(x)),
            None => e,
        }
    }

    /// Full jump amplitude `eta1(x, v) phi(z)`.
    pub fn eta(&self, x: &[f64], v: usize, z: &[f64]) -> Vec<f64> {
        self.eta1(x, v).matvec(&self.jump_shape.eval(z))
    }

    /// `a = sigma sigma^T / 2`.
    pub fn diffusion_matrix(&self, x: &[f64], v: usize) -> Mat {
        let s = self.sigma(x, v);
        s.matmul(&s.transpose()).scale(0.5)
    }

    /// Replaces the source term.
    pub fn with_source(&self, f: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static) -> Self {
        let mut out = self.clone();
        out.source = Arc::new(f);
        out
    }

    pub fn with_source_field(&self, f: ScalarField) -> Self {
        let mut out = self.clone();
        out.source = f;
        out
    }

    pub fn with_discount_field(&self, c: ScalarField) -> Self {
        let mut out = self.clone();
        out.discount = c;
        out
    }

    pub fn with_drift_field(&self, b: VecField) -> Self {
        let mut out = self.clone();
        out.drift = b;
        out
    }

    pub fn with_sigma_field(&self, s: MatField) -> Self {
        let mut out = self.clone();
        out.sigma = s;
        out
    }

    pub fn source_field(&self) -> ScalarField {
        self.source.clone()
    }

    pub fn discount_field(&self) -> ScalarField {
        self.discount.clone()
    }

    pub fn drift_field(&self) -> VecField {
        self.drift.clone()
    }

    pub fn sigma_field(&self) -> MatField {
        self.sigma.clone()
    }
}

/// Result of [`validate`]. Failures are warnings: construction never aborts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub min_discount: f64,
    /// Empirical `sup |c|_1 + |f|_1` over controls.
    pub lipschitz_l1: f64,
    /// Empirical `sup |sigma|_1 + |b|_1` over controls.
    pub lipschitz_l2: f64,
    pub lipschitz_discount: f64,
    pub lipschitz_source: f64,
    pub lipschitz_eta1: f64,
    /// (A3): `c >= c0 > 0` on samples.
    pub discount_positive: bool,
    /// (A2) against declared constants; `None` when none were declared.
    pub lipschitz_within_declared: Option<bool>,
    pub samples: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.discount_positive && self.lipschitz_within_declared.unwrap_or(true)
    }
}

/// Samples the coefficients on a grid plus random points of
/// `spec.sample_region` and estimates Lipschitz constants from difference
/// quotients between grid neighbours and random pairs.
pub fn validate(spec: &ProblemSpec, sample_budget: usize) -> ValidationReport {
    let n = spec.dim();
    let region = &spec.sample_region;
    let budget = sample_budget.max(2);
    let per_axis = ((budget as f64 / 2.0).powf(1.0 / n as f64).floor() as usize).max(2);
    let mut points: Vec<Vec<f64>> = Vec::new();
    let total_grid = per_axis.pow(n as u32);
    for idx in 0..total_grid {
        let mut rem = idx;
        let mut p = vec![0.0; n];
        for (a, pa) in p.iter_mut().enumerate() {
            let i = rem % per_axis;
            rem /= per_axis;
            *pa = region.lo[a] + (region.hi[a] - region.lo[a]) * i as f64 / (per_axis - 1) as f64;
        }
        points.push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while points.len() < budget.max(total_grid + 1) {
        let p: Vec<f64> = (0..n).map(|a| rng.gen_range(region.lo[a]..=region.hi[a])).collect();
        points.push(p);
    }

    let mut min_c = f64::INFINITY;
    let mut lc = 0.0_f64;
    let mut lf = 0.0_f64;
    let mut ls = 0.0_f64;
    let mut lb = 0.0_f64;
    let mut le = 0.0_f64;
    let mut l1 = 0.0_f64;
    let mut l2 = 0.0_f64;
    for v in 0..spec.control_count() {
        let vals: Vec<(f64, f64, Mat, Vec<f64>, Mat)> = points
            .iter()
            .map(|p| {
                (
                    spec.discount(p, v),
                    spec.source(p, v),
                    spec.sigma(p, v),
                    spec.drift(p, v),
                    spec.eta1(p, v),
                )
            })
            .collect();
        for val in &vals {
            min_c = min_c.min(val.0);
        }
        let (mut vc, mut vf, mut vs, mut vb, mut ve) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        let mut pair = |i: usize, j: usize| {
            let dx: f64 = norm(
                &points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            if dx <= 1e-12 {
                return;
            }
            let (a, b) = (&vals[i], &vals[j]);
            vc = vc.max((a.0 - b.0).abs() / dx);
            vf = vf.max((a.1 - b.1).abs() / dx);
            vs = vs.max(a.2.sub(&b.2).frobenius_norm() / dx);
            vb = vb.max(norm(&a.3.iter().zip(&b.3).map(|(x, y)| x - y).collect::<Vec<_>>()) / dx);
            ve = ve.max(a.4.sub(&b.4).frobenius_norm() / dx);
        };
        // grid neighbours along each axis
        for idx in 0..total_grid {
            let mut stride = 1;
            for _ in 0..n {
                let coord = (idx / stride) % per_axis;
                if coord + 1 < per_axis {
                    pair(idx, idx + stride);
                }
                stride *= per_axis;
            }
        }
        for i in total_grid..points.len() {
            let j = rng.gen_range(0..points.len());
            pair(i, j);
        }
        lc = lc.max(vc);
        lf = lf.max(vf);
        ls = ls.max(vs);
        lb = lb.max(vb);
        le = le.max(ve);
        l1 = l1.max(vc + vf);
        l2 = l2.max(vs + vb);
    }
    let within = spec
        .declared_lipschitz
        .map(|(d1, d2)| l1 <= d1 * (1.0 + 1e-9) && l2 <= d2 * (1.0 + 1e-9));
    ValidationReport {
        min_discount: min_c,
        lipschitz_l1: l1,
        lipschitz_l2: l2,
        lipschitz_discount: lc,
        lipschitz_source: lf,
        lipschitz_eta1: le,
        discount_positive: min_c > 0.0,
        lipschitz_within_declared: within,
        samples: points.len(),
    }
}

/// Multiplies `sigma`, `b` and `eta1` by the cutoff `xi_mu`; `c` and `f` are
/// unchanged. Applying the same cutoff twice is a no-op.
pub fn apply_cutoff(spec: &ProblemSpec, cut: CutoffSpec) -> ProblemSpec {
    let mut out = spec.clone();
    out.cutoff = Some(cut);
    out
}

/// `min_v f(x, v) / c(x, v)`: the exact solution outside the cutoff support.
pub fn exterior_value(spec: &ProblemSpec, x: &[f64]) -> f64 {
    (0..spec.control_count())
        .map(|v| spec.source(x, v) / spec.discount(x, v))
        .fold(f64::INFINITY, f64::min)
}
