//! Adaptive integration of `g(z) m(z)` over radial annuli `{inner < |z| < outer}`.
//!
//! The radial range is cut into geometric shells of ratio 2. Each shell is
//! integrated with an adaptive Gauss-Legendre rule (10 points in 1-D, 8x8 in
//! polar coordinates in 2-D). A singular lower endpoint `inner = 0` is handled
//! by shells marching towards the origin until the shell contributions decay
//! geometrically; the remaining tail is extrapolated from the observed ratio.
//! An infinite `outer` marches outwards until the exponential tail vanishes.

use std::cell::Cell;
use std::f64::consts::PI;
use std::sync::OnceLock;

use super::LevyError;

/// Tolerances and budgets for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct AnnulusOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on integrand evaluations before giving up.
    pub max_evals: usize,
    /// Upper bound on the number of shells marched towards 0 or infinity.
    pub max_shells: usize,
}

impl Default for AnnulusOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-15,
            max_evals: 20_000_000,
            max_shells: 400,
        }
    }
}

const GL_1D: usize = 10;
const GL_2D: usize = 8;
const MAX_DEPTH: usize = 40;

/// Gauss-Legendre nodes and weights on [-1, 1] via Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule_1d() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_1D))
}

fn rule_2d() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_2D))
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

struct Integrator<'a, G: Fn(&[f64], &mut [f64])> {
    dim: usize,
    out_dim: usize,
    density: &'a dyn Fn(&[f64]) -> f64,
    g: &'a G,
    opts: AnnulusOptions,
    evals: Cell<usize>,
}

impl<G: Fn(&[f64], &mut [f64])> Integrator<'_, G> {
    fn eval(&self, z: &[f64], scale: f64, acc: &mut [f64], buf: &mut [f64]) {
        let m = (self.density)(z);
        self.evals.set(self.evals.get() + 1);
        if m == 0.0 || scale == 0.0 {
            return;
        }
        (self.g)(z, buf);
        for (a, b) in acc.iter_mut().zip(buf.iter()) {
            *a += scale * m * b;
        }
    }

    /// Fixed rule over the radial interval [a, b] (1-D: both signs).
    fn rule_interval(&self, a: f64, b: f64) -> Vec<f64> {
        let (x, w) = rule_1d();
        let mut acc = vec![0.0; self.out_dim];
        let mut buf = vec![0.0; self.out_dim];
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xi, wi) in x.iter().zip(w) {
            let rho = mid + half * xi;
            self.eval(&[rho], half * wi, &mut acc, &mut buf);
            self.eval(&[-rho], half * wi, &mut acc, &mut buf);
        }
        acc
    }

    /// Fixed tensor rule over the polar rectangle [a, b] x [t0, t1].
    fn rule_polar(&self, a: f64, b: f64, t0: f64, t1: f64) -> Vec<f64> {
        let (x, w) = rule_2d();
        let mut acc = vec![0.0; self.out_dim];
        let mut buf = vec![0.0; self.out_dim];
        let hr = 0.5 * (b - a);
        let mr = 0.5 * (a + b);
        let ht = 0.5 * (t1 - t0);
        let mt = 0.5 * (t0 + t1);
        for (xi, wi) in x.iter().zip(w) {
            let rho = mr + hr * xi;
            for (xj, wj) in x.iter().zip(w) {
                let th = mt + ht * xj;
                let z = [rho * th.cos(), rho * th.sin()];
                self.eval(&z, hr * ht * wi * wj * rho, &mut acc, &mut buf);
            }
        }
        acc
    }

    fn over_budget(&self) -> Result<(), LevyError> {
        if self.evals.get() > self.opts.max_evals {
            Err(LevyError::NonConvergent(format!(
                "evaluation budget of {} exceeded",
                self.opts.max_evals
            )))
        } else {
            Ok(())
        }
    }

    fn adapt_interval(
        &self,
        a: f64,
        b: f64,
        whole: Vec<f64>,
        tol: f64,
        depth: usize,
    ) -> Result<Vec<f64>, LevyError> {
        self.over_budget()?;
        let m = 0.5 * (a + b);
        let left = self.rule_interval(a, m);
        let right = self.rule_interval(m, b);
        let refined: Vec<f64> = left.iter().zip(&right).map(|(l, r)| l + r).collect();
        let diff = refined
            .iter()
            .zip(&whole)
            .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()));
        if diff <= tol || depth >= MAX_DEPTH || (b - a) <= 1e-15 * b.abs().max(1e-300) {
            if depth >= MAX_DEPTH && diff > tol {
                return Err(LevyError::NonConvergent(format!(
                    "adaptive refinement exhausted on [{a:e}, {b:e}]"
                )));
            }
            return Ok(refined);
        }
        let l = self.adapt_interval(a, m, left, 0.5 * tol, depth + 1)?;
        let r = self.adapt_interval(m, b, right, 0.5 * tol, depth + 1)?;
        Ok(l.iter().zip(&r).map(|(x, y)| x + y).collect())
    }

    fn adapt_polar(
        &self,
        rect: [f64; 4],
        whole: Vec<f64>,
        tol: f64,
        depth: usize,
    ) -> Result<Vec<f64>, LevyError> {
        self.over_budget()?;
        let [a, b, t0, t1] = rect;
        let mr = 0.5 * (a + b);
        let mt = 0.5 * (t0 + t1);
        let children = [
            [a, mr, t0, mt],
            [mr, b, t0, mt],
            [a, mr, mt, t1],
            [mr, b, mt, t1],
        ];
        let parts: Vec<Vec<f64>> = children
            .iter()
            .map(|c| self.rule_polar(c[0], c[1], c[2], c[3]))
            .collect();
        let mut refined = vec![0.0; self.out_dim];
        for p in &parts {
            for (r, x) in refined.iter_mut().zip(p) {
                *r += x;
            }
        }
        let diff = refined
            .iter()
            .zip(&whole)
            .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()));
        if diff <= tol || depth >= MAX_DEPTH / 2 {
            if depth >= MAX_DEPTH / 2 && diff > tol {
                return Err(LevyError::NonConvergent(format!(
                    "adaptive refinement exhausted on polar cell [{a:e}, {b:e}]"
                )));
            }
            return Ok(refined);
        }
        let mut total = vec![0.0; self.out_dim];
        for (c, p) in children.iter().zip(parts) {
            let sub = self.adapt_polar(*c, p, 0.25 * tol, depth + 1)?;
            for (t, x) in total.iter_mut().zip(sub) {
                *t += x;
            }
        }
        Ok(total)
    }

    /// Integral over one radial shell [a, b].
    fn shell(&self, a: f64, b: f64, scale_hint: f64) -> Result<Vec<f64>, LevyError> {
        match self.dim {
            1 => {
                let coarse = self.rule_interval(a, b);
                let tol = (self.opts.rel_tol * max_norm(&coarse).max(scale_hint)).max(self.opts.abs_tol);
                self.adapt_interval(a, b, coarse, tol, 0)
            }
            2 => {
                let sectors = 8;
                let dt = 2.0 * PI / sectors as f64;
                let rects: Vec<[f64; 4]> = (0..sectors)
                    .map(|s| [a, b, s as f64 * dt, (s + 1) as f64 * dt])
                    .collect();
                let coarse: Vec<Vec<f64>> = rects
                    .iter()
                    .map(|r| self.rule_polar(r[0], r[1], r[2], r[3]))
                    .collect();
                let mut total_coarse = vec![0.0; self.out_dim];
                for c in &coarse {
                    for (t, x) in total_coarse.iter_mut().zip(c) {
                        *t += x;
                    }
                }
                let tol = (self.opts.rel_tol * max_norm(&total_coarse).max(scale_hint))
                    .max(self.opts.abs_tol)
                    / sectors as f64;
                let mut total = vec![0.0; self.out_dim];
                for (r, c) in rects.into_iter().zip(coarse) {
                    let sub = self.adapt_polar(r, c, tol, 0)?;
                    for (t, x) in total.iter_mut().zip(sub) {
                        *t += x;
                    }
                }
                Ok(total)
            }
            d => Err(LevyError::UnsupportedDimension(d)),
        }
    }
}

/// Integrates `g(z) m(z)` over `{inner < |z| < outer}` in dimension 1 or 2.
///
/// `g` writes `out_dim` values into its output buffer. `inner` may be 0 and
/// `outer` may be `f64::INFINITY`; both limits require the integrand to decay
/// geometrically across dyadic shells, otherwise `NonConvergent` is returned.
pub fn integrate<G>(
    dim: usize,
    density: &dyn Fn(&[f64]) -> f64,
    inner: f64,
    outer: f64,
    out_dim: usize,
    g: G,
    opts: &AnnulusOptions,
) -> Result<Vec<f64>, LevyError>
where
    G: Fn(&[f64], &mut [f64]),
{
    if !(inner >= 0.0) || !(outer > inner) {
        return Err(LevyError::DegenerateAnnulus { inner, outer });
    }
    if dim == 0 || dim > 2 {
        return Err(LevyError::UnsupportedDimension(dim));
    }
    let it = Integrator {
        dim,
        out_dim,
        density,
        g: &g,
        opts: *opts,
        evals: Cell::new(0),
    };
    let mut total = vec![0.0; out_dim];
    let mut abs_scale = 0.0_f64;
    let add = |total: &mut Vec<f64>, part: &[f64]| {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    };

    // Finite middle section [lo, hi] split geometrically.
    let lo = if inner > 0.0 { inner } else { outer.min(1.0) };
    let hi = if outer.is_finite() { outer } else { inner.max(1.0) };
    if hi > lo {
        let mut a = lo;
        while a < hi {
            let b = (2.0 * a).min(hi);
            let b = if hi - b < 1e-12 * hi { hi } else { b };
            let part = it.shell(a, b, 0.0)?;
            abs_scale += max_norm(&part);
            add(&mut total, &part);
            a = b;
        }
    }

    // Singular inner endpoint: march towards the origin.
    if inner == 0.0 {
        let start = lo.min(hi);
        let tail = march(&it, start, false, &mut abs_scale)?;
        add(&mut total, &tail);
    }

    // Unbounded outer endpoint: march outwards.
    if !outer.is_finite() {
        let tail = march(&it, hi.max(lo), true, &mut abs_scale)?;
        add(&mut total, &tail);
    }
    Ok(total)
}

/// Sums dyadic shells starting at `start` inwards (or outwards) until they
/// decay; inward marches extrapolate the geometric remainder.
fn march<G: Fn(&[f64], &mut [f64])>(
    it: &Integrator<'_, G>,
    start: f64,
    outwards: bool,
    abs_scale: &mut f64,
) -> Result<Vec<f64>, LevyError> {
    let mut sum = vec![0.0; it.out_dim];
    let mut prev_norm: Option<f64> = None;
    let mut ratios: Vec<f64> = Vec::new();
    let mut prev_corrected: Option<Vec<f64>> = None;
    let mut zero_run = 0;
    let mut edge = start;
    for k in 0..it.opts.max_shells {
        let (a, b) = if outwards {
            (edge, 2.0 * edge)
        } else {
            (0.5 * edge, edge)
        };
        edge = if outwards { b } else { a };
        let part = it.shell(a, b, 0.0)?;
        let n = max_norm(&part);
        *abs_scale += n;
        for (s, p) in sum.iter_mut().zip(&part) {
            *s += p;
        }
        let tol = (it.opts.rel_tol * abs_scale.max(max_norm(&sum))).max(it.opts.abs_tol);
        if n == 0.0 {
            zero_run += 1;
            if zero_run >= 3 {
                return Ok(sum);
            }
            prev_norm = Some(0.0);
            continue;
        }
        zero_run = 0;
        if let Some(p) = prev_norm {
            if p > 0.0 {
                ratios.push(n / p);
            }
        }
        prev_norm = Some(n);
        if k < 3 || ratios.len() < 2 {
            continue;
        }
        let recent = &ratios[ratios.len().saturating_sub(3)..];
        let q = recent.iter().cloned().fold(0.0_f64, f64::max);
        if outwards {
            if n <= tol && q < 0.95 {
                return Ok(sum);
            }
            if k > 60 && q >= 0.999 {
                return Err(LevyError::NonConvergent(
                    "integrand does not decay at infinity".into(),
                ));
            }
            continue;
        }
        if q >= 0.999 && k > 20 {
            return Err(LevyError::NonConvergent(
                "integrand does not vanish fast enough at the singular endpoint".into(),
            ));
        }
        let q_last = *ratios.last().unwrap_or(&0.0);
        let corrected: Vec<f64> = if q_last < 1.0 {
            sum.iter()
                .zip(&part)
                .map(|(s, p)| s + p * q_last / (1.0 - q_last))
                .collect()
        } else {
            sum.clone()
        };
        let tail_bound = if q < 1.0 { n * q / (1.0 - q) } else { f64::INFINITY };
        let settled = match &prev_corrected {
            Some(pc) => {
                pc.iter()
                    .zip(&corrected)
                    .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
                    <= tol
            }
            None => false,
        };
        if tail_bound <= tol || (settled && q < 0.99 && tail_bound <= 1e3 * tol) {
            return Ok(corrected);
        }
        prev_corrected = Some(corrected);
    }
    Err(LevyError::NonConvergent(format!(
        "shell march exceeded {} shells",
        it.opts.max_shells
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // x^18 is exact for a 10-point rule
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((i - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn exponential_density_mass() {
        let m = |z: &[f64]| (-z[0].abs()).exp();
        let v = integrate(1, &m, 0.1, 5.0, 1, |_, o| o[0] = 1.0, &AnnulusOptions::default()).unwrap();
        let exact = 2.0 * ((-0.1f64).exp() - (-5.0f64).exp());
        assert!((v[0] - exact).abs() < 1e-12, "{} vs {}", v[0], exact);
    }

    #[test]
    fn singular_endpoint_with_vanishing_integrand() {
        // int_0^1 z^2 z^{-1.5} dz on both sides = 2 / 1.5
        let m = |z: &[f64]| z[0].abs().powf(-1.5);
        let v = integrate(1, &m, 0.0, 1.0, 1, |z, o| o[0] = z[0] * z[0], &AnnulusOptions::default())
            .unwrap();
        assert!((v[0] - 2.0 / 1.5).abs() < 1e-9, "{}", v[0]);
    }

    #[test]
    fn singular_endpoint_rejects_nonintegrable() {
        let m = |z: &[f64]| z[0].abs().powf(-1.5);
        let r = integrate(1, &m, 0.0, 1.0, 1, |_, o| o[0] = 1.0, &AnnulusOptions::default());
        assert!(matches!(r, Err(LevyError::NonConvergent(_))));
    }

    #[test]
    fn infinite_outer_limit() {
        let m = |z: &[f64]| (-z[0].abs()).exp();
        let v = integrate(1, &m, 1.0, f64::INFINITY, 1, |_, o| o[0] = 1.0, &AnnulusOptions::default())
            .unwrap();
        assert!((v[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn polar_gaussian_mass() {
        // int over R^2 \ B_0.5 of exp(-|z|^2) = pi exp(-0.25)
        let m = |z: &[f64]| (-(z[0] * z[0] + z[1] * z[1])).exp();
        let v = integrate(2, &m, 0.5, f64::INFINITY, 1, |_, o| o[0] = 1.0, &AnnulusOptions::default())
            .unwrap();
        assert!((v[0] - PI * (-0.25f64).exp()).abs() < 1e-10, "{}", v[0]);
    }
}
