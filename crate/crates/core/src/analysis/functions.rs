//! Smooth test functions with value, gradient and Hessian.

use std::sync::Arc;

use crate::linalg::{dot, Mat};

/// Finite-difference step used by the default derivative implementations.
pub const FD_STEP: f64 = 1e-5;

pub trait TestFunction: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Central differences at step [`FD_STEP`] unless overridden.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        (0..x.len())
            .map(|i| {
                y[i] = x[i] + FD_STEP;
                let p = self.value(&y);
                y[i] = x[i] - FD_STEP;
                let m = self.value(&y);
                y[i] = x[i];
                (p - m) / (2.0 * FD_STEP)
            })
            .collect()
    }

    /// Central differences at step [`FD_STEP`] unless overridden.
    fn hessian(&self, x: &[f64]) -> Mat {
        let n = x.len();
        let h = FD_STEP;
        let mut y = x.to_vec();
        let mut out = Mat::zeros(n, n);
        let f0 = self.value(x);
        for i in 0..n {
            y[i] = x[i] + h;
            let p = self.value(&y);
            y[i] = x[i] - h;
            let m = self.value(&y);
            y[i] = x[i];
            out[(i, i)] = (p - 2.0 * f0 + m) / (h * h);
            for j in 0..i {
                let mut corner = |si: f64, sj: f64| {
                    y[i] = x[i] + si * h;
                    y[j] = x[j] + sj * h;
                    let v = self.value(&y);
                    y[i] = x[i];
                    y[j] = x[j];
                    v
                };
                let d = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h * h);
                out[(i, j)] = d;
                out[(j, i)] = d;
            }
        }
        out
    }
}

pub type SharedFunction = Arc<dyn TestFunction>;

#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    pub dim: usize,
    pub value: f64,
}

impl TestFunction for Constant {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _: &[f64]) -> f64 {
        self.value
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
    fn hessian(&self, x: &[f64]) -> Mat {
        Mat::zeros(x.len(), x.len())
    }
}

/// `a . x + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub a: Vec<f64>,
    pub beta: f64,
}

impl TestFunction for Affine {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        dot(&self.a, x) + self.beta
    }
    fn gradient(&self, _: &[f64]) -> Vec<f64> {
        self.a.clone()
    }
    fn hessian(&self, x: &[f64]) -> Mat {
        Mat::zeros(x.len(), x.len())
    }
}

/// `x^T A x / 2 + b . x + c` with symmetric `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub a: Mat,
    pub b: Vec<f64>,
    pub c: f64,
}

impl Quadratic {
    /// `x_1^2 + ... + x_n^2`.
    pub fn norm_squared(dim: usize) -> Self {
        Self {
            a: Mat::identity(dim).scale(2.0),
            b: vec![0.0; dim],
            c: 0.0,
        }
    }
}

impl TestFunction for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.a.matvec(x)) + dot(&self.b, x) + self.c
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.a.matvec(x).iter().zip(&self.b).map(|(p, q)| p + q).collect()
    }
    fn hessian(&self, _: &[f64]) -> Mat {
        self.a.clone()
    }
}

/// `amp sin(k . x + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoid {
    pub k: Vec<f64>,
    pub phase: f64,
    pub amp: f64,
}

impl Sinusoid {
    /// `sin(x_1)`.
    pub fn sin(dim: usize) -> Self {
        let mut k = vec![0.0; dim];
        k[0] = 1.0;
        Self { k, phase: 0.0, amp: 1.0 }
    }
}

impl TestFunction for Sinusoid {
    fn dim(&self) -> usize {
        self.k.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.amp * (dot(&self.k, x) + self.phase).sin()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let c = self.amp * (dot(&self.k, x) + self.phase).cos();
        self.k.iter().map(|k| c * k).collect()
    }
    fn hessian(&self, x: &[f64]) -> Mat {
        let s = -self.amp * (dot(&self.k, x) + self.phase).sin();
        let n = self.k.len();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = s * self.k[i] * self.k[j];
            }
        }
        m
    }
}

/// `amp exp(-|x - center|^2 / width^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub center: Vec<f64>,
    pub width: f64,
    pub amp: f64,
}

impl TestFunction for Gaussian {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        self.amp * (-r2 / (self.width * self.width)).exp()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let u = self.value(x);
        let w2 = self.width * self.width;
        x.iter().zip(&self.center).map(|(a, c)| -2.0 * (a - c) / w2 * u).collect()
    }
    fn hessian(&self, x: &[f64]) -> Mat {
        let u = self.value(x);
        let w2 = self.width * self.width;
        let n = x.len();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let di = x[i] - self.center[i];
                let dj = x[j] - self.center[j];
                m[(i, j)] = u * (4.0 * di * dj / (w2 * w2) - if i == j { 2.0 / w2 } else { 0.0 });
            }
        }
        m
    }
}

/// Sum of test functions.
#[derive(Clone)]
pub struct Sum(pub Vec<SharedFunction>);

impl TestFunction for Sum {
    fn dim(&self) -> usize {
        self.0[0].dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|f| f.value(x)).sum()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for f in &self.0 {
            for (a, b) in g.iter_mut().zip(f.gradient(x)) {
                *a += b;
            }
        }
        g
    }
    fn hessian(&self, x: &[f64]) -> Mat {
        self.0
            .iter()
            .fold(Mat::zeros(x.len(), x.len()), |acc, f| acc.add(&f.hessian(x)))
    }
}

/// Wraps a value-only closure; derivatives use finite differences.
pub struct FromFn<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> TestFunction for FromFn<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}
