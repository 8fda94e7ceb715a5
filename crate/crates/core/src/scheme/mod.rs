//! Fully discrete semi-Lagrangian scheme: assembly of the transition matrices
//! and solution of the discrete Bellman equation.

mod compensate;
mod semi_discrete;
mod solve;
mod sparse;

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::control_problem::ProblemSpec;
use crate::levy_measure::{LevyError, TruncatedMeasure};
use crate::linalg::norm;
use crate::mesh::{Location, MeshError, Triangulation};
use crate::quadrature::QuadratureRule;

pub use compensate::{compensate, CompensatedCoefficients, CompensationCase};
pub use semi_discrete::semi_discrete_apply;
pub use solve::{solve_policy_iteration, solve_value_iteration, SolveOutcome};
pub use sparse::{RowBuf, SparseRows};

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("mesh too small: mean exterior mass {fraction:.3} exceeds {cap:.3}")]
    MeshTooSmall { fraction: f64, cap: f64 },
    #[error("expected a vector of length {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("solver stopped after {} iterations with residual {:.3e}", .0.iterations, .0.residual)]
    NotConverged(Box<SolveOutcome>),
    #[error(transparent)]
    Levy(#[from] LevyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Warn when `h * lambda` exceeds this value.
    pub hlambda_cap: f64,
    /// Reject meshes whose mean exterior mass exceeds this fraction.
    pub max_exterior_fraction: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            hlambda_cap: 1.0,
            max_exterior_fraction: 0.25,
        }
    }
}

/// Per-control matrices and vectors of the discrete fixed-point map
/// `u_i = min_v { h f + e^{-hc} [e^{-lambda h} (M u)_i + (1 - e^{-lambda h}) (P u)_i + ext_i] }`.
#[derive(Debug, Clone)]
pub struct DiscreteBellmanSystem {
    pub h: f64,
    /// Quadrature-consistent intensity `lambda_Q` (0 without jumps).
    pub lambda: f64,
    pub k: f64,
    pub dz: f64,
    pub r: f64,
    pub big_r: f64,
    pub m: Vec<SparseRows>,
    pub p: Vec<SparseRows>,
    pub c: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    /// Largest number of nonzeros produced by a single foot point.
    pub max_foot_nonzeros: usize,
    pub warnings: Vec<String>,
    ops: Vec<SparseRows>,
    consts: Vec<Vec<f64>>,
    c0: f64,
}

impl DiscreteBellmanSystem {
    pub fn vertex_count(&self) -> usize {
        self.c.first().map_or(0, |c| c.len())
    }

    pub fn control_count(&self) -> usize {
        self.c.len()
    }

    /// `min c` over vertices and controls.
    pub fn min_discount(&self) -> f64 {
        self.c0
    }

    /// `e^{-h c0}`.
    pub fn contraction_factor(&self) -> f64 {
        (-self.h * self.c0).exp()
    }

    /// Value of control `v` at vertex `i` given the iterate `u`.
    pub fn control_value(&self, v: usize, i: usize, u: &[f64]) -> f64 {
        self.consts[v][i] + self.ops[v].row_dot(i, u)
    }

    fn check_len(&self, u: &[f64]) -> Result<(), SchemeError> {
        if u.len() != self.vertex_count() {
            return Err(SchemeError::SizeMismatch {
                expected: self.vertex_count(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Fixed-point map for a frozen policy.
    pub fn apply_policy(&self, policy: &[usize], u: &[f64]) -> Result<Vec<f64>, SchemeError> {
        self.check_len(u)?;
        if policy.len() != u.len() {
            return Err(SchemeError::SizeMismatch {
                expected: u.len(),
                got: policy.len(),
            });
        }
        Ok((0..u.len())
            .into_par_iter()
            .map(|i| self.control_value(policy[i], i, u))
            .collect())
    }
}

/// Sup-norm of the displacement of one scheme step from `x`.
pub fn one_step_reach(
    spec: &ProblemSpec,
    coeffs: &CompensatedCoefficients,
    measure: Option<&TruncatedMeasure>,
    h: f64,
    samples: &[Vec<f64>],
) -> f64 {
    let mut reach: f64 = 0.0;
    let phi_sup = measure.map_or(0.0, |m| {
        let big_r = m.big_r();
        let shape = spec.jump_shape();
        let mut s: f64 = 0.0;
        for i in 0..=400 {
            let rho = big_r * i as f64 / 400.0;
            let dirs: Vec<Vec<f64>> = if m.model().dim() == 1 {
                vec![vec![rho], vec![-rho]]
            } else {
                (0..16)
                    .map(|k| {
                        let t = k as f64 * std::f64::consts::PI / 8.0;
                        vec![rho * t.cos(), rho * t.sin()]
                    })
                    .collect()
            };
            for z in dirs {
                s = s.max(norm(&shape.eval(&z)));
            }
        }
        s
    });
    for x in samples {
        for v in 0..spec.control_count() {
            let disp = coeffs
                .displacements(spec, x, v, h)
                .iter()
                .map(|d| norm(d))
                .fold(0.0, f64::max);
            let jump = spec.eta1(x, v).frobenius_norm() * phi_sup;
            reach = reach.max(disp.max(jump));
        }
    }
    reach
}

fn push_hit(
    mesh: &Triangulation,
    y: &[f64],
    weight: f64,
    row: &mut RowBuf,
    mut add: impl FnMut(u32, f64),
) -> usize {
    match mesh.locate(y) {
        Location::Inside(hit) => {
            let mut nz = 0;
            for (j, w) in hit.iter() {
                if w > 0.0 {
                    add(j as u32, weight * w);
                    nz += 1;
                }
            }
            nz
        }
        Location::Exterior => {
            row.exterior_mass += weight;
            row.exterior_value += weight * mesh.exterior_value(y);
            0
        }
    }
}

/// Assembles `M(v)` and `P(v)` for every control.
///
/// `rule` may be `None` for problems without jumps; `P(v)` is then the
/// identity and `lambda = 0`. Jump targets and foot points outside the mesh
/// contribute `mesh.exterior_value` to the per-row exterior term.
pub fn assemble(
    spec: &ProblemSpec,
    coeffs: &CompensatedCoefficients,
    measure: Option<&TruncatedMeasure>,
    mesh: &Triangulation,
    rule: Option<&QuadratureRule>,
    h: f64,
    opts: &AssemblyOptions,
) -> Result<DiscreteBellmanSystem, SchemeError> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(SchemeError::Unsupported(format!("time step h = {h} outside (0, 1]")));
    }
    if mesh.dim() != spec.dim() {
        return Err(SchemeError::Unsupported(format!(
            "mesh dimension {} differs from problem dimension {}",
            mesh.dim(),
            spec.dim()
        )));
    }
    let nv = mesh.vertex_count();
    let n = spec.dim();
    let lambda = rule.map_or(0.0, |q| q.total_weight());
    let mut warnings = Vec::new();
    if h * lambda > opts.hlambda_cap {
        let w = format!("h * lambda = {:.3} exceeds the cap {:.3}", h * lambda, opts.hlambda_cap);
        log::warn!("{w}");
        warnings.push(w);
    }
    let shape = spec.jump_shape();
    let phi_nodes: Vec<Vec<f64>> = rule.map_or(Vec::new(), |q| (0..q.len()).map(|j| shape.eval(q.node(j))).collect());
    let kfoot = coeffs.stencil_size();

    let mut m_all = Vec::new();
    let mut p_all = Vec::new();
    let mut c_all = Vec::new();
    let mut f_all = Vec::new();
    let mut max_foot = 0usize;
    for v in 0..spec.control_count() {
        let m_rows: Vec<(RowBuf, usize)> = (0..nv)
            .into_par_iter()
            .map(|i| {
                let x = mesh.vertex(i);
                let mut row = RowBuf::default();
                let mut entries = Vec::with_capacity(kfoot * (n + 1));
                let mut foot_max = 0;
                let w = 1.0 / kfoot as f64;
                let mut y = vec![0.0; n];
                for d in coeffs.displacements(spec, x, v, h) {
                    for a in 0..n {
                        y[a] = x[a] + d[a];
                    }
                    let nz = push_hit(mesh, &y, w, &mut row, |j, val| entries.push((j, val)));
                    foot_max = foot_max.max(nz);
                }
                row.entries = entries;
                row.normalize();
                (row, foot_max)
            })
            .collect();
        max_foot = max_foot.max(m_rows.iter().map(|r| r.1).max().unwrap_or(0));
        let m = SparseRows::from_rows(m_rows.into_iter().map(|r| r.0).collect());

        let p = match rule {
            Some(q) if lambda > 0.0 => {
                let inv = 1.0 / lambda;
                let rows: Vec<RowBuf> = (0..nv)
                    .into_par_iter()
                    .map_init(
                        || (vec![0.0f64; nv], Vec::<u32>::new()),
                        |(dense, touched), i| {
                            let x = mesh.vertex(i);
                            let e = spec.eta1(x, v);
                            let mut row = RowBuf::default();
                            if e.max_abs() == 0.0 {
                                row.entries.push((i as u32, 1.0));
                                return row;
                            }
                            let mut y = vec![0.0; n];
                            for (j, ph) in phi_nodes.iter().enumerate() {
                                e.matvec_into(ph, &mut y);
                                for a in 0..n {
                                    y[a] += x[a];
                                }
                                push_hit(mesh, &y, q.weight(j) * inv, &mut row, |col, val| {
                                    if dense[col as usize] == 0.0 {
                                        touched.push(col);
                                    }
                                    dense[col as usize] += val;
                                });
                            }
                            touched.sort_unstable();
                            row.entries = touched.iter().map(|&c| (c, dense[c as usize])).collect();
                            for &c in touched.iter() {
                                dense[c as usize] = 0.0;
                            }
                            touched.clear();
                            row
                        },
                    )
                    .collect();
                SparseRows::from_rows(rows)
            }
            _ => SparseRows::identity(nv),
        };
        let c: Vec<f64> = (0..nv).into_par_iter().map(|i| spec.discount(mesh.vertex(i), v)).collect();
        let f: Vec<f64> = (0..nv).into_par_iter().map(|i| spec.source(mesh.vertex(i), v)).collect();
        m_all.push(m);
        p_all.push(p);
        c_all.push(c);
        f_all.push(f);
    }

    let worst = m_all
        .iter()
        .chain(&p_all)
        .map(|s| s.mean_exterior_mass())
        .fold(0.0, f64::max);
    if worst > opts.max_exterior_fraction {
        return Err(SchemeError::MeshTooSmall {
            fraction: worst,
            cap: opts.max_exterior_fraction,
        });
    }

    let jump_keep = (-lambda * h).exp();
    let mut ops = Vec::new();
    let mut consts = Vec::new();
    for v in 0..spec.control_count() {
        let disc: Vec<f64> = c_all[v].iter().map(|c| (-h * c).exp()).collect();
        let a: Vec<f64> = disc.iter().map(|d| d * jump_keep).collect();
        let b: Vec<f64> = disc.iter().map(|d| d * (1.0 - jump_keep)).collect();
        let op = m_all[v].combine(&a, &p_all[v], &b);
        consts.push((0..nv).map(|i| h * f_all[v][i] + op.exterior_value(i)).collect());
        ops.push(op);
    }
    let c0 = c_all.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(DiscreteBellmanSystem {
        h,
        lambda,
        k: mesh.k(),
        dz: rule.map_or(0.0, |q| q.dz()),
        r: measure.map_or(0.0, |m| m.r()),
        big_r: measure.map_or(0.0, |m| m.big_r()),
        m: m_all,
        p: p_all,
        c: c_all,
        f: f_all,
        max_foot_nonzeros: max_foot,
        warnings,
        ops,
        consts,
        c0,
    })
}

/// One application of the Bellman map. Ties go to the lowest control index.
pub fn bellman_apply(system: &DiscreteBellmanSystem, u: &[f64]) -> Result<(Vec<f64>, Vec<usize>), SchemeError> {
    system.check_len(u)?;
    let out: Vec<(f64, usize)> = (0..u.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (system.control_value(0, i, u), 0);
            for v in 1..system.control_count() {
                let val = system.control_value(v, i, u);
                if val < best.0 {
                    best = (val, v);
                }
            }
            best
        })
        .collect();
    Ok(out.into_iter().unzip())
}

/// Text dump: `#` header with the discretization, then
/// `vertex_index x_coords... value policy_index` per vertex.
pub fn write_solution(system: &DiscreteBellmanSystem, mesh: &Triangulation, outcome: &SolveOutcome) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "# h={} k={} dz={} r={} R={} lambda_Q={} iterations={} residual={:e}",
        system.h, system.k, system.dz, system.r, system.big_r, system.lambda, outcome.iterations, outcome.residual
    )
    .unwrap();
    for i in 0..mesh.vertex_count() {
        write!(s, "{i}").unwrap();
        for x in mesh.vertex(i) {
            write!(s, " {x}").unwrap();
        }
        writeln!(s, " {} {}", outcome.nodal_solution[i], outcome.policy[i]).unwrap();
    }
    s
}
