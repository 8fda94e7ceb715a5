//! Simplicial meshes with barycentric point location and piecewise-linear
//! interpolation.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::control_problem::Bounds;
use crate::linalg::{det, inverse, Mat};

/// Barycentric weights within this distance below zero are snapped to zero.
pub const SNAP_TOL: f64 = 1e-12;

pub type ExteriorRule = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh dimension {0} unsupported (expected 1, 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("simplex {0} is degenerate")]
    DegenerateSimplex(usize),
    #[error("expected {expected} nodal values, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("mesh text line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Containing simplex and barycentric weights of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycentricHit {
    pub simplex_index: usize,
    count: usize,
    vertices: [u32; 4],
    weights: [f64; 4],
}

impl BarycentricHit {
    pub fn weights(&self) -> &[f64] {
        &self.weights[..self.count]
    }

    pub fn vertex_indices(&self) -> &[u32] {
        &self.vertices[..self.count]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.vertex_indices()
            .iter()
            .zip(self.weights())
            .map(|(v, w)| (*v as usize, *w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Inside(BarycentricHit),
    Exterior,
}

#[derive(Clone)]
enum Locator {
    Kuhn {
        cells: Vec<usize>,
        spacing: Vec<f64>,
        perms: Vec<Vec<usize>>,
    },
    Buckets {
        per_axis: Vec<usize>,
        width: Vec<f64>,
        starts: Vec<u32>,
        items: Vec<u32>,
        /// Per simplex: inverse of the edge matrix, row-major `N x N`.
        inverses: Vec<f64>,
    },
}

/// Conforming simplicial mesh of a box (structured) or of an imported vertex
/// and simplex list (unstructured).
#[derive(Clone)]
pub struct Triangulation {
    dim: usize,
    vertices: Vec<f64>,
    simplices: Vec<u32>,
    k: f64,
    rho: f64,
    bounds: Bounds,
    locator: Locator,
    exterior: ExteriorRule,
}

impl fmt::Debug for Triangulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Triangulation")
            .field("dim", &self.dim)
            .field("vertices", &self.vertex_count())
            .field("simplices", &self.simplex_count())
            .field("k", &self.k)
            .field("rho", &self.rho)
            .field("bounds", &self.bounds)
            .finish()
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

fn edge_matrix(dim: usize, vertices: &[f64], simplex: &[u32]) -> Mat {
    let p0 = &vertices[simplex[0] as usize * dim..][..dim];
    let mut m = Mat::zeros(dim, dim);
    for j in 0..dim {
        let pj = &vertices[simplex[j + 1] as usize * dim..][..dim];
        for i in 0..dim {
            m[(i, j)] = pj[i] - p0[i];
        }
    }
    m
}

fn factorial(n: usize) -> f64 {
    (1..=n).product::<usize>() as f64
}

/// Volume of the simplex spanned by `points` (each of length `dim`).
fn simplex_volume(dim: usize, points: &[&[f64]]) -> f64 {
    let mut m = Mat::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            m[(i, j)] = points[j + 1][i] - points[0][i];
        }
    }
    det(&m).abs() / factorial(dim)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Area of the facet spanned by `points` (dim - 1 simplex embedded in dim).
fn facet_measure(dim: usize, points: &[&[f64]]) -> f64 {
    match dim {
        1 => 1.0,
        2 => distance(points[0], points[1]),
        3 => {
            let u: Vec<f64> = (0..3).map(|i| points[1][i] - points[0][i]).collect();
            let v: Vec<f64> = (0..3).map(|i| points[2][i] - points[0][i]).collect();
            let c = [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ];
            0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
        }
        _ => unreachable!(),
    }
}

/// (diameter, inscribed-ball diameter) of every simplex.
fn simplex_shapes(dim: usize, vertices: &[f64], simplices: &[u32]) -> Result<Vec<(f64, f64)>, MeshError> {
    simplices
        .chunks(dim + 1)
        .enumerate()
        .map(|(s, idx)| {
            let pts: Vec<&[f64]> = idx.iter().map(|&v| &vertices[v as usize * dim..][..dim]).collect();
            let vol = simplex_volume(dim, &pts);
            let mut diam: f64 = 0.0;
            for a in 0..=dim {
                for b in a + 1..=dim {
                    diam = diam.max(distance(pts[a], pts[b]));
                }
            }
            if !(vol > 1e-14 * diam.powi(dim as i32)) {
                return Err(MeshError::DegenerateSimplex(s));
            }
            let mut area = 0.0;
            for skip in 0..=dim {
                let facet: Vec<&[f64]> = (0..=dim).filter(|&i| i != skip).map(|i| pts[i]).collect();
                area += facet_measure(dim, &facet);
            }
            Ok((diam, 2.0 * dim as f64 * vol / area))
        })
        .collect()
}

fn check_dim(dim: usize) -> Result<(), MeshError> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(MeshError::UnsupportedDimension(dim))
    }
}

/// Kuhn (Freudenthal) triangulation of `bounds` with `cells[a]` cells along
/// axis `a`. Vertices are numbered with axis 0 varying fastest; simplex
/// `cell * N! + p` uses the `p`-th permutation in lexicographic order.
pub fn build_box_mesh(bounds: &Bounds, cells: &[usize]) -> Result<Triangulation, MeshError> {
    let dim = bounds.dim();
    check_dim(dim)?;
    if cells.len() != dim || cells.iter().any(|&c| c == 0) {
        return Err(MeshError::Invalid(format!("cell counts {cells:?} for a {dim}-D box")));
    }
    for a in 0..dim {
        if !(bounds.hi[a] > bounds.lo[a]) {
            return Err(MeshError::Invalid(format!("empty box along axis {a}")));
        }
    }
    let spacing: Vec<f64> = (0..dim).map(|a| (bounds.hi[a] - bounds.lo[a]) / cells[a] as f64).collect();
    let nodes: Vec<usize> = cells.iter().map(|c| c + 1).collect();
    let vcount: usize = nodes.iter().product();
    if vcount > u32::MAX as usize {
        return Err(MeshError::Invalid("too many vertices".into()));
    }
    let mut vertices = Vec::with_capacity(vcount * dim);
    for idx in 0..vcount {
        let mut rem = idx;
        for a in 0..dim {
            let i = rem % nodes[a];
            rem /= nodes[a];
            // exact endpoints so boundary vertices sit on the box faces
            let x = if i == cells[a] {
                bounds.hi[a]
            } else {
                bounds.lo[a] + i as f64 * spacing[a]
            };
            vertices.push(x);
        }
    }
    let perms = permutations(dim);
    let ccount: usize = cells.iter().product();
    let mut simplices = Vec::with_capacity(ccount * perms.len() * (dim + 1));
    let strides: Vec<usize> = (0..dim).map(|a| nodes[..a].iter().product()).collect();
    for c in 0..ccount {
        let mut rem = c;
        let mut base = 0;
        for a in 0..dim {
            base += (rem % cells[a]) * strides[a];
            rem /= cells[a];
        }
        for p in &perms {
            let mut v = base;
            simplices.push(v as u32);
            for &axis in p {
                v += strides[axis];
                simplices.push(v as u32);
            }
        }
    }
    let shapes = simplex_shapes(dim, &vertices, &simplices)?;
    let k = spacing.iter().map(|s| s * s).sum::<f64>().sqrt();
    let rho = shapes.iter().map(|s| s.1).fold(f64::INFINITY, f64::min) / k;
    Ok(Triangulation {
        dim,
        vertices,
        simplices,
        k,
        rho,
        bounds: bounds.clone(),
        locator: Locator::Kuhn {
            cells: cells.to_vec(),
            spacing,
            perms,
        },
        exterior: Arc::new(|_| 0.0),
    })
}

impl Triangulation {
    /// Unstructured mesh from flat coordinate and index arrays. Point location
    /// uses a uniform bucket grid over the bounding box.
    pub fn from_parts(dim: usize, vertices: Vec<f64>, simplices: Vec<u32>) -> Result<Self, MeshError> {
        check_dim(dim)?;
        if vertices.is_empty() || vertices.len() % dim != 0 {
            return Err(MeshError::Invalid("vertex array length".into()));
        }
        if simplices.is_empty() || simplices.len() % (dim + 1) != 0 {
            return Err(MeshError::Invalid("simplex array length".into()));
        }
        let vcount = vertices.len() / dim;
        if let Some(bad) = simplices.iter().find(|&&v| v as usize >= vcount) {
            return Err(MeshError::Invalid(format!("vertex index {bad} out of range")));
        }
        if vertices.iter().any(|x| !x.is_finite()) {
            return Err(MeshError::Invalid("non-finite coordinate".into()));
        }
        let shapes = simplex_shapes(dim, &vertices, &simplices)?;
        let k = shapes.iter().map(|s| s.0).fold(0.0, f64::max);
        let rho = shapes.iter().map(|s| s.1).fold(f64::INFINITY, f64::min) / k;

        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in vertices.chunks(dim) {
            for a in 0..dim {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let scount = simplices.len() / (dim + 1);
        let target = (scount as f64).powf(1.0 / dim as f64).ceil().max(1.0) as usize;
        let per_axis: Vec<usize> = (0..dim)
            .map(|a| if hi[a] > lo[a] { target } else { 1 })
            .collect();
        let width: Vec<f64> = (0..dim)
            .map(|a| ((hi[a] - lo[a]) / per_axis[a] as f64).max(f64::MIN_POSITIVE))
            .collect();
        let bucket_of = |x: f64, a: usize| -> usize {
            (((x - lo[a]) / width[a]).floor().max(0.0) as usize).min(per_axis[a] - 1)
        };
        let nb: usize = per_axis.iter().product();
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); nb];
        let mut inverses = Vec::with_capacity(scount * dim * dim);
        for (s, idx) in simplices.chunks(dim + 1).enumerate() {
            let inv = inverse(&edge_matrix(dim, &vertices, idx)).ok_or(MeshError::DegenerateSimplex(s))?;
            inverses.extend_from_slice(inv.as_slice());
            let mut blo = vec![usize::MAX; dim];
            let mut bhi = vec![0; dim];
            for &v in idx {
                for a in 0..dim {
                    let b = bucket_of(vertices[v as usize * dim + a], a);
                    blo[a] = blo[a].min(b);
                    bhi[a] = bhi[a].max(b);
                }
            }
            let mut cur = blo.clone();
            loop {
                let mut flat = 0;
                let mut stride = 1;
                for a in 0..dim {
                    flat += cur[a] * stride;
                    stride *= per_axis[a];
                }
                lists[flat].push(s as u32);
                let mut a = 0;
                while a < dim {
                    if cur[a] < bhi[a] {
                        cur[a] += 1;
                        break;
                    }
                    cur[a] = blo[a];
                    a += 1;
                }
                if a == dim {
                    break;
                }
            }
        }
        let mut starts = Vec::with_capacity(nb + 1);
        let mut items = Vec::new();
        starts.push(0u32);
        for l in lists {
            items.extend(l);
            starts.push(items.len() as u32);
        }
        Ok(Triangulation {
            dim,
            vertices,
            simplices,
            k,
            rho,
            bounds: Bounds::new(lo, hi),
            locator: Locator::Buckets {
                per_axis,
                width,
                starts,
                items,
                inverses,
            },
            exterior: Arc::new(|_| 0.0),
        })
    }

    /// Sets the value returned by [`interpolate`](Self::interpolate) outside the mesh.
    pub fn with_exterior_rule(mut self, rule: ExteriorRule) -> Self {
        self.exterior = rule;
        self
    }

    pub fn exterior_value(&self, x: &[f64]) -> f64 {
        (self.exterior)(x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len() / self.dim
    }

    pub fn simplex_count(&self) -> usize {
        self.simplices.len() / (self.dim + 1)
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i * self.dim..][..self.dim]
    }

    pub fn simplex(&self, s: usize) -> &[u32] {
        &self.simplices[s * (self.dim + 1)..][..self.dim + 1]
    }

    /// Maximal simplex diameter.
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Minimal inscribed-ball diameter divided by `k`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn is_structured(&self) -> bool {
        matches!(self.locator, Locator::Kuhn { .. })
    }

    /// Cell counts per axis for box meshes.
    pub fn cells(&self) -> Option<&[usize]> {
        match &self.locator {
            Locator::Kuhn { cells, .. } => Some(cells),
            Locator::Buckets { .. } => None,
        }
    }

    pub fn volume(&self, s: usize) -> f64 {
        let pts: Vec<&[f64]> = self.simplex(s).iter().map(|&v| self.vertex(v as usize)).collect();
        simplex_volume(self.dim, &pts)
    }

    pub fn locate(&self, x: &[f64]) -> Location {
        assert_eq!(x.len(), self.dim, "point dimension");
        match &self.locator {
            Locator::Kuhn { cells, spacing, perms } => self.locate_kuhn(x, cells, spacing, perms),
            Locator::Buckets {
                per_axis,
                width,
                starts,
                items,
                inverses,
            } => self.locate_buckets(x, per_axis, width, starts, items, inverses),
        }
    }

    fn locate_kuhn(&self, x: &[f64], cells: &[usize], spacing: &[f64], perms: &[Vec<usize>]) -> Location {
        let n = self.dim;
        let b = &self.bounds;
        let mut cell = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..n {
            if !(x[a] >= b.lo[a] && x[a] <= b.hi[a]) {
                return Location::Exterior;
            }
            let s = (x[a] - b.lo[a]) / spacing[a];
            let i = (s.floor().max(0.0) as usize).min(cells[a] - 1);
            cell[a] = i;
            t[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        // axes ordered by decreasing local coordinate, ties by axis index
        let mut order = [0usize, 1, 2];
        let order = &mut order[..n];
        order.sort_by(|&p, &q| t[q].partial_cmp(&t[p]).unwrap().then(p.cmp(&q)));
        let rank = perms.iter().position(|p| p[..] == order[..]).unwrap();
        let mut flat_cell = 0;
        let mut stride = 1;
        for a in 0..n {
            flat_cell += cell[a] * stride;
            stride *= cells[a];
        }
        let simplex_index = flat_cell * perms.len() + rank;
        let mut weights = [0.0; 4];
        weights[0] = 1.0 - t[order[0]];
        for j in 1..n {
            weights[j] = t[order[j - 1]] - t[order[j]];
        }
        weights[n] = t[order[n - 1]];
        let mut vertices = [0u32; 4];
        vertices[..=n].copy_from_slice(self.simplex(simplex_index));
        Location::Inside(finish_hit(simplex_index, n + 1, vertices, weights))
    }

    fn locate_buckets(
        &self,
        x: &[f64],
        per_axis: &[usize],
        width: &[f64],
        starts: &[u32],
        items: &[u32],
        inverses: &[f64],
    ) -> Location {
        let n = self.dim;
        let b = &self.bounds;
        let mut flat = 0;
        let mut stride = 1;
        for a in 0..n {
            if !(x[a] >= b.lo[a] && x[a] <= b.hi[a]) {
                return Location::Exterior;
            }
            let i = (((x[a] - b.lo[a]) / width[a]).floor().max(0.0) as usize).min(per_axis[a] - 1);
            flat += i * stride;
            stride *= per_axis[a];
        }
        let mut best: Option<(f64, usize, [f64; 4])> = None;
        for &s in &items[starts[flat] as usize..starts[flat + 1] as usize] {
            let s = s as usize;
            let idx = self.simplex(s);
            let p0 = self.vertex(idx[0] as usize);
            let inv = &inverses[s * n * n..][..n * n];
            let mut w = [0.0; 4];
            let mut sum = 0.0;
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += inv[i * n + j] * (x[j] - p0[j]);
                }
                w[i + 1] = acc;
                sum += acc;
            }
            w[0] = 1.0 - sum;
            let worst = w[..=n].iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                best = Some((worst, s, w));
                break;
            }
            if best.map_or(true, |b| worst > b.0) {
                best = Some((worst, s, w));
            }
        }
        match best {
            Some((worst, s, w)) if worst >= -SNAP_TOL => {
                let mut vertices = [0u32; 4];
                vertices[..=n].copy_from_slice(self.simplex(s));
                Location::Inside(finish_hit(s, n + 1, vertices, w))
            }
            _ => Location::Exterior,
        }
    }

    /// Piecewise-linear interpolant of `nodal` at `x`; the exterior rule
    /// outside the mesh.
    pub fn interpolate(&self, nodal: &[f64], x: &[f64]) -> Result<f64, MeshError> {
        if nodal.len() != self.vertex_count() {
            return Err(MeshError::SizeMismatch {
                expected: self.vertex_count(),
                got: nodal.len(),
            });
        }
        Ok(match self.locate(x) {
            Location::Inside(hit) => hit.iter().map(|(v, w)| w * nodal[v]).sum(),
            Location::Exterior => self.exterior_value(x),
        })
    }

    /// Text serialization: `N vcount scount`, vertex lines, simplex lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {}", self.dim, self.vertex_count(), self.simplex_count()).unwrap();
        for i in 0..self.vertex_count() {
            let line: Vec<String> = self.vertex(i).iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        for s in 0..self.simplex_count() {
            let line: Vec<String> = self.simplex(s).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output into an unstructured mesh.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, msg: &str| MeshError::Parse {
            line,
            msg: msg.to_string(),
        };
        let (hl, header) = lines.next().ok_or_else(|| err(0, "missing header"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(hl, &e.to_string()))?;
        if head.len() != 3 {
            return Err(err(hl, "header must be `N vcount scount`"));
        }
        let (dim, vc, sc) = (head[0], head[1], head[2]);
        check_dim(dim)?;
        let mut vertices = Vec::with_capacity(vc * dim);
        for _ in 0..vc {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "missing vertex line"))?;
            let coords: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| err(ln, &e.to_string()))?;
            if coords.len() != dim {
                return Err(err(ln, "wrong coordinate count"));
            }
            vertices.extend(coords);
        }
        let mut simplices = Vec::with_capacity(sc * (dim + 1));
        for _ in 0..sc {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "missing simplex line"))?;
            let idx: Vec<u32> = l
                .split_whitespace()
                .map(|t| t.parse::<u32>())
                .collect::<Result<_, _>>()
                .map_err(|e| err(ln, &e.to_string()))?;
            if idx.len() != dim + 1 {
                return Err(err(ln, "wrong index count"));
            }
            simplices.extend(idx);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content"));
        }
        Self::from_parts(dim, vertices, simplices)
    }
}

fn finish_hit(simplex_index: usize, count: usize, vertices: [u32; 4], mut weights: [f64; 4]) -> BarycentricHit {
    let mut sum = 0.0;
    for w in &mut weights[..count] {
        if *w < 0.0 {
            *w = 0.0;
        }
        sum += *w;
    }
    for w in &mut weights[..count] {
        *w /= sum;
    }
    BarycentricHit {
        simplex_index,
        count,
        vertices,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(dim: usize) -> Bounds {
        Bounds::new(vec![0.0; dim], vec![1.0; dim])
    }

    fn hit(m: &Triangulation, x: &[f64]) -> BarycentricHit {
        match m.locate(x) {
            Location::Inside(h) => h,
            Location::Exterior => panic!("{x:?} located outside"),
        }
    }

    #[test]
    fn one_d_counts() {
        let m = build_box_mesh(&unit(1), &[4]).unwrap();
        assert_eq!(m.vertex_count(), 5);
        assert_eq!(m.simplex_count(), 4);
        assert!((m.k() - 0.25).abs() < 1e-15);
        assert!((m.interpolate(&[0.0, 0.25, 0.5, 0.75, 1.0], &[0.3]).unwrap() - 0.3).abs() < 1e-15);
        let two = build_box_mesh(&unit(1), &[1]).unwrap();
        assert_eq!(two.interpolate(&[0.0, 1.0], &[0.25]).unwrap(), 0.25);
    }

    #[test]
    fn two_d_counts_and_shape() {
        let m = build_box_mesh(&unit(2), &[2, 2]).unwrap();
        assert_eq!(m.vertex_count(), 9);
        assert_eq!(m.simplex_count(), 8);
        assert!((m.k() - 2f64.sqrt() / 2.0).abs() < 1e-15);
        let one = build_box_mesh(&unit(2), &[1, 1]).unwrap();
        assert!(one.rho() >= 0.29, "{}", one.rho());
        // inscribed diameter of the unit right isosceles triangle over sqrt 2
        let expected = 2.0 * 0.5 / (2.0 + 2f64.sqrt()) * 2.0 / 2f64.sqrt();
        assert!((one.rho() - expected).abs() < 1e-12);
    }

    #[test]
    fn three_d_tiles_the_cube() {
        let m = build_box_mesh(&unit(3), &[2, 1, 3]).unwrap();
        assert_eq!(m.simplex_count(), 6 * 6);
        let total: f64 = (0..m.simplex_count()).map(|s| m.volume(s)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(m.rho() > 0.0);
    }

    #[test]
    fn unsupported_dimension() {
        let b = Bounds::cube(4, 1.0);
        assert_eq!(
            build_box_mesh(&b, &[1, 1, 1, 1]).unwrap_err(),
            MeshError::UnsupportedDimension(4)
        );
    }

    #[test]
    fn vertex_hits_are_kronecker() {
        let m = build_box_mesh(&Bounds::cube(2, 1.0), &[3, 4]).unwrap();
        for j in 0..m.vertex_count() {
            let mut e = vec![0.0; m.vertex_count()];
            e[j] = 1.0;
            let x = m.vertex(j).to_vec();
            assert!((m.interpolate(&e, &x).unwrap() - 1.0).abs() < 1e-14);
            let h = hit(&m, &x);
            assert!(h.iter().filter(|(_, w)| *w > 1e-14).count() == 1);
        }
    }

    #[test]
    fn centroid_of_reference_triangle() {
        let m = Triangulation::from_parts(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2]).unwrap();
        let h = hit(&m, &[1.0 / 3.0, 1.0 / 3.0]);
        for w in h.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(m.locate(&[0.8, 0.8]), Location::Exterior);
    }

    #[test]
    fn shared_edge_value_is_unique() {
        let m = build_box_mesh(&unit(2), &[1, 1]).unwrap();
        let vals = [0.3, -1.2, 2.5, 0.7];
        // the diagonal x = y is shared by both triangles
        let x = [0.4, 0.4];
        let a = m.interpolate(&vals, &x).unwrap();
        let generic = Triangulation::from_parts(2, m.vertices.clone(), m.simplices.clone()).unwrap();
        let b = generic.interpolate(&vals, &x).unwrap();
        let below = m.interpolate(&vals, &[0.4 + 1e-13, 0.4]).unwrap();
        let above = m.interpolate(&vals, &[0.4, 0.4 + 1e-13]).unwrap();
        assert!((a - b).abs() < 1e-14 && (a - below).abs() < 1e-11 && (a - above).abs() < 1e-11);
    }

    #[test]
    fn text_round_trip() {
        let m = build_box_mesh(&Bounds::new(vec![-1.0, 0.0], vec![1.0, 0.5]), &[3, 2]).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("2 12 12\n"));
        let back = Triangulation::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert!((back.k() - m.k()).abs() < 1e-14);
        assert!(Triangulation::from_text("2 1 0\n0 0\n").is_err());
        assert!(matches!(
            Triangulation::from_text("2 3 1\n0 0\n1 0\n0 x\n0 1 2\n"),
            Err(MeshError::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn degenerate_simplex_rejected() {
        let e = Triangulation::from_parts(2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0], vec![0, 1, 2]).unwrap_err();
        assert_eq!(e, MeshError::DegenerateSimplex(0));
    }

    #[test]
    fn size_mismatch() {
        let m = build_box_mesh(&unit(1), &[2]).unwrap();
        assert!(matches!(m.interpolate(&[1.0], &[0.5]), Err(MeshError::SizeMismatch { .. })));
    }

    #[test]
    fn exterior_rule_applies_outside() {
        let m = build_box_mesh(&unit(1), &[2])
            .unwrap()
            .with_exterior_rule(Arc::new(|x| 10.0 + x[0]));
        assert_eq!(m.interpolate(&[0.0; 3], &[2.0]).unwrap(), 12.0);
        assert_eq!(m.interpolate(&[0.0; 3], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_interpolation_error_scales_like_k_squared() {
        let w = |x: &[f64]| (x[0] * 1.3).sin() * (x[1] * 0.7).cos();
        let err = |n: usize| {
            let m = build_box_mesh(&Bounds::cube(2, 1.0), &[n, n]).unwrap();
            let nodal: Vec<f64> = (0..m.vertex_count()).map(|i| w(m.vertex(i))).collect();
            let mut e: f64 = 0.0;
            for i in 0..40 {
                for j in 0..40 {
                    let x = [-0.99 + 1.98 * i as f64 / 39.0, -0.99 + 1.98 * j as f64 / 39.0];
                    e = e.max((m.interpolate(&nodal, &x).unwrap() - w(&x)).abs());
                }
            }
            (e, m.k())
        };
        let (e1, k1) = err(8);
        let (e2, k2) = err(16);
        assert!(e1 <= 1.3f64.powi(2) * k1 * k1 && e2 <= 1.3f64.powi(2) * k2 * k2);
        assert!(e1 / e2 > 3.0, "{e1} {e2}");
    }

    proptest! {
        #[test]
        fn affine_data_reproduced(
            a in prop::array::uniform3(-3.0f64..3.0),
            beta in -2.0f64..2.0,
            x in prop::array::uniform3(-1.0f64..1.0),
            dim in 1usize..=3,
        ) {
            let m = build_box_mesh(&Bounds::cube(dim, 1.0), &vec![3; dim]).unwrap();
            let f = |p: &[f64]| p.iter().zip(&a).map(|(p, a)| p * a).sum::<f64>() + beta;
            let nodal: Vec<f64> = (0..m.vertex_count()).map(|i| f(m.vertex(i))).collect();
            let v = m.interpolate(&nodal, &x[..dim]).unwrap();
            prop_assert!((v - f(&x[..dim])).abs() < 1e-12);
            let h = hit(&m, &x[..dim]);
            prop_assert!(h.weights().iter().all(|w| *w >= 0.0));
            prop_assert!((h.weights().iter().sum::<f64>() - 1.0).abs() <= 4.0 * f64::EPSILON);
        }

        #[test]
        fn interpolation_is_monotone(
            base in prop::collection::vec(-1.0f64..1.0, 16),
            bump in prop::collection::vec(0.0f64..1.0, 16),
            x in prop::array::uniform2(0.0f64..1.0),
        ) {
            let m = build_box_mesh(&unit(2), &[3, 3]).unwrap();
            let upper: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            prop_assert!(m.interpolate(&base, &x).unwrap() <= m.interpolate(&upper, &x).unwrap());
        }

        #[test]
        fn kuhn_agrees_with_generic_location(x in prop::array::uniform3(-1.0f64..1.0), dim in 1usize..=3) {
            let m = build_box_mesh(&Bounds::cube(dim, 1.0), &vec![2; dim]).unwrap();
            let g = Triangulation::from_parts(dim, m.vertices.clone(), m.simplices.clone()).unwrap();
            let vals: Vec<f64> = (0..m.vertex_count()).map(|i| (i as f64 * 0.37).sin()).collect();
            let a = m.interpolate(&vals, &x[..dim]).unwrap();
            let b = g.interpolate(&vals, &x[..dim]).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
