//! Compressed sparse rows with per-row exterior mass.

/// Nonnegative sparse rows. Mass landing outside the mesh is kept separately
/// as `exterior_mass[i]` together with its weighted value `exterior_value[i]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    exterior_mass: Vec<f64>,
    exterior_value: Vec<f64>,
}

/// One assembled row before concatenation.
#[derive(Debug, Clone, Default)]
pub struct RowBuf {
    pub entries: Vec<(u32, f64)>,
    pub exterior_mass: f64,
    pub exterior_value: f64,
}

impl RowBuf {
    /// Sorts by column and merges duplicates.
    pub fn normalize(&mut self) {
        self.entries.sort_unstable_by_key(|e| e.0);
        let mut out: Vec<(u32, f64)> = Vec::with_capacity(self.entries.len());
        for &(c, v) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => out.push((c, v)),
            }
        }
        self.entries = out;
    }
}

impl SparseRows {
    pub fn from_rows(rows: Vec<RowBuf>) -> Self {
        let nnz = rows.iter().map(|r| r.entries.len()).sum();
        let mut s = SparseRows {
            row_ptr: Vec::with_capacity(rows.len() + 1),
            cols: Vec::with_capacity(nnz),
            vals: Vec::with_capacity(nnz),
            exterior_mass: Vec::with_capacity(rows.len()),
            exterior_value: Vec::with_capacity(rows.len()),
        };
        s.row_ptr.push(0);
        for r in rows {
            for (c, v) in r.entries {
                s.cols.push(c);
                s.vals.push(v);
            }
            s.row_ptr.push(s.cols.len());
            s.exterior_mass.push(r.exterior_mass);
            s.exterior_value.push(r.exterior_value);
        }
        s
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(
            (0..n)
                .map(|i| RowBuf {
                    entries: vec![(i as u32, 1.0)],
                    ..Default::default()
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn exterior_mass(&self, i: usize) -> f64 {
        self.exterior_mass[i]
    }

    /// Sum over exterior targets of weight times exterior value.
    pub fn exterior_value(&self, i: usize) -> f64 {
        self.exterior_value[i]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// `(A u)_i` without the exterior term.
    pub fn row_dot(&self, i: usize, u: &[f64]) -> f64 {
        let (c, v) = self.row(i);
        c.iter().zip(v).map(|(c, v)| v * u[*c as usize]).sum()
    }

    /// `sup_i |row_sum + exterior_mass - 1|`.
    pub fn stochasticity_defect(&self) -> f64 {
        (0..self.rows())
            .map(|i| (self.row_sum(i) + self.exterior_mass[i] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.vals
            .iter()
            .copied()
            .chain(self.exterior_mass.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean_exterior_mass(&self) -> f64 {
        if self.rows() == 0 {
            return 0.0;
        }
        self.exterior_mass.iter().sum::<f64>() / self.rows() as f64
    }

    /// `a * self + b * other`, row by row, with merged columns.
    pub fn combine(&self, a: &[f64], other: &SparseRows, b: &[f64]) -> SparseRows {
        let rows = (0..self.rows())
            .map(|i| {
                let (c1, v1) = self.row(i);
                let (c2, v2) = other.row(i);
                let mut entries = Vec::with_capacity(c1.len() + c2.len());
                let (mut p, mut q) = (0, 0);
                while p < c1.len() || q < c2.len() {
                    if q == c2.len() || (p < c1.len() && c1[p] < c2[q]) {
                        entries.push((c1[p], a[i] * v1[p]));
                        p += 1;
                    } else if p == c1.len() || c2[q] < c1[p] {
                        entries.push((c2[q], b[i] * v2[q]));
                        q += 1;
                    } else {
                        entries.push((c1[p], a[i] * v1[p] + b[i] * v2[q]));
                        p += 1;
                        q += 1;
                    }
                }
                RowBuf {
                    entries,
                    exterior_mass: a[i] * self.exterior_mass[i] + b[i] * other.exterior_mass[i],
                    exterior_value: a[i] * self.exterior_value[i] + b[i] * other.exterior_value[i],
                }
            })
            .collect();
        SparseRows::from_rows(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_merges_duplicates() {
        let mut r = RowBuf {
            entries: vec![(3, 0.25), (1, 0.25), (3, 0.5)],
            ..Default::default()
        };
        r.normalize();
        assert_eq!(r.entries, vec![(1, 0.25), (3, 0.75)]);
    }

    #[test]
    fn combine_merges_sorted_rows() {
        let a = SparseRows::from_rows(vec![RowBuf {
            entries: vec![(0, 0.5), (2, 0.5)],
            ..Default::default()
        }]);
        let b = SparseRows::from_rows(vec![RowBuf {
            entries: vec![(1, 0.5)],
            exterior_mass: 0.5,
            exterior_value: 2.0,
        }]);
        let c = a.combine(&[2.0], &b, &[4.0]);
        assert_eq!(c.row(0).0, &[0, 1, 2]);
        assert_eq!(c.row(0).1, &[1.0, 2.0, 1.0]);
        assert_eq!(c.exterior_mass(0), 2.0);
        assert_eq!(c.exterior_value(0), 8.0);
        assert_eq!(SparseRows::identity(3).stochasticity_defect(), 0.0);
    }
}
