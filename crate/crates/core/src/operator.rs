//! Structured many-body operators.
//!
//! Every operator in this crate has the form `sum_k A_k + D`: an identical
//! one-particle matrix `A` acting on each particle, plus a real diagonal `D`
//! in the configuration basis. Applying it costs `O(dim * N * nnz(A)/M)`,
//! so states far larger than any dense matrix we could store are fine.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{configuration, C64};

/// Sparse single-particle matrix stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct OneBodyMatrix {
    sites: usize,
    rows: Vec<Vec<(usize, C64)>>,
}

impl OneBodyMatrix {
    pub fn zeros(sites: usize) -> Self {
        Self {
            sites,
            rows: vec![Vec::new(); sites],
        }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let mut out = Self::zeros(m.nrows());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != C64::new(0.0, 0.0) {
                    out.rows[r].push((c, m[(r, c)]));
                }
            }
        }
        out
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut out = Self::zeros(values.len());
        for (j, &v) in values.iter().enumerate() {
            if v != 0.0 {
                out.rows[j].push((j, C64::new(v, 0.0)));
            }
        }
        out
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Adds `value` at `(row, col)`, merging with an existing entry.
    pub fn add(&mut self, row: usize, col: usize, value: C64) {
        let entries = &mut self.rows[row];
        match entries.iter_mut().find(|(c, _)| *c == col) {
            Some((_, v)) => *v += value,
            None => entries.push((col, value)),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.rows[row]
            .iter()
            .find(|(c, _)| *c == col)
            .map(|&(_, v)| v)
            .unwrap_or_default()
    }

    pub fn row(&self, row: usize) -> &[(usize, C64)] {
        &self.rows[row]
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.sites, self.sites);
        for (r, entries) in self.rows.iter().enumerate() {
            for &(c, v) in entries {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn is_diagonal(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(r, e)| e.iter().all(|&(c, v)| c == r || v == C64::new(0.0, 0.0)))
    }

    pub fn is_real(&self) -> bool {
        self.rows.iter().flatten().all(|(_, v)| v.im == 0.0)
    }

    /// Symmetrized product `(A B + B A) / 2`.
    pub fn anticommutator_half(&self, other: &OneBodyMatrix) -> OneBodyMatrix {
        let a = self.to_dense();
        let b = other.to_dense();
        let m = (&a * &b + &b * &a) * C64::new(0.5, 0.0);
        Self::from_dense(&m)
    }

    fn max_row_sum(&self) -> f64 {
        self.rows
            .iter()
            .map(|e| e.iter().map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// `sum_k A_k + D` on `particles` particles over `sites` sites.
#[derive(Debug, Clone)]
pub struct ManyBodyOperator {
    sites: usize,
    particles: usize,
    dim: usize,
    one_body: Option<OneBodyMatrix>,
    diagonal: Option<Vec<f64>>,
}

impl ManyBodyOperator {
    pub fn new(
        sites: usize,
        particles: usize,
        dim: usize,
        one_body: Option<OneBodyMatrix>,
        diagonal: Option<Vec<f64>>,
    ) -> Self {
        if let Some(a) = &one_body {
            assert_eq!(a.sites(), sites);
        }
        if let Some(d) = &diagonal {
            assert_eq!(d.len(), dim);
        }
        Self {
            sites,
            particles,
            dim,
            one_body,
            diagonal,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn one_body(&self) -> Option<&OneBodyMatrix> {
        self.one_body.as_ref()
    }

    pub fn diagonal_part(&self) -> Option<&[f64]> {
        self.diagonal.as_deref()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.particles];
        for k in (0..self.particles.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.sites;
        }
        s
    }

    pub fn is_real(&self) -> bool {
        self.one_body.as_ref().is_none_or(OneBodyMatrix::is_real)
    }

    /// Eigenvalues per configuration when the operator is diagonal in the
    /// position basis, `None` otherwise.
    pub fn diagonal_values(&self) -> Option<Vec<f64>> {
        if let Some(a) = &self.one_body {
            if !a.is_diagonal() || !a.is_real() {
                return None;
            }
        }
        let one: Vec<f64> = match &self.one_body {
            Some(a) => (0..self.sites).map(|j| a.get(j, j).re).collect(),
            None => vec![0.0; self.sites],
        };
        let values = (0..self.dim)
            .into_par_iter()
            .map(|idx| {
                let base = self.diagonal.as_ref().map_or(0.0, |d| d[idx]);
                configuration(self.sites, self.particles, idx)
                    .into_iter()
                    .fold(base, |acc, j| acc + one[j])
            })
            .collect();
        Some(values)
    }

    /// Upper bound on the operator 2-norm.
    pub fn norm_bound(&self) -> f64 {
        let one = self
            .one_body
            .as_ref()
            .map_or(0.0, |a| a.max_row_sum() * self.particles as f64);
        let diag = self
            .diagonal
            .as_ref()
            .map_or(0.0, |d| d.iter().fold(0.0, |m, v| f64::max(m, v.abs())));
        one + diag
    }

    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        let strides = self.strides();
        let sites = self.sites;
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        out.par_iter_mut().enumerate().for_each(|(idx, slot)| {
            let mut acc = C64::new(0.0, 0.0);
            if let Some(a) = &self.one_body {
                for &s in &strides {
                    let j = (idx / s) % sites;
                    let base = idx - j * s;
                    for &(c, val) in a.row(j) {
                        acc += val * v[base + c * s];
                    }
                }
            }
            if let Some(d) = &self.diagonal {
                acc += v[idx] * d[idx];
            }
            *slot = acc;
        });
        Ok(out)
    }

    /// Nonzero entries `(row, col, value)` with `row != col`.
    pub fn off_diagonal_entries(&self) -> Vec<(usize, usize, C64)> {
        let Some(a) = &self.one_body else {
            return Vec::new();
        };
        let strides = self.strides();
        let mut out = Vec::new();
        for idx in 0..self.dim {
            for &s in &strides {
                let j = (idx / s) % self.sites;
                let base = idx - j * s;
                for &(c, val) in a.row(j) {
                    if c != j && val != C64::new(0.0, 0.0) {
                        out.push((idx, base + c * s, val));
                    }
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let strides = self.strides();
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for idx in 0..self.dim {
            if let Some(a) = &self.one_body {
                for &s in &strides {
                    let j = (idx / s) % self.sites;
                    let base = idx - j * s;
                    for &(c, val) in a.row(j) {
                        m[(idx, base + c * s)] += val;
                    }
                }
            }
            if let Some(d) = &self.diagonal {
                m[(idx, idx)] += C64::new(d[idx], 0.0);
            }
        }
        m
    }
}

/// Largest entry magnitude of `A - A^dagger`.
pub fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hop(sites: usize) -> OneBodyMatrix {
        let mut a = OneBodyMatrix::zeros(sites);
        for j in 0..sites {
            a.add(j, (j + 1) % sites, C64::new(-1.0, 0.0));
            a.add((j + 1) % sites, j, C64::new(-1.0, 0.0));
            a.add(j, j, C64::new(0.5 * j as f64, 0.0));
        }
        a
    }

    #[test]
    fn apply_matches_dense() {
        let (m, n) = (4, 3);
        let diag: Vec<f64> = (0..64).map(|i| (i % 7) as f64 * 0.3).collect();
        let op = ManyBodyOperator::new(m, n, 64, Some(hop(m)), Some(diag));
        let v: Vec<C64> = (0..64)
            .map(|i| C64::new((i as f64).sin(), (2.0 * i as f64).cos()))
            .collect();
        let fast = op.apply(&v).unwrap();
        let dense = op.to_dense() * nalgebra::DVector::from_vec(v);
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(hermiticity_defect(&op.to_dense()) < 1e-15);
    }

    #[test]
    fn dense_one_body_is_kronecker_sum() {
        let (m, n) = (3, 2);
        let a = hop(m);
        let op = ManyBodyOperator::new(m, n, 9, Some(a.clone()), None);
        let ad = a.to_dense();
        let id = DMatrix::<C64>::identity(m, m);
        let expected = ad.kronecker(&id) + id.kronecker(&ad);
        assert!(max_abs(&(op.to_dense() - expected)) < 1e-15);
    }

    #[test]
    fn diagonal_values_for_diagonal_operators() {
        let a = OneBodyMatrix::diagonal(&[1.0, 0.0, 2.0]);
        let op = ManyBodyOperator::new(3, 2, 9, Some(a), None);
        let d = op.diagonal_values().unwrap();
        assert_eq!(d, vec![2.0, 1.0, 3.0, 1.0, 0.0, 2.0, 3.0, 2.0, 4.0]);
        assert!(ManyBodyOperator::new(3, 2, 9, Some(hop(3)), None)
            .diagonal_values()
            .is_none());
    }

    #[test]
    fn dimension_checked() {
        let op = ManyBodyOperator::new(3, 1, 3, Some(hop(3)), None);
        assert!(op.apply(&[C64::new(1.0, 0.0); 4]).is_err());
    }
}
