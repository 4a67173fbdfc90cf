//! Compressed-row sparse matrices with sorted column indices.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

const PAR_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Zero matrix with the given per-row column sets (duplicates removed).
    pub fn from_pattern(ncols: usize, rows: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for r in rows {
            let mut c = r.clone();
            c.sort_unstable();
            c.dedup();
            assert!(c.last().is_none_or(|&l| l < ncols), "column index out of range");
            cols.extend(c);
            row_ptr.push(cols.len());
        }
        let vals = vec![T::zero(); cols.len()];
        CsrMatrix { nrows: rows.len(), ncols, row_ptr, cols, vals }
    }

    /// Builds a matrix from `(row, col, value)` entries; duplicates are summed in input order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut rows = vec![Vec::new(); nrows];
        for &(r, c, _) in triplets {
            rows[r].push(c);
        }
        let mut m = Self::from_pattern(ncols, &rows);
        for &(r, c, v) in triplets {
            m.add(r, c, v);
        }
        m
    }

    pub fn zeros_like(&self) -> Self {
        let mut m = self.clone();
        m.vals.iter_mut().for_each(|v| *v = T::zero());
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].binary_search(&c).ok().map(|k| a + k)
    }

    /// Adds `v` to entry `(r, c)`, which must be part of the pattern.
    pub fn add(&mut self, r: usize, c: usize, v: T) {
        let k = self.position(r, c).unwrap_or_else(|| panic!("entry ({r}, {c}) not in sparsity pattern"));
        self.vals[k] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.position(r, c).map_or(T::zero(), |k| self.vals[k])
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows && self.ncols == other.ncols && self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    /// `sum_k s_k A_k` over matrices sharing one sparsity pattern.
    pub fn linear_combination(terms: &[(T, &Self)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::Precondition("empty linear combination".into()))?.1;
        let mut out = first.zeros_like();
        for &(s, m) in terms {
            if !m.same_pattern(first) {
                return Err(Error::Precondition("matrices have different sparsity patterns".into()));
            }
            for (o, &v) in out.vals.iter_mut().zip(&m.vals) {
                *o += s * v;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: T) {
        self.vals.iter_mut().for_each(|v| *v *= s);
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        let row = |r: usize| {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut s = T::zero();
            for k in a..b {
                s += self.vals[k] * x[self.cols[k]];
            }
            s
        };
        if self.nrows >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(r, yr)| *yr = row(r));
        } else {
            y.iter_mut().enumerate().for_each(|(r, yr)| *yr = row(r));
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Quadratic form `x^T A x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        let y = self.mul_vec(x);
        crate::scalar::dot(x, &y)
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.nrows).map(|r| self.row(r).1.iter().copied().sum()).collect()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        (0..self.nrows).all(|r| {
            let (c, v) = self.row(r);
            c.iter().zip(v).all(|(&c, &v)| (v - self.get(c, r)).abs() <= tol)
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (r, dr) in d.iter_mut().enumerate() {
            let (c, v) = self.row(r);
            for (&c, &v) in c.iter().zip(v) {
                dr[c] = v;
            }
        }
        d
    }

    /// Entries with a nonzero value as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (c, v) = self.row(r);
            c.iter().zip(v).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Coordinate text export, one `row col value` line per stored entry.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.entries() {
            writeln!(w, "{r} {c} {:.16e}", v.as_f64())?;
        }
        Ok(())
    }

    pub(crate) fn pattern_rows(&self) -> Vec<&[usize]> {
        (0..self.nrows).map(|r| self.row(r).0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (1, 0, 2.0), (0, 2, 0.5), (0, 0, -1.0)]);
        assert_eq!(m.to_dense(), vec![vec![-1.0, 0.0, 1.5], vec![2.0, 0.0, 0.0]]);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 2.0]), vec![2.0, 2.0]);
        assert_eq!(m.row(0).0, &[0, 2]);
    }

    #[test]
    fn linear_combination_requires_shared_pattern() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]);
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]);
        assert!(CsrMatrix::linear_combination(&[(1.0, &a), (1.0, &b)]).is_err());
        let c = CsrMatrix::linear_combination(&[(2.0, &a), (-1.0, &a)]).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn coordinate_export_round_trips() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 0.1), (1, 0, 1.0 / 3.0)]);
        let mut buf = Vec::new();
        m.write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "2 2 2");
        let v: f64 = lines[2].split_whitespace().nth(2).unwrap().parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }
}
