//! Direct solver: reverse Cuthill–McKee ordering followed by banded LU without pivoting.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// LU factors of a structurally symmetric sparse matrix, stored as a band.
#[derive(Debug, Clone)]
pub struct BandedLu<T> {
    n: usize,
    bw: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// Row `i` holds columns `i - bw ..= i + bw` (L below the diagonal, U on and above).
    band: Vec<T>,
}

impl<T: Real> BandedLu<T> {
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension { expected: a.nrows(), got: a.ncols() });
        }
        let n = a.nrows();
        let perm = rcm_order(&a.pattern_rows());
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut bw = 0;
        for (r, row) in a.pattern_rows().iter().enumerate() {
            for &c in row.iter() {
                bw = bw.max(inv[r].abs_diff(inv[c]));
            }
        }
        let width = 2 * bw + 1;
        let mut band = vec![T::zero(); n * width];
        for old_r in 0..n {
            let (cols, vals) = a.row(old_r);
            let r = inv[old_r];
            for (&old_c, &v) in cols.iter().zip(vals) {
                let c = inv[old_c];
                band[r * width + (c + bw - r)] += v;
            }
        }
        for k in 0..n {
            let pivot = band[k * width + bw];
            if pivot == T::zero() || !pivot.is_finite() {
                return Err(Error::Singular { row: perm[k] });
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let ik = i * width + (k + bw - i);
                let l = band[ik] / pivot;
                band[ik] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..=last {
                    let kj = band[k * width + (j + bw - k)];
                    band[i * width + (j + bw - i)] -= l * kj;
                }
            }
        }
        Ok(BandedLu { n, bw, perm, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        if b.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: b.len() });
        }
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        let mut y: Vec<T> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in i.saturating_sub(bw)..i {
                s -= self.band[i * width + (j + bw - i)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..=(i + bw).min(n - 1) {
                s -= self.band[i * width + (j + bw - i)] * y[j];
            }
            y[i] = s / self.band[i * width + bw];
        }
        let mut x = vec![T::zero(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

/// Reverse Cuthill–McKee ordering of a symmetric pattern; returns `perm[new] = old`.
pub fn rcm_order(rows: &[&[usize]]) -> Vec<usize> {
    let n = rows.len();
    let degree: Vec<usize> = rows.iter().map(|r| r.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)).expect("unvisited node");
        let start = peripheral(rows, &degree, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = rows[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (degree[w], w));
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node search by repeated breadth-first level structures.
fn peripheral(rows: &[&[usize]], degree: &[usize], seed: usize) -> usize {
    let mut root = seed;
    let mut depth = 0;
    for _ in 0..8 {
        let (levels, last) = bfs_levels(rows, root);
        let candidate = last.into_iter().min_by_key(|&w| (degree[w], w)).unwrap_or(root);
        if levels <= depth {
            break;
        }
        depth = levels;
        root = candidate;
    }
    root
}

fn bfs_levels(rows: &[&[usize]], root: usize) -> (usize, Vec<usize>) {
    let mut level = vec![usize::MAX; rows.len()];
    level[root] = 0;
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in rows[v] {
                if level[w] == usize::MAX {
                    level[w] = depth + 1;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}
