use crate::error::{Error, Result};
use crate::scalar::Real;

/// Open knot vector on `[0, 1]` together with its polynomial degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector<T> {
    knots: Vec<T>,
    degree: usize,
}

impl<T: Real> KnotVector<T> {
    pub fn new(knots: Vec<T>, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::KnotVector("degree must be at least 1".into()));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::KnotVector(format!("{} knots cannot carry {} basis functions of degree {degree}", knots.len(), degree + 1)));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::KnotVector("knots must be non-decreasing".into()));
        }
        let n = knots.len();
        let open_start = knots[..=degree].iter().all(|&k| k == T::zero());
        let open_end = knots[n - degree - 1..].iter().all(|&k| k == T::one());
        if !open_start || !open_end {
            return Err(Error::KnotVector(format!("knot vector must be open on [0, 1] with multiplicity {} at both ends", degree + 1)));
        }
        Ok(KnotVector { knots, degree })
    }

    /// Open knot vector with `n_elements` equal spans.
    pub fn uniform(degree: usize, n_elements: usize) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::KnotVector("need at least one element".into()));
        }
        let mut knots = vec![T::zero(); degree + 1];
        let ne = T::from_usize_lossy(n_elements);
        for e in 1..n_elements {
            knots.push(T::from_usize_lossy(e) / ne);
        }
        knots.extend(std::iter::repeat_n(T::one(), degree + 1));
        Self::new(knots, degree)
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct knot values (the breakpoints partitioning `[0, 1]` into elements).
    pub fn breakpoints(&self) -> Vec<T> {
        let mut z: Vec<T> = Vec::new();
        for &k in &self.knots {
            if z.last().is_none_or(|&l| k > l) {
                z.push(k);
            }
        }
        z
    }

    pub fn n_elements(&self) -> usize {
        self.breakpoints().len() - 1
    }

    /// Non-empty knot spans as `(span index, left, right)`.
    pub fn element_spans(&self) -> Vec<(usize, T, T)> {
        (self.degree..self.n_basis()).filter(|&s| self.knots[s + 1] > self.knots[s]).map(|s| (s, self.knots[s], self.knots[s + 1])).collect()
    }

    /// Greville abscissae, one per basis function.
    pub fn greville(&self) -> Vec<T> {
        let q = T::from_usize_lossy(self.degree);
        (0..self.n_basis()).map(|i| self.knots[i + 1..=i + self.degree].iter().copied().sum::<T>() / q).collect()
    }

    fn check(&self, x: T) -> Result<()> {
        if x.is_nan() || x < T::zero() || x > T::one() {
            return Err(Error::Domain { x: x.as_f64() });
        }
        Ok(())
    }

    /// Span index `s` with `knots[s] <= x < knots[s+1]`; the last non-empty span is closed at 1.
    pub fn find_span(&self, x: T) -> usize {
        let n = self.n_basis();
        if x >= self.knots[n] {
            let mut s = n - 1;
            while self.knots[s] == self.knots[s + 1] {
                s -= 1;
            }
            return s;
        }
        let (mut lo, mut hi) = (self.degree, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `q+1` basis values and first derivatives that are nonzero on `span`.
    /// Basis function `span - q + r` corresponds to entry `r`.
    pub fn local_basis(&self, span: usize, x: T) -> (Vec<T>, Vec<T>) {
        let q = self.degree;
        let u = &self.knots;
        // ndu table from the standard triangular scheme
        let mut ndu = vec![vec![T::zero(); q + 1]; q + 1];
        let mut left = vec![T::zero(); q + 1];
        let mut right = vec![T::zero(); q + 1];
        ndu[0][0] = T::one();
        for j in 1..=q {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let values: Vec<T> = (0..=q).map(|r| ndu[r][q]).collect();
        // first derivatives: q * (N_{i,q-1}/(u_{i+q}-u_i) - N_{i+1,q-1}/(u_{i+q+1}-u_{i+1}))
        let qf = T::from_usize_lossy(q);
        let mut ders = vec![T::zero(); q + 1];
        for (r, d) in ders.iter_mut().enumerate() {
            let mut acc = T::zero();
            if r >= 1 && ndu[q][r - 1] > T::zero() {
                acc += ndu[r - 1][q - 1] / ndu[q][r - 1];
            }
            if r < q && ndu[q][r] > T::zero() {
                acc -= ndu[r][q - 1] / ndu[q][r];
            }
            *d = qf * acc;
        }
        (values, ders)
    }

    /// All `n_basis` B-spline values at `x` via the Cox–de Boor recursion.
    pub fn eval_basis(&self, x: T) -> Result<Vec<T>> {
        self.check(x)?;
        Ok(self.cox_de_boor(x, self.degree))
    }

    /// All `n_basis` first derivatives at `x`.
    pub fn eval_basis_deriv(&self, x: T) -> Result<Vec<T>> {
        self.check(x)?;
        let q = self.degree;
        let lower = self.cox_de_boor(x, q - 1);
        let u = &self.knots;
        let qf = T::from_usize_lossy(q);
        Ok((0..self.n_basis())
            .map(|i| {
                let mut d = T::zero();
                let a = u[i + q] - u[i];
                if a > T::zero() {
                    d += qf / a * lower[i];
                }
                let b = u[i + q + 1] - u[i + 1];
                if b > T::zero() {
                    d -= qf / b * lower[i + 1];
                }
                d
            })
            .collect())
    }

    /// Degree-`p` functions defined on this knot sequence; length `len(knots) - p - 1`.
    fn cox_de_boor(&self, x: T, p: usize) -> Vec<T> {
        let u = &self.knots;
        let m = u.len();
        let span = self.find_span(x);
        let mut n: Vec<T> = (0..m - 1).map(|i| if i == span { T::one() } else { T::zero() }).collect();
        for deg in 1..=p {
            for i in 0..m - 1 - deg {
                let mut v = T::zero();
                let a = u[i + deg] - u[i];
                if a > T::zero() {
                    v += (x - u[i]) / a * n[i];
                }
                let b = u[i + deg + 1] - u[i + 1];
                if b > T::zero() {
                    v += (u[i + deg + 1] - x) / b * n[i + 1];
                }
                n[i] = v;
            }
        }
        n.truncate(m - 1 - p);
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kv(knots: &[f64], q: usize) -> KnotVector<f64> {
        KnotVector::new(knots.to_vec(), q).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn bernstein_quadratic() {
        let k = kv(&[0., 0., 0., 1., 1., 1.], 2);
        assert!(close(&k.eval_basis(0.5).unwrap(), &[0.25, 0.5, 0.25], 1e-15));
        assert!(close(&k.eval_basis(0.0).unwrap(), &[1.0, 0.0, 0.0], 1e-15));
        assert!(close(&k.eval_basis(1.0).unwrap(), &[0.0, 0.0, 1.0], 1e-15));
    }

    #[test]
    fn linear_hats() {
        let k = kv(&[0., 0., 0.5, 1., 1.], 1);
        assert!(close(&k.eval_basis(0.25).unwrap(), &[0.5, 0.5, 0.0], 1e-15));
        // right-end convention
        assert!(close(&k.eval_basis(1.0).unwrap(), &[0.0, 0.0, 1.0], 1e-15));
    }

    #[test]
    fn derivative_examples() {
        let k = kv(&[0., 0., 1., 1.], 1);
        for x in [0.0, 0.3, 1.0] {
            assert!(close(&k.eval_basis_deriv(x).unwrap(), &[-1.0, 1.0], 1e-15));
        }
        let k = kv(&[0., 0., 0., 1., 1., 1.], 2);
        assert!(close(&k.eval_basis_deriv(0.5).unwrap(), &[-1.0, 0.0, 1.0], 1e-15));
        let s: f64 = k.eval_basis_deriv(0.3).unwrap().iter().sum();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn rejects_points_outside() {
        let k = kv(&[0., 0., 1., 1.], 1);
        assert!(matches!(k.eval_basis(1.5), Err(Error::Domain { .. })));
        assert!(matches!(k.eval_basis_deriv(-0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(KnotVector::new(vec![0.0, 0.5, 1.0, 1.0], 1).is_err());
        assert!(KnotVector::new(vec![0.0, 0.0, 0.7, 0.5, 1.0, 1.0], 1).is_err());
        assert!(KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 0).is_err());
    }

    #[test]
    fn greville_and_breakpoints() {
        let k = KnotVector::<f64>::uniform(2, 2).unwrap();
        assert_eq!(k.knots(), &[0., 0., 0., 0.5, 1., 1., 1.]);
        assert!(close(&k.greville(), &[0.0, 0.25, 0.75, 1.0], 1e-15));
        assert_eq!(k.breakpoints(), vec![0.0, 0.5, 1.0]);
        assert_eq!(k.n_elements(), 2);
    }

    proptest! {
        #[test]
        fn local_matches_full(q in 1usize..4, ne in 1usize..6, x in 0.0f64..=1.0) {
            let k = KnotVector::<f64>::uniform(q, ne).unwrap();
            let full = k.eval_basis(x).unwrap();
            let dfull = k.eval_basis_deriv(x).unwrap();
            let span = k.find_span(x);
            let (v, d) = k.local_basis(span, x);
            for r in 0..=q {
                prop_assert!((full[span - q + r] - v[r]).abs() < 1e-13);
                prop_assert!((dfull[span - q + r] - d[r]).abs() < 1e-10);
            }
            let nonzero = full.iter().filter(|v| v.abs() > 0.0).count();
            prop_assert!(nonzero <= q + 1);
            let s: f64 = full.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn derivative_matches_central_difference(q in 1usize..4, ne in 1usize..5, x in 0.01f64..0.99) {
            let k = KnotVector::<f64>::uniform(q, ne).unwrap();
            // stay away from breakpoints where derivatives of low degree jump
            let z = k.breakpoints();
            prop_assume!(z.iter().all(|&b| (b - x).abs() > 1e-4));
            let h = 1e-6;
            let up = k.eval_basis(x + h).unwrap();
            let dn = k.eval_basis(x - h).unwrap();
            let d = k.eval_basis_deriv(x).unwrap();
            for i in 0..d.len() {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                prop_assert!((fd - d[i]).abs() <= 1e-5 * d[i].abs().max(1.0));
            }
        }
    }
}
