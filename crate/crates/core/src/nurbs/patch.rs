use crate::error::{Error, Result};
use crate::nurbs::knots::KnotVector;
use crate::scalar::Real;

/// Tensor product of two univariate bases. Local index of `(i1, i2)` is `i1 + n1 * i2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis<T> {
    pub dirs: [KnotVector<T>; 2],
}

impl<T: Real> TensorBasis<T> {
    pub fn new(u: KnotVector<T>, v: KnotVector<T>) -> Self {
        TensorBasis { dirs: [u, v] }
    }

    /// Constructor taking any number of directions; only two are supported.
    pub fn from_dirs(dirs: Vec<KnotVector<T>>) -> Result<Self> {
        let d = dirs.len();
        let arr: [KnotVector<T>; 2] = dirs.try_into().map_err(|_| Error::Patch(format!("only bivariate bases are supported, got d = {d}")))?;
        Ok(TensorBasis { dirs: arr })
    }

    pub fn n1(&self) -> usize {
        self.dirs[0].n_basis()
    }

    pub fn n2(&self) -> usize {
        self.dirs[1].n_basis()
    }

    pub fn n_basis(&self) -> usize {
        self.n1() * self.n2()
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 + self.n1() * i2
    }

    pub fn multi_index(&self, a: usize) -> (usize, usize) {
        (a % self.n1(), a / self.n1())
    }

    /// Number of basis functions that can be nonzero at one point.
    pub fn n_local(&self) -> usize {
        (self.dirs[0].degree() + 1) * (self.dirs[1].degree() + 1)
    }

    /// Tensor B-spline values of all basis functions (dense, local numbering).
    pub fn eval_bspline(&self, x: [T; 2]) -> Result<Vec<T>> {
        let b1 = self.dirs[0].eval_basis(x[0])?;
        let b2 = self.dirs[1].eval_basis(x[1])?;
        let mut out = Vec::with_capacity(b1.len() * b2.len());
        for &v in &b2 {
            for &u in &b1 {
                out.push(u * v);
            }
        }
        Ok(out)
    }
}

/// Active NURBS functions at one parametric point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval<T> {
    /// Local indices of the active functions.
    pub indices: Vec<usize>,
    pub values: Vec<T>,
    /// Parametric gradients `(d/dx1, d/dx2)`.
    pub grads: Vec<[T; 2]>,
}

/// Geometry map value and Jacobian at one point; `jac[i][j] = dG_i / dx_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryEval<T> {
    pub point: [T; 2],
    pub jac: [[T; 2]; 2],
    pub det: T,
}

impl<T: Real> GeometryEval<T> {
    /// Maps a parametric gradient to a physical one: `(DG)^{-T} g`.
    pub fn push_forward(&self, g: [T; 2]) -> [T; 2] {
        let [[a, b], [c, d]] = self.jac;
        let inv = T::one() / self.det;
        // (DG)^{-1} = inv * [[d, -b], [-c, a]]; transpose applied to g
        [inv * (d * g[0] - c * g[1]), inv * (-b * g[0] + a * g[1])]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NurbsPatch<T> {
    pub id: usize,
    pub basis: TensorBasis<T>,
    pub control: Vec<[T; 2]>,
    pub weights: Vec<T>,
}

impl<T: Real> NurbsPatch<T> {
    pub fn new(id: usize, basis: TensorBasis<T>, control: Vec<[T; 2]>, weights: Vec<T>) -> Result<Self> {
        let n = basis.n_basis();
        if control.len() != n || weights.len() != n {
            return Err(Error::Patch(format!("patch {id}: {} control points and {} weights for {n} basis functions", control.len(), weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > T::zero())) {
            return Err(Error::Patch(format!("patch {id}: non-positive weight {w}")));
        }
        Ok(NurbsPatch { id, basis, control, weights })
    }

    /// Patch with unit weights whose control net is a bilinear image of the Greville grid
    /// of the given corners (ordered `[(0,0), (1,0), (0,1), (1,1)]` in parameter space).
    pub fn bilinear(id: usize, basis: TensorBasis<T>, corners: [[T; 2]; 4]) -> Result<Self> {
        let g1 = basis.dirs[0].greville();
        let g2 = basis.dirs[1].greville();
        let mut control = Vec::with_capacity(basis.n_basis());
        for &s in &g2 {
            for &r in &g1 {
                let mut p = [T::zero(); 2];
                for (k, pk) in p.iter_mut().enumerate() {
                    *pk = (T::one() - r) * (T::one() - s) * corners[0][k]
                        + r * (T::one() - s) * corners[1][k]
                        + (T::one() - r) * s * corners[2][k]
                        + r * s * corners[3][k];
                }
                control.push(p);
            }
        }
        let weights = vec![T::one(); basis.n_basis()];
        Self::new(id, basis, control, weights)
    }

    pub fn n1(&self) -> usize {
        self.basis.n1()
    }

    pub fn n2(&self) -> usize {
        self.basis.n2()
    }

    pub fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    pub fn degrees(&self) -> [usize; 2] {
        [self.basis.dirs[0].degree(), self.basis.dirs[1].degree()]
    }

    pub fn control_point(&self, i1: usize, i2: usize) -> [T; 2] {
        self.control[self.basis.index(i1, i2)]
    }

    /// Active NURBS values and parametric gradients at `x`.
    pub fn eval_basis(&self, x: [T; 2]) -> Result<BasisEval<T>> {
        for &c in &x {
            if c.is_nan() || c < T::zero() || c > T::one() {
                return Err(Error::Domain { x: c.as_f64() });
            }
        }
        let s1 = self.basis.dirs[0].find_span(x[0]);
        let s2 = self.basis.dirs[1].find_span(x[1]);
        Ok(self.eval_basis_in_span([s1, s2], x))
    }

    /// Same as [`eval_basis`](Self::eval_basis) with known knot spans (no domain check).
    pub fn eval_basis_in_span(&self, span: [usize; 2], x: [T; 2]) -> BasisEval<T> {
        let [q1, q2] = self.degrees();
        let (b1, d1) = self.basis.dirs[0].local_basis(span[0], x[0]);
        let (b2, d2) = self.basis.dirs[1].local_basis(span[1], x[1]);
        let n = (q1 + 1) * (q2 + 1);
        let mut indices = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        let mut wsum = T::zero();
        let mut dw = [T::zero(); 2];
        for r2 in 0..=q2 {
            for r1 in 0..=q1 {
                let a = self.basis.index(span[0] - q1 + r1, span[1] - q2 + r2);
                let w = self.weights[a];
                let v = w * b1[r1] * b2[r2];
                let g = [w * d1[r1] * b2[r2], w * b1[r1] * d2[r2]];
                wsum += v;
                dw[0] += g[0];
                dw[1] += g[1];
                indices.push(a);
                values.push(v);
                grads.push(g);
            }
        }
        let inv = T::one() / wsum;
        for (v, g) in values.iter_mut().zip(grads.iter_mut()) {
            let r = *v * inv;
            g[0] = (g[0] - r * dw[0]) * inv;
            g[1] = (g[1] - r * dw[1]) * inv;
            *v = r;
        }
        BasisEval { indices, values, grads }
    }

    /// Geometry from an already evaluated basis; no sign check on the determinant.
    pub fn geometry_from_basis(&self, b: &BasisEval<T>) -> GeometryEval<T> {
        let mut point = [T::zero(); 2];
        let mut jac = [[T::zero(); 2]; 2];
        for ((&a, &v), g) in b.indices.iter().zip(&b.values).zip(&b.grads) {
            let c = self.control[a];
            for i in 0..2 {
                point[i] += v * c[i];
                jac[i][0] += g[0] * c[i];
                jac[i][1] += g[1] * c[i];
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        GeometryEval { point, jac, det }
    }

    /// Physical point, Jacobian and determinant; a non-positive determinant is an error.
    pub fn eval_geometry(&self, x: [T; 2]) -> Result<GeometryEval<T>> {
        let b = self.eval_basis(x)?;
        let g = self.geometry_from_basis(&b);
        if !(g.det > T::zero()) {
            return Err(Error::DegenerateGeometry { patch: self.id, u: x[0].as_f64(), v: x[1].as_f64(), det: g.det.as_f64() });
        }
        Ok(g)
    }

    /// Physical image of `x` without a determinant check (valid on collapsed edges).
    pub fn map_point(&self, x: [T; 2]) -> Result<[T; 2]> {
        let b = self.eval_basis(x)?;
        Ok(self.geometry_from_basis(&b).point)
    }

    /// Splits every element into `splits[d]` equal parts in direction `d` by knot insertion.
    /// The geometry map is unchanged.
    pub fn refine_uniform(&self, splits: [usize; 2]) -> Result<Self> {
        if splits.contains(&0) {
            return Err(Error::Patch("refinement factor must be positive".into()));
        }
        let mut out = self.clone();
        for (dir, &m) in splits.iter().enumerate() {
            let z = out.basis.dirs[dir].breakpoints();
            let mut new_knots = Vec::new();
            for w in z.windows(2) {
                for k in 1..m {
                    let t = T::from_usize_lossy(k) / T::from_usize_lossy(m);
                    new_knots.push(w[0] + (w[1] - w[0]) * t);
                }
            }
            for x in new_knots {
                out = out.insert_knot(dir, x)?;
            }
        }
        Ok(out)
    }

    /// Inserts one knot in direction `dir` (Boehm's algorithm on homogeneous points).
    pub fn insert_knot(&self, dir: usize, x: T) -> Result<Self> {
        if dir > 1 {
            return Err(Error::Patch(format!("direction {dir} out of range")));
        }
        let kv = &self.basis.dirs[dir];
        let (n1, n2) = (self.n1(), self.n2());
        let (lines, len) = if dir == 0 { (n2, n1) } else { (n1, n2) };
        let mut rows: Vec<Vec<[T; 3]>> = Vec::with_capacity(lines);
        let mut new_kv = None;
        for l in 0..lines {
            let pts: Vec<[T; 3]> = (0..len)
                .map(|k| {
                    let a = if dir == 0 { self.basis.index(k, l) } else { self.basis.index(l, k) };
                    let w = self.weights[a];
                    let c = self.control[a];
                    [c[0] * w, c[1] * w, w]
                })
                .collect();
            let (kv2, p2) = insert_knot_curve(kv, &pts, x)?;
            new_kv = Some(kv2);
            rows.push(p2);
        }
        let new_kv = new_kv.expect("patch has at least one line");
        let mut dirs = self.basis.dirs.clone();
        dirs[dir] = new_kv;
        let basis = TensorBasis { dirs };
        let n = basis.n_basis();
        let mut control = vec![[T::zero(); 2]; n];
        let mut weights = vec![T::zero(); n];
        for (l, row) in rows.iter().enumerate() {
            for (k, h) in row.iter().enumerate() {
                let a = if dir == 0 { basis.index(k, l) } else { basis.index(l, k) };
                control[a] = [h[0] / h[2], h[1] / h[2]];
                weights[a] = h[2];
            }
        }
        Self::new(self.id, basis, control, weights)
    }
}

/// Single knot insertion for a curve given by homogeneous points `(w x, w y, w)`.
pub fn insert_knot_curve<T: Real>(kv: &KnotVector<T>, pts: &[[T; 3]], x: T) -> Result<(KnotVector<T>, Vec<[T; 3]>)> {
    if !(x > T::zero() && x < T::one()) {
        return Err(Error::Domain { x: x.as_f64() });
    }
    let q = kv.degree();
    let u = kv.knots();
    let k = kv.find_span(x);
    let mut out = Vec::with_capacity(pts.len() + 1);
    for i in 0..=pts.len() {
        if i + q <= k {
            out.push(pts[i]);
        } else if i > k {
            out.push(pts[i - 1]);
        } else {
            let alpha = (x - u[i]) / (u[i + q] - u[i]);
            let mut p = [T::zero(); 3];
            for c in 0..3 {
                p[c] = alpha * pts[i][c] + (T::one() - alpha) * pts[i - 1][c];
            }
            out.push(p);
        }
    }
    let mut knots = u.to_vec();
    knots.insert(k + 1, x);
    Ok((KnotVector::new(knots, q)?, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square(q: usize, ne: usize) -> NurbsPatch<f64> {
        let kv = KnotVector::uniform(q, ne).unwrap();
        let basis = TensorBasis::new(kv.clone(), kv);
        NurbsPatch::bilinear(0, basis, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap()
    }

    /// Quarter circle in direction 1, extruded radially (radius 1 to 2) in direction 2.
    fn quarter_annulus() -> NurbsPatch<f64> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let kv2 = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap();
        let basis = TensorBasis::new(kv2.clone(), kv2);
        let arc = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let w = [1.0, h, 1.0];
        let mut control = Vec::new();
        let mut weights = Vec::new();
        for r in [1.0, 1.5, 2.0] {
            for i in 0..3 {
                control.push([arc[i][0] * r, arc[i][1] * r]);
                weights.push(w[i]);
            }
        }
        NurbsPatch::new(0, basis, control, weights).unwrap()
    }

    #[test]
    fn quarter_circle_midpoint() {
        let p = quarter_annulus();
        let g = p.map_point([0.5, 0.0]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((g[0] - h).abs() < 1e-12 && (g[1] - h).abs() < 1e-12);
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let g = p.map_point([t, 0.0]).unwrap();
            assert!((g[0].hypot(g[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_affine_maps() {
        let p = unit_square(1, 1);
        let g = p.eval_geometry([0.3, 0.7]).unwrap();
        assert!((g.point[0] - 0.3).abs() < 1e-15 && (g.point[1] - 0.7).abs() < 1e-15);
        assert!((g.det - 1.0).abs() < 1e-15);
        assert_eq!(g.jac, [[1.0, 0.0], [0.0, 1.0]]);
        let kv = KnotVector::uniform(2, 3).unwrap();
        let basis = TensorBasis::new(kv.clone(), kv);
        let s: NurbsPatch<f64> = NurbsPatch::bilinear(0, basis, [[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [2.0, 1.0]]).unwrap();
        for x in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.33]] {
            assert!((s.eval_geometry(x).unwrap().det - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn degenerate_geometry_reported() {
        let kv = KnotVector::uniform(1, 1).unwrap();
        let basis = TensorBasis::new(kv.clone(), kv);
        // mirrored square has negative orientation
        let p = NurbsPatch::bilinear(4, basis, [[1.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        match p.eval_geometry([0.5, 0.5]) {
            Err(Error::DegenerateGeometry { patch, .. }) => assert_eq!(patch, 4),
            other => panic!("expected degenerate geometry, got {other:?}"),
        }
    }

    #[test]
    fn rejects_three_directions() {
        let kv = KnotVector::<f64>::uniform(1, 1).unwrap();
        assert!(TensorBasis::from_dirs(vec![kv.clone(), kv.clone(), kv]).is_err());
    }

    #[test]
    fn knot_insertion_preserves_map() {
        let p = quarter_annulus();
        let r = p.refine_uniform([3, 2]).unwrap();
        assert_eq!(r.n1(), 5);
        assert_eq!(r.n2(), 4);
        for &x in &[[0.0, 0.0], [0.21, 0.77], [0.5, 0.5], [1.0, 1.0], [0.999, 0.01]] {
            let a = p.map_point(x).unwrap();
            let b = r.map_point(x).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-13 && (a[1] - b[1]).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0f64..=1.0, y in 0.0f64..=1.0, q in 1usize..=2) {
            let p = if q == 2 { quarter_annulus().refine_uniform([2, 3]).unwrap() } else { unit_square(1, 3) };
            let b = p.eval_basis([x, y]).unwrap();
            let s: f64 = b.values.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(b.indices.len() <= (q + 1) * (q + 1));
            let gs: [f64; 2] = b.grads.iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
            prop_assert!(gs[0].abs() < 1e-10 && gs[1].abs() < 1e-10);
        }

        #[test]
        fn gradients_match_central_differences(x in 0.05f64..0.95, y in 0.05f64..0.95) {
            let p = quarter_annulus().refine_uniform([2, 2]).unwrap();
            prop_assume!((x - 0.5).abs() > 1e-3 && (y - 0.5).abs() > 1e-3);
            let h = 1e-6;
            let b = p.eval_basis([x, y]).unwrap();
            let dense = |pt: [f64; 2]| {
                let e = p.eval_basis(pt).unwrap();
                let mut v = vec![0.0; p.n_basis()];
                for (a, val) in e.indices.iter().zip(e.values) { v[*a] = val; }
                v
            };
            let (xp, xm) = (dense([x + h, y]), dense([x - h, y]));
            let (yp, ym) = (dense([x, y + h]), dense([x, y - h]));
            for (k, &a) in b.indices.iter().enumerate() {
                let fx = (xp[a] - xm[a]) / (2.0 * h);
                let fy = (yp[a] - ym[a]) / (2.0 * h);
                prop_assert!((fx - b.grads[k][0]).abs() <= 1e-5 * b.grads[k][0].abs().max(1.0));
                prop_assert!((fy - b.grads[k][1]).abs() <= 1e-5 * b.grads[k][1].abs().max(1.0));
            }
        }

        #[test]
        fn equal_weights_reduce_to_bsplines(x in 0.0f64..=1.0, y in 0.0f64..=1.0, w in 0.1f64..10.0) {
            let mut p = unit_square(2, 3);
            p.weights.iter_mut().for_each(|v| *v = w);
            let b = p.eval_basis([x, y]).unwrap();
            let dense = p.basis.eval_bspline([x, y]).unwrap();
            for (a, v) in b.indices.iter().zip(&b.values) {
                prop_assert!((dense[*a] - v).abs() < 1e-14);
            }
        }
    }
}
