//! Galerkin assembly of the global matrices, the source load and the nonlinear tensor.

use rayon::prelude::*;

use crate::domain::{edge_point, EdgeTag, MultiPatchDomain, Region, Side};
use crate::error::{Error, Result};
use crate::nurbs::GaussRule;
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

const PAR_ELEMENTS: usize = 256;

/// Acoustic properties of one medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material<T> {
    /// Sound speed (m/s).
    pub c: T,
    /// Sound diffusivity (m²/s).
    pub b: T,
    /// Density (kg/m³).
    pub rho: T,
    pub b_over_a: T,
}

impl<T: Real> Material<T> {
    pub fn water() -> Self {
        Material { c: T::lit(1500.0), b: T::lit(6e-9), rho: T::lit(1000.0), b_over_a: T::lit(5.0) }
    }

    pub fn lens() -> Self {
        Material { c: T::lit(1100.0), b: T::lit(4e-9), rho: T::lit(1250.0), b_over_a: T::lit(4.0) }
    }

    /// Nonlinearity coefficient `(1 + B/A / 2) / (rho c^2)`.
    pub fn k(&self) -> T {
        (T::one() + self.b_over_a / T::lit(2.0)) / (self.rho * self.c * self.c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > T::zero() && self.b > T::zero() && self.rho > T::zero()) || !self.k().is_finite() {
            return Err(Error::Config(format!("material needs positive c, b, rho and finite k (c = {}, b = {}, rho = {})", self.c, self.b, self.rho)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Materials<T> {
    pub lens: Material<T>,
    pub fluid: Material<T>,
}

impl<T: Real> Materials<T> {
    pub fn table() -> Self {
        Materials { lens: Material::lens(), fluid: Material::water() }
    }

    pub fn get(&self, r: Region) -> &Material<T> {
        match r {
            Region::Lens => &self.lens,
            Region::Fluid => &self.fluid,
        }
    }

    /// Both regions made of the fluid (all interface jumps vanish).
    pub fn homogeneous(&self) -> Self {
        Materials { lens: self.fluid, fluid: self.fluid }
    }
}

/// Boundary source signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Excitation<T> {
    Zero,
    /// `g0 exp(-(omega t / 8)^2) sin(omega t)`
    Modulated {
        g0: T,
        omega: T,
    },
    /// `g0 sin(omega t)`
    Sine {
        g0: T,
        omega: T,
    },
}

impl<T: Real> Excitation<T> {
    pub fn modulated(g0: T, freq: T) -> Self {
        Excitation::Modulated { g0, omega: T::lit(2.0 * std::f64::consts::PI) * freq }
    }

    /// Signal value and its time derivative.
    pub fn eval(&self, t: T) -> (T, T) {
        match *self {
            Excitation::Zero => (T::zero(), T::zero()),
            Excitation::Modulated { g0, omega } => {
                let a = omega * t / T::lit(8.0);
                let env = (-a * a).exp();
                let denv = -T::lit(2.0) * a * omega / T::lit(8.0) * env;
                let (s, c) = (omega * t).sin_cos();
                (g0 * env * s, g0 * (denv * s + env * omega * c))
            }
            Excitation::Sine { g0, omega } => {
                let (s, c) = (omega * t).sin_cos();
                (g0 * s, g0 * omega * c)
            }
        }
    }
}

/// Axis-aligned box `[x0, x1] × [y0, y1]` in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingBox<T> {
    pub x: [T; 2],
    pub y: [T; 2],
}

impl<T: Real> TrackingBox<T> {
    pub fn contains(&self, p: [T; 2]) -> bool {
        p[0] >= self.x[0] && p[0] <= self.x[1] && p[1] >= self.y[0] && p[1] <= self.y[1]
    }

    pub fn is_empty(&self) -> bool {
        !(self.x[0] <= self.x[1] && self.y[0] <= self.y[1])
    }

    /// Physical bounding box of a patch's control net.
    pub fn of_patch(domain: &MultiPatchDomain<T>, patch: usize) -> Self {
        let c = &domain.patches[patch].control;
        let fold = |k: usize| c.iter().fold([T::infinity(), T::neg_infinity()], |a, p| [a[0].min(p[k]), a[1].max(p[k])]);
        TrackingBox { x: fold(0), y: fold(1) }
    }
}

/// Basis data at one volume quadrature point.
#[derive(Debug, Clone)]
pub struct QuadPoint<T> {
    pub values: Vec<T>,
    /// Physical gradients.
    pub grads: Vec<[T; 2]>,
    /// Quadrature weight times `|det DG|`.
    pub weight: T,
    pub point: [T; 2],
}

#[derive(Debug, Clone)]
pub struct Element<T> {
    pub patch: usize,
    pub region: Region,
    /// Global dofs of the active functions, in the order of `QuadPoint::values`.
    pub dofs: Vec<usize>,
    pub qps: Vec<QuadPoint<T>>,
}

impl<T: Real> Element<T> {
    /// Value of the field with global coefficients `u` at quadrature point `q`.
    pub fn value(&self, q: usize, u: &[T]) -> T {
        self.qps[q].values.iter().zip(&self.dofs).fold(T::zero(), |s, (&n, &g)| s + n * u[g])
    }

    pub fn gradient(&self, q: usize, u: &[T]) -> [T; 2] {
        self.qps[q].grads.iter().zip(&self.dofs).fold([T::zero(); 2], |s, (g, &d)| [s[0] + g[0] * u[d], s[1] + g[1] * u[d]])
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryQp<T> {
    pub values: Vec<T>,
    /// Quadrature weight times the surface measure.
    pub weight: T,
    pub point: [T; 2],
}

#[derive(Debug, Clone)]
pub struct BoundaryElement<T> {
    pub patch: usize,
    pub side: Side,
    pub dofs: Vec<usize>,
    pub qps: Vec<BoundaryQp<T>>,
}

/// Global matrices and cached quadrature data of one geometry.
#[derive(Debug, Clone)]
pub struct AssembledSystem<T> {
    pub m: CsrMatrix<T>,
    pub c: CsrMatrix<T>,
    pub k: CsrMatrix<T>,
    pub a1: CsrMatrix<T>,
    pub a2: CsrMatrix<T>,
    pub md: CsrMatrix<T>,
    /// `∫_{Γ_n} N_a`, scaled by `c_f^2 g + b_f ġ` to give the load.
    pub source: Vec<T>,
    pub materials: Materials<T>,
    pub excitation: Excitation<T>,
    pub tracking: TrackingBox<T>,
    pub elements: Vec<Element<T>>,
    pub absorbing: Vec<BoundaryElement<T>>,
    pub sources: Vec<BoundaryElement<T>>,
    /// Coefficient of the source term (fluid sound speed squared and diffusivity).
    source_coeffs: (T, T),
}

/// Evaluates the cached volume data for every element of the domain.
pub fn element_data<T: Real>(domain: &MultiPatchDomain<T>) -> Result<Vec<Element<T>>> {
    let mut jobs = Vec::new();
    for (p, patch) in domain.patches.iter().enumerate() {
        let s1 = patch.basis.dirs[0].element_spans();
        let s2 = patch.basis.dirs[1].element_spans();
        for e2 in &s2 {
            for e1 in &s1 {
                jobs.push((p, *e1, *e2));
            }
        }
    }
    let build = |&(p, e1, e2): &(usize, (usize, T, T), (usize, T, T))| -> Result<Element<T>> {
        let patch = &domain.patches[p];
        let [q1, q2] = patch.degrees();
        let r1 = GaussRule::<T>::new(q1 + 1);
        let r2 = GaussRule::<T>::new(q2 + 1);
        let mut qps = Vec::with_capacity(r1.len() * r2.len());
        let mut dofs = Vec::new();
        for (y, wy) in r2.on(e2.1, e2.2) {
            for (x, wx) in r1.on(e1.1, e1.2) {
                let b = patch.eval_basis_in_span([e1.0, e2.0], [x, y]);
                let g = patch.geometry_from_basis(&b);
                if !(g.det > T::zero()) {
                    return Err(Error::DegenerateGeometry { patch: patch.id, u: x.as_f64(), v: y.as_f64(), det: g.det.as_f64() });
                }
                if dofs.is_empty() {
                    dofs = b.indices.iter().map(|&a| domain.dofs.local_to_global[p][a]).collect();
                }
                let grads = b.grads.iter().map(|&gr| g.push_forward(gr)).collect();
                qps.push(QuadPoint { values: b.values, grads, weight: wx * wy * g.det, point: g.point });
            }
        }
        Ok(Element { patch: p, region: domain.regions[p], dofs, qps })
    };
    if jobs.len() >= PAR_ELEMENTS {
        jobs.par_iter().map(build).collect()
    } else {
        jobs.iter().map(build).collect()
    }
}

/// Cached boundary data for every edge carrying `tag`.
pub fn boundary_data<T: Real>(domain: &MultiPatchDomain<T>, tag: EdgeTag) -> Result<Vec<BoundaryElement<T>>> {
    let mut out = Vec::new();
    for (p, patch) in domain.patches.iter().enumerate() {
        for side in Side::ALL {
            if domain.tag(p, side) != tag {
                continue;
            }
            let dir = side.along();
            let rule = GaussRule::<T>::new(patch.degrees()[dir] + 1);
            for (_, a, b) in patch.basis.dirs[dir].element_spans() {
                let mut qps = Vec::new();
                let mut dofs = Vec::new();
                for (s, w) in rule.on(a, b) {
                    let x = edge_point(side, s);
                    let bas = patch.eval_basis(x)?;
                    let g = patch.geometry_from_basis(&bas);
                    // |(DG)^{-T} n̂| |det DG| equals the length of the edge tangent
                    let measure = g.jac[0][dir].hypot(g.jac[1][dir]);
                    if dofs.is_empty() {
                        dofs = bas.indices.iter().map(|&i| domain.dofs.local_to_global[p][i]).collect();
                    }
                    qps.push(BoundaryQp { values: bas.values, weight: w * measure, point: g.point });
                }
                out.push(BoundaryElement { patch: p, side, dofs, qps });
            }
        }
    }
    Ok(out)
}

trait HasDofs {
    fn dofs(&self) -> &[usize];
}

impl<T> HasDofs for Element<T> {
    fn dofs(&self) -> &[usize] {
        &self.dofs
    }
}

impl<T> HasDofs for BoundaryElement<T> {
    fn dofs(&self) -> &[usize] {
        &self.dofs
    }
}

fn pattern<T: Real>(n: usize, elements: &[Element<T>]) -> CsrMatrix<T> {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in elements {
        for &a in &e.dofs {
            rows[a].extend_from_slice(&e.dofs);
        }
    }
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
    }
    CsrMatrix::from_pattern(n, &rows)
}

/// Scatters per-element dense blocks into a copy of `zero`, in element order.
fn scatter<T: Real, E: HasDofs + Sync>(zero: &CsrMatrix<T>, elements: &[E], local: impl Fn(&E) -> Vec<T> + Sync) -> CsrMatrix<T> {
    let blocks: Vec<Vec<T>> = if elements.len() >= PAR_ELEMENTS { elements.par_iter().map(&local).collect() } else { elements.iter().map(&local).collect() };
    let mut m = zero.clone();
    for (e, blk) in elements.iter().zip(&blocks) {
        let d = e.dofs();
        let n = d.len();
        for (i, &gi) in d.iter().enumerate() {
            for (j, &gj) in d.iter().enumerate() {
                let v = blk[i * n + j];
                if v != T::zero() {
                    m.add(gi, gj, v);
                }
            }
        }
    }
    m
}

fn mass_block<T: Real>(qps: impl Iterator<Item = (T, Vec<T>)>, n: usize) -> Vec<T> {
    let mut blk = vec![T::zero(); n * n];
    for (w, vals) in qps {
        for i in 0..n {
            let wi = w * vals[i];
            for j in 0..n {
                blk[i * n + j] += wi * vals[j];
            }
        }
    }
    blk
}

impl<T: Real> AssembledSystem<T> {
    pub fn assemble(domain: &MultiPatchDomain<T>, materials: &Materials<T>, excitation: Excitation<T>, tracking: TrackingBox<T>) -> Result<Self> {
        materials.lens.validate()?;
        materials.fluid.validate()?;
        for (p, tags) in domain.tags.iter().enumerate() {
            if let Some(i) = tags.iter().position(|&t| t == EdgeTag::Unset) {
                return Err(Error::Config(format!("patch {} has an untagged boundary edge ({:?})", domain.patches[p].id, Side::ALL[i])));
            }
        }
        let n = domain.n_global();
        let elements = element_data(domain)?;
        let absorbing = boundary_data(domain, EdgeTag::Absorbing)?;
        let sources = boundary_data(domain, EdgeTag::Excitation)?;
        let zero = pattern(n, &elements);

        let m = scatter(&zero, &elements, |e| mass_block(e.qps.iter().map(|q| (q.weight, q.values.clone())), e.dofs.len()));
        let stiff = |coef: &(dyn Fn(Region) -> T + Sync)| {
            scatter(&zero, &elements, |e: &Element<T>| {
                let nl = e.dofs.len();
                let s = coef(e.region);
                let mut blk = vec![T::zero(); nl * nl];
                for q in &e.qps {
                    for i in 0..nl {
                        let gi = q.grads[i];
                        for j in 0..nl {
                            let gj = q.grads[j];
                            blk[i * nl + j] += s * q.weight * (gi[0] * gj[0] + gi[1] * gj[1]);
                        }
                    }
                }
                blk
            })
        };
        let c = stiff(&|r| materials.get(r).b);
        let k = stiff(&|r| {
            let c = materials.get(r).c;
            c * c
        });
        if tracking.is_empty() {
            log::warn!("tracking region is empty; the cost functional vanishes identically");
        }
        let md = scatter(&zero, &elements, |e| {
            let pts = e.qps.iter().filter(|q| tracking.contains(q.point)).map(|q| (q.weight, q.values.clone()));
            mass_block(pts, e.dofs.len())
        });
        if md.entries().all(|(_, _, v)| v == T::zero()) && !tracking.is_empty() {
            log::warn!("tracking region does not intersect the domain");
        }
        let bmass = |e: &BoundaryElement<T>, s: T| mass_block(e.qps.iter().map(|q| (s * q.weight, q.values.clone())), e.dofs.len());
        let a1 = scatter(&zero, &absorbing, |e| bmass(e, materials.get(domain.regions[e.patch]).c));
        let a2 = scatter(&zero, &absorbing, |e| {
            let mat = materials.get(domain.regions[e.patch]);
            bmass(e, mat.b / mat.c)
        });
        let mut source = vec![T::zero(); n];
        let mut source_coeffs = None;
        for e in &sources {
            let mat = materials.get(domain.regions[e.patch]);
            if source_coeffs.is_some_and(|sc| sc != (mat.c * mat.c, mat.b)) {
                return Err(Error::Config("excitation boundary spans different media".into()));
            }
            source_coeffs = Some((mat.c * mat.c, mat.b));
            for q in &e.qps {
                for (i, &g) in e.dofs.iter().enumerate() {
                    source[g] += q.weight * q.values[i];
                }
            }
        }
        let fluid = materials.fluid;
        Ok(AssembledSystem {
            m,
            c,
            k,
            a1,
            a2,
            md,
            source,
            materials: *materials,
            excitation,
            tracking,
            elements,
            absorbing,
            sources,
            source_coeffs: source_coeffs.unwrap_or((fluid.c * fluid.c, fluid.b)),
        })
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    /// Load vector `F(t)`.
    pub fn load_at(&self, t: T) -> Vec<T> {
        let mut f = vec![T::zero(); self.n()];
        self.load_into(t, &mut f);
        f
    }

    pub fn load_into(&self, t: T, f: &mut [T]) {
        let (g, gd) = self.excitation.eval(t);
        let s = self.source_coeffs.0 * g + self.source_coeffs.1 * gd;
        for (fi, &si) in f.iter_mut().zip(&self.source) {
            *fi = s * si;
        }
    }

    /// `T(u) v` with `T(u)_{ab} = ∫ 2k N_a N_b u_h`.
    pub fn apply_tensor(&self, u: &[T], v: &[T]) -> Result<Vec<T>> {
        let n = self.n();
        for len in [u.len(), v.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        let two = T::lit(2.0);
        let local = |e: &Element<T>| -> Vec<T> {
            let k = self.materials.get(e.region).k();
            let mut out = vec![T::zero(); e.dofs.len()];
            for (qi, q) in e.qps.iter().enumerate() {
                let s = two * k * q.weight * e.value(qi, u) * e.value(qi, v);
                for (o, &nv) in out.iter_mut().zip(&q.values) {
                    *o += s * nv;
                }
            }
            out
        };
        let blocks: Vec<Vec<T>> =
            if self.elements.len() >= PAR_ELEMENTS { self.elements.par_iter().map(local).collect() } else { self.elements.iter().map(local).collect() };
        let mut out = vec![T::zero(); n];
        for (e, b) in self.elements.iter().zip(&blocks) {
            for (&g, &v) in e.dofs.iter().zip(b) {
                out[g] += v;
            }
        }
        Ok(out)
    }

    /// Assembled matrix of `T(u)` (used for checks and small problems).
    pub fn tensor_matrix(&self, u: &[T]) -> Result<CsrMatrix<T>> {
        if u.len() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: u.len() });
        }
        let two = T::lit(2.0);
        let zero = self.m.zeros_like();
        Ok(scatter(&zero, &self.elements, |e| {
            let k = self.materials.get(e.region).k();
            mass_block(e.qps.iter().enumerate().map(|(qi, q)| (two * k * q.weight * e.value(qi, u), q.values.clone())), e.dofs.len())
        }))
    }

    /// Drops the nonlinear tensor by setting `k = 0` in both media (B/A = -2).
    pub fn linearized(&self) -> Self {
        let mut s = self.clone();
        s.materials.lens.b_over_a = -T::lit(2.0);
        s.materials.fluid.b_over_a = -T::lit(2.0);
        s
    }

    pub fn is_linear(&self) -> bool {
        self.materials.lens.k() == T::zero() && self.materials.fluid.k() == T::zero()
    }
}
