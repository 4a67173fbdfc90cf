//! Tracking cost and its shape derivative with respect to lens boundary control points.

use rayon::prelude::*;

use crate::assembly::{AssembledSystem, Materials};
use crate::domain::{edge_point, MultiPatchDomain, Region, Side};
use crate::error::{Error, Result};
use crate::geometry::DesignDof;
use crate::nurbs::GaussRule;
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::state::TimeSeriesField;

/// `Σ_n w_n (u_n - u_d,n)ᵀ M^D (u_n - u_d,n)` with trapezoidal weights.
pub fn cost<T: Real>(u: &TimeSeriesField<T>, ud: &[Vec<T>], md: &CsrMatrix<T>) -> Result<T> {
    if ud.len() != u.x.len() {
        return Err(Error::Dimension { expected: u.x.len(), got: ud.len() });
    }
    let w = u.grid.trapezoid_weights();
    let mut j = T::zero();
    for ((x, d), &wn) in u.x.iter().zip(ud).zip(&w) {
        if x.len() != md.nrows() || d.len() != md.nrows() {
            return Err(Error::Dimension { expected: md.nrows(), got: x.len().min(d.len()) });
        }
        let e: Vec<T> = x.iter().zip(d).map(|(&a, &b)| a - b).collect();
        j += wn * md.quad_form(&e);
    }
    Ok(j)
}

/// Sensitivities of the design dofs; the norm skips pinned dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGradient<T> {
    pub dofs: Vec<DesignDof>,
    pub values: Vec<T>,
}

impl<T: Real> ShapeGradient<T> {
    pub fn norm(&self) -> T {
        self.dofs.iter().zip(&self.values).filter(|(d, _)| !d.pinned).map(|(_, &g)| g * g).sum::<T>().sqrt()
    }

    /// Values with pinned entries set to zero.
    pub fn movable(&self) -> Vec<T> {
        self.dofs.iter().zip(&self.values).map(|(d, &g)| if d.pinned { T::zero() } else { g }).collect()
    }
}

/// One quadrature point on the lens/fluid interface.
#[derive(Debug, Clone)]
pub struct InterfaceQp<T> {
    pub lens_dofs: Vec<usize>,
    pub lens_values: Vec<T>,
    pub lens_grads: Vec<[T; 2]>,
    pub fluid_dofs: Vec<usize>,
    pub fluid_grads: Vec<[T; 2]>,
    /// Gauss weight times the curve length element.
    pub weight: T,
    /// `e_y · n_l` with `n_l` the outward lens normal.
    pub ny: T,
    pub point: [T; 2],
}

/// Quadrature on both lens boundaries, paired with the adjacent fluid patches.
pub fn interface_quadrature<T: Real>(domain: &MultiPatchDomain<T>) -> Result<Vec<InterfaceQp<T>>> {
    let lay = domain.lens.ok_or_else(|| Error::Precondition("domain has no lens layout".into()))?;
    let lens = &domain.patches[lay.lens];
    let mut out = Vec::new();
    let scale = domain.global_points().iter().fold(T::one(), |m, p| m.max(p[0].abs()).max(p[1].abs()));
    let tol = T::lit(1e-10) * scale;
    for (side, fp) in [(Side::Bottom, lay.below), (Side::Top, lay.above)] {
        let itf = domain
            .interfaces
            .iter()
            .find(|i| (i.a == (fp, side.opposite()) && i.b == (lay.lens, side)) || (i.b == (fp, side.opposite()) && i.a == (lay.lens, side)))
            .ok_or_else(|| Error::Conformity(format!("lens {side:?} edge has no declared interface")))?;
        let fluid = &domain.patches[fp];
        let rule = GaussRule::<T>::new(lens.degrees()[0] + 1);
        for (_, a, b) in lens.basis.dirs[0].element_spans() {
            for (t, w) in rule.on(a, b) {
                let bl = lens.eval_basis(edge_point(side, t))?;
                let gl = lens.geometry_from_basis(&bl);
                let tf = if itf.reversed { T::one() - t } else { t };
                let bf = fluid.eval_basis(edge_point(side.opposite(), tf))?;
                let gf = fluid.geometry_from_basis(&bf);
                let d = (gl.point[0] - gf.point[0]).hypot(gl.point[1] - gf.point[1]);
                if !(d <= tol) {
                    return Err(Error::Conformity(format!(
                        "interface quadrature point differs by {:e} m between patches {} and {}",
                        d.as_f64(),
                        lens.id,
                        fluid.id
                    )));
                }
                if !(gl.det > T::zero() && gf.det > T::zero()) {
                    return Err(Error::DegenerateGeometry { patch: lens.id, u: t.as_f64(), v: 0.0, det: gl.det.min(gf.det).as_f64() });
                }
                let len = gl.jac[0][0].hypot(gl.jac[1][0]);
                let n = gl.push_forward(side.param_normal());
                let ny = n[1] / n[0].hypot(n[1]);
                let map = |p: usize, idx: &[usize]| idx.iter().map(|&k| domain.dofs.local_to_global[p][k]).collect::<Vec<_>>();
                out.push(InterfaceQp {
                    lens_dofs: map(lay.lens, &bl.indices),
                    lens_values: bl.values.clone(),
                    lens_grads: bl.grads.iter().map(|&g| gl.push_forward(g)).collect(),
                    fluid_dofs: map(fp, &bf.indices),
                    fluid_grads: bf.grads.iter().map(|&g| gf.push_forward(g)).collect(),
                    weight: w * len,
                    ny,
                    point: gl.point,
                });
            }
        }
    }
    Ok(out)
}

fn value<T: Real>(dofs: &[usize], vals: &[T], u: &[T]) -> T {
    dofs.iter().zip(vals).map(|(&d, &v)| u[d] * v).sum()
}

fn grad<T: Real>(dofs: &[usize], grads: &[[T; 2]], u: &[T]) -> [T; 2] {
    let mut g = [T::zero(); 2];
    for (&d, gr) in dofs.iter().zip(grads) {
        g[0] += u[d] * gr[0];
        g[1] += u[d] * gr[1];
    }
    g
}

/// Boundary form of the shape derivative for every design dof:
/// `g_i = −Σ_n w_n Σ_qp ω (2⟦k⟧ u u̇ ṗ + ⟦c²⟧ ∇u_l·∇p_f + ⟦b⟧ ∇u̇_l·∇p_f) N_i (e_y·n_l)`,
/// with jumps taken lens minus fluid.
pub fn shape_gradient_boundary<T: Real>(
    domain: &MultiPatchDomain<T>,
    materials: &Materials<T>,
    u: &TimeSeriesField<T>,
    p: &TimeSeriesField<T>,
    dofs: &[DesignDof],
) -> Result<ShapeGradient<T>> {
    if u.grid != p.grid || u.x.len() != p.x.len() {
        return Err(Error::Precondition("state and adjoint histories live on different grids".into()));
    }
    let qps = interface_quadrature(domain)?;
    let (l, f) = (materials.get(Region::Lens), materials.get(Region::Fluid));
    let jk = T::lit(2.0) * (l.k() - f.k());
    let jc = l.c * l.c - f.c * f.c;
    let jb = l.b - f.b;
    let mut slot = vec![usize::MAX; domain.n_global()];
    let mut touched = Vec::new();
    for q in &qps {
        for &d in &q.lens_dofs {
            if slot[d] == usize::MAX {
                slot[d] = touched.len();
                touched.push(d);
            }
        }
    }
    let w = u.grid.trapezoid_weights();
    let per_step = |n: usize| -> Vec<T> {
        let mut g = vec![T::zero(); touched.len()];
        let (x, xd, pd, pp) = (&u.x[n], &u.xd[n], &p.xd[n], &p.x[n]);
        for q in &qps {
            let uv = value(&q.lens_dofs, &q.lens_values, x);
            let udv = value(&q.lens_dofs, &q.lens_values, xd);
            let pdv = value(&q.lens_dofs, &q.lens_values, pd);
            let gu = grad(&q.lens_dofs, &q.lens_grads, x);
            let gud = grad(&q.lens_dofs, &q.lens_grads, xd);
            let gp = grad(&q.fluid_dofs, &q.fluid_grads, pp);
            let integrand = jk * uv * udv * pdv + jc * (gu[0] * gp[0] + gu[1] * gp[1]) + jb * (gud[0] * gp[0] + gud[1] * gp[1]);
            let s = -w[n] * q.weight * integrand * q.ny;
            for (&d, &nv) in q.lens_dofs.iter().zip(&q.lens_values) {
                g[slot[d]] += s * nv;
            }
        }
        g
    };
    let steps: Vec<Vec<T>> = (0..u.x.len()).into_par_iter().map(per_step).collect();
    let mut total = vec![T::zero(); touched.len()];
    for g in &steps {
        for (t, &v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    let values = dofs.iter().map(|d| if slot[d.global] == usize::MAX { T::zero() } else { total[slot[d.global]] }).collect();
    Ok(ShapeGradient { dofs: dofs.to_vec(), values })
}

/// Volume form of the shape derivative in the direction of the control-point field `theta`
/// (one displacement per global dof):
/// `∫∫ (c²∇u + b∇u̇)ᵀ(DΘ + DΘᵀ)∇p − ((1−2ku)üp + c²∇u·∇p + b∇u̇·∇p − 2ku̇²p) div Θ`.
pub fn shape_gradient_volume<T: Real>(sys: &AssembledSystem<T>, u: &TimeSeriesField<T>, p: &TimeSeriesField<T>, theta: &[[T; 2]]) -> Result<T> {
    if theta.len() != sys.n() {
        return Err(Error::Dimension { expected: sys.n(), got: theta.len() });
    }
    if u.grid != p.grid {
        return Err(Error::Precondition("state and adjoint histories live on different grids".into()));
    }
    let moves = |d: usize| theta[d][0] != T::zero() || theta[d][1] != T::zero();
    for e in &sys.elements {
        if e.qps.iter().any(|q| sys.tracking.contains(q.point)) && e.dofs.iter().any(|&d| moves(d)) {
            return Err(Error::Precondition("deformation field reaches into the tracking region".into()));
        }
    }
    for b in sys.absorbing.iter().chain(&sys.sources) {
        for q in &b.qps {
            if b.dofs.iter().zip(&q.values).any(|(&d, &v)| v != T::zero() && moves(d)) {
                return Err(Error::Precondition("deformation field moves an excitation or absorbing boundary".into()));
            }
        }
    }
    struct Qp<'a, T> {
        dofs: &'a [usize],
        values: &'a [T],
        grads: &'a [[T; 2]],
        weight: T,
        dtheta: [[T; 2]; 2],
        c2: T,
        b: T,
        k: T,
    }
    let mut qps = Vec::new();
    for e in sys.elements.iter().filter(|e| e.dofs.iter().any(|&d| moves(d))) {
        let m = sys.materials.get(e.region);
        for q in &e.qps {
            let mut dt = [[T::zero(); 2]; 2];
            for (&d, g) in e.dofs.iter().zip(&q.grads) {
                for a in 0..2 {
                    for c in 0..2 {
                        dt[a][c] += theta[d][a] * g[c];
                    }
                }
            }
            qps.push(Qp { dofs: &e.dofs, values: &q.values, grads: &q.grads, weight: q.weight, dtheta: dt, c2: m.c * m.c, b: m.b, k: m.k() });
        }
    }
    let w = u.grid.trapezoid_weights();
    let two = T::lit(2.0);
    let per_step = |n: usize| -> T {
        let mut s = T::zero();
        for q in &qps {
            let uv = value(q.dofs, q.values, &u.x[n]);
            let udv = value(q.dofs, q.values, &u.xd[n]);
            let uddv = value(q.dofs, q.values, &u.xdd[n]);
            let pv = value(q.dofs, q.values, &p.x[n]);
            let gu = grad(q.dofs, q.grads, &u.x[n]);
            let gud = grad(q.dofs, q.grads, &u.xd[n]);
            let gp = grad(q.dofs, q.grads, &p.x[n]);
            let flux = [q.c2 * gu[0] + q.b * gud[0], q.c2 * gu[1] + q.b * gud[1]];
            let d = q.dtheta;
            let sym = [[two * d[0][0], d[0][1] + d[1][0]], [d[0][1] + d[1][0], two * d[1][1]]];
            let t1 = flux[0] * (sym[0][0] * gp[0] + sym[0][1] * gp[1]) + flux[1] * (sym[1][0] * gp[0] + sym[1][1] * gp[1]);
            let div = d[0][0] + d[1][1];
            let t2 = ((T::one() - two * q.k * uv) * uddv * pv + flux[0] * gp[0] + flux[1] * gp[1] - two * q.k * udv * udv * pv) * div;
            s += q.weight * (t1 - t2);
        }
        w[n] * s
    };
    let steps: Vec<T> = (0..u.x.len()).into_par_iter().map(per_step).collect();
    Ok(steps.into_iter().fold(T::zero(), |a, b| a + b))
}
