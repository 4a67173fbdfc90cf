//! Lens boundary design variables, Coons propagation into neighbouring patches, and
//! feasibility checks.

use crate::domain::{coons_net, line_control, MultiPatchDomain, Side};
use crate::error::{Error, Result};
use crate::nurbs::{KnotVector, NurbsPatch};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Row {
    Lower,
    Upper,
}

/// Which lens boundaries are design variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Moving {
    #[default]
    Upper,
    Both,
}

/// A lens boundary control point whose y-coordinate is a design variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignDof {
    pub row: Row,
    /// Index along the row, starting at the symmetry axis.
    pub index: usize,
    pub global: usize,
    /// The lens corner stays fixed.
    pub pinned: bool,
}

/// Bottom and top control rows of the lens patch with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LensShape<T> {
    pub knots: KnotVector<T>,
    pub lower: Vec<[T; 2]>,
    pub upper: Vec<[T; 2]>,
    pub lower_w: Vec<T>,
    pub upper_w: Vec<T>,
}

fn lens_index<T>(domain: &MultiPatchDomain<T>) -> Result<crate::domain::LensLayout> {
    domain.lens.ok_or_else(|| Error::Precondition("domain has no lens layout".into()))
}

impl<T: Real> LensShape<T> {
    pub fn from_domain(domain: &MultiPatchDomain<T>) -> Result<Self> {
        let lens = &domain.patches[lens_index(domain)?.lens];
        let (n1, n2) = (lens.n1(), lens.n2());
        let row = |j: usize| -> (Vec<[T; 2]>, Vec<T>) {
            (0..n1)
                .map(|i| {
                    let a = lens.basis.index(i, j);
                    (lens.control[a], lens.weights[a])
                })
                .unzip()
        };
        let (lower, lower_w) = row(0);
        let (upper, upper_w) = row(n2 - 1);
        Ok(LensShape { knots: lens.basis.dirs[0].clone(), lower, upper, lower_w, upper_w })
    }

    pub fn row(&self, r: Row) -> &[[T; 2]] {
        match r {
            Row::Lower => &self.lower,
            Row::Upper => &self.upper,
        }
    }

    pub fn y(&self, d: &DesignDof) -> T {
        self.row(d.row)[d.index][1]
    }

    fn row_mut(&mut self, r: Row) -> &mut Vec<[T; 2]> {
        match r {
            Row::Lower => &mut self.lower,
            Row::Upper => &mut self.upper,
        }
    }

    /// Point on a boundary curve at curve parameter `s`.
    pub fn curve_point(&self, r: Row, s: T) -> Result<[T; 2]> {
        let (pts, w) = match r {
            Row::Lower => (&self.lower, &self.lower_w),
            Row::Upper => (&self.upper, &self.upper_w),
        };
        let n = self.knots.eval_basis(s)?;
        let mut den = T::zero();
        let mut p = [T::zero(); 2];
        for i in 0..pts.len() {
            let c = n[i] * w[i];
            den += c;
            p[0] += c * pts[i][0];
            p[1] += c * pts[i][1];
        }
        Ok([p[0] / den, p[1] / den])
    }

    /// Height of a boundary curve above abscissa `x`, found by bisection on the curve
    /// parameter (the rows are monotone in x).
    pub fn curve_y_at(&self, r: Row, x: T) -> Result<T> {
        let (mut a, mut b) = (T::zero(), T::one());
        for _ in 0..200 {
            let m = (a + b) / T::lit(2.0);
            if self.curve_point(r, m)?[0] < x {
                a = m;
            } else {
                b = m;
            }
            if b - a <= T::epsilon() {
                break;
            }
        }
        Ok(self.curve_point(r, (a + b) / T::lit(2.0))?[1])
    }
}

/// Design dofs of the lens rows, lower row first; the corner of each row is pinned.
pub fn design_dofs<T: Real>(domain: &MultiPatchDomain<T>, moving: Moving) -> Result<Vec<DesignDof>> {
    let l = lens_index(domain)?.lens;
    let lens = &domain.patches[l];
    let (n1, n2) = (lens.n1(), lens.n2());
    let rows: &[(Row, usize)] = match moving {
        Moving::Upper => &[(Row::Upper, n2 - 1)],
        Moving::Both => &[(Row::Lower, 0), (Row::Upper, n2 - 1)],
    };
    let mut out = Vec::new();
    for &(row, j) in rows {
        for i in 0..n1 {
            let global = domain.dofs.local_to_global[l][lens.basis.index(i, j)];
            out.push(DesignDof { row, index: i, global, pinned: i + 1 == n1 });
        }
    }
    Ok(out)
}

/// `y_i ← y_i − α g_i` for every movable design dof.
pub fn update_boundary<T: Real>(shape: &LensShape<T>, dofs: &[DesignDof], grad: &[T], alpha: T) -> Result<LensShape<T>> {
    if grad.len() != dofs.len() {
        return Err(Error::Dimension { expected: dofs.len(), got: grad.len() });
    }
    let mut out = shape.clone();
    for (d, &g) in dofs.iter().zip(grad) {
        if !d.pinned {
            out.row_mut(d.row)[d.index][1] -= alpha * g;
        }
    }
    Ok(out)
}

/// Root-mean-square difference of design-dof heights.
pub fn shape_error_l2<T: Real>(shape: &LensShape<T>, goal: &LensShape<T>, dofs: &[DesignDof]) -> Result<T> {
    if shape.lower.len() != goal.lower.len() || shape.upper.len() != goal.upper.len() {
        return Err(Error::Dimension { expected: goal.lower.len(), got: shape.lower.len() });
    }
    if dofs.is_empty() {
        return Ok(T::zero());
    }
    let s: T = dofs.iter().map(|d| (goal.y(d) - shape.y(d)).powi(2)).sum();
    Ok((s / T::from_usize_lossy(dofs.len())).sqrt())
}

/// Recomputes the interior of `patch` from new boundary rows and columns, keeping weights.
pub fn coons_update<T: Real>(patch: &NurbsPatch<T>, bottom: &[[T; 2]], top: &[[T; 2]], left: &[[T; 2]], right: &[[T; 2]]) -> Result<NurbsPatch<T>> {
    let control = coons_net(&patch.basis, bottom, top, left, right)?;
    NurbsPatch::new(patch.id, patch.basis.clone(), control, patch.weights.clone())
}

fn side_row<T: Real>(p: &NurbsPatch<T>, side: Side) -> Vec<[T; 2]> {
    let (n1, n2) = (p.n1(), p.n2());
    match side {
        Side::Bottom => (0..n1).map(|i| p.control_point(i, 0)).collect(),
        Side::Top => (0..n1).map(|i| p.control_point(i, n2 - 1)).collect(),
        Side::Left => (0..n2).map(|j| p.control_point(0, j)).collect(),
        Side::Right => (0..n2).map(|j| p.control_point(n1 - 1, j)).collect(),
    }
}

/// New boundary nets `(bottom, top, left, right)` of the three patches touching the lens.
/// Axis edges are re-spaced linearly between their moved end points.
#[allow(clippy::type_complexity)]
fn boundary_nets<T: Real>(domain: &MultiPatchDomain<T>, shape: &LensShape<T>) -> Result<Vec<(usize, [Vec<[T; 2]>; 4])>> {
    let lay = lens_index(domain)?;
    let mut out = Vec::new();
    for (p, bottom, top) in [(lay.below, None, Some(&shape.lower)), (lay.lens, Some(&shape.lower), Some(&shape.upper)), (lay.above, Some(&shape.upper), None)] {
        let patch = &domain.patches[p];
        let b = bottom.cloned().unwrap_or_else(|| side_row(patch, Side::Bottom));
        let t = top.cloned().unwrap_or_else(|| side_row(patch, Side::Top));
        if b.len() != patch.n1() || t.len() != patch.n1() {
            return Err(Error::Dimension { expected: patch.n1(), got: b.len() });
        }
        let left = line_control(b[0], t[0], &patch.basis.dirs[1]);
        let right = if p == lay.lens { side_row(patch, Side::Right) } else { line_control(b[b.len() - 1], t[t.len() - 1], &patch.basis.dirs[1]) };
        out.push((p, [b, t, left, right]));
    }
    Ok(out)
}

/// Domain with the lens rows replaced by `shape` and the neighbouring interiors rebuilt.
/// Gluing is unchanged; conformity is re-checked.
pub fn apply_shape<T: Real>(domain: &MultiPatchDomain<T>, shape: &LensShape<T>) -> Result<MultiPatchDomain<T>> {
    let mut out = domain.clone();
    for (p, [b, t, l, r]) in boundary_nets(domain, shape)? {
        out.patches[p] = coons_update(&domain.patches[p], &b, &t, &l, &r)?;
    }
    out.check_conformity()?;
    Ok(out)
}

/// Control-point velocity of every global dof when design dof `d` moves up by one unit.
/// The Coons map is affine in the boundary data, so a unit difference of nets is exact.
pub fn shape_velocity<T: Real>(domain: &MultiPatchDomain<T>, shape: &LensShape<T>, d: &DesignDof) -> Result<Vec<[T; 2]>> {
    if d.pinned {
        return Err(Error::Precondition("pinned design dofs do not move".into()));
    }
    let mut moved = shape.clone();
    moved.row_mut(d.row)[d.index][1] += T::one();
    let base = boundary_nets(domain, shape)?;
    let next = boundary_nets(domain, &moved)?;
    let mut vel = vec![[T::zero(); 2]; domain.n_global()];
    for ((p, [b0, t0, l0, r0]), (_, [b1, t1, l1, r1])) in base.into_iter().zip(next) {
        let basis = &domain.patches[p].basis;
        let n0 = coons_net(basis, &b0, &t0, &l0, &r0)?;
        let n1 = coons_net(basis, &b1, &t1, &l1, &r1)?;
        for (a, (x0, x1)) in n0.iter().zip(&n1).enumerate() {
            // rounding in the two nets leaves ~1e-17 on points that do not move
            let flush = |v: T| if v.abs() <= T::lit(1e-12) { T::zero() } else { v };
            vel[domain.dofs.local_to_global[p][a]] = [flush(x1[0] - x0[0]), flush(x1[1] - x0[1])];
        }
    }
    Ok(vel)
}

/// Minimal manufacturable thickness `c0 - √(r1² - x²) + √(r2² - x²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThicknessConstraint<T> {
    pub enabled: bool,
    pub c0: T,
    pub r1: T,
    pub r2: T,
}

impl<T: Real> Default for ThicknessConstraint<T> {
    fn default() -> Self {
        ThicknessConstraint { enabled: false, c0: T::lit(0.0263), r1: T::lit(0.0608), r2: T::lit(0.0445) }
    }
}

impl<T: Real> ThicknessConstraint<T> {
    pub fn reference() -> Self {
        ThicknessConstraint { enabled: true, ..Default::default() }
    }

    pub fn d_min(&self, x: T) -> T {
        let s = |r: T| (r * r - x * x).max(T::zero()).sqrt();
        self.c0 - s(self.r1) + s(self.r2)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<String>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Thickness, ordering and containment checks at the abscissae of all boundary control
/// points. `y_max` bounds the upper curve from above.
pub fn check_feasible<T: Real>(shape: &LensShape<T>, constraint: &ThicknessConstraint<T>, y_max: T) -> Result<FeasibilityReport> {
    let mut rep = FeasibilityReport::default();
    for (name, row) in [("lower", &shape.lower), ("upper", &shape.upper)] {
        if row.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            rep.violations.push(format!("{name} control abscissae are not increasing"));
        }
        for (i, p) in row.iter().enumerate() {
            if !(p[1] > T::zero() && p[1] < y_max) {
                rep.violations.push(format!("{name} control point {i} at y = {} leaves the domain", p[1]));
            }
        }
    }
    if !rep.is_feasible() {
        return Ok(rep);
    }
    let xs: Vec<T> = shape.lower.iter().chain(&shape.upper).map(|p| p[0]).collect();
    let corner = shape.upper[shape.upper.len() - 1][0];
    for (k, &x) in xs.iter().enumerate() {
        if x >= corner {
            continue;
        }
        let d = shape.curve_y_at(Row::Upper, x)? - shape.curve_y_at(Row::Lower, x)?;
        let (row, i) = if k < shape.lower.len() { ("lower", k) } else { ("upper", k - shape.lower.len()) };
        if !(d >= T::zero()) {
            rep.violations.push(format!("boundaries cross at x = {x} ({row} dof {i})"));
        } else if constraint.enabled && d < constraint.d_min(x) {
            rep.violations.push(format!("thickness {d} below minimum {} at x = {x} ({row} dof {i})", constraint.d_min(x)));
        }
    }
    Ok(rep)
}
