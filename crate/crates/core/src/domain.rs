//! Multipatch domains: interface gluing, boundary tags and the seven-patch lens layout.

use crate::error::{Error, GluingMismatch, Result};
use crate::nurbs::patch::insert_knot_curve;
use crate::nurbs::{KnotVector, NurbsPatch, TensorBasis};
use crate::scalar::Real;

/// Patch edges in parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// `x2 = 0`
    Bottom,
    /// `x1 = 1`
    Right,
    /// `x2 = 1`
    Top,
    /// `x1 = 0`
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    pub fn index(self) -> usize {
        match self {
            Side::Bottom => 0,
            Side::Right => 1,
            Side::Top => 2,
            Side::Left => 3,
        }
    }

    /// Parametric direction running along the edge.
    pub fn along(self) -> usize {
        match self {
            Side::Bottom | Side::Top => 0,
            Side::Left | Side::Right => 1,
        }
    }

    /// Fixed parametric coordinate `(direction, value)` of the edge.
    pub fn fixed<T: Real>(self) -> (usize, T) {
        match self {
            Side::Bottom => (1, T::zero()),
            Side::Top => (1, T::one()),
            Side::Left => (0, T::zero()),
            Side::Right => (0, T::one()),
        }
    }

    /// Outward unit normal in parameter space.
    pub fn opposite(self) -> Side {
        match self {
            Side::Bottom => Side::Top,
            Side::Top => Side::Bottom,
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn param_normal<T: Real>(self) -> [T; 2] {
        match self {
            Side::Bottom => [T::zero(), -T::one()],
            Side::Top => [T::zero(), T::one()],
            Side::Left => [-T::one(), T::zero()],
            Side::Right => [T::one(), T::zero()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeTag {
    /// Neumann source boundary.
    Excitation,
    /// First-order absorbing boundary.
    Absorbing,
    /// Homogeneous natural condition (symmetry axis or reflecting wall).
    Symmetry,
    /// Glued to another patch.
    Interface,
    /// Edge collapsed to a single physical point.
    Collapsed,
    Unset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Lens,
    Fluid,
}

/// Two patch edges that are glued, optionally with opposite orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterfaceDecl {
    pub a: (usize, Side),
    pub b: (usize, Side),
    pub reversed: bool,
}

impl InterfaceDecl {
    pub fn new(a: (usize, Side), b: (usize, Side)) -> Self {
        InterfaceDecl { a, b, reversed: false }
    }
}

/// Local-to-global dof identification; row `(p, a)` of the matrix `E` has its single one
/// in column `local_to_global[p][a]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    pub local_to_global: Vec<Vec<usize>>,
    pub n_global: usize,
}

impl DofMap {
    /// Number of local dofs mapped onto each global dof (the diagonal of `E^T E`).
    pub fn multiplicity(&self) -> Vec<usize> {
        let mut m = vec![0; self.n_global];
        for g in self.local_to_global.iter().flatten() {
            m[*g] += 1;
        }
        m
    }

    pub fn n_local(&self) -> usize {
        self.local_to_global.iter().map(Vec::len).sum()
    }

    /// First `(patch, local)` occurrence of every global dof.
    pub fn first_local(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(usize::MAX, usize::MAX); self.n_global];
        for (p, l2g) in self.local_to_global.iter().enumerate() {
            for (a, &g) in l2g.iter().enumerate() {
                if out[g].0 == usize::MAX {
                    out[g] = (p, a);
                }
            }
        }
        out
    }
}

/// Local dof indices along an edge, in increasing parameter order.
pub fn side_dofs<T: Real>(patch: &NurbsPatch<T>, side: Side) -> Vec<usize> {
    let (n1, n2) = (patch.n1(), patch.n2());
    let b = &patch.basis;
    match side {
        Side::Bottom => (0..n1).map(|i| b.index(i, 0)).collect(),
        Side::Top => (0..n1).map(|i| b.index(i, n2 - 1)).collect(),
        Side::Left => (0..n2).map(|j| b.index(0, j)).collect(),
        Side::Right => (0..n2).map(|j| b.index(n1 - 1, j)).collect(),
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Identifies paired local dofs `((patch, local), (patch, local))` into a global numbering.
/// Paired control points must coincide within `tol`; numbering is first-seen in patch order,
/// then local index order.
pub fn glue<T: Real>(patches: &[NurbsPatch<T>], pairs: &[((usize, usize), (usize, usize))], tol: T) -> Result<DofMap> {
    let offsets: Vec<usize> = patches
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.n_basis();
            Some(o)
        })
        .collect();
    let total: usize = patches.iter().map(|p| p.n_basis()).sum();
    let mut parent: Vec<usize> = (0..total).collect();
    let mut bad = Vec::new();
    for &((pa, la), (pb, lb)) in pairs {
        for &(p, l) in &[(pa, la), (pb, lb)] {
            if p >= patches.len() || l >= patches[p].n_basis() {
                return Err(Error::Precondition(format!("dof ({p}, {l}) does not exist")));
            }
        }
        let ca = patches[pa].control[la];
        let cb = patches[pb].control[lb];
        let d = (ca[0] - cb[0]).hypot(ca[1] - cb[1]);
        if !(d <= tol) {
            bad.push(GluingMismatch { a: (pa, la), b: (pb, lb), distance: d.as_f64() });
            continue;
        }
        let ra = find(&mut parent, offsets[pa] + la);
        let rb = find(&mut parent, offsets[pb] + lb);
        if ra != rb {
            // keep the smaller flat index as root so roots are stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    }
    if !bad.is_empty() {
        return Err(Error::Gluing(bad));
    }
    let mut number = vec![usize::MAX; total];
    let mut next = 0;
    let mut local_to_global = Vec::with_capacity(patches.len());
    for (p, patch) in patches.iter().enumerate() {
        let mut l2g = Vec::with_capacity(patch.n_basis());
        for l in 0..patch.n_basis() {
            let r = find(&mut parent, offsets[p] + l);
            if number[r] == usize::MAX {
                number[r] = next;
                next += 1;
            }
            l2g.push(number[r]);
        }
        local_to_global.push(l2g);
    }
    Ok(DofMap { local_to_global, n_global: next })
}

/// Indices of the patches that make up the lens layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LensLayout {
    pub lens: usize,
    pub below: usize,
    pub above: usize,
}

#[derive(Debug, Clone)]
pub struct MultiPatchDomain<T> {
    pub patches: Vec<NurbsPatch<T>>,
    pub regions: Vec<Region>,
    /// Per patch, tags indexed by [`Side::index`].
    pub tags: Vec<[EdgeTag; 4]>,
    pub interfaces: Vec<InterfaceDecl>,
    pub collapsed: Vec<(usize, Side)>,
    pub dofs: DofMap,
    pub lens: Option<LensLayout>,
}

impl<T: Real> MultiPatchDomain<T> {
    pub fn new(
        patches: Vec<NurbsPatch<T>>,
        regions: Vec<Region>,
        tags: Vec<[EdgeTag; 4]>,
        interfaces: Vec<InterfaceDecl>,
        collapsed: Vec<(usize, Side)>,
    ) -> Result<Self> {
        let np = patches.len();
        if regions.len() != np || tags.len() != np {
            return Err(Error::Precondition(format!("{np} patches but {} regions and {} tag sets", regions.len(), tags.len())));
        }
        let degree = patches.first().map(|p| p.degrees());
        if patches.iter().any(|p| Some(p.degrees()) != degree) {
            return Err(Error::Conformity("all patches must share one degree".into()));
        }
        let mut pairs = Vec::new();
        for itf in &interfaces {
            let (pa, sa) = itf.a;
            let (pb, sb) = itf.b;
            if pa >= np || pb >= np {
                return Err(Error::Precondition("interface refers to a missing patch".into()));
            }
            let ka = &patches[pa].basis.dirs[sa.along()];
            let kb = &patches[pb].basis.dirs[sb.along()];
            let kb_knots: Vec<T> = if itf.reversed { kb.knots().iter().rev().map(|&k| T::one() - k).collect() } else { kb.knots().to_vec() };
            if ka.degree() != kb.degree() || ka.knots() != kb_knots.as_slice() {
                return Err(Error::Conformity(format!(
                    "knot vectors differ on interface between patch {} {:?} and patch {} {:?}",
                    patches[pa].id, sa, patches[pb].id, sb
                )));
            }
            let da = side_dofs(&patches[pa], sa);
            let mut db = side_dofs(&patches[pb], sb);
            if itf.reversed {
                db.reverse();
            }
            pairs.extend(da.into_iter().zip(db).map(|(a, b)| ((pa, a), (pb, b))));
        }
        for &(p, s) in &collapsed {
            let d = side_dofs(&patches[p], s);
            pairs.extend(d.windows(2).map(|w| ((p, w[0]), (p, w[1]))));
        }
        let scale = patches.iter().flat_map(|p| p.control.iter()).fold(T::one(), |m, c| m.max(c[0].abs()).max(c[1].abs()));
        let tol = T::lit(1e-12).max(T::lit(64.0) * T::epsilon() * scale);
        let dofs = glue(&patches, &pairs, tol)?;
        let domain = MultiPatchDomain { patches, regions, tags, interfaces, collapsed, dofs, lens: None };
        domain.check_conformity()?;
        Ok(domain)
    }

    pub fn n_global(&self) -> usize {
        self.dofs.n_global
    }

    pub fn tag(&self, patch: usize, side: Side) -> EdgeTag {
        self.tags[patch][side.index()]
    }

    /// Global control point of every global dof.
    pub fn global_points(&self) -> Vec<[T; 2]> {
        self.dofs.first_local().into_iter().map(|(p, a)| self.patches[p].control[a]).collect()
    }

    /// Patch and parametric coordinates of a physical point, by Newton iteration from the
    /// nearest node of a sample grid. Points on interfaces go to the lowest patch index.
    pub fn locate(&self, p: [T; 2]) -> Option<(usize, [T; 2])> {
        let scale = self.global_points().iter().fold(T::one(), |m, c| m.max(c[0].abs()).max(c[1].abs()));
        let tol = T::lit(1e-10) * scale;
        let n = 16;
        for (k, patch) in self.patches.iter().enumerate() {
            let mut best = ([T::lit(0.5); 2], T::infinity());
            for i in 0..=n {
                for j in 0..=n {
                    let x = [T::from_usize_lossy(i) / T::from_usize_lossy(n), T::from_usize_lossy(j) / T::from_usize_lossy(n)];
                    if let Ok(q) = patch.map_point(x) {
                        let d = (q[0] - p[0]).hypot(q[1] - p[1]);
                        if d < best.1 {
                            best = (x, d);
                        }
                    }
                }
            }
            let mut x = best.0;
            for _ in 0..50 {
                let Ok(b) = patch.eval_basis(x) else { break };
                let g = patch.geometry_from_basis(&b);
                let r = [g.point[0] - p[0], g.point[1] - p[1]];
                if r[0].hypot(r[1]) <= tol {
                    return Some((k, x));
                }
                if !(g.det.abs() > T::zero()) {
                    break;
                }
                let [[a, bb], [c, d]] = g.jac;
                let dx = [(d * r[0] - bb * r[1]) / g.det, (-c * r[0] + a * r[1]) / g.det];
                let next = [(x[0] - dx[0]).max(T::zero()).min(T::one()), (x[1] - dx[1]).max(T::zero()).min(T::one())];
                if next == x {
                    break;
                }
                x = next;
            }
        }
        None
    }

    /// Basis functions active at a physical point, for repeated evaluation of fields.
    pub fn sample_at(&self, p: [T; 2]) -> Result<PointSample<T>> {
        let (k, x) = self.locate(p).ok_or_else(|| Error::Precondition(format!("point ({}, {}) lies outside the domain", p[0], p[1])))?;
        let b = self.patches[k].eval_basis(x)?;
        Ok(PointSample { point: p, patch: k, param: x, dofs: b.indices.iter().map(|&a| self.dofs.local_to_global[k][a]).collect(), values: b.values })
    }

    /// Checks that glued edges coincide at Gauss points and collapsed edges are single points.
    pub fn check_conformity(&self) -> Result<()> {
        let tol = T::lit(1e-12).max(T::lit(1e3) * T::epsilon());
        let probes: Vec<T> = [0.0, 0.1127016653792583, 0.5, 0.8872983346207417, 1.0].iter().map(|&v| T::lit(v)).collect();
        for itf in &self.interfaces {
            let (pa, sa) = itf.a;
            let (pb, sb) = itf.b;
            let knots = self.patches[pa].basis.dirs[sa.along()].breakpoints();
            for w in knots.windows(2) {
                for &s in &probes {
                    let t = w[0] + (w[1] - w[0]) * s;
                    let tb = if itf.reversed { T::one() - t } else { t };
                    let xa = self.patches[pa].map_point(edge_point(sa, t))?;
                    let xb = self.patches[pb].map_point(edge_point(sb, tb))?;
                    let d = (xa[0] - xb[0]).hypot(xa[1] - xb[1]);
                    if !(d <= tol) {
                        return Err(Error::Conformity(format!(
                            "patches {} and {} differ by {:e} m at edge parameter {}",
                            self.patches[pa].id,
                            self.patches[pb].id,
                            d.as_f64(),
                            t.as_f64()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parametric point on an edge at edge parameter `t`.
pub fn edge_point<T: Real>(side: Side, t: T) -> [T; 2] {
    match side {
        Side::Bottom => [t, T::zero()],
        Side::Top => [t, T::one()],
        Side::Left => [T::zero(), t],
        Side::Right => [T::one(), t],
    }
}

/// A physical point with its active global dofs and basis values.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSample<T> {
    pub point: [T; 2],
    pub patch: usize,
    pub param: [T; 2],
    pub dofs: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> PointSample<T> {
    pub fn eval(&self, coeffs: &[T]) -> T {
        self.dofs.iter().zip(&self.values).map(|(&d, &v)| coeffs[d] * v).sum()
    }
}

/// Lens and domain measurements in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainParams<T> {
    /// Domain height.
    pub l: T,
    /// Domain half width.
    pub b: T,
    /// Height of the lens corner.
    pub k: T,
    /// Lens half width.
    pub w: T,
    /// Lens thickness on the axis.
    pub p: T,
    /// Height of the lower edge of the tracking patch.
    pub s: T,
    /// Height of the lower lens boundary on the axis.
    pub r: T,
}

impl<T: Real> DomainParams<T> {
    pub fn upper_straight() -> Self {
        Self::from_f64(0.12, 0.05, 0.06, 0.04, 0.02, 0.09, 0.04)
    }

    pub fn upper_curved() -> Self {
        Self::from_f64(0.12, 0.05, 0.06, 0.04, 0.015, 0.09, 0.04)
    }

    pub fn both_perturbed() -> Self {
        Self::from_f64(0.12, 0.05, 0.06, 0.04, 0.016, 0.09, 0.042)
    }

    pub fn both_down() -> Self {
        Self::from_f64(0.12, 0.05, 0.06, 0.04, 0.021, 0.09, 0.037)
    }

    pub fn gauss() -> Self {
        Self::from_f64(0.12, 0.05, 0.06, 0.04, 0.025, 0.09, 0.035)
    }

    pub fn from_f64(l: f64, b: f64, k: f64, w: f64, p: f64, s: f64, r: f64) -> Self {
        DomainParams { l: T::lit(l), b: T::lit(b), k: T::lit(k), w: T::lit(w), p: T::lit(p), s: T::lit(s), r: T::lit(r) }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.l, self.b, self.k, self.w, self.p, self.s, self.r];
        if all.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(Error::Geometry("all lengths must be positive".into()));
        }
        if !(self.k < self.s && self.s < self.l) {
            return Err(Error::Geometry("need K < S < L".into()));
        }
        if !(self.w < self.b) {
            return Err(Error::Geometry("need W < B".into()));
        }
        if !(self.r + self.p < self.s) {
            return Err(Error::Geometry("lens top on the axis must lie below S".into()));
        }
        for (name, y0) in [("lower", self.r), ("upper", self.r + self.p)] {
            if (self.k - y0).abs() > self.w {
                return Err(Error::Geometry(format!("{name} arc cannot reach the corner with a horizontal tangent on the axis")));
            }
        }
        Ok(())
    }
}

/// Circular arc from `(0, y0)` (horizontal tangent) to the corner `(w, yc)`.
#[derive(Debug, Clone, Copy)]
pub struct Arc<T> {
    pub y0: T,
    pub w: T,
    pub yc: T,
}

impl<T: Real> Arc<T> {
    /// Signed radius; the center is `(0, y0 + radius)`. Infinite for a straight segment.
    pub fn radius(&self) -> T {
        let d = self.yc - self.y0;
        (self.w * self.w + d * d) / (T::lit(2.0) * d)
    }

    pub fn y_at(&self, x: T) -> T {
        if self.yc == self.y0 {
            return self.y0;
        }
        let r = self.radius();
        // r - sign(r) sqrt(r^2 - x^2), rewritten to avoid cancellation for large |r|
        self.y0 + x * x / (r + r.signum() * (r * r - x * x).max(T::zero()).sqrt())
    }

    /// Homogeneous control points `(w x, w y, w)` of the exact quadratic rational arc.
    pub fn bezier(&self) -> [[T; 3]; 3] {
        let two = T::lit(2.0);
        let (x1, wm) = if self.yc == self.y0 {
            (self.w / two, T::one())
        } else {
            let r = self.radius().abs();
            let theta = (self.w / r).min(T::one()).asin();
            (r * (theta / two).tan(), (theta / two).cos())
        };
        [[T::zero(), self.y0, T::one()], [x1 * wm, self.y0 * wm, wm], [self.w, self.yc, T::one()]]
    }
}

/// Boundary curve control points and weights of an arc on the given knot vector.
pub fn arc_control<T: Real>(arc: &Arc<T>, kv: &KnotVector<T>) -> Result<(Vec<[T; 2]>, Vec<T>)> {
    if kv.degree() == 2 {
        let mut cur = KnotVector::new(vec![T::zero(), T::zero(), T::zero(), T::one(), T::one(), T::one()], 2)?;
        let mut pts = arc.bezier().to_vec();
        for &x in &kv.knots()[3..kv.knots().len() - 3] {
            let (k2, p2) = insert_knot_curve(&cur, &pts, x)?;
            cur = k2;
            pts = p2;
        }
        Ok(pts.iter().map(|h| ([h[0] / h[2], h[1] / h[2]], h[2])).unzip())
    } else {
        Ok(kv
            .greville()
            .into_iter()
            .map(|g| {
                let x = arc.w * g;
                ([x, arc.y_at(x)], T::one())
            })
            .unzip())
    }
}

/// Straight edge between `a` and `b` at the Greville abscissae of `kv`.
pub fn line_control<T: Real>(a: [T; 2], b: [T; 2], kv: &KnotVector<T>) -> Vec<[T; 2]> {
    kv.greville().into_iter().map(|g| [a[0] + (b[0] - a[0]) * g, a[1] + (b[1] - a[1]) * g]).collect()
}

/// Coons combination on a control net from its four boundary rows/columns, using Greville
/// parameters. Boundary entries are copied exactly. Corners must match.
pub fn coons_net<T: Real>(basis: &TensorBasis<T>, bottom: &[[T; 2]], top: &[[T; 2]], left: &[[T; 2]], right: &[[T; 2]]) -> Result<Vec<[T; 2]>> {
    let (n1, n2) = (basis.n1(), basis.n2());
    if bottom.len() != n1 || top.len() != n1 || left.len() != n2 || right.len() != n2 {
        return Err(Error::Dimension { expected: n1, got: bottom.len() });
    }
    let tol = T::lit(1e-12).max(T::lit(1e3) * T::epsilon());
    let corners = [(bottom[0], left[0]), (bottom[n1 - 1], right[0]), (top[0], left[n2 - 1]), (top[n1 - 1], right[n2 - 1])];
    for (a, b) in corners {
        if (a[0] - b[0]).abs() > tol || (a[1] - b[1]).abs() > tol {
            return Err(Error::Geometry(format!("Coons boundary corners do not match: ({}, {}) vs ({}, {})", a[0], a[1], b[0], b[1])));
        }
    }
    let g1 = basis.dirs[0].greville();
    let g2 = basis.dirs[1].greville();
    let one = T::one();
    let mut net = vec![[T::zero(); 2]; n1 * n2];
    for (j, &t) in g2.iter().enumerate() {
        for (i, &s) in g1.iter().enumerate() {
            let mut p = [T::zero(); 2];
            for k in 0..2 {
                let l1 = (one - t) * bottom[i][k] + t * top[i][k];
                let l2 = (one - s) * left[j][k] + s * right[j][k];
                let bl = (one - s) * (one - t) * bottom[0][k] + s * (one - t) * bottom[n1 - 1][k] + (one - s) * t * top[0][k] + s * t * top[n1 - 1][k];
                p[k] = l1 + l2 - bl;
            }
            net[basis.index(i, j)] = p;
        }
    }
    for i in 0..n1 {
        net[basis.index(i, 0)] = bottom[i];
        net[basis.index(i, n2 - 1)] = top[i];
    }
    for j in 0..n2 {
        net[basis.index(0, j)] = left[j];
        net[basis.index(n1 - 1, j)] = right[j];
    }
    Ok(net)
}

/// Element counts `[n_x, n_y]` for each of the seven lens-layout patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Refinement {
    pub elements: [[usize; 2]; 7],
}

impl Refinement {
    /// Counts shared along the layout's rows and columns.
    pub fn grouped(nx_inner: usize, nx_outer: usize, ny_lower: usize, ny_lens: usize, ny_mid: usize, ny_top: usize) -> Self {
        Refinement {
            elements: [
                [nx_inner, ny_lower],
                [nx_outer, ny_lower],
                [nx_inner, ny_lens],
                [nx_inner, ny_mid],
                [nx_outer, ny_mid],
                [nx_inner, ny_top],
                [nx_outer, ny_top],
            ],
        }
    }

    /// Roughly 8000 dofs for the given degree.
    pub fn standard(degree: usize) -> Self {
        if degree == 1 {
            Refinement::grouped(35, 10, 75, 8, 52, 45)
        } else {
            Refinement::grouped(34, 12, 76, 8, 53, 46)
        }
    }

    /// Every element count multiplied by `factor`.
    pub fn scaled(&self, factor: usize) -> Self {
        let mut e = self.elements;
        e.iter_mut().flatten().for_each(|n| *n *= factor);
        Refinement { elements: e }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.elements;
        if e.iter().flatten().any(|&n| n == 0) {
            return Err(Error::Conformity("every patch needs at least one element per direction".into()));
        }
        let shared = [
            ("x", [0, 2, 3, 5].as_slice(), 0),
            ("x", [1, 4, 6].as_slice(), 0),
            ("y", [0, 1].as_slice(), 1),
            ("y", [3, 4].as_slice(), 1),
            ("y", [5, 6].as_slice(), 1),
        ];
        for (name, group, dir) in shared {
            let n0 = e[group[0]][dir];
            if let Some(&p) = group.iter().find(|&&p| e[p][dir] != n0) {
                return Err(Error::Conformity(format!(
                    "patches {} and {} share an interface but have {} and {} elements in {name}",
                    group[0] + 1,
                    p + 1,
                    n0,
                    e[p][dir]
                )));
            }
        }
        Ok(())
    }
}

const LENS_TAGS: [[EdgeTag; 4]; 7] = {
    use EdgeTag::*;
    [
        [Excitation, Interface, Interface, Symmetry],
        [Excitation, Absorbing, Interface, Interface],
        [Interface, Collapsed, Interface, Symmetry],
        [Interface, Interface, Interface, Symmetry],
        [Interface, Absorbing, Interface, Interface],
        [Interface, Interface, Absorbing, Symmetry],
        [Interface, Absorbing, Absorbing, Interface],
    ]
};

/// Builds the seven-patch half-domain. Patch indices 0..7 carry labels 1..7; index 2 is
/// the lens, which sits between patch 0 below and patch 3 above; its right edge is
/// collapsed onto the lens corner `(W, K)`.
pub fn build_lens_domain<T: Real>(params: &DomainParams<T>, degree: usize, refinement: &Refinement) -> Result<MultiPatchDomain<T>> {
    params.validate()?;
    refinement.validate()?;
    let e = &refinement.elements;
    let kv = |n: usize| KnotVector::uniform(degree, n);
    let bases: Vec<TensorBasis<T>> = e.iter().map(|&[nx, ny]| Ok(TensorBasis::new(kv(nx)?, kv(ny)?))).collect::<Result<_>>()?;
    let DomainParams { l, b, k, w, p, s, r } = *params;
    let z = T::zero();
    let lower = Arc { y0: r, w, yc: k };
    let upper = Arc { y0: r + p, w, yc: k };
    let (lower_pts, lower_w) = arc_control(&lower, &bases[2].dirs[0])?;
    let (upper_pts, upper_w) = arc_control(&upper, &bases[2].dirs[0])?;
    let corner = [w, k];

    let rect = |i: usize, x0: T, x1: T, y0: T, y1: T| NurbsPatch::bilinear(i + 1, bases[i].clone(), [[x0, y0], [x1, y0], [x0, y1], [x1, y1]]);
    let below = curved_patch(1, &bases[0], Curve::straight([z, z], [w, z]), Curve::curved(&lower_pts, &lower_w), [z, z], [z, r], [w, z], corner)?;
    let lens = curved_patch(3, &bases[2], Curve::curved(&lower_pts, &lower_w), Curve::curved(&upper_pts, &upper_w), [z, r], [z, r + p], corner, corner)?;
    let above = curved_patch(4, &bases[3], Curve::curved(&upper_pts, &upper_w), Curve::straight([z, s], [w, s]), [z, r + p], [z, s], corner, [w, s])?;
    let patches = vec![below, rect(1, w, b, z, k)?, lens, above, rect(4, w, b, k, s)?, rect(5, z, w, s, l)?, rect(6, w, b, s, l)?];
    let itf = |a: usize, sa: Side, b: usize, sb: Side| InterfaceDecl::new((a, sa), (b, sb));
    let interfaces = vec![
        itf(0, Side::Right, 1, Side::Left),
        itf(0, Side::Top, 2, Side::Bottom),
        itf(1, Side::Top, 4, Side::Bottom),
        itf(2, Side::Top, 3, Side::Bottom),
        itf(3, Side::Right, 4, Side::Left),
        itf(3, Side::Top, 5, Side::Bottom),
        itf(4, Side::Top, 6, Side::Bottom),
        itf(5, Side::Right, 6, Side::Left),
    ];
    let mut regions = vec![Region::Fluid; 7];
    regions[2] = Region::Lens;
    let mut domain = MultiPatchDomain::new(patches, regions, LENS_TAGS.to_vec(), interfaces, vec![(2, Side::Right)])?;
    domain.lens = Some(LensLayout { lens: 2, below: 0, above: 3 });
    Ok(domain)
}

/// A boundary row given by control points and weights.
pub(crate) struct Curve<T> {
    pub pts: Vec<[T; 2]>,
    pub weights: Option<Vec<T>>,
    ends: Option<([T; 2], [T; 2])>,
}

impl<T: Real> Curve<T> {
    fn straight(a: [T; 2], b: [T; 2]) -> Self {
        Curve { pts: Vec::new(), weights: None, ends: Some((a, b)) }
    }

    fn curved(pts: &[[T; 2]], w: &[T]) -> Self {
        Curve { pts: pts.to_vec(), weights: Some(w.to_vec()), ends: None }
    }

    fn resolve(self, kv: &KnotVector<T>) -> (Vec<[T; 2]>, Vec<T>) {
        match self.ends {
            Some((a, b)) => (line_control(a, b, kv), vec![T::one(); kv.n_basis()]),
            None => {
                let w = self.weights.unwrap_or_else(|| vec![T::one(); self.pts.len()]);
                (self.pts, w)
            }
        }
    }
}

/// Patch with given bottom/top rows, straight side edges and a Coons interior. Weights are
/// interpolated linearly in the second parameter between the bottom and top rows.
#[allow(clippy::too_many_arguments)]
fn curved_patch<T: Real>(
    id: usize,
    basis: &TensorBasis<T>,
    bottom: Curve<T>,
    top: Curve<T>,
    left_a: [T; 2],
    left_b: [T; 2],
    right_a: [T; 2],
    right_b: [T; 2],
) -> Result<NurbsPatch<T>> {
    let (bot, wb) = bottom.resolve(&basis.dirs[0]);
    let (tp, wt) = top.resolve(&basis.dirs[0]);
    let left = line_control(left_a, left_b, &basis.dirs[1]);
    let right = line_control(right_a, right_b, &basis.dirs[1]);
    let net = coons_net(basis, &bot, &tp, &left, &right)?;
    let g2 = basis.dirs[1].greville();
    let mut weights = vec![T::one(); basis.n_basis()];
    for (j, &t) in g2.iter().enumerate() {
        for i in 0..basis.n1() {
            weights[basis.index(i, j)] = (T::one() - t) * wb[i] + t * wt[i];
        }
    }
    NurbsPatch::new(id, basis.clone(), net, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn square(id: usize, x0: f64, y0: f64, q: usize, ne: usize) -> NurbsPatch<f64> {
        let kv = KnotVector::uniform(q, ne).unwrap();
        NurbsPatch::bilinear(id, TensorBasis::new(kv.clone(), kv), [[x0, y0], [x0 + 1.0, y0], [x0, y0 + 1.0], [x0 + 1.0, y0 + 1.0]]).unwrap()
    }

    fn chain(n: usize) -> MultiPatchDomain<f64> {
        let patches: Vec<_> = (0..n).map(|i| square(i + 1, i as f64, 0.0, 2, 1)).collect();
        let interfaces = (0..n - 1).map(|i| InterfaceDecl::new((i, Side::Right), (i + 1, Side::Left))).collect();
        MultiPatchDomain::new(patches, vec![Region::Fluid; n], vec![[EdgeTag::Symmetry; 4]; n], interfaces, vec![]).unwrap()
    }

    /// Brute-force count of distinct physical control points.
    fn distinct_points(d: &MultiPatchDomain<f64>) -> usize {
        let set: BTreeSet<(i64, i64)> =
            d.patches.iter().flat_map(|p| p.control.iter()).map(|c| ((c[0] * 1e9).round() as i64, (c[1] * 1e9).round() as i64)).collect();
        set.len()
    }

    #[test]
    fn two_patches_share_three_dofs() {
        let d = chain(2);
        assert_eq!(d.n_global(), 15);
        let m = d.dofs.multiplicity();
        assert_eq!(m.iter().filter(|&&k| k == 2).count(), 3);
    }

    #[test]
    fn three_patch_chain() {
        let d = chain(3);
        assert_eq!(d.n_global(), 21);
        assert_eq!(d.n_global(), distinct_points(&d));
    }

    #[test]
    fn single_patch_identity_map() {
        let d = chain(1);
        assert_eq!(d.dofs.local_to_global[0], (0..9).collect::<Vec<_>>());
        let g = glue(&d.patches, &[], 1e-12).unwrap();
        assert_eq!(g.n_global, 9);
    }

    #[test]
    fn mismatch_lists_offending_pairs() {
        let a = square(1, 0.0, 0.0, 1, 1);
        let b = square(2, 1.0, 0.5, 1, 1);
        let err = MultiPatchDomain::new(
            vec![a, b],
            vec![Region::Fluid; 2],
            vec![[EdgeTag::Symmetry; 4]; 2],
            vec![InterfaceDecl::new((0, Side::Right), (1, Side::Left))],
            vec![],
        )
        .unwrap_err();
        match err {
            Error::Gluing(v) => assert_eq!(v.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn knot_mismatch_is_conformity_error() {
        let a = square(1, 0.0, 0.0, 1, 1);
        let b = square(2, 1.0, 0.0, 1, 2);
        let err = MultiPatchDomain::new(
            vec![a, b],
            vec![Region::Fluid; 2],
            vec![[EdgeTag::Symmetry; 4]; 2],
            vec![InterfaceDecl::new((0, Side::Right), (1, Side::Left))],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Conformity(_)));
    }

    #[test]
    fn arc_geometry() {
        let a: Arc<f64> = Arc { y0: 0.04, w: 0.04, yc: 0.06 };
        // radius from the chord relation: (W^2 + d^2) / (2d)
        assert!((a.radius() - 0.05).abs() < 1e-15);
        assert!((a.y_at(0.0) - 0.04).abs() < 1e-15);
        assert!((a.y_at(0.04) - 0.06).abs() < 1e-15);
        let kv = KnotVector::uniform(2, 5).unwrap();
        let (pts, w) = arc_control(&a, &kv).unwrap();
        let patch_like: Vec<[f64; 3]> = pts.iter().zip(&w).map(|(p, w)| [p[0] * w, p[1] * w, *w]).collect();
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            let span = kv.find_span(t);
            let (b, _) = kv.local_basis(span, t);
            let mut h = [0.0; 3];
            for (r, bv) in b.iter().enumerate() {
                for c in 0..3 {
                    h[c] += bv * patch_like[span - 2 + r][c];
                }
            }
            let (x, y) = (h[0] / h[2], h[1] / h[2]);
            assert!((x.hypot(y - 0.09) - 0.05).abs() < 1e-14, "point off the circle at t={t}");
        }
    }

    #[test]
    fn standard_column_builds_seven_patches() {
        for q in [1, 2] {
            let d = build_lens_domain(&DomainParams::<f64>::upper_straight(), q, &Refinement::grouped(4, 2, 3, 2, 3, 2)).unwrap();
            assert_eq!(d.patches.len(), 7);
            assert_eq!(d.regions[2], Region::Lens);
            assert!(d.n_global() < d.dofs.n_local());
        }
    }

    #[test]
    fn incompatible_refinement_rejected() {
        let mut r = Refinement::grouped(4, 2, 3, 2, 3, 2);
        r.elements[3][0] = 5;
        let err = build_lens_domain(&DomainParams::<f64>::upper_straight(), 2, &r).unwrap_err();
        assert!(matches!(err, Error::Conformity(_)));
    }

    #[test]
    fn overly_steep_arc_rejected() {
        let mut p = DomainParams::<f64>::upper_straight();
        p.r = 0.01;
        assert!(matches!(build_lens_domain(&p, 2, &Refinement::grouped(2, 1, 1, 1, 1, 1)), Err(Error::Geometry(_))));
    }

    #[test]
    fn symmetry_tags_cover_axis_edges() {
        let d = build_lens_domain(&DomainParams::<f64>::both_down(), 2, &Refinement::grouped(4, 2, 3, 2, 3, 2)).unwrap();
        for (pi, p) in d.patches.iter().enumerate() {
            for side in Side::ALL {
                let on_axis = side_dofs(p, side).iter().all(|&a| p.control[a][0] == 0.0);
                let tag = d.tag(pi, side);
                if on_axis {
                    assert_eq!(tag, EdgeTag::Symmetry, "patch {} {:?}", p.id, side);
                } else {
                    assert_ne!(tag, EdgeTag::Symmetry);
                }
            }
        }
    }

    #[test]
    fn coons_lifts_interior_row() {
        let kv = KnotVector::uniform(2, 1).unwrap();
        let basis = TensorBasis::new(kv.clone(), kv);
        let bottom: [[f64; 2]; 3] = [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]];
        let top = [[0.0, 1.1], [0.5, 1.1], [1.0, 1.1]];
        let left = [[0.0, 0.0], [0.0, 0.55], [0.0, 1.1]];
        let right = [[1.0, 0.0], [1.0, 0.55], [1.0, 1.1]];
        let net = coons_net(&basis, &bottom, &top, &left, &right).unwrap();
        assert!((net[basis.index(1, 1)][1] - 0.55).abs() < 1e-15);
        assert!((net[basis.index(1, 1)][0] - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn lens_domain_is_watertight(
            nx in 1usize..5, no in 1usize..3, ny in 1usize..4, q in 1usize..=2,
            col in 0usize..5, t in 0.0f64..=1.0,
        ) {
            let params = [
                DomainParams::<f64>::upper_straight(),
                DomainParams::upper_curved(),
                DomainParams::both_perturbed(),
                DomainParams::both_down(),
                DomainParams::gauss(),
            ][col];
            let d = build_lens_domain(&params, q, &Refinement::grouped(nx, no, ny, ny, ny, ny)).unwrap();
            // E^T E diagonal equals multiplicities, all dofs reached
            let m = d.dofs.multiplicity();
            prop_assert!(m.iter().all(|&k| k >= 1));
            // shared global basis functions agree from both sides of every interface
            for itf in &d.interfaces {
                let (pa, sa) = itf.a;
                let (pb, sb) = itf.b;
                let ba = d.patches[pa].eval_basis(edge_point(sa, t)).unwrap();
                let bb = d.patches[pb].eval_basis(edge_point(sb, t)).unwrap();
                let mut va = vec![0.0; d.n_global()];
                let mut vb = vec![0.0; d.n_global()];
                for (a, v) in ba.indices.iter().zip(&ba.values) { va[d.dofs.local_to_global[pa][*a]] += v; }
                for (a, v) in bb.indices.iter().zip(&bb.values) { vb[d.dofs.local_to_global[pb][*a]] += v; }
                for g in 0..d.n_global() {
                    prop_assert!((va[g] - vb[g]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn locate_inverts_the_geometry_map() {
        let d = build_lens_domain(&DomainParams::<f64>::upper_curved(), 2, &Refinement::grouped(4, 2, 4, 2, 3, 3)).unwrap();
        for (k, x) in [(2, [0.3, 0.6]), (5, [0.5, 0.5]), (0, [0.9, 0.2]), (6, [0.1, 0.7])] {
            let p = d.patches[k].map_point(x).unwrap();
            let (kk, xx) = d.locate(p).unwrap();
            let q = d.patches[kk].map_point(xx).unwrap();
            assert!((q[0] - p[0]).hypot(q[1] - p[1]) < 1e-10);
            assert_eq!(kk, k);
        }
        assert!(d.locate([0.2, 0.05]).is_none());
        let s = d.sample_at([0.01, 0.1]).unwrap();
        let ones = vec![1.0; d.n_global()];
        assert!((s.eval(&ones) - 1.0).abs() < 1e-12);
        let xs: Vec<f64> = d.global_points().iter().map(|c| c[0]).collect();
        // x is in the span of a NURBS space with the geometry's weights
        assert!((s.eval(&xs) - 0.01).abs() < 1e-10);
    }
}
