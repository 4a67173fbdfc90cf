//! Target pressure fields for the tracking functional.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::assembly::AssembledSystem;
use crate::domain::MultiPatchDomain;
use crate::error::{Error, Result};
use crate::linalg::BandedLu;
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::state::TimeGrid;

/// Stationary anisotropic Gaussian `A exp(-x²/(2σx²) - (y - y_fp)²/(2σy²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<T> {
    pub amplitude: T,
    pub y_fp: T,
    pub sigma_x: T,
    pub sigma_y: T,
}

impl<T: Real> Gaussian<T> {
    pub fn focus() -> Self {
        Gaussian { amplitude: T::lit(6e7), y_fp: T::lit(0.105), sigma_x: T::lit(0.02), sigma_y: T::lit(0.004) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > T::zero() && self.sigma_x > T::zero() && self.sigma_y > T::zero()) {
            return Err(Error::Config("Gaussian target needs positive amplitude and widths".into()));
        }
        Ok(())
    }

    pub fn value(&self, p: [T; 2]) -> T {
        let dx = p[0] / self.sigma_x;
        let dy = (p[1] - self.y_fp) / self.sigma_y;
        self.amplitude * (-(dx * dx + dy * dy) / T::lit(2.0)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetField<T> {
    /// Coefficient vectors on their own time grid.
    Stored {
        grid: TimeGrid<T>,
        values: Vec<Vec<T>>,
    },
    Gaussian(Gaussian<T>),
}

impl<T: Real> TargetField<T> {
    /// Target coefficients at every level of `grid`. The Gaussian is projected onto the
    /// functions of the tracking patch only, so it does not depend on the lens shape.
    pub fn history(&self, domain: &MultiPatchDomain<T>, sys: &AssembledSystem<T>, patch: usize, grid: &TimeGrid<T>) -> Result<Vec<Vec<T>>> {
        match self {
            TargetField::Gaussian(g) => {
                g.validate()?;
                let c = project_on_patch(domain, sys, patch, |p| g.value(p))?;
                Ok(vec![c; grid.n_steps])
            }
            TargetField::Stored { grid: src, values } => {
                if values.len() != src.n_steps {
                    return Err(Error::Dimension { expected: src.n_steps, got: values.len() });
                }
                if let Some(v) = values.iter().find(|v| v.len() != sys.n()) {
                    return Err(Error::Dimension { expected: sys.n(), got: v.len() });
                }
                if src == grid {
                    return Ok(values.clone());
                }
                interpolate_in_time(src, values, grid)
            }
        }
    }
}

/// L² projection of a pointwise function with the assembled mass matrix.
pub fn project<T: Real>(sys: &AssembledSystem<T>, f: impl Fn([T; 2]) -> T) -> Result<Vec<T>> {
    let mut rhs = vec![T::zero(); sys.n()];
    for e in &sys.elements {
        for q in &e.qps {
            let fv = f(q.point) * q.weight;
            for (i, &g) in e.dofs.iter().enumerate() {
                rhs[g] += fv * q.values[i];
            }
        }
    }
    BandedLu::factor(&sys.m)?.solve(&rhs)
}

/// Local L² projection onto the functions of one patch; other coefficients are zero.
pub fn project_on_patch<T: Real>(domain: &MultiPatchDomain<T>, sys: &AssembledSystem<T>, patch: usize, f: impl Fn([T; 2]) -> T) -> Result<Vec<T>> {
    let local = PatchMass::new(domain, sys, patch)?;
    let mut rhs = vec![T::zero(); local.n()];
    for e in sys.elements.iter().filter(|e| e.patch == patch) {
        for q in &e.qps {
            let fv = f(q.point) * q.weight;
            for (i, &g) in e.dofs.iter().enumerate() {
                rhs[local.slot[g]] += fv * q.values[i];
            }
        }
    }
    local.expand(&local.lu.solve(&rhs)?, domain.n_global())
}

/// Factorized mass matrix of one patch in its own numbering.
struct PatchMass<'a, T> {
    local: &'a [usize],
    slot: Vec<usize>,
    lu: BandedLu<T>,
}

impl<'a, T: Real> PatchMass<'a, T> {
    fn new(domain: &'a MultiPatchDomain<T>, sys: &AssembledSystem<T>, patch: usize) -> Result<Self> {
        let local = domain.dofs.local_to_global.get(patch).ok_or_else(|| Error::Precondition(format!("no patch with index {patch}")))?;
        let mut slot = vec![usize::MAX; domain.n_global()];
        for (k, &g) in local.iter().enumerate() {
            slot[g] = k;
        }
        let mut trip = Vec::new();
        for e in sys.elements.iter().filter(|e| e.patch == patch) {
            for q in &e.qps {
                for (i, &gi) in e.dofs.iter().enumerate() {
                    for (j, &gj) in e.dofs.iter().enumerate() {
                        trip.push((slot[gi], slot[gj], q.weight * q.values[i] * q.values[j]));
                    }
                }
            }
        }
        let m = CsrMatrix::from_triplets(local.len(), local.len(), &trip);
        Ok(PatchMass { local, slot, lu: BandedLu::factor(&m)? })
    }

    fn n(&self) -> usize {
        self.local.len()
    }

    fn expand(&self, c: &[T], n: usize) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); n];
        for (k, &g) in self.local.iter().enumerate() {
            out[g] = c[k];
        }
        Ok(out)
    }
}

/// Linear interpolation of a stored history onto another grid covering at most the same span.
pub fn interpolate_in_time<T: Real>(src: &TimeGrid<T>, values: &[Vec<T>], dst: &TimeGrid<T>) -> Result<Vec<Vec<T>>> {
    let slack = T::lit(1e-9) * src.t_final;
    if dst.t_final > src.t_final + slack {
        return Err(Error::Precondition(format!("stored target ends at {} but the run needs {}", src.t_final, dst.t_final)));
    }
    let dt = src.dt();
    let last = src.n_steps - 1;
    Ok((0..dst.n_steps)
        .map(|n| {
            let s = dst.time(n) / dt;
            let mut i = s.floor().to_usize().unwrap_or(0).min(last);
            let mut theta = s - T::from_usize_lossy(i);
            if i == last {
                theta = T::zero();
            } else if theta > T::one() - T::lit(1e-12) {
                i += 1;
                theta = T::zero();
            }
            if theta <= T::lit(1e-12) {
                return values[i].clone();
            }
            values[i].iter().zip(&values[i + 1]).map(|(&a, &b)| a + theta * (b - a)).collect()
        })
        .collect())
}

/// Moves a field from `fine` to `coarse` by local L² projection on one affine patch that both
/// domains share. Coefficients outside that patch are zero.
pub fn transfer_patch<T: Real>(
    fine: &MultiPatchDomain<T>,
    coarse: &MultiPatchDomain<T>,
    coarse_sys: &AssembledSystem<T>,
    patch: usize,
    history: &[Vec<T>],
) -> Result<Vec<Vec<T>>> {
    let fp = &fine.patches[patch];
    let cp = &coarse.patches[patch];
    let tol = T::lit(1e-10);
    let lo = cp.map_point([T::zero(), T::zero()])?;
    let hi = cp.map_point([T::one(), T::one()])?;
    for x in [[T::zero(), T::zero()], [T::one(), T::zero()], [T::zero(), T::one()], [T::one(), T::one()], [T::lit(0.5), T::lit(0.3)]] {
        let a = fp.map_point(x)?;
        let b = cp.map_point(x)?;
        if (a[0] - b[0]).abs() > tol || (a[1] - b[1]).abs() > tol {
            return Err(Error::Geometry(format!("patch {} differs between the two meshes", cp.id)));
        }
    }
    let to_param = |p: [T; 2]| [(p[0] - lo[0]) / (hi[0] - lo[0]), (p[1] - lo[1]) / (hi[1] - lo[1])];
    let mass = PatchMass::new(coarse, coarse_sys, patch)?;
    let elements: Vec<_> = coarse_sys.elements.iter().filter(|e| e.patch == patch).collect();
    // fine basis values at every coarse quadrature point, in element order
    let mut samples = Vec::new();
    for e in &elements {
        for q in &e.qps {
            let x = to_param(q.point).map(|v| v.max(T::zero()).min(T::one()));
            let b = fp.eval_basis(x)?;
            let g: Vec<usize> = b.indices.iter().map(|&a| fine.dofs.local_to_global[patch][a]).collect();
            samples.push((g, b.values));
        }
    }
    history
        .iter()
        .map(|u| {
            let mut rhs = vec![T::zero(); mass.n()];
            let mut s = samples.iter();
            for e in &elements {
                for q in &e.qps {
                    let (g, vals) = s.next().expect("one sample per quadrature point");
                    let uf: T = g.iter().zip(vals).map(|(&k, &v)| u[k] * v).sum();
                    for (i, &gi) in e.dofs.iter().enumerate() {
                        rhs[mass.slot[gi]] += q.weight * q.values[i] * uf;
                    }
                }
            }
            mass.expand(&mass.lu.solve(&rhs)?, coarse.n_global())
        })
        .collect()
}

/// Adds zero-mean Gaussian noise with standard deviation `level · max|u|` to the listed
/// coefficients; the maximum is taken over those coefficients and all levels.
pub fn add_noise<T: Real>(history: &mut [Vec<T>], dofs: &[usize], level: T, seed: u64) -> Result<()> {
    let peak = history.iter().flat_map(|u| dofs.iter().map(move |&d| u[d].abs())).fold(T::zero(), T::max);
    let sigma = (level * peak).as_f64();
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for u in history.iter_mut() {
        for &d in dofs {
            u[d] += T::lit(normal.sample(&mut rng));
        }
    }
    Ok(())
}
