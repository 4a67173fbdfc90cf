//! Backward Newmark sweep for the linear adjoint system
//! `(M + A₂ - T(u)) p̈ - (C + A₁) ṗ + K p = 2 M^D (u - u_d)` with zero terminal data.

use crate::error::{Error, Result};
use crate::linalg::BandedLu;
use crate::scalar::{all_finite, norm2, Real};
use crate::sparse::CsrMatrix;
use crate::state::{absorbed_matrices, SecondOrderSystem, SolveStats, TimeSeriesField};

/// Which field feeds the tensor coefficient in the adjoint iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorSource {
    #[default]
    State,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointParams<T> {
    pub gamma: T,
    pub beta: T,
    pub tol: T,
    pub max_iter: usize,
    pub tensor_source: TensorSource,
}

impl<T: Real> Default for AdjointParams<T> {
    fn default() -> Self {
        AdjointParams { gamma: T::lit(0.5), beta: T::lit(0.25), tol: T::lit(1e-8), max_iter: 50, tensor_source: TensorSource::State }
    }
}

/// `M + γ Δt C + β Δt² K`; the backward step `-Δt` enters through the sign of `C ṗ`.
pub fn adjoint_effective_mass<T: Real>(m: &CsrMatrix<T>, c: &CsrMatrix<T>, k: &CsrMatrix<T>, p: &AdjointParams<T>, dt: T) -> Result<CsrMatrix<T>> {
    CsrMatrix::linear_combination(&[(T::one(), m), (p.gamma * dt, c), (p.beta * dt * dt, k)])
}

/// Solves the adjoint backward in time. `md` is the tracking mass matrix and `ud` holds the
/// target coefficients at every step of `u.grid`.
pub fn solve_adjoint<T: Real, S: SecondOrderSystem<T> + ?Sized>(
    sys: &S,
    md: &CsrMatrix<T>,
    u: &TimeSeriesField<T>,
    ud: &[Vec<T>],
    params: &AdjointParams<T>,
) -> Result<(TimeSeriesField<T>, SolveStats)> {
    let grid = u.grid;
    let n = sys.mass().nrows();
    if u.x.len() != grid.n_steps || u.x.iter().any(|x| x.len() != n) {
        return Err(Error::Precondition(format!("forward history has {} levels of size {}, expected {} of size {n}", u.x.len(), u.n_dofs(), grid.n_steps)));
    }
    if ud.len() != grid.n_steps || ud.iter().any(|x| x.len() != n) {
        return Err(Error::Precondition(format!("target history has {} levels, expected {}", ud.len(), grid.n_steps)));
    }
    if !(params.beta > T::zero() && params.gamma > T::zero()) {
        return Err(Error::Config("adjoint Newmark parameters must be positive".into()));
    }
    let dt = grid.dt();
    let (beta, gamma) = (params.beta, params.gamma);
    let (mass, damping) = absorbed_matrices(sys)?;
    let mbar = adjoint_effective_mass(&mass, &damping, sys.stiffness(), params, dt)?;
    let lu = BandedLu::factor(&mbar)?;
    let nonlinear = sys.is_nonlinear();

    let m = grid.n_steps;
    let mut out = TimeSeriesField::zeros(grid, n);
    let mut stats = SolveStats::default();
    let (mut p, mut pd) = (vec![T::zero(); n], vec![T::zero(); n]);
    let mut pdd = terminal_acceleration(sys, &mass, md, u, ud, params)?;
    out.xdd[m - 1] = pdd.clone();
    let half = T::lit(0.5);
    for step in (0..m - 1).rev() {
        let mut pp = p.clone();
        let mut pdp = pd.clone();
        for i in 0..n {
            pp[i] = p[i] - dt * pd[i] + half * dt * dt * (T::one() - T::lit(2.0) * beta) * pdd[i];
            pdp[i] = pd[i] - (T::one() - gamma) * dt * pdd[i];
        }
        let diff: Vec<T> = u.x[step].iter().zip(&ud[step]).map(|(&a, &b)| a - b).collect();
        let mut fbar = md.mul_vec(&diff);
        fbar.iter_mut().for_each(|v| *v *= T::lit(2.0));
        let cp = damping.mul_vec(&pdp);
        let kp = sys.stiffness().mul_vec(&pp);
        let base: Vec<T> = (0..n).map(|i| fbar[i] + cp[i] - kp[i]).collect();
        let coef = match params.tensor_source {
            TensorSource::State => &u.x[step],
            TensorSource::Target => &ud[step],
        };

        let mut acc = pdd.clone();
        let mut pn = pp.clone();
        let mut pdn = pdp.clone();
        for i in 0..n {
            pn[i] = pp[i] + beta * dt * dt * acc[i];
            pdn[i] = pdp[i] - gamma * dt * acc[i];
        }
        let mut done = false;
        let mut last = f64::INFINITY;
        for it in 1..=params.max_iter {
            let extra = tensor_term(sys, nonlinear, coef, &acc)?;
            let rhs: Vec<T> = base.iter().zip(&extra).map(|(&a, &b)| a + b).collect();
            acc = lu.solve(&rhs)?;
            if !all_finite(&acc) {
                return Err(Error::NonFinite { solver: "adjoint", step });
            }
            for i in 0..n {
                pn[i] = pp[i] + beta * dt * dt * acc[i];
                pdn[i] = pdp[i] - gamma * dt * acc[i];
            }
            // Res = ‖(M + A₂) p̈ - (C + A₁) ṗ + K p - F̄ - T p̈‖
            let extra = tensor_term(sys, nonlinear, coef, &acc)?;
            let ma = mass.mul_vec(&acc);
            let cd = damping.mul_vec(&pdn);
            let kk = sys.stiffness().mul_vec(&pn);
            let res: Vec<T> = (0..n).map(|i| ma[i] - cd[i] + kk[i] - fbar[i] - extra[i]).collect();
            let r = norm2(&res);
            let scale = norm2(&fbar).max(norm2(&ma));
            last = if scale > T::zero() { (r / scale).as_f64() } else { 0.0 };
            if r <= params.tol * scale || r == T::zero() {
                stats.iterations.push(it);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::StepFailure { solver: "adjoint", step, iterations: params.max_iter, last_change: last });
        }
        p = pn;
        pd = pdn;
        pdd = acc;
        out.x[step] = p.clone();
        out.xd[step] = pd.clone();
        out.xdd[step] = pdd.clone();
    }
    stats.iterations.reverse();
    log::debug!("adjoint solve: {} steps, mean {:.2} inner iterations", m - 1, stats.mean());
    Ok((out, stats))
}

/// `(M + A₂ - T(u)) p̈ = 2 M^D (u - u_d)` at the final time, where `p = ṗ = 0`.
fn terminal_acceleration<T: Real, S: SecondOrderSystem<T> + ?Sized>(
    sys: &S,
    mass: &CsrMatrix<T>,
    md: &CsrMatrix<T>,
    u: &TimeSeriesField<T>,
    ud: &[Vec<T>],
    params: &AdjointParams<T>,
) -> Result<Vec<T>> {
    let last = u.x.len() - 1;
    let diff: Vec<T> = u.x[last].iter().zip(&ud[last]).map(|(&a, &b)| a - b).collect();
    let mut f = md.mul_vec(&diff);
    f.iter_mut().for_each(|v| *v *= T::lit(2.0));
    if f.iter().all(|&v| v == T::zero()) {
        return Ok(f);
    }
    let lu = BandedLu::factor(mass)?;
    let coef = match params.tensor_source {
        TensorSource::State => &u.x[last],
        TensorSource::Target => &ud[last],
    };
    let nonlinear = sys.is_nonlinear();
    let mut acc = lu.solve(&f)?;
    for _ in 0..params.max_iter {
        if !nonlinear {
            break;
        }
        let extra = tensor_term(sys, nonlinear, coef, &acc)?;
        let rhs: Vec<T> = f.iter().zip(&extra).map(|(&a, &b)| a + b).collect();
        let next = lu.solve(&rhs)?;
        let d: Vec<T> = next.iter().zip(&acc).map(|(&a, &b)| a - b).collect();
        let done = norm2(&d) <= params.tol * norm2(&next);
        acc = next;
        if done {
            break;
        }
    }
    if !all_finite(&acc) {
        return Err(Error::NonFinite { solver: "adjoint", step: last });
    }
    Ok(acc)
}

fn tensor_term<T: Real, S: SecondOrderSystem<T> + ?Sized>(sys: &S, nonlinear: bool, coef: &[T], pdd: &[T]) -> Result<Vec<T>> {
    if nonlinear {
        sys.tensor(coef, pdd)
    } else {
        Ok(vec![T::zero(); pdd.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{LinearSystem, TimeGrid};

    fn one(v: f64) -> CsrMatrix<f64> {
        CsrMatrix::from_triplets(1, 1, &[(0, 0, v)])
    }

    #[test]
    fn effective_mass_has_positive_damping_sign() {
        let p = AdjointParams::default();
        let mb = adjoint_effective_mass(&one(2.0), &one(3.0), &one(4.0), &p, 0.5).unwrap();
        assert!((mb.get(0, 0) - (2.0 + 0.75 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn matching_target_gives_zero_adjoint() {
        let sys = LinearSystem { m: one(1.0), c: one(0.1), k: one(2.0), load: |_t: f64, f: &mut [f64]| f[0] = 0.0 };
        let g = TimeGrid::new(1.0, 11).unwrap();
        let mut u = TimeSeriesField::zeros(g, 1);
        u.x.iter_mut().enumerate().for_each(|(i, x)| x[0] = i as f64);
        let ud = u.x.clone();
        let (p, _) = solve_adjoint(&sys, &one(1.0), &u, &ud, &AdjointParams::default()).unwrap();
        assert!(p.x.iter().chain(&p.xd).chain(&p.xdd).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_adjoint_matches_closed_form() {
        // p̈ + p = 2 (u - u_d) with u - u_d ≡ 1/2 and p(T) = ṗ(T) = 0: p = 1 - cos(T - t)
        let sys = LinearSystem { m: one(1.0), c: one(0.0), k: one(1.0), load: |_t: f64, f: &mut [f64]| f[0] = 0.0 };
        let g = TimeGrid::new(1.0, 4001).unwrap();
        let u = TimeSeriesField::zeros(g, 1);
        let ud = vec![vec![-0.5]; g.n_steps];
        let (p, _) = solve_adjoint(&sys, &one(1.0), &u, &ud, &AdjointParams::default()).unwrap();
        let exact = 1.0 - 1.0f64.cos();
        assert!((p.x[0][0] - exact).abs() < 1e-6, "{} vs {exact}", p.x[0][0]);
    }

    #[test]
    fn short_history_is_rejected() {
        let sys = LinearSystem { m: one(1.0), c: one(0.0), k: one(1.0), load: |_t: f64, f: &mut [f64]| f[0] = 0.0 };
        let g = TimeGrid::new(1.0, 5).unwrap();
        let mut u = TimeSeriesField::zeros(g, 1);
        u.x.pop();
        let ud = vec![vec![0.0]; 5];
        assert!(matches!(solve_adjoint(&sys, &one(1.0), &u, &ud, &AdjointParams::default()), Err(Error::Precondition(_))));
    }
}
