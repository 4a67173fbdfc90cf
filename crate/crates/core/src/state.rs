//! Forward generalized-α time stepping with a Newmark predictor-corrector fixed point.

use crate::assembly::AssembledSystem;
use crate::error::{Error, Result};
use crate::linalg::BandedLu;
use crate::scalar::{all_finite, axpy, norm2, Real};
use crate::sparse::CsrMatrix;

/// Uniform time grid `t_n = n T / (n_steps - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    pub t_final: T,
    pub n_steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_final: T, n_steps: usize) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::Config(format!("need at least two time levels, got n_steps = {n_steps}")));
        }
        if !(t_final > T::zero()) || !t_final.is_finite() {
            return Err(Error::Config(format!("final time must be positive, got {t_final}")));
        }
        Ok(TimeGrid { t_final, n_steps })
    }

    pub fn dt(&self) -> T {
        self.t_final / T::from_usize_lossy(self.n_steps - 1)
    }

    pub fn time(&self, n: usize) -> T {
        self.dt() * T::from_usize_lossy(n)
    }

    /// Trapezoidal weights over the grid.
    pub fn trapezoid_weights(&self) -> Vec<T> {
        let dt = self.dt();
        let half = dt / T::lit(2.0);
        (0..self.n_steps).map(|n| if n == 0 || n + 1 == self.n_steps { half } else { dt }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaParams<T> {
    pub alpha_m: T,
    pub alpha_f: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Real> AlphaParams<T> {
    pub fn table() -> Self {
        AlphaParams { alpha_m: T::lit(0.5), alpha_f: T::lit(1.0 / 3.0), beta: T::lit(0.45), gamma: T::lit(0.75) }
    }

    /// Trapezoidal Newmark rule without α-averaging.
    pub fn newmark() -> Self {
        AlphaParams { alpha_m: T::zero(), alpha_f: T::zero(), beta: T::lit(0.25), gamma: T::lit(0.5) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > T::zero()) || !(self.gamma > T::zero() && self.gamma <= T::one()) {
            return Err(Error::Config(format!("need beta > 0 and gamma in (0, 1], got beta = {}, gamma = {}", self.beta, self.gamma)));
        }
        if !(self.alpha_m < T::one() && self.alpha_f < T::one()) {
            return Err(Error::Config("alpha_m and alpha_f must be below 1".into()));
        }
        Ok(())
    }
}

/// Coefficient histories `(x, ẋ, ẍ)` on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesField<T> {
    pub grid: TimeGrid<T>,
    pub x: Vec<Vec<T>>,
    pub xd: Vec<Vec<T>>,
    pub xdd: Vec<Vec<T>>,
}

impl<T: Real> TimeSeriesField<T> {
    pub fn zeros(grid: TimeGrid<T>, n: usize) -> Self {
        let z = vec![vec![T::zero(); n]; grid.n_steps];
        TimeSeriesField { grid, x: z.clone(), xd: z.clone(), xdd: z }
    }

    pub fn n_dofs(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn max_abs(&self) -> T {
        self.x.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Semidiscrete second-order system `M ẍ + C ẋ + K x + A₁ ẋ + A₂ ẍ = F(t) + T(ẋ)ẋ + T(x)ẍ`.
pub trait SecondOrderSystem<T: Real> {
    fn mass(&self) -> &CsrMatrix<T>;
    fn damping(&self) -> &CsrMatrix<T>;
    fn stiffness(&self) -> &CsrMatrix<T>;
    /// `(A₁, A₂)` when an absorbing boundary is present.
    fn absorbing(&self) -> Option<(&CsrMatrix<T>, &CsrMatrix<T>)>;
    fn is_nonlinear(&self) -> bool;
    fn tensor(&self, u: &[T], v: &[T]) -> Result<Vec<T>>;
    fn load(&self, t: T, out: &mut [T]);
}

impl<T: Real> SecondOrderSystem<T> for AssembledSystem<T> {
    fn mass(&self) -> &CsrMatrix<T> {
        &self.m
    }

    fn damping(&self) -> &CsrMatrix<T> {
        &self.c
    }

    fn stiffness(&self) -> &CsrMatrix<T> {
        &self.k
    }

    fn absorbing(&self) -> Option<(&CsrMatrix<T>, &CsrMatrix<T>)> {
        if self.absorbing.is_empty() {
            None
        } else {
            Some((&self.a1, &self.a2))
        }
    }

    fn is_nonlinear(&self) -> bool {
        !self.is_linear()
    }

    fn tensor(&self, u: &[T], v: &[T]) -> Result<Vec<T>> {
        self.apply_tensor(u, v)
    }

    fn load(&self, t: T, out: &mut [T]) {
        self.load_into(t, out)
    }
}

/// Linear system with an arbitrary load, used for verification problems.
pub struct LinearSystem<T, F> {
    pub m: CsrMatrix<T>,
    pub c: CsrMatrix<T>,
    pub k: CsrMatrix<T>,
    pub load: F,
}

impl<T: Real, F: Fn(T, &mut [T])> SecondOrderSystem<T> for LinearSystem<T, F> {
    fn mass(&self) -> &CsrMatrix<T> {
        &self.m
    }

    fn damping(&self) -> &CsrMatrix<T> {
        &self.c
    }

    fn stiffness(&self) -> &CsrMatrix<T> {
        &self.k
    }

    fn absorbing(&self) -> Option<(&CsrMatrix<T>, &CsrMatrix<T>)> {
        None
    }

    fn is_nonlinear(&self) -> bool {
        false
    }

    fn tensor(&self, u: &[T], _v: &[T]) -> Result<Vec<T>> {
        Ok(vec![T::zero(); u.len()])
    }

    fn load(&self, t: T, out: &mut [T]) {
        (self.load)(t, out)
    }
}

/// `(1-α_m) M + γ(1-α_f) Δt C + β(1-α_f) Δt² K`
pub fn effective_mass<T: Real>(m: &CsrMatrix<T>, c: &CsrMatrix<T>, k: &CsrMatrix<T>, p: &AlphaParams<T>, dt: T) -> Result<CsrMatrix<T>> {
    let one = T::one();
    CsrMatrix::linear_combination(&[(one - p.alpha_m, m), (p.gamma * (one - p.alpha_f) * dt, c), (p.beta * (one - p.alpha_f) * dt * dt, k)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateOptions<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for StateOptions<T> {
    fn default() -> Self {
        StateOptions { tol: T::lit(1e-6), max_iter: 50 }
    }
}

/// Inner iteration counts per step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: Vec<usize>,
}

impl SolveStats {
    pub fn mean(&self) -> f64 {
        if self.iterations.is_empty() {
            0.0
        } else {
            self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
        }
    }

    pub fn max(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }
}

/// `(M + A₂, C + A₁)`: the absorbing terms are linear and enter the scheme like mass and
/// damping, which leaves only the tensor term to the fixed-point iteration.
pub fn absorbed_matrices<T: Real, S: SecondOrderSystem<T> + ?Sized>(sys: &S) -> Result<(CsrMatrix<T>, CsrMatrix<T>)> {
    match sys.absorbing() {
        Some((a1, a2)) => Ok((
            CsrMatrix::linear_combination(&[(T::one(), sys.mass()), (T::one(), a2)])?,
            CsrMatrix::linear_combination(&[(T::one(), sys.damping()), (T::one(), a1)])?,
        )),
        None => Ok((sys.mass().clone(), sys.damping().clone())),
    }
}

/// One-step map of the generalized-α scheme with a factorized effective mass.
pub struct Stepper<'a, T, S: ?Sized> {
    sys: &'a S,
    params: AlphaParams<T>,
    dt: T,
    opts: StateOptions<T>,
    m: CsrMatrix<T>,
    c: CsrMatrix<T>,
    lu: BandedLu<T>,
}

impl<'a, T: Real, S: SecondOrderSystem<T> + ?Sized> Stepper<'a, T, S> {
    pub fn new(sys: &'a S, params: AlphaParams<T>, dt: T, opts: StateOptions<T>) -> Result<Self> {
        params.validate()?;
        let (m, c) = absorbed_matrices(sys)?;
        let mbar = effective_mass(&m, &c, sys.stiffness(), &params, dt)?;
        let lu = BandedLu::factor(&mbar)?;
        Ok(Stepper { sys, params, dt, opts, m, c, lu })
    }

    /// Advances `(u, v, a)` from `t_n` to `t_n + Δt`; returns the inner iteration count.
    pub fn step(&self, step: usize, t_n: T, u: &mut Vec<T>, v: &mut Vec<T>, a: &mut Vec<T>) -> Result<usize> {
        let AlphaParams { alpha_m: am, alpha_f: af, beta, gamma } = self.params;
        let (dt, one, half) = (self.dt, T::one(), T::lit(0.5));
        let n = u.len();
        let sys = self.sys;
        let mut up = u.clone();
        axpy(dt, v, &mut up);
        axpy(half * dt * dt * (one - T::lit(2.0) * beta), a, &mut up);
        let mut vp = v.clone();
        axpy((one - gamma) * dt, a, &mut vp);

        let mut base = vec![T::zero(); n];
        sys.load((one - af) * (t_n + dt) + af * t_n, &mut base);
        let mix = |x: &[T], y: &[T], s: T| -> Vec<T> { x.iter().zip(y).map(|(&p, &q)| (one - s) * p + s * q).collect() };
        let ku = sys.stiffness().mul_vec(&mix(&up, u, af));
        let cv = self.c.mul_vec(&mix(&vp, v, af));
        let ma = self.m.mul_vec(a);
        for i in 0..n {
            base[i] -= ku[i] + cv[i] + am * ma[i];
        }

        let nonlinear = sys.is_nonlinear();
        let mut acc = a.clone();
        let mut un = up.clone();
        let mut vn = vp.clone();
        let mut last_change = f64::INFINITY;
        for it in 1..=self.opts.max_iter {
            let mut rhs = base.clone();
            if nonlinear {
                let u_af = mix(&un, u, af);
                let v_af = mix(&vn, v, af);
                let a_am = mix(&acc, a, am);
                let t1 = sys.tensor(&v_af, &v_af)?;
                let t2 = sys.tensor(&u_af, &a_am)?;
                for i in 0..n {
                    rhs[i] += t1[i] + t2[i];
                }
            }
            let next = self.lu.solve(&rhs)?;
            if !all_finite(&next) {
                return Err(Error::NonFinite { solver: "state", step });
            }
            let norm = norm2(&next);
            let diff: Vec<T> = next.iter().zip(&acc).map(|(&x, &y)| x - y).collect();
            let change = if norm < T::lit(1e-30) { T::zero() } else { norm2(&diff) / norm };
            last_change = change.as_f64();
            acc = next;
            for i in 0..n {
                un[i] = up[i] + beta * dt * dt * acc[i];
                vn[i] = vp[i] + gamma * dt * acc[i];
            }
            if !nonlinear || change <= self.opts.tol {
                *u = un;
                *v = vn;
                *a = acc;
                return Ok(it);
            }
        }
        Err(Error::StepFailure { solver: "state", step, iterations: self.opts.max_iter, last_change })
    }
}

/// Consistent initial acceleration from `(M + A₂) ẍ₀ = F₀` with zero initial data.
pub fn initial_acceleration<T: Real, S: SecondOrderSystem<T> + ?Sized>(sys: &S, t0: T) -> Result<Vec<T>> {
    let n = sys.mass().nrows();
    let mut f = vec![T::zero(); n];
    sys.load(t0, &mut f);
    if f.iter().all(|&x| x == T::zero()) {
        return Ok(f);
    }
    BandedLu::factor(&absorbed_matrices(sys)?.0)?.solve(&f)
}

/// Runs the forward solve from zero initial data over the whole grid.
pub fn solve_state<T: Real, S: SecondOrderSystem<T> + ?Sized>(
    sys: &S,
    grid: &TimeGrid<T>,
    params: &AlphaParams<T>,
    opts: &StateOptions<T>,
) -> Result<(TimeSeriesField<T>, SolveStats)> {
    let n = sys.mass().nrows();
    let stepper = Stepper::new(sys, *params, grid.dt(), *opts)?;
    let mut u = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut a = initial_acceleration(sys, T::zero())?;
    let mut field =
        TimeSeriesField { grid: *grid, x: Vec::with_capacity(grid.n_steps), xd: Vec::with_capacity(grid.n_steps), xdd: Vec::with_capacity(grid.n_steps) };
    field.x.push(u.clone());
    field.xd.push(v.clone());
    field.xdd.push(a.clone());
    let mut stats = SolveStats::default();
    for s in 0..grid.n_steps - 1 {
        let it = stepper.step(s + 1, grid.time(s), &mut u, &mut v, &mut a)?;
        stats.iterations.push(it);
        field.x.push(u.clone());
        field.xd.push(v.clone());
        field.xdd.push(a.clone());
    }
    log::debug!("state solve: {} steps, mean {:.2} inner iterations", grid.n_steps - 1, stats.mean());
    Ok((field, stats))
}
