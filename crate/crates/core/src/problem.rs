//! The lens design problem: geometry, physics, time grid and target bundled together.

use crate::adjoint::{solve_adjoint, AdjointParams};
use crate::assembly::{AssembledSystem, Excitation, Materials, TrackingBox};
use crate::domain::{build_lens_domain, DomainParams, MultiPatchDomain, Refinement};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_shape, check_feasible, design_dofs, shape_velocity, update_boundary, DesignDof, FeasibilityReport, LensShape, Moving, ThicknessConstraint,
};
use crate::gradient::{cost, shape_gradient_boundary, shape_gradient_volume, ShapeGradient};
use crate::optimizer::ShapeProblem;
use crate::scalar::Real;
use crate::state::{solve_state, AlphaParams, SolveStats, StateOptions, TimeGrid, TimeSeriesField};
use crate::target::{add_noise, transfer_patch, TargetField};

/// Index of the patch that covers the tracking region.
pub const TRACKING_PATCH: usize = 5;

/// Which representation of the shape derivative feeds the descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientForm {
    /// Interface integral of the coefficient jumps.
    #[default]
    Boundary,
    /// Domain integral against the Coons extension of each control-point velocity.
    Volume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setup<T> {
    pub params: DomainParams<T>,
    pub degree: usize,
    pub refinement: Refinement,
    pub materials: Materials<T>,
    pub excitation: Excitation<T>,
    pub grid: TimeGrid<T>,
    pub alpha: AlphaParams<T>,
    pub state: StateOptions<T>,
    pub adjoint: AdjointParams<T>,
    pub moving: Moving,
    pub thickness: ThicknessConstraint<T>,
    pub gradient: GradientForm,
    /// Box inside the tracking patch; the whole patch when `None`.
    pub tracking: Option<TrackingBox<T>>,
}

impl<T: Real> Setup<T> {
    pub fn domain(&self) -> Result<MultiPatchDomain<T>> {
        build_lens_domain(&self.params, self.degree, &self.refinement)
    }

    pub fn assemble(&self, domain: &MultiPatchDomain<T>) -> Result<AssembledSystem<T>> {
        let patch = TrackingBox::of_patch(domain, TRACKING_PATCH);
        let tracking = match self.tracking {
            Some(b) if b.x[0] >= patch.x[0] && b.x[1] <= patch.x[1] && b.y[0] >= patch.y[0] && b.y[1] <= patch.y[1] && !b.is_empty() => b,
            Some(b) => {
                return Err(Error::Config(format!(
                    "tracking box [{}, {}] x [{}, {}] must be non-empty and lie inside [{}, {}] x [{}, {}]",
                    b.x[0], b.x[1], b.y[0], b.y[1], patch.x[0], patch.x[1], patch.y[0], patch.y[1]
                )))
            }
            None => patch,
        };
        AssembledSystem::assemble(domain, &self.materials, self.excitation, tracking)
    }

    /// Forward solution on the setup's own geometry.
    pub fn simulate(&self) -> Result<(MultiPatchDomain<T>, AssembledSystem<T>, TimeSeriesField<T>, SolveStats)> {
        let domain = self.domain()?;
        let sys = self.assemble(&domain)?;
        let (u, stats) = solve_state(&sys, &self.grid, &self.alpha, &self.state)?;
        Ok((domain, sys, u, stats))
    }
}

/// Synthetic tracking data: the goal geometry is solved on a mesh refined `factor` times and
/// with `factor` times more time steps, transferred to the coarse tracking patch, and
/// polluted with Gaussian noise of relative size `noise`.
pub fn synthetic_target<T: Real>(setup: &Setup<T>, goal: &DomainParams<T>, factor: usize, noise: T, seed: u64) -> Result<TargetField<T>> {
    if factor == 0 {
        return Err(Error::Config("refinement factor of the synthetic data must be at least 1".into()));
    }
    let mut fine = setup.clone();
    fine.params = *goal;
    fine.refinement = setup.refinement.scaled(factor);
    fine.grid = TimeGrid::new(setup.grid.t_final, (setup.grid.n_steps - 1) * factor + 1)?;
    let (fine_domain, _, u, _) = fine.simulate()?;
    let coarse = setup.domain()?;
    let coarse_sys = setup.assemble(&coarse)?;
    let every: Vec<Vec<T>> = u.x.iter().step_by(factor).cloned().collect();
    let mut values = transfer_patch(&fine_domain, &coarse, &coarse_sys, TRACKING_PATCH, &every)?;
    let dofs: Vec<usize> = {
        let mut d = coarse.dofs.local_to_global[TRACKING_PATCH].clone();
        d.sort_unstable();
        d.dedup();
        d
    };
    add_noise(&mut values, &dofs, noise, seed)?;
    Ok(TargetField::Stored { grid: setup.grid, values })
}

/// State solution and cost for one shape.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub domain: MultiPatchDomain<T>,
    pub sys: AssembledSystem<T>,
    pub state: TimeSeriesField<T>,
    pub stats: SolveStats,
    pub cost: T,
}

pub struct LensProblem<T> {
    pub setup: Setup<T>,
    pub base: MultiPatchDomain<T>,
    pub dofs: Vec<DesignDof>,
    pub target: Vec<Vec<T>>,
    pub goal: Option<LensShape<T>>,
}

impl<T: Real> LensProblem<T> {
    pub fn new(setup: Setup<T>, target: &TargetField<T>) -> Result<Self> {
        let base = setup.domain()?;
        let sys = setup.assemble(&base)?;
        let target = target.history(&base, &sys, TRACKING_PATCH, &setup.grid)?;
        let dofs = design_dofs(&base, setup.moving)?;
        Ok(LensProblem { setup, base, dofs, target, goal: None })
    }

    /// Records the goal lens so shape errors can be reported.
    pub fn with_goal(mut self, goal: &DomainParams<T>) -> Result<Self> {
        let d = build_lens_domain(goal, self.setup.degree, &self.setup.refinement)?;
        self.goal = Some(LensShape::from_domain(&d)?);
        Ok(self)
    }

    pub fn initial_shape(&self) -> Result<LensShape<T>> {
        LensShape::from_domain(&self.base)
    }

    pub fn domain_for(&self, shape: &LensShape<T>) -> Result<MultiPatchDomain<T>> {
        apply_shape(&self.base, shape)
    }

    pub fn feasibility(&self, shape: &LensShape<T>) -> Result<FeasibilityReport> {
        check_feasible(shape, &self.setup.thickness, self.setup.params.s)
    }

    pub fn evaluate(&self, shape: &LensShape<T>) -> Result<Evaluation<T>> {
        let domain = self.domain_for(shape)?;
        let sys = self.setup.assemble(&domain)?;
        let (state, stats) = solve_state(&sys, &self.setup.grid, &self.setup.alpha, &self.setup.state)?;
        let j = cost(&state, &self.target, &sys.md)?;
        Ok(Evaluation { domain, sys, state, stats, cost: j })
    }

    /// Like [`evaluate`](Self::evaluate), but reuses a stored forward history when one is given.
    pub fn evaluate_with(&self, shape: &LensShape<T>, state: Option<TimeSeriesField<T>>) -> Result<Evaluation<T>> {
        let Some(state) = state else { return self.evaluate(shape) };
        let domain = self.domain_for(shape)?;
        let sys = self.setup.assemble(&domain)?;
        if state.grid != self.setup.grid || state.n_dofs() != sys.n() {
            return Err(Error::Precondition(format!(
                "stored forward history has {} steps of size {}, the run needs {} of size {}",
                state.grid.n_steps,
                state.n_dofs(),
                self.setup.grid.n_steps,
                sys.n()
            )));
        }
        let j = cost(&state, &self.target, &sys.md)?;
        Ok(Evaluation { domain, sys, state, stats: SolveStats::default(), cost: j })
    }

    /// Adjoint solve and shape gradient at an evaluated shape, in the setup's form.
    pub fn gradient(&self, eval: &Evaluation<T>) -> Result<(ShapeGradient<T>, TimeSeriesField<T>, SolveStats)> {
        let (p, stats) = solve_adjoint(&eval.sys, &eval.sys.md, &eval.state, &self.target, &self.setup.adjoint)?;
        let g = match self.setup.gradient {
            GradientForm::Boundary => shape_gradient_boundary(&eval.domain, &self.setup.materials, &eval.state, &p, &self.dofs)?,
            GradientForm::Volume => self.volume_gradient(eval, &p)?,
        };
        Ok((g, p, stats))
    }

    /// Volume form for every movable dof; pinned dofs get zero.
    pub fn volume_gradient(&self, eval: &Evaluation<T>, p: &TimeSeriesField<T>) -> Result<ShapeGradient<T>> {
        let shape = LensShape::from_domain(&eval.domain)?;
        let mut values = Vec::with_capacity(self.dofs.len());
        for d in &self.dofs {
            if d.pinned {
                values.push(T::zero());
                continue;
            }
            let theta = shape_velocity(&eval.domain, &shape, d)?;
            values.push(shape_gradient_volume(&eval.sys, &eval.state, p, &theta)?);
        }
        Ok(ShapeGradient { dofs: self.dofs.clone(), values })
    }

    pub fn shape_error(&self, shape: &LensShape<T>) -> Result<Option<T>> {
        match &self.goal {
            Some(g) => Ok(Some(crate::geometry::shape_error_l2(shape, g, &self.dofs)?)),
            None => Ok(None),
        }
    }

    /// Central difference of the cost in the direction of one design dof.
    pub fn finite_difference(&self, shape: &LensShape<T>, dof: usize, tau: T) -> Result<T> {
        let mut e = vec![T::zero(); self.dofs.len()];
        e[dof] = -T::one();
        let plus = update_boundary(shape, &self.dofs, &e, tau)?;
        let minus = update_boundary(shape, &self.dofs, &e, -tau)?;
        let jp = self.evaluate(&plus)?.cost;
        let jm = self.evaluate(&minus)?.cost;
        Ok((jp - jm) / (T::lit(2.0) * tau))
    }
}

impl<T: Real> ShapeProblem<T> for LensProblem<T> {
    type Shape = LensShape<T>;
    type Eval = Evaluation<T>;

    fn cost(&self, shape: &LensShape<T>) -> Result<(T, Evaluation<T>)> {
        let e = self.evaluate(shape)?;
        Ok((e.cost, e))
    }

    fn gradient(&self, _shape: &LensShape<T>, eval: &Evaluation<T>) -> Result<Vec<T>> {
        let (g, _, stats) = LensProblem::gradient(self, eval)?;
        log::debug!("adjoint: mean {:.2} inner iterations", stats.mean());
        Ok(g.movable())
    }

    fn update(&self, shape: &LensShape<T>, grad: &[T], alpha: T) -> Result<LensShape<T>> {
        update_boundary(shape, &self.dofs, grad, alpha)
    }

    fn infeasibility(&self, shape: &LensShape<T>) -> Result<Option<String>> {
        let rep = self.feasibility(shape)?;
        if !rep.is_feasible() {
            return Ok(Some(rep.violations.join("; ")));
        }
        match self.domain_for(shape) {
            Ok(_) => Ok(None),
            Err(e @ (Error::DegenerateGeometry { .. } | Error::Conformity(_))) => Ok(Some(e.to_string())),
            Err(e) => Err(e),
        }
    }

    fn shape_error(&self, shape: &LensShape<T>) -> Result<Option<T>> {
        LensProblem::shape_error(self, shape)
    }
}
