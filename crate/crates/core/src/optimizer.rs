//! Gradient descent on the lens boundary with accept-if-better step control.
//!
//! The step is parametrized by its size in the design space, `η = m · base`, and the descent
//! step applied to the gradient is `α = η / ‖∇J‖`. Rejections halve `m`, an accepted step
//! whose predecessor needed no repetition doubles it.

use crate::error::{Error, Result};
use crate::scalar::{norm2, Real};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptConfig {
    pub s_max: usize,
    /// Stop once `‖∇J‖ / ‖∇J₀‖` falls below this.
    pub tol_grad: f64,
    /// Stop once the step size `η` falls below this after a rejection.
    pub tol_step: f64,
    /// Initial step size `η₀` in metres of boundary displacement.
    pub base: f64,
    pub grow: f64,
    pub shrink: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig { s_max: 30, tol_grad: 1e-4, tol_step: 1e-8, base: 1e-3, grow: 2.0, shrink: 0.5 }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("optimizer: {m}")));
        if !(self.base > 0.0 && self.base.is_finite()) {
            return bad("base step must be positive");
        }
        if !(self.tol_step >= 0.0 && self.tol_step < self.base) {
            return bad("tol_step must lie in [0, base)");
        }
        if !(self.tol_grad >= 0.0) {
            return bad("tol_grad must be non-negative");
        }
        if !(self.grow > 1.0 && self.grow.is_finite()) {
            return bad("grow factor must exceed 1");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink factor must lie in (0, 1)");
        }
        Ok(())
    }
}

/// What the descent loop needs from a design problem.
pub trait ShapeProblem<T: Real> {
    type Shape: Clone;
    /// Whatever the gradient computation reuses from the cost evaluation.
    type Eval;

    fn cost(&self, shape: &Self::Shape) -> Result<(T, Self::Eval)>;
    /// One entry per design variable; fixed variables carry zero.
    fn gradient(&self, shape: &Self::Shape, eval: &Self::Eval) -> Result<Vec<T>>;
    /// `shape - alpha * grad` on the free variables.
    fn update(&self, shape: &Self::Shape, grad: &[T], alpha: T) -> Result<Self::Shape>;
    /// `Some(reason)` when the shape violates a design constraint.
    fn infeasibility(&self, shape: &Self::Shape) -> Result<Option<String>>;
    fn shape_error(&self, _shape: &Self::Shape) -> Result<Option<T>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ZeroGradient,
    GradientTolerance,
    StepTolerance,
    MaxSteps,
}

/// One outer iteration: the iterate's cost and gradient, then the step that left it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub step: usize,
    pub cost: T,
    pub rel_cost: T,
    pub grad_norm: T,
    pub rel_grad: T,
    /// Step size of the last trial from this iterate; zero when none was tried.
    pub eta: T,
    pub alpha: T,
    pub accepted: bool,
    pub repeats: usize,
    pub shape_error: Option<T>,
}

#[derive(Debug, Clone)]
pub struct OptimizationHistory<T, S> {
    pub records: Vec<IterationRecord<T>>,
    /// Iterate `s` for every record.
    pub shapes: Vec<S>,
    pub stop: StopReason,
}

impl<T: Real, S> OptimizationHistory<T, S> {
    pub fn accepted_steps(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }

    pub fn final_shape(&self) -> &S {
        self.shapes.last().expect("history holds the initial shape")
    }

    pub fn final_cost(&self) -> T {
        self.records.last().map(|r| r.cost).unwrap_or_else(T::zero)
    }
}

fn rejects_trial(e: &Error) -> bool {
    matches!(e, Error::DegenerateGeometry { .. } | Error::Infeasible(_) | Error::Conformity(_))
}

/// Runs the descent loop from `initial`.
pub fn optimize<T: Real, P: ShapeProblem<T>>(problem: &P, initial: P::Shape, cfg: &OptConfig) -> Result<OptimizationHistory<T, P::Shape>> {
    cfg.validate()?;
    if let Some(why) = problem.infeasibility(&initial)? {
        return Err(Error::Infeasible(format!("initial lens: {why}")));
    }
    let (base, grow, shrink, tol_step) = (T::lit(cfg.base), T::lit(cfg.grow), T::lit(cfg.shrink), T::lit(cfg.tol_step));
    let mut shape = initial;
    let (mut j, mut eval) = problem.cost(&shape)?;
    let (j0, mut g0) = (j, None::<T>);
    let mut multiplier = T::one();
    let mut previous_repeats = 0usize;
    let mut records = Vec::new();
    let mut shapes = Vec::new();
    let mut s = 0usize;
    let stop = loop {
        let grad = problem.gradient(&shape, &eval)?;
        let gn = norm2(&grad);
        let g0v = *g0.get_or_insert(gn);
        let ratio = |a: T, b: T| if b > T::zero() { a / b } else { T::zero() };
        let mut rec = IterationRecord {
            step: s,
            cost: j,
            rel_cost: ratio(j, j0),
            grad_norm: gn,
            rel_grad: ratio(gn, g0v),
            eta: T::zero(),
            alpha: T::zero(),
            accepted: false,
            repeats: 0,
            shape_error: problem.shape_error(&shape)?,
        };
        log::info!("step {s}: J = {:.6e} ({:.4e} of J0), |grad J| = {:.6e}", j.as_f64(), rec.rel_cost.as_f64(), gn.as_f64());
        let reason = if gn == T::zero() {
            Some(StopReason::ZeroGradient)
        } else if gn < T::lit(cfg.tol_grad) * g0v {
            Some(StopReason::GradientTolerance)
        } else if s >= cfg.s_max {
            Some(StopReason::MaxSteps)
        } else {
            None
        };
        if let Some(r) = reason {
            records.push(rec);
            shapes.push(shape);
            break r;
        }

        let mut repeats = 0usize;
        let outcome = loop {
            let eta = multiplier * base;
            let alpha = eta / gn;
            rec.eta = eta;
            rec.alpha = alpha;
            let trial = problem.update(&shape, &grad, alpha)?;
            let verdict = match problem.infeasibility(&trial)? {
                Some(why) => Err(why),
                None => match problem.cost(&trial) {
                    Ok((jt, et)) if jt <= j => Ok((jt, et)),
                    Ok((jt, _)) => Err(format!("cost {:.6e} above {:.6e}", jt.as_f64(), j.as_f64())),
                    Err(e) if rejects_trial(&e) => Err(e.to_string()),
                    Err(e) => return Err(e),
                },
            };
            match verdict {
                Ok((jt, et)) => break Some((trial, jt, et)),
                Err(why) => {
                    log::debug!("step {s}: trial with eta = {:.3e} rejected: {why}", eta.as_f64());
                    repeats += 1;
                    multiplier *= shrink;
                    if multiplier * base < tol_step {
                        break None;
                    }
                }
            }
        };
        rec.repeats = repeats;
        match outcome {
            Some((trial, jt, et)) => {
                rec.accepted = true;
                if previous_repeats == 0 {
                    multiplier *= grow;
                }
                previous_repeats = repeats;
                records.push(rec);
                shapes.push(std::mem::replace(&mut shape, trial));
                j = jt;
                eval = et;
                s += 1;
            }
            None => {
                records.push(rec);
                shapes.push(shape);
                break StopReason::StepTolerance;
            }
        }
    };
    log::info!("optimization stopped after {} accepted steps: {stop:?}", records.iter().filter(|r| r.accepted).count());
    Ok(OptimizationHistory { records, shapes, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    /// `J(x) = Σ c_i (x_i - t_i)²`, with an optional box that marks shapes infeasible.
    struct Quadratic {
        c: Vec<f64>,
        target: Vec<f64>,
        limit: Option<f64>,
        flip: bool,
        trials: RefCell<Vec<f64>>,
    }

    impl Quadratic {
        fn new(c: Vec<f64>, target: Vec<f64>) -> Self {
            Quadratic { c, target, limit: None, flip: false, trials: RefCell::new(Vec::new()) }
        }
    }

    impl ShapeProblem<f64> for Quadratic {
        type Shape = Vec<f64>;
        type Eval = ();

        fn cost(&self, x: &Vec<f64>) -> Result<(f64, ())> {
            Ok((x.iter().zip(&self.c).zip(&self.target).map(|((x, c), t)| c * (x - t) * (x - t)).sum(), ()))
        }

        fn gradient(&self, x: &Vec<f64>, _: &()) -> Result<Vec<f64>> {
            let s = if self.flip { -1.0 } else { 1.0 };
            Ok(x.iter().zip(&self.c).zip(&self.target).map(|((x, c), t)| s * 2.0 * c * (x - t)).collect())
        }

        fn update(&self, x: &Vec<f64>, g: &[f64], alpha: f64) -> Result<Vec<f64>> {
            self.trials.borrow_mut().push(alpha * norm2(g));
            Ok(x.iter().zip(g).map(|(x, g)| x - alpha * g).collect())
        }

        fn infeasibility(&self, x: &Vec<f64>) -> Result<Option<String>> {
            Ok(match self.limit {
                Some(l) if x.iter().any(|v| v.abs() > l) => Some("outside box".into()),
                _ => None,
            })
        }
    }

    fn cfg() -> OptConfig {
        OptConfig { s_max: 200, tol_grad: 1e-6, tol_step: 1e-12, base: 0.1, grow: 2.0, shrink: 0.5 }
    }

    #[test]
    fn zero_gradient_stops_immediately() {
        let p = Quadratic::new(vec![1.0, 2.0], vec![0.5, -0.5]);
        let h = optimize(&p, vec![0.5, -0.5], &cfg()).unwrap();
        assert_eq!(h.stop, StopReason::ZeroGradient);
        assert_eq!(h.accepted_steps(), 0);
        assert_eq!(h.records.len(), 1);
        assert!(p.trials.borrow().is_empty());
    }

    #[test]
    fn converges_on_a_quadratic_with_monotone_cost() {
        let p = Quadratic::new(vec![1.0, 4.0, 0.5], vec![0.3, -0.2, 1.0]);
        let h = optimize(&p, vec![0.0; 3], &cfg()).unwrap();
        assert_eq!(h.stop, StopReason::GradientTolerance);
        let costs: Vec<f64> = h.records.iter().map(|r| r.cost).collect();
        assert!(costs.windows(2).all(|w| w[1] <= w[0]));
        let x = h.final_shape();
        assert!(x.iter().zip(&p.target).all(|(a, b)| (a - b).abs() < 1e-6), "{x:?}");
    }

    #[test]
    fn step_control_shrinks_after_rejection_and_grows_after_clean_steps() {
        let p = Quadratic::new(vec![1.0, 4.0], vec![0.3, -0.2]);
        let h = optimize(&p, vec![0.0; 2], &cfg()).unwrap();
        let etas = p.trials.borrow().clone();
        let mut k = 0;
        let mut previous_repeats = 0;
        for r in &h.records {
            if r.eta == 0.0 {
                break;
            }
            // trials within one iteration shrink strictly
            for i in 0..r.repeats {
                assert!(etas[k + i + 1] < etas[k + i]);
            }
            k += r.repeats + 1;
            if r.accepted && previous_repeats == 0 && k < etas.len() {
                assert!(etas[k] > etas[k - 1], "record {}: {} then {}", r.step, etas[k - 1], etas[k]);
            }
            previous_repeats = r.repeats;
        }
        assert!(h.records.iter().any(|r| r.repeats > 0));
    }

    #[test]
    fn ascent_direction_ends_on_step_tolerance_and_keeps_the_shape() {
        let mut p = Quadratic::new(vec![1.0], vec![1.0]);
        p.flip = true;
        let h = optimize(&p, vec![0.0], &cfg()).unwrap();
        assert_eq!(h.stop, StopReason::StepTolerance);
        assert_eq!(h.accepted_steps(), 0);
        assert_eq!(h.final_shape(), &vec![0.0]);
        assert!(p.trials.borrow().last().unwrap() * 0.5 < cfg().tol_step);
    }

    #[test]
    fn infeasible_trials_are_rejected() {
        let mut p = Quadratic::new(vec![1.0], vec![1.0]);
        p.limit = Some(0.25);
        let h = optimize(&p, vec![0.0], &cfg()).unwrap();
        assert!(h.final_shape()[0] <= 0.25);
        assert!(h.records.iter().any(|r| r.repeats > 0));
        assert!(optimize(&p, vec![0.5], &cfg()).is_err());
    }

    #[test]
    fn max_steps_bounds_the_run() {
        let p = Quadratic::new(vec![1.0], vec![1.0]);
        let h = optimize(&p, vec![0.0], &OptConfig { s_max: 3, ..cfg() }).unwrap();
        assert_eq!(h.stop, StopReason::MaxSteps);
        assert_eq!(h.records.len(), 4);
        assert_eq!(h.shapes.len(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(OptConfig::default().validate().is_ok());
        assert!(OptConfig { grow: 1.0, ..Default::default() }.validate().is_err());
        assert!(OptConfig { shrink: 1.0, ..Default::default() }.validate().is_err());
        assert!(OptConfig { tol_step: 1e-2, ..Default::default() }.validate().is_err());
    }
}
