use proptest::prelude::*;

use lensopt::adjoint::solve_adjoint;
use lensopt::assembly::{element_data, AssembledSystem, Excitation, Materials, TrackingBox};
use lensopt::config::RunConfig;
use lensopt::domain::{build_lens_domain, DomainParams, EdgeTag, InterfaceDecl, MultiPatchDomain, Refinement, Region, Side};
use lensopt::geometry::{apply_shape, coons_update, design_dofs, shape_velocity, update_boundary, LensShape, Moving};
use lensopt::gradient::{shape_gradient_boundary, shape_gradient_volume};
use lensopt::io::Manifest;
use lensopt::nurbs::{KnotVector, NurbsPatch, TensorBasis};
use lensopt::optimizer::{optimize, OptConfig, ShapeProblem, StopReason};
use lensopt::problem::{LensProblem, TRACKING_PATCH};
use lensopt::run::{build_problem, simulate, RunOptions};
use lensopt::state::SecondOrderSystem;
use lensopt::target::{project_on_patch, Gaussian};
use lensopt::Result;

fn small_config() -> RunConfig {
    RunConfig::parse(
        r#"
        [refinement]
        grouped = [6, 2, 6, 2, 5, 5]
        [excitation]
        frequency = 35e3
        [time]
        n_steps = 201
        [state]
        alpha_m = 0.0
        alpha_f = 0.0
        beta = 0.25
        gamma = 0.5
        tol = 1e-10
        [adjoint]
        tol = 1e-10
        [target]
        kind = "gaussian"
        [output]
        probes = [[0.0, 0.1]]
        "#,
    )
    .expect("valid config")
}

fn lens(g: [usize; 6], q: usize) -> MultiPatchDomain<f64> {
    build_lens_domain(&DomainParams::upper_curved(), q, &Refinement::grouped(g[0], g[1], g[2], g[3], g[4], g[5])).expect("lens domain")
}

fn refinement() -> impl Strategy<Value = [usize; 6]> {
    [1usize..4, 1usize..3, 1usize..4, 1usize..3, 1usize..4, 1usize..3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn active_functions_fit_in_one_span(q in 1usize..=3, ne in 1usize..5, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let kv = KnotVector::uniform(q, ne).unwrap();
        let p = NurbsPatch::bilinear(1, TensorBasis::new(kv.clone(), kv), [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let b = p.eval_basis([x, y]).unwrap();
        let nonzero = b.values.iter().filter(|v| **v != 0.0).count();
        prop_assert!(nonzero <= (q + 1) * (q + 1));
    }

    #[test]
    fn multiplicity_counts_patch_copies(g in refinement(), q in 1usize..=2) {
        let d = lens(g, q);
        // Column g of E holds a one for every local copy of g, so (EᵀE)_gg counts the copies.
        let n = d.n_global();
        let mut ete = vec![0usize; n];
        let mut patches = vec![Vec::new(); n];
        for (p, l2g) in d.dofs.local_to_global.iter().enumerate() {
            for &g in l2g {
                ete[g] += 1;
                patches[g].push(p);
            }
        }
        prop_assert_eq!(&ete, &d.dofs.multiplicity());
        for (g, ps) in patches.iter_mut().enumerate() {
            ps.dedup();
            prop_assert!(ete[g] >= 1);
            if ps.len() > 1 {
                prop_assert!(ete[g] >= 2);
            }
        }
    }

    #[test]
    fn axis_edges_are_symmetry_edges(g in refinement()) {
        let d = lens(g, 2);
        for (k, p) in d.patches.iter().enumerate() {
            for side in Side::ALL {
                let pts: Vec<[f64; 2]> = lensopt::domain::side_dofs(p, side).iter().map(|&a| p.control[a]).collect();
                if pts.len() > 1 && pts.iter().all(|c| c[0] == 0.0) {
                    prop_assert_eq!(d.tag(k, side), EdgeTag::Symmetry);
                }
            }
        }
    }

    #[test]
    fn updates_keep_the_mesh_valid(g in refinement(), seed in proptest::collection::vec(-1.0f64..1.0, 16), alpha in 0.0f64..2e-3) {
        let d = lens(g, 2);
        let shape = LensShape::from_domain(&d).unwrap();
        let dofs = design_dofs(&d, Moving::Both).unwrap();
        let grad: Vec<f64> = dofs.iter().enumerate().map(|(i, _)| seed[i % seed.len()]).collect();
        let moved = update_boundary(&shape, &dofs, &grad, alpha).unwrap();
        let nd = apply_shape(&d, &moved).unwrap();
        prop_assert!(nd.check_conformity().is_ok());
        prop_assert!(element_data(&nd).is_ok());
    }

    #[test]
    fn coons_update_is_idempotent(ne in 1usize..4, bumps in proptest::collection::vec(-0.2f64..0.2, 8)) {
        let kv = KnotVector::uniform(2, ne).unwrap();
        let p = NurbsPatch::bilinear(1, TensorBasis::new(kv.clone(), kv), [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let (n1, n2) = (p.n1(), p.n2());
        let at = |i1: usize, i2: usize| p.control_point(i1, i2);
        let bend = |c: [f64; 2], k: usize, t: f64| [c[0] + bumps[k] * t * (1.0 - t), c[1] + bumps[k + 4] * t * (1.0 - t)];
        let s = |i: usize, n: usize| i as f64 / (n - 1) as f64;
        let bottom: Vec<_> = (0..n1).map(|i| bend(at(i, 0), 0, s(i, n1))).collect();
        let top: Vec<_> = (0..n1).map(|i| bend(at(i, n2 - 1), 1, s(i, n1))).collect();
        let left: Vec<_> = (0..n2).map(|j| bend(at(0, j), 2, s(j, n2))).collect();
        let right: Vec<_> = (0..n2).map(|j| bend(at(n1 - 1, j), 3, s(j, n2))).collect();
        let once = coons_update(&p, &bottom, &top, &left, &right).unwrap();
        let twice = coons_update(&once, &bottom, &top, &left, &right).unwrap();
        for (a, b) in once.control.iter().zip(&twice.control) {
            prop_assert!((a[0] - b[0]).abs() <= 1e-15 && (a[1] - b[1]).abs() <= 1e-15);
        }
    }

    #[test]
    fn tracking_mass_grows_with_the_box(x1 in 0.005f64..0.02, grow in 0.0f64..0.02, y0 in 0.092f64..0.1, y1 in 0.1f64..0.118) {
        let d = lens([2, 1, 2, 1, 2, 2], 2);
        let m = Materials::table();
        let small = AssembledSystem::assemble(&d, &m, Excitation::Zero, TrackingBox { x: [0.0, x1], y: [y0, y1] }).unwrap();
        let large = AssembledSystem::assemble(&d, &m, Excitation::Zero, TrackingBox { x: [0.0, x1 + grow], y: [y0 - 0.001, y1] }).unwrap();
        for ((_, _, a), (_, _, b)) in small.md.entries().zip(large.md.entries()) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn descent_is_monotone_and_halts(c in proptest::collection::vec(0.5f64..4.0, 1..6), t in proptest::collection::vec(-1.0f64..1.0, 6)) {
        let toy = Quadratic { c: c.clone(), t: t[..c.len()].to_vec() };
        let cfg = OptConfig { base: 0.3, ..OptConfig::default() };
        let h = optimize(&toy, vec![0.0; c.len()], &cfg).unwrap();
        prop_assert!(h.records.len() <= cfg.s_max + 1);
        prop_assert!(h.records.windows(2).all(|w| w[1].cost <= w[0].cost));
        prop_assert!(matches!(h.stop, StopReason::ZeroGradient | StopReason::GradientTolerance | StopReason::StepTolerance | StopReason::MaxSteps));
    }

    #[test]
    fn manifest_keeps_the_config(seed in any::<u64>(), alpha_f in 0.0f64..0.5, noise in 0.0f64..0.1, steps in 2usize..5000, g0 in 1e6f64..1e10) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.state.alpha_f = alpha_f;
        cfg.target.noise = noise;
        cfg.time.n_steps = steps;
        cfg.excitation.g0 = g0;
        let m = Manifest::new("simulate", &cfg, true, 1).unwrap();
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        prop_assert_eq!(&back.config, &cfg);
        prop_assert_eq!(back.config.hash().unwrap(), m.config_hash);
    }
}

struct Quadratic {
    c: Vec<f64>,
    t: Vec<f64>,
}

impl ShapeProblem<f64> for Quadratic {
    type Shape = Vec<f64>;
    type Eval = ();

    fn cost(&self, x: &Vec<f64>) -> Result<(f64, ())> {
        Ok((x.iter().zip(&self.c).zip(&self.t).map(|((x, c), t)| c * (x - t).powi(2)).sum(), ()))
    }

    fn gradient(&self, x: &Vec<f64>, _: &()) -> Result<Vec<f64>> {
        Ok(x.iter().zip(&self.c).zip(&self.t).map(|((x, c), t)| 2.0 * c * (x - t)).collect())
    }

    fn update(&self, x: &Vec<f64>, g: &[f64], alpha: f64) -> Result<Vec<f64>> {
        Ok(x.iter().zip(g).map(|(x, g)| x - alpha * g).collect())
    }

    fn infeasibility(&self, _: &Vec<f64>) -> Result<Option<String>> {
        Ok(None)
    }
}

/// Boole's rule on each knot span: exact for the degree-4 products of quadratic splines.
fn boole(kv: &KnotVector<f64>, f: impl Fn(f64) -> f64) -> f64 {
    let b = kv.breakpoints();
    let mut s = 0.0;
    for w in b.windows(2) {
        let h = (w[1] - w[0]) / 4.0;
        let x = |k: f64| w[0] + k * h;
        s += 2.0 * h / 45.0 * (7.0 * f(x(0.0)) + 32.0 * f(x(1.0)) + 12.0 * f(x(2.0)) + 32.0 * f(x(3.0)) + 7.0 * f(x(4.0)));
    }
    s
}

#[test]
fn affine_patch_stiffness_matches_tensor_quadrature() {
    let (k1, k2) = (KnotVector::uniform(2, 3).unwrap(), KnotVector::uniform(2, 2).unwrap());
    let (a, b) = (2.0, 0.5);
    let p = NurbsPatch::bilinear(1, TensorBasis::new(k1.clone(), k2.clone()), [[0.0, 0.0], [a, 0.0], [0.0, b], [a, b]]).unwrap();
    let d = MultiPatchDomain::new(vec![p], vec![Region::Fluid], vec![[EdgeTag::Symmetry; 4]], vec![], vec![]).unwrap();
    let m = Materials::table();
    let sys = AssembledSystem::assemble(&d, &m, Excitation::Zero, TrackingBox { x: [0.0, 0.0], y: [0.0, 0.0] }).unwrap();
    let one_d = |kv: &KnotVector<f64>, i: usize, j: usize, di: bool, dj: bool| {
        boole(kv, |x| {
            let v = |d: bool, k: usize| if d { kv.eval_basis_deriv(x).unwrap()[k] } else { kv.eval_basis(x).unwrap()[k] };
            v(di, i) * v(dj, j)
        })
    };
    let c2 = m.fluid.c * m.fluid.c;
    let (n1, n2) = (k1.n_basis(), k2.n_basis());
    let mut worst = 0.0f64;
    let scale = sys.k.entries().fold(0.0f64, |s, (_, _, v): (usize, usize, f64)| s.max(v.abs()));
    for i in 0..n1 * n2 {
        for j in 0..n1 * n2 {
            let (i1, i2, j1, j2) = (i % n1, i / n1, j % n1, j / n1);
            let exact = c2
                * (one_d(&k1, i1, j1, true, true) * one_d(&k2, i2, j2, false, false) * b / a
                    + one_d(&k1, i1, j1, false, false) * one_d(&k2, i2, j2, true, true) * a / b);
            worst = worst.max((sys.k.get(i, j) - exact).abs() / scale);
        }
    }
    assert!(worst <= 1e-10, "relative error {worst:e}");
}

#[test]
fn global_matrices_are_transformed_patch_matrices() {
    let kv = KnotVector::uniform(2, 2).unwrap();
    let square = |i: usize| {
        let x0 = i as f64;
        NurbsPatch::bilinear(i + 1, TensorBasis::new(kv.clone(), kv.clone()), [[x0, 0.0], [x0 + 1.0, 0.0], [x0, 1.0 + 0.2 * x0], [x0 + 1.0, 1.2 + 0.2 * x0]])
            .unwrap()
    };
    let regions = [Region::Fluid, Region::Lens, Region::Fluid];
    let tags = [EdgeTag::Symmetry; 4];
    let glued = MultiPatchDomain::new(
        (0..3).map(square).collect(),
        regions.to_vec(),
        vec![tags; 3],
        (0..2).map(|i| InterfaceDecl::new((i, Side::Right), (i + 1, Side::Left))).collect(),
        vec![],
    )
    .unwrap();
    let m = Materials::table();
    let none = TrackingBox { x: [0.0, 0.0], y: [0.0, 0.0] };
    let global = AssembledSystem::assemble(&glued, &m, Excitation::Zero, none).unwrap();
    let n = glued.n_global();
    let (mut mm, mut kk) = (vec![vec![0.0; n]; n], vec![vec![0.0; n]; n]);
    for p in 0..3 {
        let single = MultiPatchDomain::new(vec![square(p)], vec![regions[p]], vec![tags], vec![], vec![]).unwrap();
        let local = AssembledSystem::assemble(&single, &m, Excitation::Zero, none).unwrap();
        let e = &glued.dofs.local_to_global[p];
        for (i, j, v) in local.m.entries() {
            mm[e[i]][e[j]] += v;
        }
        for (i, j, v) in local.k.entries() {
            kk[e[i]][e[j]] += v;
        }
    }
    for (direct, summed) in [(&global.m, &mm), (&global.k, &kk)] {
        let scale = direct.entries().fold(0.0f64, |s, (_, _, v): (usize, usize, f64)| s.max(v.abs()));
        for i in 0..n {
            for j in 0..n {
                assert!((direct.get(i, j) - summed[i][j]).abs() <= 1e-12 * scale, "entry ({i}, {j})");
            }
        }
    }
}

#[test]
fn linear_physics_needs_one_inner_solve() {
    let mut cfg = small_config();
    cfg.materials.fluid.b_over_a = -2.0;
    cfg.materials.lens.b_over_a = -2.0;
    let (_, _, u, stats) = cfg.setup::<f64>().unwrap().simulate().unwrap();
    assert_eq!(stats.max(), 1);
    assert!(u.max_abs() > 0.0);
}

#[test]
fn source_derivative_matches_adjoint_pairing() {
    let mut cfg = small_config();
    cfg.materials.fluid.b_over_a = -2.0;
    cfg.materials.lens.b_over_a = -2.0;
    let g0 = cfg.excitation.g0;
    let cost_at = |g: f64| {
        let mut c = cfg.clone();
        c.excitation.g0 = g;
        let p = build_problem(&c).unwrap();
        p.evaluate(&p.initial_shape().unwrap()).unwrap().cost
    };
    let h = 1e-4 * g0;
    let fd = (cost_at(g0 + h) - cost_at(g0 - h)) / (2.0 * h);
    let problem = build_problem(&cfg).unwrap();
    let eval = problem.evaluate(&problem.initial_shape().unwrap()).unwrap();
    let (_, p, _) = problem.gradient(&eval).unwrap();
    let grid = eval.state.grid;
    let mut f = vec![0.0; eval.sys.n()];
    let mut pairing = 0.0;
    for (n, w) in grid.trapezoid_weights().into_iter().enumerate() {
        eval.sys.load(grid.time(n), &mut f);
        pairing += w * f.iter().zip(&p.x[n]).map(|(a, b)| a * b).sum::<f64>();
    }
    let adj = pairing / g0;
    assert!((adj - fd).abs() <= 0.03 * fd.abs(), "fd {fd:e} adjoint {adj:e}");
}

#[test]
fn adjoint_settles_as_the_tolerance_tightens() {
    let cfg = small_config();
    let problem = build_problem(&cfg).unwrap();
    let eval = problem.evaluate(&problem.initial_shape().unwrap()).unwrap();
    let solve = |tol: f64| {
        let params = lensopt::adjoint::AdjointParams { tol, ..problem.setup.adjoint };
        solve_adjoint(&eval.sys, &eval.sys.md, &eval.state, &problem.target, &params).unwrap().0
    };
    let peaks: Vec<f64> = [1e-8, 1e-10, 1e-12].iter().map(|&t| solve(t).max_abs()).collect();
    assert!(peaks.iter().all(|p| p.is_finite() && *p > 0.0));
    let (d1, d2) = ((peaks[0] - peaks[1]).abs(), (peaks[1] - peaks[2]).abs());
    assert!(d1 <= 1e-8 * peaks[1], "peak moved by {d1:e} against {:e}", peaks[1]);
    assert!(d2 <= 0.1 * d1.max(1e-300), "tightening again moved the peak by {d2:e} after {d1:e}");
}

fn evaluated(cfg: &RunConfig) -> (LensProblem<f64>, lensopt::problem::Evaluation<f64>) {
    let problem = build_problem(cfg).unwrap();
    let eval = problem.evaluate(&problem.initial_shape().unwrap()).unwrap();
    (problem, eval)
}

#[test]
fn matching_data_gives_zero_gradient() {
    let cfg = small_config();
    let (problem, eval) = evaluated(&cfg);
    let (p, _) = solve_adjoint(&eval.sys, &eval.sys.md, &eval.state, &eval.state.x, &problem.setup.adjoint).unwrap();
    let g = shape_gradient_boundary(&eval.domain, &problem.setup.materials, &eval.state, &p, &problem.dofs).unwrap();
    assert!(g.values.iter().all(|v| *v == 0.0));
}

#[test]
fn domain_form_is_linear_in_the_deformation() {
    let cfg = small_config();
    let (problem, eval) = evaluated(&cfg);
    let (_, p, _) = problem.gradient(&eval).unwrap();
    let shape = LensShape::from_domain(&eval.domain).unwrap();
    let movable: Vec<_> = problem.dofs.iter().filter(|d| !d.pinned).collect();
    let t1 = shape_velocity(&eval.domain, &shape, movable[1]).unwrap();
    let t2 = shape_velocity(&eval.domain, &shape, movable[movable.len() / 2]).unwrap();
    let sum: Vec<[f64; 2]> = t1.iter().zip(&t2).map(|(a, b)| [a[0] + 2.5 * b[0], a[1] + 2.5 * b[1]]).collect();
    let g = |t: &[[f64; 2]]| shape_gradient_volume(&eval.sys, &eval.state, &p, t).unwrap();
    let (a, b, c) = (g(&t1), g(&t2), g(&sum));
    assert!((c - (a + 2.5 * b)).abs() <= 1e-10 * (a.abs() + 2.5 * b.abs()));
}

#[test]
fn axis_sensitivity_is_finite() {
    let cfg = small_config();
    let (problem, eval) = evaluated(&cfg);
    let (g, _, _) = problem.gradient(&eval).unwrap();
    let axis = problem.dofs.iter().position(|d| d.index == 0).unwrap();
    assert!(g.values[axis].is_finite());
    assert!(g.values.iter().all(|v| v.is_finite()));
}

#[test]
fn projected_gaussian_matches_point_values() {
    let params = DomainParams::gauss();
    let d = build_lens_domain(&params, 2, &Refinement::standard(2)).unwrap();
    let sys = AssembledSystem::assemble(&d, &Materials::table(), Excitation::Zero, TrackingBox::of_patch(&d, TRACKING_PATCH)).unwrap();
    let g = Gaussian::focus();
    let coeffs = project_on_patch(&d, &sys, TRACKING_PATCH, |x| g.value(x)).unwrap();
    let patch = &d.patches[TRACKING_PATCH];
    let mids = |k: usize| -> Vec<f64> { patch.basis.dirs[k].breakpoints().windows(2).map(|w| 0.5 * (w[0] + w[1])).collect() };
    let mut worst = 0.0f64;
    for &u in &mids(0) {
        for &v in &mids(1) {
            let b = patch.eval_basis([u, v]).unwrap();
            let x = patch.map_point([u, v]).unwrap();
            let val: f64 = b.indices.iter().zip(&b.values).map(|(&a, w)| w * coeffs[d.dofs.local_to_global[TRACKING_PATCH][a]]).sum();
            worst = worst.max((val - g.value(x)).abs() / g.amplitude);
        }
    }
    assert!(worst <= 0.02, "worst relative deviation {worst}");
}

#[test]
fn field_exports_are_bit_exact() {
    let mut cfg = small_config();
    cfg.output.snapshot_every = 50;
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b"].iter().map(|s| dir.path().join(s)).collect();
    for r in &runs {
        simulate(&cfg, &RunOptions::new(r), false).unwrap();
    }
    for name in ["state_final.csv", "state_probes.csv", "snapshots/state_000100.csv"] {
        let a = std::fs::read(runs[0].join(name)).unwrap();
        assert_eq!(a, std::fs::read(runs[1].join(name)).unwrap(), "{name}");
        assert!(String::from_utf8(a).unwrap().lines().count() > 1);
    }
}

#[test]
fn single_precision_pipeline_tracks_double() {
    let mut cfg = small_config();
    cfg.state.tol = 1e-6;
    let (_, _, u32_, _) = cfg.setup::<f32>().unwrap().simulate().unwrap();
    let (_, _, u64_, _) = cfg.setup::<f64>().unwrap().simulate().unwrap();
    let sq = |v: f64| v * v;
    let err: f64 = u32_.x.iter().flatten().zip(u64_.x.iter().flatten()).map(|(a, b)| sq(*a as f64 - b)).sum();
    let norm: f64 = u64_.x.iter().flatten().map(|b| sq(*b)).sum();
    assert!(u32_.x.iter().flatten().all(|v| v.is_finite()));
    assert!(norm > 0.0 && (err / norm).sqrt() <= 0.1, "relative deviation {:e}", (err / norm).sqrt());
}
