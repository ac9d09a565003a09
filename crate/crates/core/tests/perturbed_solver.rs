use num_complex::Complex64;
use pwguide::medium::{Bump, CellGrid, PeriodicMedium, Perturbation, Profile, SourceTerm, SupportBox};
use pwguide::modes::{build_atlas, ScanOptions};
use pwguide::perturbed_solver::{
    pde_residual, scatter_point_source, solve_perturbed, validate_monotonicity, PerturbedSolver,
};
use pwguide::radiating_solver::{GridSource, SolveParams, UnperturbedSolver};
use pwguide::special_fn::{green_halfplane, Point2, Wavenumber};
use pwguide::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C64 = Complex64;

const K: f64 = 0.6;

fn unperturbed(medium: PeriodicMedium, nx1: usize, nx2: usize, alpha_count: usize) -> UnperturbedSolver {
    let kw = Wavenumber::real(K).unwrap();
    let grid = CellGrid::with_default_trunc(nx1, nx2, K, medium.h).unwrap();
    let atlas = build_atlas(&kw, &medium, &grid, &ScanOptions { nodes: 32, ..Default::default() }).unwrap();
    let params = SolveParams { alpha_count, ..Default::default() };
    UnperturbedSolver::new(&kw, &medium, &grid, &atlas, &params).unwrap()
}

fn graded() -> PeriodicMedium {
    PeriodicMedium::new(Profile::Graded { a: 1.0, b: 0.5 }, 1.0, 1.0).unwrap()
}

fn source() -> SourceTerm {
    SourceTerm::new(Bump { amplitude: 1.0, center: (0.0, 0.5), radii: (1.2, 0.35) }, 1.0).unwrap()
}

fn contrast(amplitude: f64) -> Perturbation {
    Perturbation::from_bump(Bump { amplitude, center: (0.0, 0.5), radii: (1.5, 0.4) })
}

fn max_rel(a: &[C64], b: &[C64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

#[test]
fn zero_contrast_reduces_to_unperturbed() {
    let solver = unperturbed(graded(), 32, 32, 64);
    let f = source();
    let pert = Perturbation::zero(SupportBox { x1: (-1.5, 1.5), x2: (0.1, 0.9) });
    let w = solver.window(-2, 4, 2);
    let sol = solve_perturbed(&solver, &pert, &f, &w, false).unwrap();
    let reference = solver.solve(&GridSource::from_source(&f, &solver.grid, 1.0), &w).unwrap();
    assert!(max_rel(&sol.field.values, &reference.values) < 1e-10);
}

#[test]
fn field_on_q_matches_iterate_and_born_series() {
    let solver = unperturbed(graded(), 32, 32, 64);
    let f = source();
    let pert = contrast(0.05);
    assert!(validate_monotonicity(&solver.medium, &pert, &solver.grid).monotone);
    let w = solver.window(-1, 2, 0);
    let sol = solve_perturbed(&solver, &pert, &f, &w, false).unwrap();
    assert!(sol.report.converged && !sol.report.dense_fallback);
    assert!(sol.report.consistency.unwrap() < 1e-8, "{:?}", sol.report);

    // first-order Born: u0 − S M u0 on Q
    let ps = PerturbedSolver::new(&solver, &pert).unwrap();
    let fq = ps.qgrid.sample(|p| f.value(p.x1, p.x2));
    let u0 = ps.apply_s(&fq).unwrap();
    let smu0 = ps.apply_s(&ps.apply_m(&u0).unwrap()).unwrap();
    let born: Vec<C64> = u0.iter().zip(&smu0).map(|(a, b)| a - b).collect();
    let err = max_rel(&born, &sol.w.values);
    let first_order = max_rel(&u0, &sol.w.values);
    assert!(err < 5e-3, "Born error {err}");
    // second order: error ≪ first-order correction
    assert!(err < 0.2 * first_order, "{err} vs {first_order}");
}

#[test]
fn born_error_is_quadratic_in_contrast() {
    let solver = unperturbed(graded(), 32, 32, 64);
    let f = source();
    let w = solver.window(-1, 2, 0);
    let mut errs = vec![];
    for amp in [0.05, 0.025] {
        let pert = contrast(amp);
        let sol = solve_perturbed(&solver, &pert, &f, &w, false).unwrap();
        let ps = PerturbedSolver::new(&solver, &pert).unwrap();
        let u0 = ps.apply_s(&ps.qgrid.sample(|p| f.value(p.x1, p.x2))).unwrap();
        let smu0 = ps.apply_s(&ps.apply_m(&u0).unwrap()).unwrap();
        let born: Vec<C64> = u0.iter().zip(&smu0).map(|(a, b)| a - b).collect();
        errs.push(max_rel(&born, &sol.w.values));
    }
    let ratio = errs[0] / errs[1];
    assert!((3.5..4.5).contains(&ratio), "{errs:?}");
}

#[test]
fn apply_m_examples() {
    // k = 2 is a cutoff value of the free medium, so the constant example runs at k = 0.6
    let solver = unperturbed(PeriodicMedium::free(1.0), 32, 16, 64);
    let zero = Perturbation::zero(SupportBox { x1: (-1.0, 1.0), x2: (0.2, 0.8) });
    let ps = PerturbedSolver::new(&solver, &zero).unwrap();
    let g = vec![C64::new(1.0, 2.0); ps.qgrid.len()];
    assert!(ps.apply_m(&g).unwrap().iter().all(|v| *v == C64::new(0.0, 0.0)));

    let pert = contrast(1.0);
    let ps = PerturbedSolver::new(&solver, &pert).unwrap();
    let n = ps.qgrid.len();
    let mut e = vec![C64::new(0.0, 0.0); n];
    e[n / 2] = C64::new(1.0, 0.0);
    let m = ps.apply_m(&e).unwrap();
    assert!(m.iter().enumerate().all(|(i, v)| i == n / 2 || *v == C64::new(0.0, 0.0)));
    let p = ps.qgrid.point(n / 2);
    assert!((m[n / 2].re - K * K * pert.q(p.x1, p.x2)).abs() < 1e-14);
    assert!(matches!(ps.apply_m(&e[1..]), Err(Error::GridMismatch(_))));

    let ones = vec![C64::new(1.0, 0.0); n];
    let m = ps.apply_m(&ones).unwrap();
    let centre = (0..n).find(|&i| ps.qgrid.point(i) == Point2::new(0.0, 0.5)).unwrap();
    assert!((m[centre] - C64::new(K * K, 0.0)).norm() < 1e-15);
}

#[test]
fn s_is_linear_and_matches_green_quadrature() {
    let solver = unperturbed(PeriodicMedium::free(1.0), 64, 64, 1024);
    let pert = contrast(0.1);
    let ps = PerturbedSolver::new(&solver, &pert).unwrap();
    let n = ps.qgrid.len();
    assert!(ps.apply_s(&vec![C64::new(0.0, 0.0); n]).unwrap().iter().all(|v| v.norm() == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (a, b) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
    let c = C64::new(0.3, -1.1);
    let combo: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
    let (sa, sb, sc) = (ps.apply_s(&a).unwrap(), ps.apply_s(&b).unwrap(), ps.apply_s(&combo).unwrap());
    let lin: Vec<C64> = sa.iter().zip(&sb).map(|(x, y)| x + c * y).collect();
    assert!(max_rel(&sc, &lin) < 1e-12);

    // S g for a smooth g against −∫ g G over the same bump
    let f = source();
    let g = ps.qgrid.sample(|p| f.value(p.x1, p.x2));
    let sg = ps.apply_s(&g).unwrap();
    let s = f.support();
    let quad = |x: Point2| {
        let m = 300;
        let (h1, h2) = ((s.x1.1 - s.x1.0) / m as f64, (s.x2.1 - s.x2.0) / m as f64);
        let mut acc = C64::new(0.0, 0.0);
        for i in 1..m {
            for j in 1..m {
                let y = Point2::new(s.x1.0 + i as f64 * h1, s.x2.0 + j as f64 * h2);
                let v = f.value(y.x1, y.x2);
                if v.re != 0.0 {
                    acc += v * green_halfplane(&solver.kw, x, y).unwrap();
                }
            }
        }
        -acc * h1 * h2
    };
    let mut worst: f64 = 0.0;
    for i in (0..n).step_by(n / 12) {
        let x = ps.qgrid.point(i);
        let q = quad(x);
        worst = worst.max((sg[i] - q).norm() / q.norm());
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn operator_identity_and_spectral_radius() {
    let solver = unperturbed(graded(), 32, 32, 64);
    let pert = contrast(0.05);
    let mut ps = PerturbedSolver::new(&solver, &pert).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = random_vec(&mut rng, ps.qgrid.len());
    let lhs = ps.apply_ls(&g).unwrap();
    let smg = ps.apply_s(&ps.apply_m(&g).unwrap()).unwrap();
    let resid = lhs
        .iter()
        .zip(&g)
        .zip(&smg)
        .map(|((l, a), b)| (l - a - b).norm())
        .fold(0.0, f64::max);
    assert!(resid < 1e-14 * lhs.iter().map(|v| v.norm()).fold(0.0, f64::max));
    let rho = ps.spectral_radius(30).unwrap();
    assert!(rho < 1.0, "{rho}");
}

#[test]
fn homogeneous_problem_has_zero_solution() {
    let solver = unperturbed(graded(), 32, 32, 64);
    let pert = contrast(0.05);
    let mut ps = PerturbedSolver::new(&solver, &pert).unwrap();
    let zero = vec![C64::new(0.0, 0.0); ps.qgrid.len()];
    let w = solver.window(-1, 2, 0);
    let sol = ps.solve(&zero, &w, true, false).unwrap();
    assert!(sol.w.values.iter().all(|v| v.norm() == 0.0));
    assert!(sol.field.values.iter().all(|v| v.norm() == 0.0));
}

#[test]
fn uniqueness_gate_and_override() {
    let solver = unperturbed(PeriodicMedium::free(1.0), 32, 32, 64);
    let pert = contrast(0.3);
    let report = validate_monotonicity(&solver.medium, &pert, &solver.grid);
    assert!(!report.monotone && report.violation_count > 0);
    for v in &report.violations {
        // violations sit in the upper half of the bump, where q decreases
        assert!(v.1 >= 0.5 - 1e-12 && v.2 <= 0.9 + 1.0 / 32.0);
    }
    let f = source();
    let w = solver.window(-1, 2, 0);
    assert!(matches!(
        solve_perturbed(&solver, &pert, &f, &w, false),
        Err(Error::UniquenessNotCertified(_))
    ));
    let sol = solve_perturbed(&solver, &pert, &f, &w, true).unwrap();
    assert!(sol.report.override_uniqueness && !sol.report.monotone);
    assert!(sol.report.consistency.unwrap() < 1e-8);
}

#[test]
fn source_outside_q_is_rejected() {
    let solver = unperturbed(graded(), 32, 16, 64);
    let pert = Perturbation::from_bump(Bump { amplitude: 0.05, center: (0.0, 0.5), radii: (0.5, 0.3) });
    let w = solver.window(-1, 2, 0);
    assert!(matches!(solve_perturbed(&solver, &pert, &source(), &w, false), Err(Error::Domain(_))));
}

#[test]
fn pde_residual_is_second_order() {
    let f = source();
    let pert = contrast(0.05);
    let mut res = vec![];
    for (nx1, nx2) in [(32, 32), (64, 64), (128, 128)] {
        let solver = unperturbed(graded(), nx1, nx2, 64);
        let w = solver.window(-1, 2, 0);
        let sol = solve_perturbed(&solver, &pert, &f, &w, false).unwrap();
        let src = GridSource::from_source(&f, &solver.grid, 1.0);
        res.push(pde_residual(&sol.field, &solver.medium, &pert, &src).unwrap());
    }
    assert!(res[2] < 1e-3, "{res:?}");
    for r in res.windows(2) {
        assert!((3.0..5.0).contains(&(r[0] / r[1])), "{res:?}");
    }
}

#[test]
fn point_source_scattering() {
    let solver = unperturbed(PeriodicMedium::free(1.0), 32, 32, 64);
    let w = solver.window(-1, 2, 1);
    let y = Point2::new(0.7, 1.6);
    assert!(matches!(
        scatter_point_source(&solver, &contrast(0.05), Point2::new(0.0, 0.5), &w, 4, false),
        Err(Error::Precondition(_))
    ));

    // free medium: incident is exactly G, and zero contrast scatters nothing
    let zero = Perturbation::zero(SupportBox { x1: (-1.0, 1.0), x2: (0.2, 0.8) });
    let (inc, sc) = scatter_point_source(&solver, &zero, y, &w, 4, false).unwrap();
    assert!(inc.correction.is_none());
    for (r, c) in [(5, 3), (20, 40), (33, 17)] {
        let x = Point2::new(w.x1(c), w.x2(r));
        let g = green_halfplane(&solver.kw, x, y).unwrap();
        assert_eq!(inc.values[r * w.columns() + c], g);
        // reciprocity of the incident field
        let g_swapped = green_halfplane(&solver.kw, y, x).unwrap();
        assert!((g - g_swapped).norm() < 1e-3 * g.norm());
    }
    assert!(sc.field.values.iter().all(|v| v.norm() == 0.0));

    let (_, sc) = scatter_point_source(&solver, &contrast(0.05), y, &w, 4, true).unwrap();
    assert!(sc.field.values.iter().any(|v| v.norm() > 0.0));
    assert!(sc.report.consistency.unwrap() < 1e-8);
}

#[test]
fn point_source_in_graded_medium() {
    let solver = unperturbed(graded(), 32, 32, 64);
    let w = solver.window(-1, 2, 0);
    let y = Point2::new(0.0, 1.5);
    let (inc, sc) = scatter_point_source(&solver, &contrast(0.05), y, &w, 6, false).unwrap();
    assert!(inc.correction.is_some());
    assert!(sc.report.monotone && sc.report.consistency.unwrap() < 1e-8, "{:?}", sc.report);
    // the incident field vanishes on the bottom row
    assert!((0..w.columns()).all(|c| inc.values[c].norm() < 1e-14));
}
