use num_complex::Complex64;
use pwguide::cell_solver::CellField;
use pwguide::diagnostics::{
    cell_flux, cell_h1_norm, cell_star_norm, cutoff_mode_check, flux_through_gamma, modal_flux_decomposition,
    mode_contents,
};
use pwguide::medium::{Bump, CellGrid, PeriodicMedium, Profile, SourceTerm};
use pwguide::modes::{build_atlas, ScanOptions};
use pwguide::radiating_solver::{
    GridSource, PsiKind, RadiatingField, RayleighData, SolveParams, SolvePath, UnperturbedSolver, Window,
};
use pwguide::special_fn::Wavenumber;
use pwguide::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

type C64 = Complex64;

/// One period of a field given by Rayleigh coefficients at α = 0.
fn rayleigh_field(k: f64, nx1: usize, coeffs: &[(i64, C64)]) -> RadiatingField {
    let kw = Wavenumber::real(k).unwrap();
    let mut c = vec![C64::new(0.0, 0.0); nx1 - 1];
    for &(n, v) in coeffs {
        c[(n + nx1 as i64 / 2 - 1) as usize] = v;
    }
    let data = RayleighData { kw, h: 1.0, alpha_count: 1, nx1, coeffs: c };
    let window = Window { first_period: 0, period_count: 1, nx1, nx2: 8, rows_above: 0, h: 1.0 };
    RadiatingField {
        path: SolvePath::Direct,
        k,
        window,
        values: vec![C64::new(0.0, 0.0); window.len()],
        u1: vec![C64::new(0.0, 0.0); window.len()],
        u2_coeffs: vec![],
        modes: vec![],
        psi: PsiKind::default(),
        rayleigh: vec![(1.0, data)],
        lap: None,
    }
}

#[test]
fn single_propagating_term_carries_two_pi_beta() {
    let k = 0.6;
    let f = rayleigh_field(k, 16, &[(0, C64::new(1.0, 0.0))]);
    let flux = flux_through_gamma(&f, 1.7).unwrap();
    assert!((flux - 2.0 * PI * k).abs() < 1e-8 * k, "{flux}");
    let report = modal_flux_decomposition(&f, 1.7).unwrap();
    assert!(report.mismatch < 1e-8 && report.truncation == 0.0);

    // evanescent terms carry no vertical flux and do not couple to the propagating one
    let f = rayleigh_field(k, 16, &[(0, C64::new(0.5, 0.2)), (2, C64::new(3.0, -1.0)), (-1, C64::new(0.0, 2.0))]);
    let beta0 = k;
    let flux = flux_through_gamma(&f, 1.2).unwrap();
    assert!((flux - 2.0 * PI * beta0 * 0.29).abs() < 1e-8, "{flux}");
}

#[test]
fn evanescent_field_has_no_flux_and_no_mode_content() {
    let f = rayleigh_field(0.6, 16, &[(1, C64::new(1.0, 0.0)), (-3, C64::new(0.0, 1.0))]);
    let report = modal_flux_decomposition(&f, 1.5).unwrap();
    assert!(report.im_flux.abs() < 1e-10 && report.modal_flux == 0.0);
    assert!(cutoff_mode_check(&f) < 1e-10);
    assert!(mode_contents(&f).iter().all(|m| m.content.abs() < 1e-10));
}

#[test]
fn gamma_must_lie_above_the_strip() {
    let f = rayleigh_field(0.6, 16, &[(0, C64::new(1.0, 0.0))]);
    assert!(matches!(flux_through_gamma(&f, 1.0), Err(Error::Precondition(_))));
    assert!(matches!(modal_flux_decomposition(&f, 0.5), Err(Error::Precondition(_))));
}

#[test]
fn free_medium_flux_identities() {
    let kw = Wavenumber::real(0.6).unwrap();
    for medium in [PeriodicMedium::free(1.0), PeriodicMedium::new(Profile::Graded { a: 1.0, b: 0.5 }, 1.0, 1.0).unwrap()] {
        let grid = CellGrid::with_default_trunc(32, 32, 0.6, 1.0).unwrap();
        let atlas = build_atlas(&kw, &medium, &grid, &ScanOptions { nodes: 32, ..Default::default() }).unwrap();
        let params = SolveParams { alpha_count: 32, ..Default::default() };
        let solver = UnperturbedSolver::new(&kw, &medium, &grid, &atlas, &params).unwrap();
        let f = SourceTerm::new(Bump { amplitude: 1.0, center: (0.0, 0.5), radii: (1.2, 0.35) }, 1.0).unwrap();
        let src = GridSource::from_source(&f, &grid, 1.0);
        // a full supercell of the α-grid
        let field = solver.solve(&src, &solver.window(-16, 32, 0)).unwrap();
        let r1 = modal_flux_decomposition(&field, 1.5).unwrap();
        let r2 = modal_flux_decomposition(&field, 2.5).unwrap();
        assert!(r1.im_flux > 0.0);
        assert!(r1.mismatch < 1e-6, "{r1:?}");
        assert!((r1.im_flux - r2.im_flux).abs() < 1e-6 * r1.im_flux, "{r1:?} {r2:?}");
        let sum: f64 = mode_contents(&field).iter().map(|m| m.content).sum();
        assert!((sum - r1.modal_flux).abs() < 1e-12 * r1.modal_flux);
        // only |n + α| < k carries flux
        assert!(mode_contents(&field).iter().all(|m| m.n.abs() <= 1 || m.content == 0.0));

        // a smaller window loses part of the flux and reports it
        let part = solver.solve(&src, &solver.window(-2, 4, 0)).unwrap();
        let r = modal_flux_decomposition(&part, 1.5).unwrap();
        assert!(r.im_flux >= -1e-8 && r.truncation > 0.0);
    }
}

#[test]
fn guided_mode_has_no_vertical_flux() {
    let kw = Wavenumber::real(0.4).unwrap();
    let medium = PeriodicMedium::new(Profile::Slab { n_core: 4.0 }, 3.0, 1.0).unwrap();
    let grid = CellGrid::with_default_trunc(16, 96, 0.4, 3.0).unwrap();
    let atlas = build_atlas(&kw, &medium, &grid, &ScanOptions::default()).unwrap();
    assert!(!atlas.modes.is_empty());
    for mode in &atlas.modes {
        for r in [3.5, 5.0] {
            let f = cell_flux(&mode.profile, &kw, r).unwrap();
            assert!(f.abs() < 1e-6, "{f}");
        }
    }
}

fn linear_profile(nx1: usize, nx2: usize, h: f64) -> CellField {
    let n_trunc = 3;
    let mut values = vec![C64::new(0.0, 0.0); nx1 * (nx2 + 1)];
    for j in 0..=nx2 {
        for t in 0..nx1 {
            let x1 = 2.0 * PI * t as f64 / nx1 as f64;
            values[j * nx1 + t] = C64::from_polar(j as f64 / nx2 as f64, x1);
        }
    }
    let mut rayleigh = vec![C64::new(0.0, 0.0); 2 * n_trunc + 1];
    rayleigh[n_trunc + 1] = C64::new(1.0, 0.0);
    let mut top_modes = vec![C64::new(0.0, 0.0); nx1 - 1];
    top_modes[nx1 / 2] = C64::new(1.0, 0.0);
    CellField { alpha: 0.0, nx1, nx2, h, n_trunc, values, rayleigh, top_modes }
}

#[test]
fn star_norm_of_a_linear_profile() {
    let h = 1.5;
    let exact = (2.0 * PI * (h / 3.0 + 1.0 / h) + 2.0 * PI * 2f64.sqrt()).sqrt();
    let errs: Vec<f64> = [16, 32]
        .iter()
        .map(|&nx2| (cell_star_norm(&linear_profile(16, nx2, h)) - exact).abs())
        .collect();
    assert!(errs[1] < 1e-3, "{errs:?}");
    let ratio = errs[0] / errs[1];
    assert!((3.5..4.5).contains(&ratio), "{errs:?}");

    let mut zero = linear_profile(16, 8, h);
    zero.values.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
    zero.rayleigh.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
    assert_eq!(cell_star_norm(&zero), 0.0);
}

#[test]
fn star_norm_is_equivalent_to_h1() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let (nx1, nx2) = (16, 8 + 4 * (trial % 4));
        let mut u = linear_profile(nx1, nx2, 1.0 + 0.1 * trial as f64);
        u.alpha = rng.gen_range(-0.5..0.5);
        let smooth = trial % 2 == 0;
        for j in 1..=nx2 {
            for t in 0..nx1 {
                let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                u.values[j * nx1 + t] = if smooth { u.values[j * nx1 + t] * v.re } else { v };
            }
        }
        for c in u.rayleigh.iter_mut() {
            *c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let ratio = cell_star_norm(&u) / cell_h1_norm(&u);
        assert!((0.1..10.0).contains(&ratio), "{ratio}");
    }
}
