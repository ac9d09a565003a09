use num_complex::Complex64;
use pwguide::special_fn::{
    green_halfplane, hankel1_0, hankel1_1, phi_k, Point2, Wavenumber,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Row {
    z: Complex64,
    h0: Complex64,
    h1: Complex64,
}

fn table() -> Vec<Row> {
    include_str!("data/hankel_table.txt")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            Row {
                z: Complex64::new(v[0], v[1]),
                h0: Complex64::new(v[2], v[3]),
                h1: Complex64::new(v[4], v[5]),
            }
        })
        .collect()
}

#[test]
fn hankel_matches_high_precision_table() {
    let rows = table();
    let mut worst: f64 = 0.0;
    for r in &rows {
        // series region loses accuracy like e^{2 Im z}; see module docs
        let allowance = if r.z.norm() <= 12.0 { (2.0 * r.z.im).exp() } else { 1.0 };
        let e0 = (hankel1_0(r.z).unwrap() - r.h0).norm() / r.h0.norm();
        let e1 = (hankel1_1(r.z).unwrap() - r.h1).norm() / r.h1.norm();
        assert!(e0 < 1e-10 * allowance, "H0 at {}: {e0:e}", r.z);
        assert!(e1 < 1e-10 * allowance, "H1 at {}: {e1:e}", r.z);
        if r.z.im == 0.0 {
            worst = worst.max(e0);
        }
    }
    assert!(worst < 1e-10);
}

#[test]
fn far_field_bound_stays_bounded() {
    // |G(x,y)| (1 + |x-y|^{3/2}) / (x2 y2) must not grow along a ray
    let kw = Wavenumber::real(1.0).unwrap();
    let y = Point2::new(0.0, 0.5);
    let dir = (0.3f64.cos(), 0.3f64.sin());
    let fitted = |rmax: f64| -> f64 {
        let mut c: f64 = 0.0;
        let mut r = 2.0;
        while r <= rmax {
            let x = Point2::new(y.x1 + r * dir.0, y.x2 + r * dir.1);
            let g = green_halfplane(&kw, x, y).unwrap().norm();
            c = c.max(g * (1.0 + r.powf(1.5)) / (x.x2 * y.x2));
            r *= 1.02;
        }
        c
    };
    let c50 = fitted(50.0);
    let c200 = fitted(200.0);
    assert!(c200 <= 1.05 * c50, "fitted constant grew: {c50} -> {c200}");
}

#[test]
fn helmholtz_residual_is_second_order() {
    let kw = Wavenumber::real(1.2).unwrap();
    let y = Point2::new(0.1, 0.6);
    let x = Point2::new(1.3, 1.4);
    let residual = |d: f64| {
        let g = |p: Point2| green_halfplane(&kw, p, y).unwrap();
        let lap = (g(Point2::new(x.x1 + d, x.x2))
            + g(Point2::new(x.x1 - d, x.x2))
            + g(Point2::new(x.x1, x.x2 + d))
            + g(Point2::new(x.x1, x.x2 - d))
            - 4.0 * g(x))
            / (d * d);
        (lap + kw.k * kw.k * g(x)).norm()
    };
    let r1 = residual(0.02);
    let r2 = residual(0.01);
    let ratio = r1 / r2;
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn boundary_trace_and_reciprocity_random() {
    let kw = Wavenumber::real(0.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let y = Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.05..3.0));
        let x = Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.05..3.0));
        let b = Point2::new(rng.gen_range(-5.0..5.0), 0.0);
        assert!(green_halfplane(&kw, b, y).unwrap().norm() < 1e-12);
        let d = green_halfplane(&kw, x, y).unwrap() - green_halfplane(&kw, y, x).unwrap();
        assert!(d.norm() < 1e-12);
    }
}

#[test]
fn absorption_reduces_modulus() {
    let k = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let x = Point2::new(rng.gen_range(-20.0..20.0), rng.gen_range(0.0..5.0));
        let y = Point2::new(rng.gen_range(-20.0..20.0), rng.gen_range(0.0..5.0));
        if x.distance(y) < 1.0 {
            continue;
        }
        let eps = rng.gen_range(1e-4..0.2);
        let a = phi_k(&Wavenumber::new(k, eps).unwrap(), x, y).unwrap().norm();
        let b = phi_k(&Wavenumber::real(k).unwrap(), x, y).unwrap().norm();
        assert!(a <= b, "{a} > {b}");
    }
}
