//! Energy-flux identities and norms evaluated on computed fields.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::cell_solver::{beta, CellField, Spectral};
use crate::error::{Error, Result};
use crate::radiating_solver::{RadiatingField, SolvePath};
use crate::special_fn::Wavenumber;

type C64 = Complex64;

/// Normalisation floor of [`FluxReport::mismatch`].
pub const FLUX_FLOOR: f64 = 1e-14;
/// Half-step of the centred vertical difference.
pub const FLUX_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    pub gamma_height: f64,
    /// `Im ∫ conj(u) ∂₂u` over the window at height `R`.
    pub im_flux: f64,
    /// `Σ_n ∫ 2π |u_n(α)|² Re β(n, α) dα` on the discrete α-grid.
    pub modal_flux: f64,
    pub mismatch: f64,
    /// Estimated flux outside the window, from `|x1|^{-3}` decay of the
    /// integrand; zero when the window is a full supercell of the α-grid.
    pub truncation: f64,
}

/// `Im Σ conj(u) (u⁺ − u⁻)/(2δ) Δx1` over samples of one horizontal line.
pub fn flux_of_rows(u: &[C64], u_minus: &[C64], u_plus: &[C64], dx1: f64, delta: f64) -> f64 {
    u.iter()
        .zip(u_minus.iter().zip(u_plus))
        .map(|(c, (m, p))| (c.conj() * (p - m)).im)
        .sum::<f64>()
        * dx1
        / (2.0 * delta)
}

fn check_height(field: &RadiatingField, r: f64) -> Result<()> {
    if !(r > field.window.h) {
        return Err(Error::Precondition(format!("Γ_R needs R > h = {}, got {r}", field.window.h)));
    }
    Ok(())
}

/// Window flux through `x2 = R`, `R > h`, with a centred vertical difference
/// and the periodic trapezoid rule along the window columns.
pub fn flux_through_gamma(field: &RadiatingField, r: f64) -> Result<f64> {
    check_height(field, r)?;
    let (u, _) = field.row_above(r);
    let (lo, _) = field.row_above(r - FLUX_DELTA);
    let (hi, _) = field.row_above(r + FLUX_DELTA);
    Ok(flux_of_rows(&u, &lo, &hi, field.window.dx1(), FLUX_DELTA))
}

fn full_supercell(field: &RadiatingField) -> bool {
    field.path == SolvePath::Direct
        && field.rayleigh.len() == 1
        && field.window.period_count.is_multiple_of(field.rayleigh[0].1.alpha_count)
}

/// Flux outside the window assuming `|conj(u)∂₂u| ~ |x1 − c|^{-3}` about
/// the window centre `c`.
pub fn truncation_estimate(field: &RadiatingField, r: f64) -> Result<f64> {
    check_height(field, r)?;
    if full_supercell(field) {
        return Ok(0.0);
    }
    let (u, du) = field.row_above(r);
    let w = &field.window;
    let n = w.columns();
    let centre = 0.5 * (w.x1(0) + w.x1(n - 1));
    let edge = |c: usize| (u[c].conj() * du[c]).norm() * (w.x1(c) - centre).abs() / 2.0;
    Ok(edge(0) + edge(n - 1))
}

/// Bloch–Parseval flux of the field's Rayleigh data. Exact for a single
/// level; the limiting-absorption combination is weighted level by level.
pub fn modal_flux(field: &RadiatingField) -> f64 {
    field.rayleigh.iter().map(|(w, d)| w * d.modal_flux()).sum()
}

pub fn modal_flux_decomposition(field: &RadiatingField, r: f64) -> Result<FluxReport> {
    let im_flux = flux_through_gamma(field, r)?;
    let modal = modal_flux(field);
    Ok(FluxReport {
        gamma_height: r,
        im_flux,
        modal_flux: modal,
        mismatch: (im_flux - modal).abs() / im_flux.abs().max(FLUX_FLOOR),
        truncation: truncation_estimate(field, r)?,
    })
}

/// Per-mode flux content `(1/M) Σ_α 2π |u_n(α)|² Re β(n, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeContent {
    pub n: i64,
    pub content: f64,
}

pub fn mode_contents(field: &RadiatingField) -> Vec<ModeContent> {
    let Some((_, first)) = field.rayleigh.first() else {
        return vec![];
    };
    let half = first.nx1 as i64 / 2;
    let mut out: Vec<ModeContent> = (-half + 1..half).map(|n| ModeContent { n, content: 0.0 }).collect();
    for (w, d) in &field.rayleigh {
        let nm = d.nx1 - 1;
        for a in 0..d.alpha_count {
            let alpha = d.alpha(a);
            for (i, slot) in out.iter_mut().enumerate() {
                let b = beta(&d.kw, slot.n as f64 + alpha);
                slot.content += w * 2.0 * PI * d.coeffs[a * nm + i].norm_sqr() * b.re / d.alpha_count as f64;
            }
        }
    }
    out
}

/// Largest per-mode content; vanishes with the total flux for radiating fields.
pub fn cutoff_mode_check(field: &RadiatingField) -> f64 {
    mode_contents(field).iter().map(|m| m.content.abs()).fold(0.0, f64::max)
}

/// `(∫_C |∂₁u|², ∫_C |∂₂u|², ∫_C |u|²)` for `u = e^{iαx1} ũ` with spectral
/// `x1` derivatives, row trapezoid in `x2` and midpoint differences.
fn cell_integrals(u: &CellField) -> (f64, f64, f64) {
    let p = u.nx1;
    let dx2 = u.h / u.nx2 as f64;
    let sp = Spectral::new(p);
    let (mut g1, mut l2) = (0.0, 0.0);
    let mut row = vec![C64::new(0.0, 0.0); p];
    for j in 0..=u.nx2 {
        let w = if j == 0 || j == u.nx2 { 0.5 } else { 1.0 } * dx2;
        row.copy_from_slice(&u.values[j * p..(j + 1) * p]);
        sp.forward(&mut row);
        for (s, c) in row.iter().enumerate() {
            let m = if s < p / 2 { s as i64 } else if s > p / 2 { s as i64 - p as i64 } else { continue };
            let xi = m as f64 + u.alpha;
            g1 += w * 2.0 * PI * xi * xi * c.norm_sqr();
            l2 += w * 2.0 * PI * c.norm_sqr();
        }
    }
    let dx1 = 2.0 * PI / p as f64;
    let mut g2 = 0.0;
    for j in 0..u.nx2 {
        for t in 0..p {
            g2 += ((u.value(t, j + 1) - u.value(t, j)) / dx2).norm_sqr() * dx1 * dx2;
        }
    }
    (g1, g2, l2)
}

/// `√(∫_C |∇u|² + 2π Σ_n √(n²+1) |u_n|²)`.
pub fn cell_star_norm(u: &CellField) -> f64 {
    let (g1, g2, _) = cell_integrals(u);
    let n0 = u.n_trunc as i64;
    let boundary: f64 = (-n0..=n0)
        .map(|n| ((n * n + 1) as f64).sqrt() * u.rayleigh_coefficient(n).norm_sqr())
        .sum();
    (g1 + g2 + 2.0 * PI * boundary).sqrt()
}

/// Plain `H¹(C_h)` norm with the same discrete derivatives.
pub fn cell_h1_norm(u: &CellField) -> f64 {
    let (g1, g2, l2) = cell_integrals(u);
    (g1 + g2 + l2).sqrt()
}

/// One-period flux of a quasi-periodic cell field continued above `h` by its
/// top Rayleigh coefficients.
pub fn cell_flux(u: &CellField, kw: &Wavenumber, r: f64) -> Result<f64> {
    if !(r > u.h) {
        return Err(Error::Precondition(format!("Γ_R needs R > h = {}, got {r}", u.h)));
    }
    let p = u.nx1;
    let sp = Spectral::new(p);
    let line = |x2: f64| {
        let mut row = vec![C64::new(0.0, 0.0); p];
        for n in u.modes() {
            let b = beta(kw, n as f64 + u.alpha);
            row[n.rem_euclid(p as i64) as usize] = u.top_coefficient(n) * (C64::i() * b * (x2 - u.h)).exp();
        }
        sp.inverse(&mut row);
        // the e^{iαx1} factor has unit modulus and cancels in conj(u)∂₂u
        row
    };
    Ok(flux_of_rows(&line(r), &line(r - FLUX_DELTA), &line(r + FLUX_DELTA), 2.0 * PI / p as f64, FLUX_DELTA))
}
