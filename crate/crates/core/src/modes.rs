//! Exceptional quasimomenta, their null spaces, propagation constants and
//! the regularity predicate.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::bloch::alpha_nodes;
use crate::cell_solver::{beta, CellField, CellOperator, CellOptions};
use crate::error::{Error, Result};
use crate::medium::{CellGrid, PeriodicMedium};
use crate::special_fn::Wavenumber;

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    /// Coarse probe nodes on `(-1/2, 1/2]`.
    pub nodes: usize,
    /// Golden-section termination width in α.
    pub refine_tol: f64,
    /// Detection threshold relative to the median coarse σ_min.
    pub threshold_rel: f64,
    pub cell: CellOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            nodes: 128,
            refine_tol: 1e-8,
            threshold_rel: 1e-6,
            cell: CellOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalValue {
    pub alpha_j: f64,
    pub sigma_min: f64,
    pub m_j: usize,
    /// Detection threshold used for this value.
    pub threshold: f64,
    /// The minimum sits inside the cutoff guard band `|n+α| ≈ k`.
    pub at_cutoff: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagativeMode {
    pub alpha_j: f64,
    pub l: usize,
    pub d: f64,
    /// Periodic factor of the mode; Rayleigh data extend it above `h`.
    pub profile: CellField,
    /// Height where the mode has decayed below 1e-10 of its strip maximum.
    pub r_mode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAtlas {
    pub k: f64,
    pub medium_hash: String,
    pub grid: CellGrid,
    pub exceptional: Vec<ExceptionalValue>,
    pub modes: Vec<PropagativeMode>,
    pub regular: bool,
    /// `max |k∫nφ_l conj φ_l' − δ_ll'|` per exceptional value.
    pub normalization_residuals: Vec<f64>,
    /// Smallest coarse-scan σ_min.
    pub min_sigma: f64,
    /// Detection threshold of the scan.
    pub threshold: f64,
}

impl ModeAtlas {
    /// Atlas of a medium without exceptional values, for a given scan outcome.
    pub fn empty(kw: &Wavenumber, medium: &PeriodicMedium, grid: &CellGrid, min_sigma: f64, threshold: f64) -> Self {
        Self {
            k: kw.k,
            medium_hash: medium.hash(),
            grid: *grid,
            exceptional: vec![],
            modes: vec![],
            regular: true,
            normalization_residuals: vec![],
            min_sigma,
            threshold,
        }
    }

    /// No exceptional values and the scan stayed well above the threshold.
    pub fn is_trivial(&self) -> bool {
        self.exceptional.is_empty() && self.min_sigma > 10.0 * self.threshold
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("atlas", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse("atlas", e))
    }

    pub fn modes_at(&self, alpha_j: f64) -> impl Iterator<Item = &PropagativeMode> {
        self.modes.iter().filter(move |m| m.alpha_j == alpha_j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub regular: bool,
    /// Every offender has `0 < |d| ≤ d_tol`: the predicate cannot be decided.
    pub indeterminate: bool,
    /// `(α_j, l, d)` with `|d| ≤ d_tol`.
    pub offenders: Vec<(f64, usize, f64)>,
}

/// Detected values together with the coarse-scan statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub exceptional: Vec<ExceptionalValue>,
    pub median_sigma: f64,
    pub min_sigma: f64,
    pub threshold: f64,
}

/// Scan `(-1/2, 1/2]` for minima of σ_min that fall below the detection threshold.
pub fn scan_exceptional(
    kw: &Wavenumber,
    medium: &PeriodicMedium,
    grid: &CellGrid,
    scan: &ScanOptions,
) -> Result<Vec<ExceptionalValue>> {
    Ok(scan_detailed(kw, medium, grid, scan)?.exceptional)
}

pub fn scan_detailed(
    kw: &Wavenumber,
    medium: &PeriodicMedium,
    grid: &CellGrid,
    scan: &ScanOptions,
) -> Result<ScanResult> {
    if scan.nodes < 3 {
        return Err(Error::Domain("scan needs at least three nodes".into()));
    }
    let nodes = alpha_nodes(scan.nodes);
    let probe = |a: f64| -> Result<f64> {
        let op = CellOperator::assemble(kw, medium, a, grid, &scan.cell)?;
        Ok(op.smallest_singular_values(1)[0].0)
    };
    let sigmas: Vec<f64> = nodes.par_iter().map(|&a| probe(a)).collect::<Result<_>>()?;
    let mut sorted = sigmas.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let threshold = scan.threshold_rel * median;

    let last = nodes.len() - 1;
    let candidates: Vec<usize> = (0..nodes.len())
        .filter(|&i| {
            let left = if i == 0 { f64::INFINITY } else { sigmas[i - 1] };
            let right = if i == last { f64::INFINITY } else { sigmas[i + 1] };
            sigmas[i] <= left && sigmas[i] <= right
        })
        .collect();

    let refined: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&i| {
            let lo = if i == 0 { nodes[0] } else { nodes[i - 1] };
            let hi = if i == last { nodes[last] } else { nodes[i + 1] };
            golden_min(lo, hi, scan.refine_tol, &probe)
        })
        .collect::<Result<_>>()?;

    let mut found: Vec<ExceptionalValue> = Vec::new();
    for (alpha, sigma) in refined {
        if sigma >= threshold {
            continue;
        }
        if found.iter().any(|e| (e.alpha_j - alpha).abs() < 10.0 * scan.refine_tol) {
            continue;
        }
        let op = CellOperator::assemble(kw, medium, alpha, grid, &scan.cell)?;
        let small = op.smallest_singular_values(4);
        let m_j = small.iter().filter(|s| s.0 < threshold).count().max(1);
        let at_cutoff = op.modes.iter().any(|&n| ((n as f64 + alpha).abs() - kw.k).abs() < scan.refine_tol.max(scan.cell.cutoff_tol) * 10.0);
        found.push(ExceptionalValue {
            alpha_j: alpha,
            sigma_min: sigma,
            m_j,
            threshold,
            at_cutoff,
        });
    }
    found.sort_by(|a, b| a.alpha_j.partial_cmp(&b.alpha_j).unwrap());
    Ok(ScanResult {
        exceptional: found,
        median_sigma: median,
        min_sigma: sorted[0],
        threshold,
    })
}

fn golden_min(mut a: f64, mut b: f64, tol: f64, f: &dyn Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Orthonormal basis (in coefficient ℓ²) of the numerical null space at `ev`.
pub fn extract_nullspace(
    kw: &Wavenumber,
    medium: &PeriodicMedium,
    grid: &CellGrid,
    ev: &ExceptionalValue,
) -> Result<Vec<CellField>> {
    let op = CellOperator::assemble(kw, medium, ev.alpha_j, grid, &CellOptions::default())?;
    let small = op.smallest_singular_values(ev.m_j + 2);
    let low = small.iter().filter(|s| s.0 < ev.threshold).count();
    let high = small.iter().filter(|s| s.0 < 10.0 * ev.threshold).count();
    if low != high || low == 0 {
        return Err(Error::AmbiguousDimension {
            alpha: ev.alpha_j,
            low,
            high,
        });
    }
    Ok(small
        .into_iter()
        .take(low)
        .map(|(_, mut v)| {
            let pivot = v.iter().copied().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap_or(ZERO);
            if pivot != ZERO {
                let phase = pivot.conj() / pivot.norm();
                v.iter_mut().for_each(|x| *x *= phase);
            }
            op.field_from_coeffs(&v)
        })
        .collect())
}

/// `‖A φ‖ / (‖A‖ ‖φ‖)` of a field for the cell system at its own α.
pub fn null_residual(kw: &Wavenumber, medium: &PeriodicMedium, grid: &CellGrid, field: &CellField) -> Result<f64> {
    let op = CellOperator::assemble(kw, medium, field.alpha, grid, &CellOptions::default())?;
    let c = op.to_coeffs(&field.values)?;
    let r = op.apply(&c);
    let nr = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let nc = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if nc == 0.0 {
        return Err(Error::DegenerateInput("zero field".into()));
    }
    Ok(nr / (op.norm * nc))
}

/// Row Fourier coefficients of a field, `coeffs[j][n mod P]`.
fn row_coeffs(field: &CellField) -> Vec<Vec<C64>> {
    let p = field.nx1;
    let sp = crate::cell_solver::Spectral::new(p);
    (0..=field.nx2)
        .map(|j| {
            let mut row = field.values[j * p..(j + 1) * p].to_vec();
            sp.forward(&mut row);
            row
        })
        .collect()
}

/// Hermitian forms `A[l'][l] = ∫(−i∂₁φ_l + αφ_l) conj φ_l'` and
/// `B[l'][l] = ∫ n φ_l conj φ_l'` over the half-strip `C_∞`.
pub fn mode_forms(basis: &[CellField], kw: &Wavenumber, medium: &PeriodicMedium) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let m = basis.len();
    if m == 0 {
        return Err(Error::DegenerateInput("empty basis".into()));
    }
    let f0 = &basis[0];
    let (p, nx2, h, alpha) = (f0.nx1, f0.nx2, f0.h, f0.alpha);
    let dx2 = h / nx2 as f64;
    let dx1 = 2.0 * PI / p as f64;
    let coeffs: Vec<Vec<Vec<C64>>> = basis.iter().map(row_coeffs).collect();
    let half = p as i64 / 2;
    let mut a = DMatrix::<C64>::zeros(m, m);
    let mut b = DMatrix::<C64>::zeros(m, m);
    for l in 0..m {
        for lp in 0..m {
            let mut sa = ZERO;
            let mut sb = ZERO;
            for j in 1..=nx2 {
                let w = if j == nx2 { 0.5 } else { 1.0 } * dx2;
                for n in -half + 1..half {
                    let idx = n.rem_euclid(p as i64) as usize;
                    sa += w * 2.0 * PI * (n as f64 + alpha) * coeffs[l][j][idx] * coeffs[lp][j][idx].conj();
                }
                let x2 = j as f64 * dx2;
                for t in 0..p {
                    let nv = medium.n(t as f64 * dx1, x2);
                    sb += w * dx1 * nv * basis[l].value(t, j) * basis[lp].value(t, j).conj();
                }
            }
            // Analytic tails above h: ∫_h^∞ e^{-2γ(x2-h)} = 1/(2γ).
            for n in -half + 1..half {
                let ul = basis[l].top_coefficient(n);
                let ulp = basis[lp].top_coefficient(n);
                let prod = ul * ulp.conj();
                if prod == ZERO {
                    continue;
                }
                let bn = beta(kw, n as f64 + alpha);
                let gamma = bn.im;
                if bn.re != 0.0 || gamma <= 0.0 {
                    let scale = basis[l].top_modes.iter().map(|v| v.norm()).fold(0.0, f64::max);
                    if ul.norm() > 1e-6 * scale {
                        return Err(Error::EvanescenceViolation(format!(
                            "propagating Rayleigh mode n = {n} carries |u_n| = {:e}",
                            ul.norm()
                        )));
                    }
                    continue;
                }
                let tail = 2.0 * PI * prod / (2.0 * gamma);
                sa += (n as f64 + alpha) * tail;
                sb += tail;
            }
            a[(lp, l)] = sa;
            b[(lp, l)] = sb;
        }
    }
    Ok((a, b))
}

/// Generalized Hermitian eigenproblem `A c = d k B c`; eigenvectors are
/// `kB`-orthonormal. Returns `(d, c)` sorted by `d`.
pub fn propagation_eigenproblem(
    basis: &[CellField],
    kw: &Wavenumber,
    medium: &PeriodicMedium,
) -> Result<Vec<(f64, Vec<C64>)>> {
    let (a, b) = mode_forms(basis, kw, medium)?;
    let m = basis.len();
    let a = (&a + a.adjoint()) * C64::new(0.5, 0.0);
    let kb = (&b + b.adjoint()) * C64::new(0.5 * kw.k, 0.0);
    let bmax = kb.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let chol = kb
        .clone()
        .cholesky()
        .ok_or_else(|| Error::BasisDegeneracy("B is not positive definite".into()))?;
    let l = chol.l();
    let dmin = (0..m).map(|i| l[(i, i)].re.powi(2)).fold(f64::INFINITY, f64::min);
    if dmin < 1e-12 * bmax {
        return Err(Error::BasisDegeneracy(format!("B nearly singular (pivot {dmin:e})")));
    }
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::BasisDegeneracy("B factor not invertible".into()))?;
    let c = &linv * a * linv.adjoint();
    let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    let eig = c.symmetric_eigen();
    let mut out: Vec<(f64, Vec<C64>)> = (0..m)
        .map(|i| {
            let y = eig.eigenvectors.column(i).into_owned();
            let x = linv.adjoint() * y;
            (eig.eigenvalues[i], x.iter().copied().collect())
        })
        .collect();
    out.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    Ok(out)
}

/// Linear combination `Σ c_i basis_i` of cell fields.
pub fn combine(basis: &[CellField], c: &[C64]) -> CellField {
    let mut out = basis[0].clone();
    for v in out.values.iter_mut().chain(out.rayleigh.iter_mut()).chain(out.top_modes.iter_mut()) {
        *v = ZERO;
    }
    for (f, &ci) in basis.iter().zip(c) {
        for (o, v) in out.values.iter_mut().zip(&f.values) {
            *o += ci * v;
        }
        for (o, v) in out.rayleigh.iter_mut().zip(&f.rayleigh) {
            *o += ci * v;
        }
        for (o, v) in out.top_modes.iter_mut().zip(&f.top_modes) {
            *o += ci * v;
        }
    }
    out
}

/// `max |k∫nφ_l conj φ_l' − δ_ll'|` over a normalized mode family.
pub fn normalization_residual(modes: &[CellField], kw: &Wavenumber, medium: &PeriodicMedium) -> Result<f64> {
    let (_, b) = mode_forms(modes, kw, medium)?;
    let m = modes.len();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((kw.k * b[(i, j)] - target).norm());
        }
    }
    Ok(worst)
}

/// `‖φ(·, x2)‖_{L²(0,2π)}` above `h` from the full set of top-row modes.
pub fn profile_norm_above(field: &CellField, kw: &Wavenumber, x2: f64) -> f64 {
    let s: f64 = field
        .modes()
        .zip(&field.top_modes)
        .map(|(n, u)| {
            let b = beta(kw, n as f64 + field.alpha);
            2.0 * PI * u.norm_sqr() * (-2.0 * b.im * (x2 - field.h)).exp()
        })
        .sum();
    s.sqrt()
}

fn strip_max(field: &CellField) -> f64 {
    field.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Height above which the mode's `L²(0,2π)` trace is below 1e-10 of its
/// strip maximum.
pub fn mode_height(field: &CellField, kw: &Wavenumber) -> f64 {
    let peak = strip_max(field) * (2.0 * PI).sqrt();
    let gamma_min = field
        .modes()
        .zip(&field.top_modes)
        .filter(|(_, u)| u.norm() > 0.0)
        .map(|(n, _)| beta(kw, n as f64 + field.alpha).im)
        .fold(f64::INFINITY, f64::min);
    if !(gamma_min > 0.0) || peak == 0.0 {
        return field.h;
    }
    let top = profile_norm_above(field, kw, field.h);
    let ratio = (top / (1e-10 * peak)).max(1.0);
    field.h + ratio.ln() / gamma_min + 1.0
}

/// Least-squares fit `log ‖φ(·,x2)‖ ≈ log c − δ (x2 − h)` on `[h+1, R_mode]`.
pub fn verify_evanescence(mode: &PropagativeMode, kw: &Wavenumber) -> Result<(f64, f64)> {
    let f = &mode.profile;
    if f.top_modes.iter().all(|v| *v == ZERO) {
        return Err(Error::DegenerateInput("mode has no Rayleigh content".into()));
    }
    let scale = f.top_modes.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (n, u) in f.modes().zip(&f.top_modes) {
        let b = beta(kw, n as f64 + f.alpha);
        if b.im <= 0.0 && u.norm() > 1e-6 * scale {
            return Err(Error::EvanescenceViolation(format!("propagating mode n = {n} present")));
        }
    }
    let lo = f.h + 1.0;
    let hi = mode.r_mode.max(lo + 1.0);
    let samples = 64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..samples {
        let x2 = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
        let y = profile_norm_above(f, kw, x2).ln();
        let x = x2 - f.h;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let nf = samples as f64;
    let slope = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
    let intercept = (sy - slope * sx) / nf;
    let delta = -slope;
    if !(delta > 0.0) {
        return Err(Error::EvanescenceViolation(format!("fitted decay rate {delta}")));
    }
    Ok((intercept.exp(), delta))
}

/// Regularity predicate on the atlas' propagation constants.
pub fn check_regular(atlas: &ModeAtlas, d_tol: f64) -> RegularityReport {
    let offenders: Vec<(f64, usize, f64)> = atlas
        .modes
        .iter()
        .filter(|m| m.d.abs() <= d_tol)
        .map(|m| (m.alpha_j, m.l, m.d))
        .collect();
    RegularityReport {
        regular: offenders.is_empty(),
        indeterminate: !offenders.is_empty() && offenders.iter().all(|o| o.2 != 0.0),
        offenders,
    }
}

/// Runs the scan, extracts null spaces and solves the eigenproblems.
pub fn build_atlas(
    kw: &Wavenumber,
    medium: &PeriodicMedium,
    grid: &CellGrid,
    scan: &ScanOptions,
) -> Result<ModeAtlas> {
    let ScanResult {
        exceptional,
        min_sigma,
        threshold,
        ..
    } = scan_detailed(kw, medium, grid, scan)?;
    let mut modes = Vec::new();
    let mut normalization_residuals = Vec::new();
    for ev in &exceptional {
        if ev.at_cutoff {
            continue;
        }
        let basis = extract_nullspace(kw, medium, grid, ev)?;
        let eig = propagation_eigenproblem(&basis, kw, medium)?;
        let fields: Vec<CellField> = eig.iter().map(|(_, c)| combine(&basis, c)).collect();
        normalization_residuals.push(normalization_residual(&fields, kw, medium)?);
        for (l, ((d, _), profile)) in eig.into_iter().zip(fields).enumerate() {
            let r_mode = mode_height(&profile, kw);
            modes.push(PropagativeMode {
                alpha_j: ev.alpha_j,
                l,
                d,
                profile,
                r_mode,
            });
        }
    }
    let mut atlas = ModeAtlas {
        k: kw.k,
        medium_hash: medium.hash(),
        grid: *grid,
        exceptional,
        modes,
        regular: true,
        normalization_residuals,
        min_sigma,
        threshold,
    };
    atlas.regular = check_regular(&atlas, 1e-6).regular;
    Ok(atlas)
}
