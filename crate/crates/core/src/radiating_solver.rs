//! Radiating solutions of the unperturbed half-plane problem.
//!
//! The source is Bloch-transformed on a supercell of `M` periods, each
//! quasimomentum node is solved as a cell problem and the results are
//! synthesized on an output window. Without exceptional values this is a
//! single pass at the real wavenumber (path A). Otherwise the problem is
//! solved at `k + iε` for a halving sequence of ε, with `M` grown like `1/ε`
//! so the damped guided waves fit in the supercell, and the mode amplitudes
//! are read off by projecting onto the normalized modes at far stations
//! (path B). Two-point Richardson extrapolation in ε gives the limit.
//!
//! Per-α work is split into fixed chunks whose partial sums are reduced in
//! chunk order, so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::bloch::{alpha_numerator, bloch_phase};
use crate::cell_solver::{beta, CellOperator, CellOptions, Spectral};
use crate::error::{Error, Result};
use crate::medium::{CellGrid, PeriodicMedium, SourceTerm};
use crate::modes::{ModeAtlas, PropagativeMode};
use crate::special_fn::{dphi_dy2, green_halfplane, Point2, Wavenumber};

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);
const CHUNK: usize = 64;
const CACHE_BUDGET: usize = 1 << 29;

/// C∞ step: 0 for `s ≤ 0`, 1 for `s ≥ 1`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-8 {
        1.0 - t * t / 6.0
    } else {
        t.sin() / t
    }
}

/// `Si(z) = ∫₀^z sin t / t dt`, by adaptive Simpson on half-period panels;
/// the asymptotic expansion is used for `|z| > 1000`.
pub fn sine_integral(z: f64) -> f64 {
    if z < 0.0 {
        return -sine_integral(-z);
    }
    if z > 1000.0 {
        // Si(z) = π/2 − f(z) cos z − g(z) sin z
        let z2 = z * z;
        let (mut f, mut g) = (0.0, 0.0);
        let (mut tf, mut tg) = (1.0 / z, 1.0 / z2);
        for k in 0..8 {
            f += tf;
            g += tg;
            let kf = (2 * k + 1) as f64;
            tf *= -kf * (kf + 1.0) / z2;
            tg *= -(kf + 1.0) * (kf + 2.0) / z2;
        }
        return PI / 2.0 - f * z.cos() - g * z.sin();
    }
    let panels = (z / PI).ceil().max(1.0) as usize;
    let tol = 1e-13 / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let a = z * p as f64 / panels as f64;
        let b = z * (p + 1) as f64 / panels as f64;
        let (fa, fm, fb) = (sinc(a), sinc(0.5 * (a + b)), sinc(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        s += simpson_adaptive(&sinc, a, b, fa, fm, fb, whole, tol, 40);
    }
    s
}

/// `½[1 + (2/π) Si(x1/2)]`.
pub fn psi_plus(x1: f64) -> f64 {
    0.5 * (1.0 + 2.0 / PI * sine_integral(0.5 * x1))
}

/// `½[1 − (2/π) Si(x1/2)]`.
pub fn psi_minus(x1: f64) -> f64 {
    0.5 * (1.0 - 2.0 / PI * sine_integral(0.5 * x1))
}

/// Cutoff pair used in the `u⁽²⁾` reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiKind {
    /// ψ⁺ = 0 for `x1 ≤ −η`, 1 for `x1 ≥ η`, smooth in between.
    Ramp { eta: f64 },
    /// The sine-integral pair.
    SineIntegral,
}

impl Default for PsiKind {
    fn default() -> Self {
        PsiKind::Ramp { eta: 2.0 * PI }
    }
}

impl PsiKind {
    pub fn plus(&self, x1: f64) -> f64 {
        match self {
            PsiKind::Ramp { eta } => smooth_step((x1 + eta) / (2.0 * eta)),
            PsiKind::SineIntegral => psi_plus(x1),
        }
    }

    pub fn minus(&self, x1: f64) -> f64 {
        1.0 - self.plus(x1)
    }

    pub fn eta(&self) -> f64 {
        match self {
            PsiKind::Ramp { eta } => *eta,
            PsiKind::SineIntegral => f64::INFINITY,
        }
    }
}

/// Sampled output region: `period_count` periods starting at `first_period`,
/// rows `0..=nx2` in the strip and `rows_above` further rows above `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub first_period: i64,
    pub period_count: usize,
    pub nx1: usize,
    pub nx2: usize,
    pub rows_above: usize,
    pub h: f64,
}

impl Window {
    pub fn new(first_period: i64, period_count: usize, grid: &CellGrid, h: f64, rows_above: usize) -> Self {
        Self {
            first_period,
            period_count,
            nx1: grid.nx1,
            nx2: grid.nx2,
            rows_above,
            h,
        }
    }

    pub fn columns(&self) -> usize {
        self.period_count * self.nx1
    }

    pub fn rows(&self) -> usize {
        self.nx2 + 1 + self.rows_above
    }

    pub fn len(&self) -> usize {
        self.rows() * self.columns()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx1(&self) -> f64 {
        2.0 * PI / self.nx1 as f64
    }

    pub fn dx2(&self) -> f64 {
        self.h / self.nx2 as f64
    }

    pub fn x1(&self, col: usize) -> f64 {
        2.0 * PI * (self.first_period as f64 + col as f64 / self.nx1 as f64)
    }

    pub fn x2(&self, row: usize) -> f64 {
        row as f64 * self.dx2()
    }

    /// Period index and in-cell sample of a column.
    pub fn split(&self, col: usize) -> (i64, usize) {
        (self.first_period + (col / self.nx1) as i64, col % self.nx1)
    }

    /// Column of a global `(period, t)` node, if it lies in the window.
    pub fn column_of(&self, period: i64, t: usize) -> Option<usize> {
        let mi = period - self.first_period;
        if mi < 0 || mi as usize >= self.period_count {
            None
        } else {
            Some(mi as usize * self.nx1 + t)
        }
    }
}

/// Source samples on the global grid over whole periods, rows `0..=nx2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSource {
    pub first_period: i64,
    pub period_count: usize,
    pub nx1: usize,
    pub nx2: usize,
    pub h: f64,
    pub values: Vec<C64>,
}

impl GridSource {
    pub fn zeros(first_period: i64, period_count: usize, grid: &CellGrid, h: f64) -> Self {
        Self {
            first_period,
            period_count,
            nx1: grid.nx1,
            nx2: grid.nx2,
            h,
            values: vec![ZERO; period_count * grid.nx1 * (grid.nx2 + 1)],
        }
    }

    pub fn from_fn(first_period: i64, period_count: usize, grid: &CellGrid, h: f64, f: impl Fn(f64, f64) -> C64) -> Self {
        let mut s = Self::zeros(first_period, period_count, grid, h);
        let cols = s.columns();
        for j in 1..=grid.nx2 {
            for c in 0..cols {
                s.values[j * cols + c] = f(s.x1(c), s.x2(j));
            }
        }
        s
    }

    /// Samples of a bump source over the periods covering its support.
    pub fn from_source(src: &SourceTerm, grid: &CellGrid, h: f64) -> Self {
        let sup = src.support();
        let first = (sup.x1.0 / (2.0 * PI)).floor() as i64;
        let last = (sup.x1.1 / (2.0 * PI)).floor() as i64;
        Self::from_fn(first, (last - first + 1) as usize, grid, h, |x1, x2| src.value(x1, x2))
    }

    pub fn columns(&self) -> usize {
        self.period_count * self.nx1
    }

    pub fn x1(&self, col: usize) -> f64 {
        2.0 * PI * (self.first_period as f64 + col as f64 / self.nx1 as f64)
    }

    pub fn x2(&self, row: usize) -> f64 {
        row as f64 * self.h / self.nx2 as f64
    }

    pub fn last_period(&self) -> i64 {
        self.first_period + self.period_count as i64 - 1
    }

    pub fn value(&self, row: usize, col: usize) -> C64 {
        self.values[row * self.columns() + col]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == ZERO)
    }

    /// Non-zero samples as `(row, period offset, t, value)`.
    fn support(&self) -> Vec<(usize, usize, usize, C64)> {
        let cols = self.columns();
        let mut out = Vec::new();
        for j in 1..=self.nx2 {
            for c in 0..cols {
                let v = self.values[j * cols + c];
                if v != ZERO {
                    out.push((j, c / self.nx1, c % self.nx1, v));
                }
            }
        }
        out
    }
}

/// Top-row Fourier coefficients `u_n(α)` of every cell solve, which
/// represent the field exactly above `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighData {
    pub kw: Wavenumber,
    pub h: f64,
    pub alpha_count: usize,
    pub nx1: usize,
    /// α-major, modes `-nx1/2+1 ..= nx1/2-1`.
    pub coeffs: Vec<C64>,
}

impl RayleighData {
    fn mode_count(&self) -> usize {
        self.nx1 - 1
    }

    fn mode(&self, idx: usize) -> i64 {
        idx as i64 - self.nx1 as i64 / 2 + 1
    }

    pub fn alpha(&self, a: usize) -> f64 {
        alpha_numerator(self.alpha_count, a) as f64 / self.alpha_count as f64
    }

    /// `u(x)` and `∂₂u(x)` for `x2 ≥ h`.
    pub fn value_and_dx2(&self, x: Point2) -> (C64, C64) {
        let nm = self.mode_count();
        let s = x.x2 - self.h;
        let mut u = ZERO;
        let mut du = ZERO;
        for a in 0..self.alpha_count {
            let alpha = self.alpha(a);
            for i in 0..nm {
                let c = self.coeffs[a * nm + i];
                if c == ZERO {
                    continue;
                }
                let xi = self.mode(i) as f64 + alpha;
                let b = beta(&self.kw, xi);
                let v = c * (I * (xi * x.x1 + b * s)).exp();
                u += v;
                du += I * b * v;
            }
        }
        let scale = 1.0 / self.alpha_count as f64;
        (u * scale, du * scale)
    }

    pub fn value(&self, x: Point2) -> C64 {
        self.value_and_dx2(x).0
    }

    /// Field and vertical derivative at height `x2 ≥ h` on the window columns.
    pub fn row(&self, x2: f64, window: &Window) -> (Vec<C64>, Vec<C64>) {
        let p = self.nx1;
        let nm = self.mode_count();
        let sp = Spectral::new(p);
        let cols = window.columns();
        let mut u = vec![ZERO; cols];
        let mut du = vec![ZERO; cols];
        let scale = 1.0 / self.alpha_count as f64;
        let mut bu = vec![ZERO; p];
        let mut bd = vec![ZERO; p];
        for a in 0..self.alpha_count {
            let alpha = self.alpha(a);
            let num = alpha_numerator(self.alpha_count, a);
            bu.iter_mut().for_each(|v| *v = ZERO);
            bd.iter_mut().for_each(|v| *v = ZERO);
            let mut any = false;
            for i in 0..nm {
                let c = self.coeffs[a * nm + i];
                if c == ZERO {
                    continue;
                }
                any = true;
                let n = self.mode(i);
                let b = beta(&self.kw, n as f64 + alpha);
                let v = c * (I * b * (x2 - self.h)).exp();
                let slot = n.rem_euclid(p as i64) as usize;
                bu[slot] = v;
                bd[slot] = I * b * v;
            }
            if !any {
                continue;
            }
            sp.inverse(&mut bu);
            sp.inverse(&mut bd);
            for col in 0..cols {
                let (m, t) = window.split(col);
                let ph = bloch_phase(num, self.alpha_count, m, t, p) * scale;
                u[col] += bu[t] * ph;
                du[col] += bd[t] * ph;
            }
        }
        (u, du)
    }

    /// `(1/M) Σ_α Σ_n 2π |u_n(α)|² Re β(n, α)`.
    pub fn modal_flux(&self) -> f64 {
        let nm = self.mode_count();
        let mut s = 0.0;
        for a in 0..self.alpha_count {
            let alpha = self.alpha(a);
            for i in 0..nm {
                let c = self.coeffs[a * nm + i];
                let b = beta(&self.kw, self.mode(i) as f64 + alpha);
                s += 2.0 * PI * c.norm_sqr() * b.re;
            }
        }
        s / self.alpha_count as f64
    }

    /// Largest `|u_n(α)|² Re β` over modes with `|n+α|` inside `[k−band, k)`.
    pub fn cutoff_content(&self, band: f64) -> f64 {
        let nm = self.mode_count();
        let mut worst: f64 = 0.0;
        for a in 0..self.alpha_count {
            let alpha = self.alpha(a);
            for i in 0..nm {
                let xi = (self.mode(i) as f64 + alpha).abs();
                if xi < self.kw.k && xi >= self.kw.k - band {
                    let b = beta(&self.kw, xi);
                    worst = worst.max(self.coeffs[a * nm + i].norm_sqr() * b.re);
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCoefficient {
    pub alpha_j: f64,
    pub l: usize,
    pub d: f64,
    pub a: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolvePath {
    /// Direct synthesis at the real wavenumber.
    Direct,
    /// Limiting absorption with mode extraction.
    LimitingAbsorption,
}

/// History of a limiting-absorption run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapReport {
    pub eps: Vec<f64>,
    pub alpha_counts: Vec<usize>,
    /// Station amplitudes per level, in atlas mode order.
    pub amplitudes: Vec<Vec<C64>>,
    /// `2 a(ε_{i+1}) − a(ε_i)`.
    pub extrapolants: Vec<Vec<C64>>,
    /// Relative change between successive extrapolants.
    pub rel_diffs: Vec<f64>,
    pub converged: bool,
    /// Right and left station periods.
    pub stations: (i64, i64),
}

/// Radiating field on a window with its `u⁽¹⁾ + u⁽²⁾` split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiatingField {
    pub path: SolvePath,
    pub k: f64,
    pub window: Window,
    /// `u`, row-major by row.
    pub values: Vec<C64>,
    /// `u − u⁽²⁾`.
    pub u1: Vec<C64>,
    pub u2_coeffs: Vec<ModeCoefficient>,
    pub modes: Vec<PropagativeMode>,
    pub psi: PsiKind,
    /// `u = Σ w · (Rayleigh synthesis)` above `h`.
    pub rayleigh: Vec<(f64, RayleighData)>,
    pub lap: Option<LapReport>,
}

impl RadiatingField {
    pub fn value(&self, row: usize, col: usize) -> C64 {
        self.values[row * self.window.columns() + col]
    }

    /// Exact evaluation above `h` from the Rayleigh data.
    pub fn value_above(&self, x: Point2) -> Result<C64> {
        if x.x2 < self.window.h {
            return Err(Error::Domain(format!("point x2 = {} lies below h = {}", x.x2, self.window.h)));
        }
        Ok(self.rayleigh.iter().map(|(w, d)| *w * d.value(x)).sum())
    }

    pub fn value_and_dx2_above(&self, x: Point2) -> Result<(C64, C64)> {
        if x.x2 < self.window.h {
            return Err(Error::Domain(format!("point x2 = {} lies below h = {}", x.x2, self.window.h)));
        }
        let mut u = ZERO;
        let mut du = ZERO;
        for (w, d) in &self.rayleigh {
            let (a, b) = d.value_and_dx2(x);
            u += *w * a;
            du += *w * b;
        }
        Ok((u, du))
    }

    /// Field and vertical derivative along the window columns at height `x2 ≥ h`.
    pub fn row_above(&self, x2: f64) -> (Vec<C64>, Vec<C64>) {
        let cols = self.window.columns();
        let mut u = vec![ZERO; cols];
        let mut du = vec![ZERO; cols];
        for (w, d) in &self.rayleigh {
            let (a, b) = d.row(x2, &self.window);
            for c in 0..cols {
                u[c] += *w * a[c];
                du[c] += *w * b[c];
            }
        }
        (u, du)
    }

    /// `u⁽²⁾` at the global node `(period, t)` and window row `row`.
    pub fn u2_node(&self, period: i64, t: usize, row: usize) -> C64 {
        let p = self.window.nx1;
        let x1 = 2.0 * PI * (period as f64 + t as f64 / p as f64);
        let kw = Wavenumber { k: self.k, epsilon: 0.0 };
        let mut s = ZERO;
        for c in &self.u2_coeffs {
            let Some(mode) = self.modes.iter().find(|m| m.alpha_j == c.alpha_j && m.l == c.l) else {
                continue;
            };
            let psi = if c.d > 0.0 { self.psi.plus(x1) } else { self.psi.minus(x1) };
            if psi == 0.0 {
                continue;
            }
            let phi = mode_value(&mode.profile, &kw, t, row, self.window.dx2());
            s += c.a * psi * C64::from_polar(1.0, c.alpha_j * x1) * phi;
        }
        s
    }

    /// Field at a global node: window values inside, `u⁽²⁾` outside.
    pub fn node_or_u2(&self, period: i64, t: usize, row: usize) -> C64 {
        match self.window.column_of(period, t) {
            Some(col) => self.value(row, col),
            None => self.u2_node(period, t, row),
        }
    }
}

/// Periodic mode factor at cell node `t` and row `row` (rows above `h`
/// continue with spacing `dx2`).
fn mode_value(profile: &crate::cell_solver::CellField, kw: &Wavenumber, t: usize, row: usize, dx2: f64) -> C64 {
    if row <= profile.nx2 {
        return profile.value(t, row);
    }
    let x1 = 2.0 * PI * t as f64 / profile.nx1 as f64;
    let s = (row - profile.nx2) as f64 * dx2;
    profile
        .modes()
        .zip(&profile.top_modes)
        .filter(|(_, u)| **u != ZERO)
        .map(|(n, u)| {
            let b = beta(kw, n as f64 + profile.alpha);
            u * (I * (n as f64 * x1 + b * s)).exp()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    /// α-nodes (supercell periods) for the direct path.
    pub alpha_count: usize,
    pub psi: PsiKind,
    /// First absorption level.
    pub eps0: f64,
    pub max_levels: usize,
    /// Convergence tolerance on successive extrapolants.
    pub lap_tol: f64,
    /// Supercell length in units of the guided-wave damping length.
    pub decay_margin: f64,
    pub max_alpha_count: usize,
    /// Distance in periods between the source support and the first station.
    pub station_offset: i64,
    /// Consecutive station cells per side used in the tail fit.
    pub station_count: usize,
    pub cell: CellOptions,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            alpha_count: 64,
            psi: PsiKind::default(),
            eps0: 1e-2,
            max_levels: 12,
            lap_tol: 1e-6,
            decay_margin: 30.0,
            max_alpha_count: 1 << 18,
            station_offset: 12,
            station_count: 24,
            cell: CellOptions::default(),
        }
    }
}

/// Mode data prepared for station projections.
#[derive(Debug, Clone)]
struct ModeData {
    alpha: f64,
    d: f64,
    /// Fourier rows `0..=nx2`, indexed `n mod P`.
    rows: Vec<Vec<C64>>,
    /// Mode numbers with non-zero content.
    support: Vec<i64>,
    /// Top coefficients over active modes.
    top: Vec<C64>,
    gamma: Vec<f64>,
}

struct Level {
    values: Vec<C64>,
    rayleigh: RayleighData,
    /// Raw station projections `b`, indexed `(side · S + s) · modes + l`.
    proj: Vec<C64>,
}

struct Partial {
    values: Vec<C64>,
    coeffs: Vec<C64>,
    proj: Vec<C64>,
}

/// Solver for the unperturbed problem with a fixed medium, grid and atlas.
pub struct UnperturbedSolver {
    pub kw: Wavenumber,
    pub medium: PeriodicMedium,
    pub grid: CellGrid,
    pub atlas: ModeAtlas,
    pub params: SolveParams,
    cache: Vec<CellOperator>,
    modes: Vec<ModeData>,
    /// `k n(t, j)` on rows `0..=nx2`.
    kn: Vec<f64>,
}

impl UnperturbedSolver {
    pub fn new(kw: &Wavenumber, medium: &PeriodicMedium, grid: &CellGrid, atlas: &ModeAtlas, params: &SolveParams) -> Result<Self> {
        if kw.epsilon != 0.0 {
            return Err(Error::Domain("the radiating solver takes a real wavenumber".into()));
        }
        if !atlas.regular {
            return Err(Error::NotRegular(format!(
                "k = {} has a vanishing propagation constant; the radiation condition is undefined",
                kw.k
            )));
        }
        if atlas.grid != *grid || atlas.medium_hash != medium.hash() || atlas.k != kw.k {
            return Err(Error::GridMismatch("atlas was computed for a different grid, medium or k".into()));
        }
        if params.station_count == 0 || params.station_offset < 1 {
            return Err(Error::Domain("limiting absorption needs at least one station beyond the source".into()));
        }
        if atlas.exceptional.iter().any(|e| e.at_cutoff) {
            return Err(Error::Domain("an exceptional value sits at a cutoff quasimomentum".into()));
        }
        let p = grid.nx1;
        let kn: Vec<f64> = (0..=grid.nx2)
            .flat_map(|j| {
                let x2 = grid.dx2(medium.h) * j as f64;
                (0..p).map(move |t| (t, x2))
            })
            .map(|(t, x2)| kw.k * medium.n(2.0 * PI * t as f64 / p as f64, x2))
            .collect();
        let mut solver = Self {
            kw: *kw,
            medium: medium.clone(),
            grid: *grid,
            atlas: atlas.clone(),
            params: *params,
            cache: Vec::new(),
            modes: Vec::new(),
            kn,
        };
        // factored operators are cached while they fit a fixed memory budget
        let modes = grid.nx1 - 1;
        let band = if medium.is_x1_invariant() { 4 } else { 3 * modes + 1 };
        let bytes = 2 * params.alpha_count * grid.nx2 * modes * band * std::mem::size_of::<C64>();
        let cacheable = bytes <= CACHE_BUDGET;
        if solver.path() == SolvePath::Direct && cacheable {
            let m = params.alpha_count;
            solver.cache = (0..m)
                .into_par_iter()
                .map(|a| {
                    let alpha = alpha_numerator(m, a) as f64 / m as f64;
                    CellOperator::assemble(kw, medium, alpha, grid, &params.cell)
                })
                .collect::<Result<_>>()?;
            for op in &solver.cache {
                if !op.near_cutoff.is_empty() {
                    return Err(Error::Domain(format!(
                        "α-node {} lies in the cutoff guard band; change alpha_count",
                        op.alpha
                    )));
                }
            }
        } else {
            let sp = Spectral::new(p);
            solver.modes = atlas
                .modes
                .iter()
                .map(|m| {
                    let f = &m.profile;
                    let rows: Vec<Vec<C64>> = (0..=f.nx2)
                        .map(|j| {
                            let mut r = f.values[j * p..(j + 1) * p].to_vec();
                            sp.forward(&mut r);
                            r
                        })
                        .collect();
                    let support = f
                        .modes()
                        .filter(|&n| {
                            let s = n.rem_euclid(p as i64) as usize;
                            rows.iter().any(|r| r[s] != ZERO)
                        })
                        .collect();
                    let gamma = f.modes().map(|n| beta(kw, n as f64 + f.alpha).im).collect();
                    ModeData {
                        alpha: m.alpha_j,
                        d: m.d,
                        rows,
                        support,
                        top: f.top_modes.clone(),
                        gamma,
                    }
                })
                .collect();
        }
        Ok(solver)
    }

    pub fn path(&self) -> SolvePath {
        if self.atlas.is_trivial() {
            SolvePath::Direct
        } else {
            SolvePath::LimitingAbsorption
        }
    }

    pub fn window(&self, first_period: i64, period_count: usize, rows_above: usize) -> Window {
        Window::new(first_period, period_count, &self.grid, self.medium.h, rows_above)
    }

    fn check_inputs(&self, src: &GridSource, window: &Window) -> Result<()> {
        if src.nx1 != self.grid.nx1 || src.nx2 != self.grid.nx2 || window.nx1 != self.grid.nx1 || window.nx2 != self.grid.nx2 {
            return Err(Error::GridMismatch("source or window sampled on a different grid".into()));
        }
        if src.values.len() != src.columns() * (src.nx2 + 1) {
            return Err(Error::GridMismatch("source sample count does not match its geometry".into()));
        }
        Ok(())
    }

    /// Number of α-nodes used at absorption level ε.
    pub fn alpha_count_for(&self, eps: f64) -> usize {
        let dmax = self.modes.iter().map(|m| m.d.abs()).fold(0.0, f64::max).max(1e-3);
        let need = (self.params.decay_margin * dmax / (2.0 * PI * eps)).ceil() as usize;
        need.max(self.params.alpha_count).next_power_of_two().min(self.params.max_alpha_count)
    }

    fn stations(&self, src: &GridSource) -> (i64, i64) {
        (src.last_period() + self.params.station_offset, src.first_period - self.params.station_offset)
    }

    /// Solves for `src`, choosing the path from the atlas.
    pub fn solve(&self, src: &GridSource, window: &Window) -> Result<RadiatingField> {
        self.check_inputs(src, window)?;
        match self.path() {
            SolvePath::Direct => {
                let level = self.run_level(&self.kw, self.params.alpha_count, src, window, true, false)?;
                Ok(RadiatingField {
                    path: SolvePath::Direct,
                    k: self.kw.k,
                    window: *window,
                    u1: level.values.clone(),
                    values: level.values,
                    u2_coeffs: vec![],
                    modes: vec![],
                    psi: self.params.psi,
                    rayleigh: vec![(1.0, level.rayleigh)],
                    lap: None,
                })
            }
            SolvePath::LimitingAbsorption => self.solve_lap(src, window, None),
        }
    }

    /// Limiting absorption on the fixed two-level path `(ε_prev, ε_last)`,
    /// which makes the solve linear in the source.
    pub fn solve_frozen(&self, src: &GridSource, window: &Window, eps_pair: (f64, f64)) -> Result<RadiatingField> {
        self.check_inputs(src, window)?;
        match self.path() {
            SolvePath::Direct => self.solve(src, window),
            SolvePath::LimitingAbsorption => self.solve_lap(src, window, Some(eps_pair)),
        }
    }

    fn solve_lap(&self, src: &GridSource, window: &Window, frozen: Option<(f64, f64)>) -> Result<RadiatingField> {
        let stations = self.stations(src);
        let x_src = PI * (src.first_period + src.last_period() + 1) as f64;
        let nmodes = self.modes.len();
        let schedule: Vec<f64> = match frozen {
            Some((a, b)) => vec![a, b],
            None => (0..self.params.max_levels).map(|i| self.params.eps0 / 2f64.powi(i as i32)).collect(),
        };
        let mut report = LapReport {
            eps: vec![],
            alpha_counts: vec![],
            amplitudes: vec![],
            extrapolants: vec![],
            rel_diffs: vec![],
            converged: false,
            stations,
        };
        let mut prev: Option<Level> = None;
        let mut last: Option<Level> = None;
        for &eps in &schedule {
            let kw = self.kw.with_epsilon(eps)?;
            let m = self.alpha_count_for(eps);
            // intermediate levels only need the station projections
            let level = self.run_level(&kw, m, src, window, frozen.is_some(), true)?;
            let amps = self.amplitudes(&level.proj, eps, stations, x_src)?;
            report.eps.push(eps);
            report.alpha_counts.push(m);
            report.amplitudes.push(amps);
            let nl = report.amplitudes.len();
            if nl >= 2 {
                let r: Vec<C64> = (0..nmodes)
                    .map(|i| 2.0 * report.amplitudes[nl - 1][i] - report.amplitudes[nl - 2][i])
                    .collect();
                report.extrapolants.push(r);
            }
            let ne = report.extrapolants.len();
            prev = last.take();
            last = Some(level);
            if frozen.is_some() {
                continue;
            }
            if ne >= 2 {
                let a = &report.extrapolants[ne - 1];
                let b = &report.extrapolants[ne - 2];
                let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
                let scale: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                let rel = if scale > 1e-14 { diff / scale } else { diff / 1e-14 };
                report.rel_diffs.push(rel);
                if rel < self.params.lap_tol {
                    report.converged = true;
                    break;
                }
                let nd = report.rel_diffs.len();
                if nd >= 3 && report.rel_diffs[nd - 1] > report.rel_diffs[nd - 2] && report.rel_diffs[nd - 2] > report.rel_diffs[nd - 3] {
                    return Err(Error::LimitingAbsorption(format!(
                        "extrapolants diverge: relative differences {:?}",
                        report.rel_diffs
                    )));
                }
            }
        }
        if frozen.is_some() {
            report.converged = true;
        }
        if !report.converged {
            return Err(Error::LimitingAbsorption(format!(
                "no convergence after {} levels: relative differences {:?}",
                report.eps.len(),
                report.rel_diffs
            )));
        }
        let (mut prev, mut last) = (prev.expect("two levels"), last.expect("two levels"));
        if frozen.is_none() {
            let n = report.eps.len();
            for (level, i) in [(&mut prev, n - 2), (&mut last, n - 1)] {
                let kw = self.kw.with_epsilon(report.eps[i])?;
                *level = self.run_level(&kw, report.alpha_counts[i], src, window, true, false)?;
            }
        }
        let values: Vec<C64> = last.values.iter().zip(&prev.values).map(|(a, b)| 2.0 * a - b).collect();
        let a = report.extrapolants.last().cloned().unwrap_or_default();
        let u2_coeffs: Vec<ModeCoefficient> = self
            .atlas
            .modes
            .iter()
            .zip(&a)
            .map(|(m, &a)| ModeCoefficient {
                alpha_j: m.alpha_j,
                l: m.l,
                d: m.d,
                a,
            })
            .collect();
        let mut field = RadiatingField {
            path: SolvePath::LimitingAbsorption,
            k: self.kw.k,
            window: *window,
            u1: vec![],
            values,
            u2_coeffs,
            modes: self.atlas.modes.clone(),
            psi: self.params.psi,
            rayleigh: vec![(2.0, last.rayleigh), (-1.0, prev.rayleigh)],
            lap: Some(report),
        };
        let cols = window.columns();
        let mut u1 = field.values.clone();
        for r in 0..window.rows() {
            for c in 0..cols {
                let (m, t) = window.split(c);
                u1[r * cols + c] -= field.u2_node(m, t, r);
            }
        }
        field.u1 = u1;
        Ok(field)
    }

    /// Mode amplitudes from raw station projections at level ε.
    ///
    /// Each station gives `a_s` from its Gram system, corrected for the
    /// damping `e^{-ε x1/|d|}`. What remains of the non-guided field at the
    /// stations decays like `X^{-3/2}` with the phase of the branch points
    /// `±(k+iε)`, so `a_s` is fitted by `a + Σ_± e^{igX}(C X^{-3/2} + D X^{-5/2})`.
    fn amplitudes(&self, proj: &[C64], eps: f64, stations: (i64, i64), x_src: f64) -> Result<Vec<C64>> {
        let nm = self.modes.len();
        let ns = self.params.station_count;
        let dx2 = self.grid.dx2(self.medium.h);
        let mut out = vec![ZERO; nm];
        for (side, first, dir) in [(0usize, stations.0, 1i64), (1, stations.1, -1)] {
            let sign = dir as f64;
            let idx: Vec<usize> = (0..nm).filter(|&i| self.modes[i].d * sign > 0.0).collect();
            if idx.is_empty() {
                continue;
            }
            let base = DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
                let (ml, mlp) = (&self.modes[idx[r]], &self.modes[idx[c]]);
                let beta_u: Vec<C64> = mlp.gamma.iter().map(|g| C64::new(0.0, *g)).collect();
                let weighted = self.weighted_rows_of_mode(mlp);
                cross_integral(&weighted, &mlp.top, &beta_u, mlp.alpha - ml.alpha, ml, self.kw.k, self.grid.nx1, dx2)
            });
            let mut per_station = vec![vec![ZERO; ns]; idx.len()];
            let mut dist = vec![0.0; ns];
            for st in 0..ns {
                let m = first + dir * st as i64;
                let g = DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
                    let delta = self.modes[idx[c]].alpha - self.modes[idx[r]].alpha;
                    C64::from_polar(1.0, delta * 2.0 * PI * m as f64) * base[(r, c)]
                });
                let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| proj[(side * ns + st) * nm + i]));
                let sol = g
                    .lu()
                    .solve(&b)
                    .ok_or_else(|| Error::BasisDegeneracy("station Gram matrix is singular".into()))?;
                let xc = 2.0 * PI * (m as f64 + 0.5);
                dist[st] = (xc - x_src).abs();
                for (k, &i) in idx.iter().enumerate() {
                    per_station[k][st] = sol[k] * (eps * xc.abs() / self.modes[i].d.abs()).exp();
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                out[i] = self.tail_fit(&per_station[k], &dist, sign, eps, &self.modes[i]);
            }
        }
        Ok(out)
    }

    fn tail_fit(&self, a: &[C64], dist: &[f64], sign: f64, eps: f64, mode: &ModeData) -> C64 {
        let ns = a.len();
        if ns < 8 {
            return a.iter().sum::<C64>() / ns as f64;
        }
        let kc = C64::new(self.kw.k, eps);
        let x0 = dist[0];
        let cols = 5;
        let mat = DMatrix::from_fn(ns, cols, |r, c| {
            if c == 0 {
                return C64::new(1.0, 0.0);
            }
            let branch = if (c - 1) / 2 == 0 { 1.0 } else { -1.0 };
            let power = if (c - 1) % 2 == 0 { -1.5 } else { -2.5 };
            let g = branch * kc - sign * mode.alpha - I * (eps / mode.d.abs());
            let x = dist[r];
            (I * g * (x - x0)).exp() * (x / x0).powf(power)
        });
        let rhs = DVector::from_column_slice(a);
        match mat.svd(true, true).solve(&rhs, 1e-12) {
            Ok(sol) => sol[0],
            Err(_) => a.iter().sum::<C64>() / ns as f64,
        }
    }

    /// Fourier rows of `k n φ` for a mode, rows `0..=nx2`.
    fn weighted_rows_of_mode(&self, m: &ModeData) -> Vec<Vec<C64>> {
        let p = self.grid.nx1;
        let sp = Spectral::new(p);
        m.rows
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let mut phys = r.clone();
                sp.inverse(&mut phys);
                for (t, v) in phys.iter_mut().enumerate() {
                    *v *= self.kn[j * p + t];
                }
                sp.forward(&mut phys);
                phys
            })
            .collect()
    }

    /// One pass over `m` α-nodes at wavenumber `kw`.
    fn run_level(&self, kw: &Wavenumber, m: usize, src: &GridSource, window: &Window, synth: bool, project: bool) -> Result<Level> {
        let p = self.grid.nx1;
        let nm = p - 1;
        let support = src.support();
        let stations = self.stations(src);
        let nproj = if project { 2 * self.params.station_count * self.modes.len() } else { 0 };
        let wlen = if synth { window.len() } else { 0 };
        let chunks = m.div_ceil(CHUNK);
        let batch = (2 * rayon::current_num_threads()).max(1);
        let mut values = vec![ZERO; wlen];
        let mut coeffs = vec![ZERO; m * nm];
        let mut proj = vec![ZERO; nproj];
        let mut start = 0;
        while start < chunks {
            let end = (start + batch).min(chunks);
            let partials: Vec<Result<Partial>> = (start..end)
                .into_par_iter()
                .map(|c| self.run_chunk(kw, m, c * CHUNK, ((c + 1) * CHUNK).min(m), &support, src, window, wlen, nproj, stations))
                .collect();
            for (c, part) in (start..end).zip(partials) {
                let part = part?;
                for (v, x) in values.iter_mut().zip(&part.values) {
                    *v += x;
                }
                for (v, x) in proj.iter_mut().zip(&part.proj) {
                    *v += x;
                }
                let off = c * CHUNK * nm;
                coeffs[off..off + part.coeffs.len()].copy_from_slice(&part.coeffs);
            }
            start = end;
        }
        Ok(Level {
            values,
            rayleigh: RayleighData {
                kw: *kw,
                h: self.medium.h,
                alpha_count: m,
                nx1: p,
                coeffs,
            },
            proj,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run_chunk(
        &self,
        kw: &Wavenumber,
        m: usize,
        a0: usize,
        a1: usize,
        support: &[(usize, usize, usize, C64)],
        src: &GridSource,
        window: &Window,
        wlen: usize,
        nproj: usize,
        stations: (i64, i64),
    ) -> Result<Partial> {
        let p = self.grid.nx1;
        let nx2 = self.grid.nx2;
        let nm = p - 1;
        let cols = window.columns();
        let dx2 = self.grid.dx2(self.medium.h);
        let sp = Spectral::new(p);
        let scale = 1.0 / m as f64;
        let mut part = Partial {
            values: vec![ZERO; wlen],
            coeffs: vec![ZERO; (a1 - a0) * nm],
            proj: vec![ZERO; nproj],
        };
        let mut ft = vec![ZERO; p * (nx2 + 1)];
        let mut phases = vec![ZERO; if wlen > 0 { cols } else { 0 }];
        let mut above = vec![ZERO; p];
        let mut src_phase = vec![ZERO; src.columns()];
        for a in a0..a1 {
            let num = alpha_numerator(m, a);
            let alpha = num as f64 / m as f64;
            ft.iter_mut().for_each(|v| *v = ZERO);
            for (c, ph) in src_phase.iter_mut().enumerate() {
                *ph = bloch_phase(num, m, src.first_period + (c / p) as i64, c % p, p).conj();
            }
            for &(j, mi, t, v) in support {
                ft[j * p + t] += v * src_phase[mi * p + t];
            }
            if ft.iter().all(|v| *v == ZERO) {
                continue;
            }
            let assembled;
            let op = if kw.epsilon == 0.0 && self.cache.len() == m {
                &self.cache[a]
            } else {
                assembled = CellOperator::assemble(kw, &self.medium, alpha, &self.grid, &self.params.cell)?;
                &assembled
            };
            let mut c = op.rhs_from_values(&ft)?;
            op.solve_coeffs(&mut c)?;
            let top: Vec<C64> = (0..nm).map(|i| op.top_coeff(&c, i)).collect();
            part.coeffs[(a - a0) * nm..(a - a0 + 1) * nm].copy_from_slice(&top);
            let vals = op.to_values(&c);

            if wlen > 0 {
                for (col, ph) in phases.iter_mut().enumerate() {
                    let (period, t) = window.split(col);
                    *ph = bloch_phase(num, m, period, t, p) * scale;
                }
                for r in 0..=nx2 {
                    let row = &vals[r * p..(r + 1) * p];
                    let out = &mut part.values[r * cols..(r + 1) * cols];
                    for (col, o) in out.iter_mut().enumerate() {
                        *o += row[col % p] * phases[col];
                    }
                }
                for ra in 1..=window.rows_above {
                    above.iter_mut().for_each(|v| *v = ZERO);
                    for (i, &u) in top.iter().enumerate() {
                        let n = i as i64 - p as i64 / 2 + 1;
                        let b = op.betas[i];
                        above[n.rem_euclid(p as i64) as usize] = u * (I * b * (ra as f64 * dx2)).exp();
                    }
                    sp.inverse(&mut above);
                    let r = nx2 + ra;
                    let out = &mut part.values[r * cols..(r + 1) * cols];
                    for (col, o) in out.iter_mut().enumerate() {
                        *o += above[col % p] * phases[col];
                    }
                }
            }

            if nproj > 0 {
                // Fourier rows of k n ũ_α
                let weighted: Vec<Vec<C64>> = (0..=nx2)
                    .map(|j| {
                        let mut r: Vec<C64> = (0..p).map(|t| vals[j * p + t] * self.kn[j * p + t]).collect();
                        sp.forward(&mut r);
                        r
                    })
                    .collect();
                let nmodes = self.modes.len();
                let ns = self.params.station_count;
                for (i, md) in self.modes.iter().enumerate() {
                    let delta = alpha - md.alpha;
                    let j = cross_integral(&weighted, &top, &op.betas, delta, md, self.kw.k, p, dx2) * scale;
                    for (side, first, dir) in [(0, stations.0, 1.0), (1, stations.1, -1.0)] {
                        let mut ph = C64::from_polar(1.0, delta * 2.0 * PI * first as f64);
                        let step = C64::from_polar(1.0, dir * delta * 2.0 * PI);
                        for st in 0..ns {
                            part.proj[(side * ns + st) * nmodes + i] += ph * j;
                            ph *= step;
                        }
                    }
                }
            }
        }
        Ok(part)
    }
}

/// `k ∫_{C_∞} n ũ conj(φ) e^{iδ x1} dx` for a periodic factor `ũ` given by the
/// Fourier rows of `k n ũ` and its top coefficients with branch values
/// `beta_u`; the `x1` integral is exact for the trigonometric polynomials.
#[allow(clippy::too_many_arguments)]
fn cross_integral(weighted: &[Vec<C64>], top: &[C64], beta_u: &[C64], delta: f64, mode: &ModeData, k: f64, p: usize, dx2: f64) -> C64 {
    let nx2 = weighted.len() - 1;
    let half = p as i64 / 2;
    let e = |s: f64| -> C64 {
        if s.abs() < 1e-14 {
            C64::new(2.0 * PI, 0.0)
        } else {
            (C64::from_polar(1.0, 2.0 * PI * s) - 1.0) / (I * s)
        }
    };
    let mut total = ZERO;
    for &np in &mode.support {
        let sp = np.rem_euclid(p as i64) as usize;
        let ip = (np + half - 1) as usize;
        let phi_top = mode.top[ip].conj();
        let gamma = mode.gamma[ip];
        for n in -half + 1..half {
            let s = n.rem_euclid(p as i64) as usize;
            let i = (n + half - 1) as usize;
            let mut acc = ZERO;
            for j in 1..=nx2 {
                let w = if j == nx2 { 0.5 } else { 1.0 };
                acc += w * weighted[j][s] * mode.rows[j][sp].conj();
            }
            acc *= dx2;
            if phi_top != ZERO && top[i] != ZERO {
                acc += k * top[i] * phi_top / (gamma - I * beta_u[i]);
            }
            if acc != ZERO {
                total += acc * e((n - np) as f64 + delta);
            }
        }
    }
    total
}

/// Solves the unperturbed problem for a bump source on a window.
pub fn solve_unperturbed(
    kw: &Wavenumber,
    medium: &PeriodicMedium,
    grid: &CellGrid,
    f: &SourceTerm,
    atlas: &ModeAtlas,
    params: &SolveParams,
    window: (i64, usize, usize),
) -> Result<RadiatingField> {
    let solver = UnperturbedSolver::new(kw, medium, grid, atlas, params)?;
    let src = GridSource::from_source(f, grid, medium.h);
    let w = solver.window(window.0, window.1, window.2);
    solver.solve(&src, &w)
}

/// `max_x |u(x) − 2∫_{Γ_h} u ∂Φ/∂y2 ds|` with `u` on `Γ_h` given by samples
/// on a line and `u(x)` by a callback; the layer integral is tapered over
/// the outer quarters of the sampled window.
pub fn uprc_residual_line(
    gamma: &crate::bloch::LineSignal,
    h: f64,
    kw: &Wavenumber,
    points: &[Point2],
    u_at: impl Fn(Point2) -> Result<C64>,
) -> Result<f64> {
    let n = gamma.samples.len();
    if n == 0 {
        return Ok(0.0);
    }
    let a = gamma.position(0);
    let b = gamma.position(n - 1) + gamma.spacing();
    let tau = 0.25 * (b - a);
    let mut worst: f64 = 0.0;
    for &x in points {
        if x.x2 <= h {
            return Err(Error::Domain(format!("test point x2 = {} must lie above h = {h}", x.x2)));
        }
        let mut layer = ZERO;
        for (i, &u) in gamma.samples.iter().enumerate() {
            if u == ZERO {
                continue;
            }
            let y1 = gamma.position(i);
            let w = smooth_step((y1 - a) / tau) * smooth_step((b - y1) / tau);
            if w == 0.0 {
                continue;
            }
            layer += w * u * dphi_dy2(kw, x, Point2::new(y1, h))?;
        }
        layer *= 2.0 * gamma.spacing();
        worst = worst.max((u_at(x)? - layer).norm());
    }
    Ok(worst)
}

/// Upward radiation residual of a computed field at test points above `h`.
pub fn uprc_residual(field: &RadiatingField, kw: &Wavenumber, points: &[Point2]) -> Result<f64> {
    let w = &field.window;
    let cols = w.columns();
    let line = crate::bloch::LineSignal {
        samples: (0..cols).map(|c| field.value(w.nx2, c)).collect(),
        first_period: w.first_period,
        period_count: w.period_count,
        samples_per_period: w.nx1,
    };
    uprc_residual_line(&line, w.h, kw, points, |x| field.value_above(x))
}

/// `max_x |u(x) − (k²∫_W (n−1) u G − ∫_W f G)| / |u(x)|` with trapezoid
/// quadrature on the solver grid. Outside the field window `u` is replaced
/// by `u⁽²⁾`; the volume integral extends `extension` periods beyond the
/// window on both sides.
pub fn integral_representation_residual(
    field: &RadiatingField,
    kw: &Wavenumber,
    medium: &PeriodicMedium,
    f: &GridSource,
    points: &[Point2],
    extension: usize,
) -> Result<f64> {
    let w = &field.window;
    let p = w.nx1;
    let nx2 = w.nx2;
    let dx1 = w.dx1();
    let dx2 = w.dx2();
    let k2 = kw.k * kw.k;
    let first = w.first_period - extension as i64;
    let last = w.first_period + w.period_count as i64 + extension as i64;
    let mut worst: f64 = 0.0;
    for &x in points {
        let u = field.value_above(x)?;
        let volume: C64 = if medium.is_free() {
            ZERO
        } else {
            (first..last)
                .into_par_iter()
                .map(|period| -> Result<C64> {
                    let mut s = ZERO;
                    for j in 1..=nx2 {
                        let wj = if j == nx2 { 0.5 } else { 1.0 };
                        let x2 = j as f64 * dx2;
                        for t in 0..p {
                            let x1 = 2.0 * PI * (period as f64 + t as f64 / p as f64);
                            let contrast = medium.n(x1, x2) - 1.0;
                            if contrast == 0.0 {
                                continue;
                            }
                            let uy = field.node_or_u2(period, t, j);
                            if uy == ZERO {
                                continue;
                            }
                            s += wj * contrast * uy * green_halfplane(kw, x, Point2::new(x1, x2))?;
                        }
                    }
                    Ok(s)
                })
                .collect::<Result<Vec<C64>>>()?
                .into_iter()
                .sum::<C64>()
                * (k2 * dx1 * dx2)
        };
        let mut source = ZERO;
        let cols = f.columns();
        for j in 1..=f.nx2 {
            let wj = if j == f.nx2 { 0.5 } else { 1.0 };
            for c in 0..cols {
                let v = f.value(j, c);
                if v != ZERO {
                    source += wj * v * green_halfplane(kw, x, Point2::new(f.x1(c), f.x2(j)))?;
                }
            }
        }
        source *= dx1 * dx2;
        let rep = volume - source;
        let scale = u.norm().max(1e-300);
        worst = worst.max((u - rep).norm() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_integral_values() {
        // Si(1), Si(10), Si(π) from tables
        assert!((sine_integral(1.0) - 0.946_083_070_367_183).abs() < 1e-12);
        assert!((sine_integral(10.0) - 1.658_347_594_218_874).abs() < 1e-12);
        assert!((sine_integral(PI) - 1.851_937_051_982_466).abs() < 1e-12);
        assert!((sine_integral(2000.0) - (PI / 2.0 - (2000f64).cos() / 2000.0)).abs() < 1e-6);
        assert_eq!(psi_plus(0.0), 0.5);
    }

    #[test]
    fn ramp_is_a_partition_of_unity() {
        let psi = PsiKind::default();
        for i in -100..=100 {
            let x = i as f64 * 0.1;
            assert!((psi.plus(x) + psi.minus(x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(psi.plus(2.0 * PI), 1.0);
        assert_eq!(psi.plus(-2.0 * PI), 0.0);
        assert!((psi.plus(0.0) - 0.5).abs() < 1e-15);
    }
}
