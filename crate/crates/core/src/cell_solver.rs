//! α-quasiperiodic cell problem on `(0, 2π) × (0, h)` with a Rayleigh
//! transparent boundary at `x2 = h`.
//!
//! Unknowns are the Fourier coefficients `û_n(x2_j)` of the periodic factor
//! on rows `j = 1..=nx2` (row 0 carries the Dirichlet condition). The Nyquist
//! mode is held at zero. Interior rows use the centered second difference;
//! the top row eliminates a ghost node through `∂₂û_n = iβ_n û_n` and is
//! halved, so for real `n` the system is complex symmetric and Hermitian
//! apart from the DtN entries. All rows are scaled by `Δ²`.
//!
//! When the medium does not depend on `x1` the system splits into one
//! tridiagonal block per Fourier mode.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{smallest_singular, BandLu, BandMatrix, LinearSolve};
use crate::medium::{CellGrid, PeriodicMedium};
use crate::special_fn::{Point2, Wavenumber};

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// `β = √((k+iε)² − ξ²)` on the branch with `Im β ≥ 0`; exact at `ε = 0`.
pub fn beta(kw: &Wavenumber, xi: f64) -> C64 {
    if kw.epsilon == 0.0 {
        let d = kw.k * kw.k - xi * xi;
        if d > 0.0 {
            C64::new(d.sqrt(), 0.0)
        } else if d < 0.0 {
            C64::new(0.0, (-d).sqrt())
        } else {
            ZERO
        }
    } else {
        let ke = kw.effective();
        (ke * ke - xi * xi).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBranch {
    pub n: i64,
    pub alpha: f64,
    pub beta: C64,
}

impl BetaBranch {
    pub fn new(kw: &Wavenumber, n: i64, alpha: f64) -> Self {
        Self {
            n,
            alpha,
            beta: beta(kw, n as f64 + alpha),
        }
    }

    pub fn is_propagating(&self) -> bool {
        self.beta.re > 0.0 && self.beta.im == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellOptions {
    /// Half-width of the guard band around `|n+α| = k`.
    pub cutoff_tol: f64,
    /// Singularity threshold relative to the operator norm.
    pub sing_tol_rel: f64,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            cutoff_tol: 1e-8,
            sing_tol_rel: 1e-10,
        }
    }
}

/// Solution of one cell problem: physical samples of the periodic factor
/// `ũ_α` on `nx2 + 1` rows of `nx1` points, plus the top-row Fourier data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellField {
    pub alpha: f64,
    pub nx1: usize,
    pub nx2: usize,
    pub h: f64,
    pub n_trunc: usize,
    /// Row-major by `x2` row, `values[j * nx1 + t]` at `(2πt/nx1, jh/nx2)`.
    pub values: Vec<C64>,
    /// `u_n(α)` for `n = -n_trunc..=n_trunc`.
    pub rayleigh: Vec<C64>,
    /// Top-row coefficients for every active mode `-nx1/2+1 ..= nx1/2-1`.
    pub top_modes: Vec<C64>,
}

impl CellField {
    pub fn value(&self, t: usize, j: usize) -> C64 {
        self.values[j * self.nx1 + t]
    }

    pub fn rayleigh_coefficient(&self, n: i64) -> C64 {
        let idx = n + self.n_trunc as i64;
        if idx < 0 || idx as usize >= self.rayleigh.len() {
            ZERO
        } else {
            self.rayleigh[idx as usize]
        }
    }

    pub fn top_coefficient(&self, n: i64) -> C64 {
        let idx = n + self.nx1 as i64 / 2 - 1;
        if idx < 0 || idx as usize >= self.top_modes.len() {
            ZERO
        } else {
            self.top_modes[idx as usize]
        }
    }

    pub fn modes(&self) -> impl Iterator<Item = i64> {
        let half = self.nx1 as i64 / 2;
        -half + 1..half
    }

    /// `Σ_t Σ_j w_j |ũ|² Δx1 Δx2` with trapezoid weights in `x2`.
    pub fn l2_norm_sqr(&self) -> f64 {
        let dx1 = 2.0 * PI / self.nx1 as f64;
        let dx2 = self.h / self.nx2 as f64;
        let mut s = 0.0;
        for j in 1..=self.nx2 {
            let w = if j == self.nx2 { 0.5 } else { 1.0 };
            let row: f64 = self.values[j * self.nx1..(j + 1) * self.nx1].iter().map(|v| v.norm_sqr()).sum();
            s += w * row;
        }
        s * dx1 * dx2
    }

    /// Outgoing energy flux through the top of the cell,
    /// `Im ∫ conj(ũ) ∂₂ũ dx1 = 2π Σ_n |u_n|² Re β_n`.
    pub fn top_flux(&self, kw: &Wavenumber) -> f64 {
        self.modes()
            .zip(&self.top_modes)
            .map(|(n, u)| {
                let b = beta(kw, n as f64 + self.alpha);
                2.0 * PI * (u.conj() * I * b * u).im
            })
            .sum()
    }
}

/// Forward/inverse DFT of one `x1` row; coefficients indexed `n mod P`.
#[derive(Clone)]
pub(crate) struct Spectral {
    p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Spectral({})", self.p)
    }
}

impl Spectral {
    /// Plans are shared per size; planning dominates small transforms.
    pub(crate) fn new(p: usize) -> Self {
        static PLANS: OnceLock<Mutex<HashMap<usize, Spectral>>> = OnceLock::new();
        let mut plans = PLANS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
        plans
            .entry(p)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Self {
                    p,
                    fwd: planner.plan_fft_forward(p),
                    inv: planner.plan_fft_inverse(p),
                }
            })
            .clone()
    }

    /// `û_n = (1/P) Σ_t u_t e^{-int_t}` in place.
    pub(crate) fn forward(&self, row: &mut [C64]) {
        self.fwd.process(row);
        let s = 1.0 / self.p as f64;
        row.iter_mut().for_each(|v| *v *= s);
    }

    /// `u_t = Σ_n û_n e^{int_t}` in place.
    pub(crate) fn inverse(&self, row: &mut [C64]) {
        self.inv.process(row);
    }
}

#[derive(Debug, Clone)]
enum Blocks {
    Decoupled {
        mats: Vec<BandMatrix>,
        lus: Vec<Option<BandLu>>,
    },
    Coupled {
        mat: BandMatrix,
        lu: Option<BandLu>,
    },
}

/// Assembled and factored cell operator for one `(k, ε, α)`.
#[derive(Debug, Clone)]
pub struct CellOperator {
    pub kw: Wavenumber,
    pub alpha: f64,
    pub h: f64,
    pub grid: CellGrid,
    /// Active Fourier modes in ascending order.
    pub modes: Vec<i64>,
    pub betas: Vec<C64>,
    /// Modes with `||n+α| − k| < cutoff_tol`.
    pub near_cutoff: Vec<i64>,
    /// Max-row-sum norm of the scaled system.
    pub norm: f64,
    pub sing_tol: f64,
    blocks: Blocks,
    spectral: Spectral,
}

/// Assembles the discrete `I − K_α` system with default options.
pub fn assemble_cell_operator(
    kw: &Wavenumber,
    medium: &PeriodicMedium,
    alpha: f64,
    grid: &CellGrid,
) -> Result<CellOperator> {
    CellOperator::assemble(kw, medium, alpha, grid, &CellOptions::default())
}

/// Solves the cell problem for a right-hand side sampled like a [`CellField`].
pub fn solve_cell(op: &CellOperator, f_alpha: &[C64]) -> Result<CellField> {
    op.solve(f_alpha)
}

/// Rayleigh extension `Σ_{|n|≤n_trunc} u_n e^{inx1 + iβ_n(x2−h)}` above `h`.
pub fn rayleigh_extend(field: &CellField, kw: &Wavenumber, x: Point2) -> C64 {
    let nt = field.n_trunc as i64;
    (-nt..=nt)
        .map(|n| {
            let b = beta(kw, n as f64 + field.alpha);
            field.rayleigh_coefficient(n) * (I * (n as f64 * x.x1 + b * (x.x2 - field.h))).exp()
        })
        .sum()
}

/// σ_min of the discrete system.
pub fn smallest_singular_value(op: &CellOperator) -> f64 {
    op.smallest_singular_values(1).first().map_or(0.0, |s| s.0)
}

impl CellOperator {
    pub fn assemble(
        kw: &Wavenumber,
        medium: &PeriodicMedium,
        alpha: f64,
        grid: &CellGrid,
        opts: &CellOptions,
    ) -> Result<Self> {
        if !(alpha > -0.5 && alpha <= 0.5) {
            return Err(Error::Domain(format!("quasimomentum {alpha} outside (-1/2, 1/2]")));
        }
        grid.validate()?;
        let h = medium.h;
        let p = grid.nx1;
        let nrows = grid.nx2;
        let dx2 = grid.dx2(h);
        let d2 = dx2 * dx2;
        let modes = grid.modes();
        let na = modes.len();
        let ke = kw.effective();
        let k2 = ke * ke;
        let betas: Vec<C64> = modes.iter().map(|&n| beta(kw, n as f64 + alpha)).collect();
        let near_cutoff = modes
            .iter()
            .copied()
            .filter(|&n| ((n as f64 + alpha).abs() - kw.k).abs() < opts.cutoff_tol)
            .collect();
        let spectral = Spectral::new(p);

        // Diagonal symbol per mode and row, excluding the index term.
        let symbol = |a: usize| -> C64 {
            let xi = modes[a] as f64 + alpha;
            C64::new(-2.0 - d2 * xi * xi, 0.0)
        };

        let (blocks, norm) = if medium.is_x1_invariant() {
            let nj: Vec<f64> = (1..=nrows).map(|j| medium.n(0.0, j as f64 * dx2)).collect();
            let mut mats = Vec::with_capacity(na);
            let mut norm: f64 = 0.0;
            for a in 0..na {
                let mut m = BandMatrix::zeros(nrows, 1, 1);
                for r in 0..nrows {
                    let top = r + 1 == nrows;
                    let s = if top { 0.5 } else { 1.0 };
                    let mut diag = symbol(a) + d2 * k2 * nj[r];
                    if top {
                        diag += 2.0 * I * betas[a] * dx2;
                    }
                    m.add(r, r, diag * s);
                    let mut row_sum = (diag * s).norm_sqr().sqrt();
                    if r > 0 {
                        let lower = if top { 2.0 } else { 1.0 } * s;
                        m.add(r, r - 1, C64::new(lower, 0.0));
                        row_sum += lower;
                    }
                    if !top {
                        m.add(r, r + 1, C64::new(1.0, 0.0));
                        row_sum += 1.0;
                    }
                    norm = norm.max(row_sum);
                }
                mats.push(m);
            }
            let lus = mats.iter().map(|m| m.clone().factor().ok()).collect();
            (Blocks::Decoupled { mats, lus }, norm)
        } else {
            let mut mat = BandMatrix::zeros(nrows * na, na, na);
            let mut nhat = vec![ZERO; p];
            for r in 0..nrows {
                let x2 = (r + 1) as f64 * dx2;
                for (t, v) in nhat.iter_mut().enumerate() {
                    *v = C64::new(medium.n(2.0 * PI * t as f64 / p as f64, x2), 0.0);
                }
                spectral.forward(&mut nhat);
                let top = r + 1 == nrows;
                let s = if top { 0.5 } else { 1.0 };
                for a in 0..na {
                    let row = r * na + a;
                    for b in 0..na {
                        let diff = (modes[a] - modes[b]).rem_euclid(p as i64) as usize;
                        let mut v = d2 * k2 * nhat[diff];
                        if a == b {
                            v += symbol(a);
                            if top {
                                v += 2.0 * I * betas[a] * dx2;
                            }
                        }
                        if v != ZERO {
                            mat.add(row, r * na + b, v * s);
                        }
                    }
                    if r > 0 {
                        mat.add(row, (r - 1) * na + a, C64::new(if top { 2.0 } else { 1.0 } * s, 0.0));
                    }
                    if !top {
                        mat.add(row, (r + 1) * na + a, C64::new(1.0, 0.0));
                    }
                }
            }
            let norm = row_sum_norm(&mat);
            let lu = mat.clone().factor().ok();
            (Blocks::Coupled { mat, lu }, norm)
        };

        Ok(Self {
            kw: *kw,
            alpha,
            h,
            grid: *grid,
            modes,
            betas,
            near_cutoff,
            norm,
            sing_tol: opts.sing_tol_rel * norm,
            blocks,
            spectral,
        })
    }

    pub fn is_decoupled(&self) -> bool {
        matches!(self.blocks, Blocks::Decoupled { .. })
    }

    pub fn dx2(&self) -> f64 {
        self.grid.dx2(self.h)
    }

    fn slot(&self, a: usize, row: usize) -> usize {
        match self.blocks {
            Blocks::Decoupled { .. } => a * self.grid.nx2 + row,
            Blocks::Coupled { .. } => row * self.modes.len() + a,
        }
    }

    /// Physical samples (`nx1 × (nx2+1)`) to unknown coefficients; row 0 and
    /// the Nyquist mode are dropped.
    pub fn to_coeffs(&self, values: &[C64]) -> Result<Vec<C64>> {
        let p = self.grid.nx1;
        let nrows = self.grid.nx2;
        if values.len() != p * (nrows + 1) {
            return Err(Error::GridMismatch(format!(
                "expected {} samples, got {}",
                p * (nrows + 1),
                values.len()
            )));
        }
        let mut out = vec![ZERO; self.dim()];
        let mut buf = vec![ZERO; p];
        for r in 0..nrows {
            buf.copy_from_slice(&values[(r + 1) * p..(r + 2) * p]);
            self.spectral.forward(&mut buf);
            for (a, &n) in self.modes.iter().enumerate() {
                out[self.slot(a, r)] = buf[n.rem_euclid(p as i64) as usize];
            }
        }
        Ok(out)
    }

    /// Unknown coefficients back to physical samples, with a zero bottom row.
    pub fn to_values(&self, coeffs: &[C64]) -> Vec<C64> {
        let p = self.grid.nx1;
        let nrows = self.grid.nx2;
        let mut values = vec![ZERO; p * (nrows + 1)];
        let mut buf = vec![ZERO; p];
        for r in 0..nrows {
            buf.iter_mut().for_each(|v| *v = ZERO);
            for (a, &n) in self.modes.iter().enumerate() {
                buf[n.rem_euclid(p as i64) as usize] = coeffs[self.slot(a, r)];
            }
            self.spectral.inverse(&mut buf);
            values[(r + 1) * p..(r + 2) * p].copy_from_slice(&buf);
        }
        values
    }

    /// Scales Fourier coefficients of the source into system right-hand side form.
    pub fn scale_rhs(&self, coeffs: &mut [C64]) {
        let d2 = self.dx2().powi(2);
        let top = self.grid.nx2 - 1;
        for a in 0..self.modes.len() {
            for r in 0..self.grid.nx2 {
                let s = if r == top { 0.5 * d2 } else { d2 };
                coeffs[self.slot(a, r)] *= s;
            }
        }
    }

    /// Right-hand side in coefficient form for physical source samples.
    pub fn rhs_from_values(&self, f_alpha: &[C64]) -> Result<Vec<C64>> {
        let p = self.grid.nx1;
        if f_alpha[..p].iter().any(|v| *v != ZERO) {
            return Err(Error::Precondition("right-hand side must vanish on the row x2 = 0".into()));
        }
        let mut c = self.to_coeffs(f_alpha)?;
        self.scale_rhs(&mut c);
        Ok(c)
    }

    /// System matrix times a coefficient vector.
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        match &self.blocks {
            Blocks::Coupled { mat, .. } => mat.mul_vec(u),
            Blocks::Decoupled { mats, .. } => {
                let n = self.grid.nx2;
                let mut out = Vec::with_capacity(u.len());
                for (a, m) in mats.iter().enumerate() {
                    out.extend(m.mul_vec(&u[a * n..(a + 1) * n]));
                }
                out
            }
        }
    }

    /// Solves for coefficients in place; fails at (numerically) exceptional α.
    pub fn solve_coeffs(&self, rhs: &mut [C64]) -> Result<()> {
        let exceptional = |s: f64| Error::ExceptionalValue {
            alpha: self.alpha,
            sigma_min: s,
        };
        let bnorm = norm2(rhs);
        match &self.blocks {
            Blocks::Coupled { lu, .. } => match lu {
                Some(lu) => lu.solve_in_place(rhs),
                None => return Err(exceptional(0.0)),
            },
            Blocks::Decoupled { lus, .. } => {
                let n = self.grid.nx2;
                for (a, lu) in lus.iter().enumerate() {
                    let seg = &mut rhs[a * n..(a + 1) * n];
                    if seg.iter().all(|v| *v == ZERO) {
                        continue;
                    }
                    match lu {
                        Some(lu) => lu.solve_in_place(seg),
                        None => return Err(exceptional(0.0)),
                    }
                }
            }
        }
        let unorm = norm2(rhs);
        if !unorm.is_finite() {
            return Err(exceptional(0.0));
        }
        if bnorm > 0.0 && unorm * self.sing_tol > bnorm {
            let s = smallest_singular_value(self);
            if s < self.sing_tol {
                return Err(exceptional(s));
            }
        }
        Ok(())
    }

    /// Solves for physical source samples and packages the result.
    pub fn solve(&self, f_alpha: &[C64]) -> Result<CellField> {
        let mut c = self.rhs_from_values(f_alpha)?;
        self.solve_coeffs(&mut c)?;
        Ok(self.field_from_coeffs(&c))
    }

    /// Top-row coefficient of mode index `a` from a coefficient vector.
    pub fn top_coeff(&self, coeffs: &[C64], a: usize) -> C64 {
        coeffs[self.slot(a, self.grid.nx2 - 1)]
    }

    /// Coefficient of mode index `a` on row `j ≥ 1`.
    pub fn coeff(&self, coeffs: &[C64], a: usize, j: usize) -> C64 {
        coeffs[self.slot(a, j - 1)]
    }

    pub fn field_from_coeffs(&self, coeffs: &[C64]) -> CellField {
        let values = self.to_values(coeffs);
        let top_modes: Vec<C64> = (0..self.modes.len()).map(|a| self.top_coeff(coeffs, a)).collect();
        let nt = self.grid.n_trunc as i64;
        let half = self.grid.nx1 as i64 / 2;
        let rayleigh = (-nt..=nt).map(|n| top_modes[(n + half - 1) as usize]).collect();
        CellField {
            alpha: self.alpha,
            nx1: self.grid.nx1,
            nx2: self.grid.nx2,
            h: self.h,
            n_trunc: self.grid.n_trunc,
            values,
            rayleigh,
            top_modes,
        }
    }

    /// Relative residual `‖A u − b‖ / ‖b‖` of a field against a source.
    pub fn residual(&self, field: &CellField, f_alpha: &[C64]) -> Result<f64> {
        let u = self.to_coeffs(&field.values)?;
        let b = self.rhs_from_values(f_alpha)?;
        let r = self.apply(&u);
        let diff: f64 = r.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let bn = norm2(&b);
        Ok(if bn > 0.0 { diff / bn } else { diff })
    }

    /// Smallest singular values with right singular vectors, ascending.
    /// Decoupled systems report the smallest value of each mode block.
    pub fn smallest_singular_values(&self, count: usize) -> Vec<(f64, Vec<C64>)> {
        const TOL: f64 = 1e-10;
        const MAX_ITER: usize = 300;
        let dim = self.dim();
        match &self.blocks {
            Blocks::Coupled { lu, .. } => match lu {
                Some(lu) => {
                    let s = smallest_singular(lu, count, TOL, MAX_ITER);
                    s.values.into_iter().zip(s.vectors).collect()
                }
                None => vec![(0.0, vec![ZERO; dim])],
            },
            Blocks::Decoupled { lus, .. } => {
                let n = self.grid.nx2;
                let mut all: Vec<(f64, Vec<C64>)> = lus
                    .iter()
                    .enumerate()
                    .map(|(a, lu)| {
                        let (s, v) = match lu {
                            Some(lu) => {
                                let r = smallest_singular(lu, 1, TOL, MAX_ITER);
                                (r.values[0], r.vectors.into_iter().next().unwrap())
                            }
                            None => (0.0, vec![ZERO; n]),
                        };
                        let mut full = vec![ZERO; dim];
                        full[a * n..(a + 1) * n].copy_from_slice(&v);
                        (s, full)
                    })
                    .collect();
                all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
                all.truncate(count.max(1));
                all
            }
        }
    }

    /// Dense copy of the system, for small-grid checks.
    pub fn to_dense(&self) -> nalgebra::DMatrix<C64> {
        match &self.blocks {
            Blocks::Coupled { mat, .. } => mat.to_dense(),
            Blocks::Decoupled { mats, .. } => {
                let n = self.grid.nx2;
                let dim = self.dim();
                let mut d = nalgebra::DMatrix::zeros(dim, dim);
                for (a, m) in mats.iter().enumerate() {
                    d.view_mut((a * n, a * n), (n, n)).copy_from(&m.to_dense());
                }
                d
            }
        }
    }
}

impl LinearSolve for CellOperator {
    fn dim(&self) -> usize {
        self.grid.nx2 * self.modes.len()
    }

    fn solve_in_place(&self, b: &mut [C64]) {
        match &self.blocks {
            Blocks::Coupled { lu, .. } => lu.as_ref().expect("factored").solve_in_place(b),
            Blocks::Decoupled { lus, .. } => {
                let n = self.grid.nx2;
                for (a, lu) in lus.iter().enumerate() {
                    lu.as_ref().expect("factored").solve_in_place(&mut b[a * n..(a + 1) * n]);
                }
            }
        }
    }

    fn solve_adjoint_in_place(&self, b: &mut [C64]) {
        match &self.blocks {
            Blocks::Coupled { lu, .. } => lu.as_ref().expect("factored").solve_adjoint_in_place(b),
            Blocks::Decoupled { lus, .. } => {
                let n = self.grid.nx2;
                for (a, lu) in lus.iter().enumerate() {
                    lu.as_ref().expect("factored").solve_adjoint_in_place(&mut b[a * n..(a + 1) * n]);
                }
            }
        }
    }
}

fn row_sum_norm(m: &BandMatrix) -> f64 {
    let d = m.dim();
    let (kl, ku) = m.bandwidths();
    (0..d)
        .map(|i| {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(d - 1);
            (lo..=hi).map(|j| m.get(i, j).norm_sqr().sqrt()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

pub(crate) fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
