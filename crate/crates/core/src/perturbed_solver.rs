//! Locally perturbed waveguide: `Δu + k²n(1+q)u = f` with `q` supported in
//! a box `Q` inside the strip, solved through the second-kind equation
//! `(I + SM) w = S f` on the grid nodes of `Q`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{dense_solve, gmres, GmresReport};
use crate::medium::{CellGrid, PeriodicMedium, Perturbation, SourceTerm, SupportBox};
use crate::radiating_solver::{GridSource, RadiatingField, SolvePath, UnperturbedSolver, Window};
use crate::special_fn::{green_halfplane, Point2};

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);

/// Second-kind iteration contract.
pub const LS_TOL: f64 = 1e-8;
pub const LS_MAX_ITER: usize = 200;
pub const LS_RESTART: usize = 50;
/// Largest system assembled densely when the iteration fails.
pub const DENSE_LIMIT: usize = 2000;

/// Nodes of the global solver grid inside the perturbation box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGrid {
    pub first_period: i64,
    pub period_count: usize,
    pub nx1: usize,
    pub nx2: usize,
    pub h: f64,
    /// `(row, column)` with columns counted from `first_period`.
    pub nodes: Vec<(usize, usize)>,
}

impl QGrid {
    pub fn new(support: &SupportBox, grid: &CellGrid, h: f64) -> Result<Self> {
        let first = (support.x1.0 / (2.0 * PI)).floor() as i64;
        let last = (support.x1.1 / (2.0 * PI)).floor() as i64;
        let period_count = (last - first + 1) as usize;
        let dx2 = grid.dx2(h);
        let mut nodes = Vec::new();
        for j in 1..=grid.nx2 {
            let x2 = j as f64 * dx2;
            if x2 < support.x2.0 || x2 > support.x2.1 {
                continue;
            }
            for c in 0..period_count * grid.nx1 {
                let x1 = 2.0 * PI * (first as f64 + c as f64 / grid.nx1 as f64);
                if x1 >= support.x1.0 && x1 <= support.x1.1 {
                    nodes.push((j, c));
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::InvalidGrid("perturbation box contains no grid nodes".into()));
        }
        Ok(Self {
            first_period: first,
            period_count,
            nx1: grid.nx1,
            nx2: grid.nx2,
            h,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn point(&self, i: usize) -> Point2 {
        let (j, c) = self.nodes[i];
        Point2::new(
            2.0 * PI * (self.first_period as f64 + c as f64 / self.nx1 as f64),
            j as f64 * self.h / self.nx2 as f64,
        )
    }

    fn grid(&self) -> CellGrid {
        CellGrid {
            nx1: self.nx1,
            nx2: self.nx2,
            n_trunc: 0,
        }
    }

    /// Extension by zero to a source on the periods of `Q`.
    pub fn extend(&self, values: &[C64]) -> GridSource {
        let mut src = GridSource::zeros(self.first_period, self.period_count, &self.grid(), self.h);
        let cols = src.columns();
        for (&(j, c), v) in self.nodes.iter().zip(values) {
            src.values[j * cols + c] = *v;
        }
        src
    }

    /// Window covering the periods of `Q`.
    pub fn window(&self) -> Window {
        Window {
            first_period: self.first_period,
            period_count: self.period_count,
            nx1: self.nx1,
            nx2: self.nx2,
            rows_above: 0,
            h: self.h,
        }
    }

    /// Restriction of a field to `Q`, if its window covers `Q`.
    pub fn restrict(&self, field: &RadiatingField) -> Option<Vec<C64>> {
        let w = &field.window;
        if w.nx1 != self.nx1 || w.nx2 != self.nx2 {
            return None;
        }
        self.nodes
            .iter()
            .map(|&(j, c)| {
                let period = self.first_period + (c / self.nx1) as i64;
                w.column_of(period, c % self.nx1).map(|col| field.value(j, col))
            })
            .collect()
    }

    pub fn sample(&self, f: impl Fn(Point2) -> C64) -> Vec<C64> {
        (0..self.len()).map(|i| f(self.point(i))).collect()
    }
}

/// Values on the nodes of `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedField {
    pub grid: QGrid,
    pub values: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub monotone: bool,
    /// Smallest vertical difference of `(1+q)n` between adjacent rows.
    pub min_difference: f64,
    /// Up to 32 violating cells as `(x1, x2 lower, x2 upper, difference)`.
    pub violations: Vec<(f64, f64, f64, f64)>,
    pub violation_count: usize,
}

pub const MONO_TOL: f64 = 1e-12;

/// Checks `∂₂((1+q)n) ≥ 0` in the strip by vertical differences on the grid,
/// over one period of the background and every period meeting `Q`.
pub fn validate_monotonicity(medium: &PeriodicMedium, pert: &Perturbation, grid: &CellGrid) -> MonotonicityReport {
    let h = medium.h;
    let dx2 = grid.dx2(h);
    let s = &pert.support;
    let first = ((s.x1.0 / (2.0 * PI)).floor() as i64).min(0);
    let last = ((s.x1.1 / (2.0 * PI)).floor() as i64).max(0);
    let value = |x1: f64, x2: f64| (1.0 + pert.q(x1, x2)) * medium.n(x1, x2);
    let mut report = MonotonicityReport {
        monotone: true,
        min_difference: f64::INFINITY,
        violations: vec![],
        violation_count: 0,
    };
    for m in first..=last {
        for t in 0..grid.nx1 {
            let x1 = 2.0 * PI * (m as f64 + t as f64 / grid.nx1 as f64);
            for j in 0..grid.nx2 {
                let (lo, hi) = (j as f64 * dx2, (j + 1) as f64 * dx2);
                let d = value(x1, hi) - value(x1, lo);
                report.min_difference = report.min_difference.min(d);
                if d < -MONO_TOL {
                    report.monotone = false;
                    report.violation_count += 1;
                    if report.violations.len() < 32 {
                        report.violations.push((x1, lo, hi, d));
                    }
                }
            }
        }
    }
    report
}

/// Outcome of the second-kind solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub dense_fallback: bool,
    pub condition_estimate: f64,
    pub monotone: bool,
    pub override_uniqueness: bool,
    /// Frozen absorption pair used by `S` on the limiting-absorption path.
    pub eps_pair: Option<(f64, f64)>,
    /// `max |u|_Q − w| / max |w|` when the output window covers `Q`.
    pub consistency: Option<f64>,
    pub unknowns: usize,
}

#[derive(Debug, Clone)]
pub struct PerturbedSolution {
    pub field: RadiatingField,
    pub w: RestrictedField,
    pub report: LsReport,
}

/// `S`, `M` and the second-kind solve for one perturbation.
pub struct PerturbedSolver<'a> {
    pub solver: &'a UnperturbedSolver,
    pub pert: Perturbation,
    pub qgrid: QGrid,
    /// `k² n q` at the nodes of `Q`.
    weight: Vec<f64>,
    eps_pair: Option<(f64, f64)>,
}

impl<'a> PerturbedSolver<'a> {
    pub fn new(solver: &'a UnperturbedSolver, pert: &Perturbation) -> Result<Self> {
        pert.validate(solver.medium.h)?;
        let qgrid = QGrid::new(&pert.support, &solver.grid, solver.medium.h)?;
        let k2 = solver.kw.k * solver.kw.k;
        let weight = (0..qgrid.len())
            .map(|i| {
                let p = qgrid.point(i);
                k2 * solver.medium.n(p.x1, p.x2) * pert.q(p.x1, p.x2)
            })
            .collect();
        Ok(Self {
            solver,
            pert: pert.clone(),
            qgrid,
            weight,
            eps_pair: None,
        })
    }

    /// `S g = v|_Q` for the radiating solution of `Δv + k²nv = g`.
    pub fn apply_s(&self, g: &[C64]) -> Result<Vec<C64>> {
        if g.len() != self.qgrid.len() {
            return Err(Error::GridMismatch(format!("expected {} values on Q, got {}", self.qgrid.len(), g.len())));
        }
        if g.iter().all(|v| *v == ZERO) {
            return Ok(vec![ZERO; g.len()]);
        }
        let src = self.qgrid.extend(g);
        let w = self.qgrid.window();
        let field = match self.eps_pair {
            Some(pair) => self.solver.solve_frozen(&src, &w, pair)?,
            None => self.solver.solve(&src, &w)?,
        };
        Ok(self.qgrid.restrict(&field).expect("window covers Q"))
    }

    /// `M h = k² n q h`.
    pub fn apply_m(&self, h: &[C64]) -> Result<Vec<C64>> {
        if h.len() != self.qgrid.len() {
            return Err(Error::GridMismatch(format!("expected {} values on Q, got {}", self.qgrid.len(), h.len())));
        }
        Ok(h.iter().zip(&self.weight).map(|(v, w)| v * *w).collect())
    }

    /// `(I + SM) g`.
    pub fn apply_ls(&self, g: &[C64]) -> Result<Vec<C64>> {
        let smg = self.apply_s(&self.apply_m(g)?)?;
        Ok(g.iter().zip(&smg).map(|(a, b)| a + b).collect())
    }

    /// Freezes the absorption pair of `S` from a full solve with source `src`.
    fn freeze(&mut self, src: &GridSource) -> Result<Option<RadiatingField>> {
        if self.solver.path() == SolvePath::Direct || self.eps_pair.is_some() {
            return Ok(None);
        }
        let field = self.solver.solve(src, &self.qgrid.window())?;
        let lap = field.lap.as_ref().expect("absorption report");
        let n = lap.eps.len();
        self.eps_pair = Some((lap.eps[n - 2], lap.eps[n - 1]));
        Ok(Some(field))
    }

    /// Power-iteration estimate of the spectral radius of `SM`.
    pub fn spectral_radius(&mut self, iterations: usize) -> Result<f64> {
        let n = self.qgrid.len();
        let mut v: Vec<C64> = (0..n).map(|i| C64::new(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.2)).collect();
        let probe = self.qgrid.extend(&v);
        self.freeze(&probe)?;
        let mut rho = 0.0;
        for _ in 0..iterations {
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Ok(0.0);
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let next = self.apply_s(&self.apply_m(&v)?)?;
            rho = next.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            v = next;
        }
        Ok(rho)
    }

    /// Solves for a source given on `Q` and returns the field on `window`.
    pub fn solve(&mut self, f: &[C64], window: &Window, monotone: bool, override_uniqueness: bool) -> Result<PerturbedSolution> {
        if f.len() != self.qgrid.len() {
            return Err(Error::GridMismatch(format!("expected {} values on Q, got {}", self.qgrid.len(), f.len())));
        }
        let src = self.qgrid.extend(f);
        self.solve_with(f, src, window, monotone, override_uniqueness)
    }

    /// `src` is `f` on the global grid; it must vanish outside `Q`.
    fn solve_with(
        &mut self,
        f: &[C64],
        src: GridSource,
        window: &Window,
        monotone: bool,
        override_uniqueness: bool,
    ) -> Result<PerturbedSolution> {
        if !monotone && !override_uniqueness {
            return Err(Error::UniquenessNotCertified(
                "(1+q)n is not monotone in x2; pass the override flag to proceed".into(),
            ));
        }
        let mut report = LsReport {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            dense_fallback: false,
            condition_estimate: 1.0,
            monotone,
            override_uniqueness,
            eps_pair: None,
            consistency: None,
            unknowns: self.qgrid.len(),
        };

        if self.pert.is_zero() {
            // M = 0: the field is the unperturbed one
            let field = self.solver.solve(&src, window)?;
            let w = match self.qgrid.restrict(&field) {
                Some(v) => v,
                None => self.apply_s(f)?,
            };
            report.consistency = self.qgrid.restrict(&field).map(|_| 0.0);
            report.eps_pair = field.lap.as_ref().map(|l| {
                let n = l.eps.len();
                (l.eps[n - 2], l.eps[n - 1])
            });
            return Ok(PerturbedSolution {
                field,
                w: RestrictedField {
                    grid: self.qgrid.clone(),
                    values: w,
                },
                report,
            });
        }

        let full = self.freeze(&src)?;
        report.eps_pair = self.eps_pair;
        let sf = match &full {
            Some(field) => self.qgrid.restrict(field).expect("window covers Q"),
            None => self.apply_s(f)?,
        };
        let (mut w, GmresReport {
            iterations,
            relative_residual,
            converged,
            condition_estimate,
        }) = gmres(|g| self.apply_ls(g), &sf, LS_RESTART, LS_TOL, LS_MAX_ITER)?;
        report.iterations = iterations;
        report.relative_residual = relative_residual;
        report.converged = converged;
        report.condition_estimate = condition_estimate;
        if converged {
            // refinement until the pointwise residual is below the tolerance
            for _ in 0..3 {
                let lw = self.apply_ls(&w)?;
                let r: Vec<C64> = sf.iter().zip(&lw).map(|(a, b)| a - b).collect();
                let wmax = w.iter().map(|v| v.norm()).fold(0.0, f64::max);
                if r.iter().map(|v| v.norm()).fold(0.0, f64::max) <= 0.1 * LS_TOL * wmax {
                    break;
                }
                let (dw, rep) = gmres(|g| self.apply_ls(g), &r, LS_RESTART, LS_TOL, LS_MAX_ITER)?;
                w.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
                report.iterations += rep.iterations;
            }
        } else {
            let n = self.qgrid.len();
            if n > DENSE_LIMIT {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: relative_residual,
                    condition: condition_estimate,
                });
            }
            let mut a = DMatrix::<C64>::zeros(n, n);
            let mut e = vec![ZERO; n];
            for c in 0..n {
                e[c] = C64::new(1.0, 0.0);
                let col = self.apply_ls(&e)?;
                e[c] = ZERO;
                for (r, v) in col.into_iter().enumerate() {
                    a[(r, c)] = v;
                }
            }
            let sv = a.clone().singular_values();
            let smax = sv.iter().cloned().fold(0.0, f64::max);
            let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            report.condition_estimate = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            w = dense_solve(a, &sf)?;
            report.dense_fallback = true;
            report.converged = true;
        }

        let mw = self.apply_m(&w)?;
        let effective: Vec<C64> = f.iter().zip(&mw).map(|(a, b)| a - b).collect();
        let esrc = self.qgrid.extend(&effective);
        let field = match self.eps_pair {
            Some(pair) => self.solver.solve_frozen(&esrc, window, pair)?,
            None => self.solver.solve(&esrc, window)?,
        };
        if let Some(uq) = self.qgrid.restrict(&field) {
            let scale = w.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
            let diff = uq.iter().zip(&w).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            report.consistency = Some(diff / scale);
        }
        Ok(PerturbedSolution {
            field,
            w: RestrictedField {
                grid: self.qgrid.clone(),
                values: w,
            },
            report,
        })
    }
}

/// Solves the perturbed problem for a bump source supported in `Q`.
pub fn solve_perturbed(
    solver: &UnperturbedSolver,
    pert: &Perturbation,
    f: &SourceTerm,
    window: &Window,
    override_uniqueness: bool,
) -> Result<PerturbedSolution> {
    if !pert.support.contains_box(&f.support()) {
        return Err(Error::Domain("source support must lie inside the perturbation box".into()));
    }
    let mono = validate_monotonicity(&solver.medium, pert, &solver.grid);
    let mut ps = PerturbedSolver::new(solver, pert)?;
    let fq = ps.qgrid.sample(|p| f.value(p.x1, p.x2));
    // same source layout as an unperturbed run of `f`
    let src = GridSource::from_source(f, &solver.grid, solver.medium.h);
    ps.solve_with(&fq, src, window, mono.monotone, override_uniqueness)
}

/// Incident field `G_n(·, y)` on a window.
#[derive(Debug, Clone)]
pub struct IncidentField {
    pub window: Window,
    /// `G(x, y) + ũ^s(x)` on the window nodes.
    pub values: Vec<C64>,
    /// Correction `ũ^s` solving `Δũ + k²nũ = k²(1−n)G(·, y)`.
    pub correction: Option<RadiatingField>,
}

/// Point source above the strip scattered by the perturbation. The
/// correction source `k²(1−n)G` is truncated to `source_periods` periods
/// centred under the source point.
pub fn scatter_point_source(
    solver: &UnperturbedSolver,
    pert: &Perturbation,
    y: Point2,
    window: &Window,
    source_periods: usize,
    override_uniqueness: bool,
) -> Result<(IncidentField, PerturbedSolution)> {
    let medium = &solver.medium;
    let h = medium.h;
    if y.x2 <= h {
        return Err(Error::Precondition(format!("point source must lie above the strip, got x2 = {} ≤ h = {h}", y.x2)));
    }
    let kw = solver.kw;
    let k2 = kw.k * kw.k;
    let grid = &solver.grid;

    // incident correction
    let correction = if medium.is_free() {
        None
    } else {
        let centre = (y.x1 / (2.0 * PI)).floor() as i64;
        let first = centre - (source_periods as i64) / 2;
        let mut src = GridSource::zeros(first, source_periods.max(1), grid, h);
        let cols = src.columns();
        for j in 1..=grid.nx2 {
            for c in 0..cols {
                let (x1, x2) = (src.x1(c), src.x2(j));
                let contrast = 1.0 - medium.n(x1, x2);
                if contrast != 0.0 {
                    src.values[j * cols + c] = k2 * contrast * green_halfplane(&kw, Point2::new(x1, x2), y)?;
                }
            }
        }
        let mut union = *window;
        let lo = window.first_period.min(first - 1);
        let hi = (window.first_period + window.period_count as i64).max(first + source_periods as i64 + 1);
        union.first_period = lo;
        union.period_count = (hi - lo) as usize;
        Some(solver.solve(&src, &union)?)
    };

    let incident_at = |period: i64, t: usize, row: usize| -> Result<C64> {
        let x = Point2::new(
            2.0 * PI * (period as f64 + t as f64 / grid.nx1 as f64),
            row as f64 * window.dx2(),
        );
        let g = green_halfplane(&kw, x, y)?;
        let c = match &correction {
            Some(field) => match field.window.column_of(period, t) {
                Some(col) => field.value(row, col),
                None => ZERO,
            },
            None => ZERO,
        };
        Ok(g + c)
    };

    let cols = window.columns();
    let mut values = vec![ZERO; window.len()];
    for r in 0..window.rows() {
        for c in 0..cols {
            let (m, t) = window.split(c);
            values[r * cols + c] = incident_at(m, t, r)?;
        }
    }

    let mono = validate_monotonicity(medium, pert, grid);
    let mut ps = PerturbedSolver::new(solver, pert)?;
    let f: Vec<C64> = (0..ps.qgrid.len())
        .map(|i| {
            let (row, col) = ps.qgrid.nodes[i];
            let period = ps.qgrid.first_period + (col / grid.nx1) as i64;
            let p = ps.qgrid.point(i);
            let ui = incident_at(period, col % grid.nx1, row)?;
            Ok(-k2 * pert.q(p.x1, p.x2) * medium.n(p.x1, p.x2) * ui)
        })
        .collect::<Result<_>>()?;
    let scattered = ps.solve(&f, window, mono.monotone, override_uniqueness)?;
    Ok((
        IncidentField {
            window: *window,
            values,
            correction,
        },
        scattered,
    ))
}

/// `‖Δ_h u + k²(1+q)n u − f‖ / ‖f‖` with the five-point stencil on the
/// interior nodes of the field window.
pub fn pde_residual(field: &RadiatingField, medium: &PeriodicMedium, pert: &Perturbation, f: &GridSource) -> Result<f64> {
    let w = &field.window;
    if w.nx1 != f.nx1 || w.nx2 != f.nx2 {
        return Err(Error::GridMismatch("source and field grids differ".into()));
    }
    let k2 = field.k * field.k;
    let (dx1, dx2) = (w.dx1(), w.dx2());
    let cols = w.columns();
    let fcols = f.columns();
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 1..w.nx2 {
        for c in 1..cols - 1 {
            let (m, t) = w.split(c);
            let x = Point2::new(w.x1(c), w.x2(r));
            let u = field.value(r, c);
            let lap = (field.value(r, c - 1) - 2.0 * u + field.value(r, c + 1)) / (dx1 * dx1)
                + (field.value(r - 1, c) - 2.0 * u + field.value(r + 1, c)) / (dx2 * dx2);
            let fv = {
                let mi = m - f.first_period;
                if mi < 0 || mi as usize >= f.period_count {
                    ZERO
                } else {
                    f.values[r * fcols + mi as usize * f.nx1 + t]
                }
            };
            let res = lap + k2 * (1.0 + pert.q(x.x1, x.x2)) * medium.n(x.x1, x.x2) * u - fv;
            num += res.norm_sqr();
            den += fv.norm_sqr();
        }
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::Bump;

    fn grid() -> CellGrid {
        CellGrid::new(16, 16, 3).unwrap()
    }

    #[test]
    fn qgrid_nodes_lie_in_the_box() {
        let sup = SupportBox { x1: (-1.0, 1.0), x2: (0.2, 0.8) };
        let q = QGrid::new(&sup, &grid(), 1.0).unwrap();
        assert_eq!(q.first_period, -1);
        assert_eq!(q.period_count, 2);
        for i in 0..q.len() {
            assert!(sup.contains(q.point(i)));
        }
        let src = q.extend(&vec![C64::new(1.0, 0.0); q.len()]);
        assert_eq!(src.values.iter().filter(|v| v.re == 1.0).count(), q.len());
    }

    #[test]
    fn monotonicity_examples() {
        let g = grid();
        let free = PeriodicMedium::free(1.0);
        let flat = Perturbation::zero(SupportBox { x1: (-1.0, 1.0), x2: (0.2, 0.8) });
        assert!(validate_monotonicity(&free, &flat, &g).monotone);
        let graded = PeriodicMedium::new(crate::medium::Profile::Graded { a: 1.0, b: 0.5 }, 1.0, 1.0).unwrap();
        assert!(validate_monotonicity(&graded, &flat, &g).monotone);
        let bump = Perturbation::from_bump(Bump { amplitude: 0.5, center: (0.0, 0.5), radii: (1.0, 0.3) });
        let r = validate_monotonicity(&free, &bump, &g);
        assert!(!r.monotone);
        assert!(r.violations.iter().all(|v| v.2 > 0.5 && v.1 >= 0.2 - 1e-12));
    }
}
