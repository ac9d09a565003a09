//! Browser bindings: a σ_min scan over the Brillouin zone, the half-plane
//! Green's function on a rectangle, and the radiating field of a bump source.

use pwguide::bloch::alpha_nodes;
use pwguide::cell_solver::{assemble_cell_operator, smallest_singular_value};
use pwguide::medium::{Bump, CellGrid, PeriodicMedium, Profile, SourceTerm};
use pwguide::modes::{build_atlas, ScanOptions};
use pwguide::radiating_solver::{GridSource, SolveParams, UnperturbedSolver};
use pwguide::special_fn::{green_halfplane, Point2, Wavenumber};
use wasm_bindgen::prelude::*;

fn err(e: pwguide::Error) -> String {
    e.to_string()
}

fn medium(kind: &str, h: f64, a: f64, b: f64) -> Result<PeriodicMedium, String> {
    let profile = match kind {
        "free" => Profile::Free,
        "slab" => Profile::Slab { n_core: a },
        "cosine" => Profile::Cosine { a, b },
        "graded" => Profile::Graded { a, b },
        other => return Err(format!("unknown medium kind {other:?}")),
    };
    PeriodicMedium::new(profile, h, 1.0).map_err(err)
}

/// Smallest singular value of the cell operator at `nodes` points of the
/// Brillouin zone, returned as interleaved `(α, σ_min)` pairs.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn sigma_curve(kind: &str, k: f64, h: f64, a: f64, b: f64, nx1: usize, nx2: usize, nodes: usize) -> Result<Vec<f64>, String> {
    let kw = Wavenumber::real(k).map_err(err)?;
    let m = medium(kind, h, a, b)?;
    let grid = CellGrid::with_default_trunc(nx1, nx2, k, h).map_err(err)?;
    let mut out = Vec::with_capacity(2 * nodes);
    for alpha in alpha_nodes(nodes) {
        let op = assemble_cell_operator(&kw, &m, alpha, &grid).map_err(err)?;
        out.push(alpha);
        out.push(smallest_singular_value(&op));
    }
    Ok(out)
}

/// `|G(x, y)|` on a `width × height` raster of `[x1_min, x1_max] × (0, x2_max]`,
/// row-major with the top row first.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn green_magnitude(k: f64, y1: f64, y2: f64, x1_min: f64, x1_max: f64, x2_max: f64, width: usize, height: usize) -> Result<Vec<f64>, String> {
    let kw = Wavenumber::real(k).map_err(err)?;
    let y = Point2::new(y1, y2);
    let mut out = Vec::with_capacity(width * height);
    for r in 0..height {
        let x2 = x2_max * (height - r) as f64 / height as f64;
        for c in 0..width {
            let x1 = x1_min + (x1_max - x1_min) * (c as f64 + 0.5) / width as f64;
            let x = Point2::new(x1, x2);
            out.push(if x.distance(y) < 1e-9 { f64::NAN } else { green_halfplane(&kw, x, y).map_err(err)?.norm() });
        }
    }
    Ok(out)
}

/// Radiating field of a smooth bump source on `periods` periods centred at
/// the origin. Returns `[rows, columns, |u| ...]` with the top row first.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn bump_field(kind: &str, k: f64, a: f64, b: f64, nx1: usize, nx2: usize, periods: usize, center: f64) -> Result<Vec<f64>, String> {
    let h = 1.0;
    let kw = Wavenumber::real(k).map_err(err)?;
    let m = medium(kind, h, a, b)?;
    let grid = CellGrid::with_default_trunc(nx1, nx2, k, h).map_err(err)?;
    let atlas = build_atlas(&kw, &m, &grid, &ScanOptions { nodes: 32, ..Default::default() }).map_err(err)?;
    let solver = UnperturbedSolver::new(&kw, &m, &grid, &atlas, &SolveParams::default()).map_err(err)?;
    let f = SourceTerm::new(Bump { amplitude: 1.0, center: (center, 0.5), radii: (1.2, 0.35) }, h).map_err(err)?;
    let src = GridSource::from_source(&f, &grid, h);
    let first = -(periods as i64) / 2;
    let window = solver.window(first, periods, nx2);
    let field = solver.solve(&src, &window).map_err(err)?;
    let (rows, cols) = (window.rows(), window.columns());
    let mut out = vec![rows as f64, cols as f64];
    for r in (0..rows).rev() {
        out.extend((0..cols).map(|c| field.value(r, c).norm()));
    }
    Ok(out)
}
