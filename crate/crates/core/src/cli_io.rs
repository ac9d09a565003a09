//! Scenario files, run orchestration and on-disk artifacts.
//!
//! A scenario is a TOML document. Physical parameters have no defaults;
//! numerical tolerances do. Field files are a `key: value` text header ended
//! by a line `end`, followed by a text or binary payload (see the README).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;

use crate::diagnostics::{flux_through_gamma, modal_flux_decomposition};
use crate::error::{Category, Error, Result};
use crate::medium::{Bump, CellGrid, PeriodicMedium, Perturbation, Profile, SourceTerm, SupportBox};
use crate::modes::{build_atlas, ModeAtlas, ScanOptions};
use crate::perturbed_solver::{
    pde_residual, scatter_point_source, solve_perturbed, validate_monotonicity, MonotonicityReport,
};
use crate::radiating_solver::{GridSource, RadiatingField, SolveParams, SolvePath, UnperturbedSolver, Window};
use crate::special_fn::{Point2, Wavenumber};

type C64 = Complex64;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const FIELD_MAGIC: &str = "pwguide-field 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Wavenumber `k > 0`.
    pub k: f64,
    pub medium: MediumSpec,
    pub grid: GridSpec,
    pub window: WindowSpec,
    pub source: Option<SourceSpec>,
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Strip height plus a builtin profile (`kind = "free" | "slab" | "cosine" |
/// "graded" | "sampled"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub h: f64,
    #[serde(flatten)]
    pub profile: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx1: usize,
    pub nx2: usize,
    pub n_trunc: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub first_period: i64,
    pub periods: usize,
    #[serde(default)]
    pub rows_above: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceSpec {
    Bump { amplitude: f64, center: [f64; 2], radii: [f64; 2] },
    Point { position: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// `q ≡ 0` on a box.
    Zero { x1: [f64; 2], x2: [f64; 2] },
    Bump { amplitude: f64, center: [f64; 2], radii: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub alpha_count: usize,
    pub scan_nodes: usize,
    pub eps0: f64,
    pub max_levels: usize,
    pub lap_tol: f64,
    pub station_count: usize,
    pub station_offset: i64,
    /// Periods of the truncated incident-correction source.
    pub source_periods: usize,
    /// Height of `Γ_R` for flux checks; `h + 0.5` when absent.
    pub gamma_height: Option<f64>,
    /// Limit of the relative PDE residual in `validate`.
    pub pde_tol: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let p = SolveParams::default();
        Self {
            alpha_count: p.alpha_count,
            scan_nodes: ScanOptions::default().nodes,
            eps0: p.eps0,
            max_levels: p.max_levels,
            lap_tol: p.lap_tol,
            station_count: p.station_count,
            station_offset: p.station_offset,
            source_periods: 8,
            gamma_height: None,
            pde_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub format: PayloadFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Modes,
    Unperturbed,
    Perturbed,
    Pointsource,
    Validate,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Modes => "modes",
            RunMode::Unperturbed => "unperturbed",
            RunMode::Perturbed => "perturbed",
            RunMode::Pointsource => "pointsource",
            RunMode::Validate => "validate",
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str, context: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(context, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn bad(&self, field: &str, message: impl std::fmt::Display) -> Error {
        Error::parse(format!("scenario '{}', field {field}", self.name), message)
    }

    pub fn validate(&self, mode: RunMode) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.k) {
            return Err(self.bad("k", "must be positive"));
        }
        if !positive(self.medium.h) {
            return Err(self.bad("medium.h", "must be positive"));
        }
        let s = &self.solver;
        if s.alpha_count == 0 || s.scan_nodes == 0 || s.max_levels < 2 || s.station_count == 0 || s.station_offset < 1 {
            return Err(self.bad("solver", "counts must be positive (max_levels ≥ 2, station_offset ≥ 1)"));
        }
        if !positive(s.eps0) || !positive(s.lap_tol) || !positive(s.pde_tol) {
            return Err(self.bad("solver", "tolerances must be positive"));
        }
        if let Some(r) = s.gamma_height {
            if !(r > self.medium.h) {
                return Err(self.bad("solver.gamma_height", "must exceed medium.h"));
            }
        }
        if self.window.periods == 0 {
            return Err(self.bad("window.periods", "must be positive"));
        }
        match mode {
            RunMode::Modes => {}
            RunMode::Unperturbed | RunMode::Validate => {
                if !matches!(self.source, Some(SourceSpec::Bump { .. })) {
                    return Err(self.bad("source", "a volume bump source is required"));
                }
            }
            RunMode::Perturbed => {
                if !matches!(self.source, Some(SourceSpec::Bump { .. })) {
                    return Err(self.bad("source", "a volume bump source is required"));
                }
                let Some(p) = &self.perturbation else {
                    return Err(self.bad("perturbation", "required for perturbed runs"));
                };
                let f = self.source_term()?.expect("bump source");
                if !self.perturbation_of(p).support.contains_box(&f.support()) {
                    return Err(self.bad("source", "support must lie inside the perturbation box"));
                }
            }
            RunMode::Pointsource => {
                let Some(SourceSpec::Point { position }) = self.source else {
                    return Err(self.bad("source", "a point source is required"));
                };
                if !(position[1] > self.medium.h) {
                    return Err(self.bad("source.position", "must lie above the strip"));
                }
                if self.perturbation.is_none() {
                    return Err(self.bad("perturbation", "required for point-source runs"));
                }
            }
        }
        Ok(())
    }

    pub fn medium(&self) -> Result<PeriodicMedium> {
        let n0 = match &self.medium.profile {
            Profile::Free => 1.0,
            Profile::Slab { n_core } => n_core.min(1.0),
            Profile::Cosine { a, b } => (a - b.abs()).min(1.0),
            Profile::Graded { a, b } => a.min(a + b).min(1.0),
            Profile::Sampled { values, .. } => values.iter().cloned().fold(1.0, f64::min),
        };
        PeriodicMedium::new(self.medium.profile.clone(), self.medium.h, n0).map_err(|e| self.bad("medium", e))
    }

    pub fn grid(&self) -> Result<CellGrid> {
        let g = match self.grid.n_trunc {
            Some(n) => CellGrid::new(self.grid.nx1, self.grid.nx2, n),
            None => CellGrid::with_default_trunc(self.grid.nx1, self.grid.nx2, self.k, self.medium.h),
        };
        g.map_err(|e| self.bad("grid", e))
    }

    pub fn source_term(&self) -> Result<Option<SourceTerm>> {
        match self.source {
            Some(SourceSpec::Bump { amplitude, center, radii }) => {
                let bump = Bump { amplitude, center: (center[0], center[1]), radii: (radii[0], radii[1]) };
                SourceTerm::new(bump, self.medium.h).map(Some).map_err(|e| self.bad("source", e))
            }
            _ => Ok(None),
        }
    }

    fn perturbation_of(&self, p: &PerturbationSpec) -> Perturbation {
        match *p {
            PerturbationSpec::Zero { x1, x2 } => Perturbation::zero(SupportBox { x1: (x1[0], x1[1]), x2: (x2[0], x2[1]) }),
            PerturbationSpec::Bump { amplitude, center, radii } => Perturbation::from_bump(Bump {
                amplitude,
                center: (center[0], center[1]),
                radii: (radii[0], radii[1]),
            }),
        }
    }

    pub fn perturbation(&self) -> Result<Option<Perturbation>> {
        match &self.perturbation {
            None => Ok(None),
            Some(p) => {
                let q = self.perturbation_of(p);
                q.validate(self.medium.h).map_err(|e| self.bad("perturbation", e))?;
                Ok(Some(q))
            }
        }
    }

    pub fn scan_options(&self) -> ScanOptions {
        ScanOptions { nodes: self.solver.scan_nodes, ..Default::default() }
    }

    pub fn solve_params(&self) -> SolveParams {
        let s = &self.solver;
        SolveParams {
            alpha_count: s.alpha_count,
            eps0: s.eps0,
            max_levels: s.max_levels,
            lap_tol: s.lap_tol,
            station_count: s.station_count,
            station_offset: s.station_offset,
            ..Default::default()
        }
    }

    pub fn gamma_height(&self) -> f64 {
        self.solver.gamma_height.unwrap_or(self.medium.h + 0.5)
    }
}

/// Field samples on a window, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub k: f64,
    pub window: Window,
    pub values: Vec<C64>,
}

impl FieldFile {
    pub fn from_field(field: &RadiatingField) -> Self {
        Self { k: field.k, window: field.window, values: field.values.clone() }
    }

    pub fn to_bytes(&self, format: PayloadFormat) -> Vec<u8> {
        let w = &self.window;
        let mut head = String::new();
        let _ = writeln!(head, "{FIELD_MAGIC}");
        let _ = writeln!(head, "format: {}", if format == PayloadFormat::Text { "text" } else { "binary" });
        let _ = writeln!(head, "k: {:?}", self.k);
        let _ = writeln!(head, "h: {:?}", w.h);
        let _ = writeln!(head, "nx1: {}", w.nx1);
        let _ = writeln!(head, "nx2: {}", w.nx2);
        let _ = writeln!(head, "first_period: {}", w.first_period);
        let _ = writeln!(head, "period_count: {}", w.period_count);
        let _ = writeln!(head, "rows_above: {}", w.rows_above);
        let _ = writeln!(head, "rows: {}", w.rows());
        let _ = writeln!(head, "columns: {}", w.columns());
        let _ = writeln!(head, "end");
        let mut out = head.into_bytes();
        match format {
            PayloadFormat::Text => {
                let mut body = String::with_capacity(self.values.len() * 48);
                for v in &self.values {
                    let _ = writeln!(body, "{:?} {:?}", v.re, v.im);
                }
                out.extend_from_slice(body.as_bytes());
            }
            PayloadFormat::Binary => {
                for v in &self.values {
                    out.extend_from_slice(&v.re.to_le_bytes());
                    out.extend_from_slice(&v.im.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path, format: PayloadFormat) -> Result<()> {
        fs::write(path, self.to_bytes(format))?;
        Ok(())
    }

    pub fn parse(bytes: &[u8], context: &str) -> Result<Self> {
        let err = |m: String| Error::parse(context, m);
        let mut header = BTreeMap::new();
        let mut pos = 0;
        let mut first = true;
        loop {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| err("unterminated header".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|e| err(e.to_string()))?;
            pos += end + 1;
            if first {
                if line != FIELD_MAGIC {
                    return Err(err(format!("expected '{FIELD_MAGIC}', found '{line}'")));
                }
                first = false;
                continue;
            }
            if line == "end" {
                break;
            }
            let (k, v) = line.split_once(": ").ok_or_else(|| err(format!("malformed header line '{line}'")))?;
            header.insert(k.to_string(), v.to_string());
        }
        fn get<T: std::str::FromStr>(h: &BTreeMap<String, String>, key: &str, context: &str) -> Result<T> {
            h.get(key)
                .ok_or_else(|| Error::parse(context, format!("missing header key '{key}'")))?
                .parse()
                .map_err(|_| Error::parse(context, format!("bad value for header key '{key}'")))
        }
        let window = Window {
            first_period: get(&header, "first_period", context)?,
            period_count: get(&header, "period_count", context)?,
            nx1: get(&header, "nx1", context)?,
            nx2: get(&header, "nx2", context)?,
            rows_above: get(&header, "rows_above", context)?,
            h: get(&header, "h", context)?,
        };
        let (rows, cols): (usize, usize) = (get(&header, "rows", context)?, get(&header, "columns", context)?);
        if rows != window.rows() || cols != window.columns() {
            return Err(err("rows/columns disagree with the window".into()));
        }
        let n = rows * cols;
        let body = &bytes[pos..];
        let values = match header.get("format").map(String::as_str) {
            Some("text") => {
                let text = std::str::from_utf8(body).map_err(|e| err(e.to_string()))?;
                let vals = text
                    .lines()
                    .enumerate()
                    .map(|(i, l)| {
                        let mut it = l.split_whitespace().map(str::parse::<f64>);
                        match (it.next(), it.next(), it.next()) {
                            (Some(Ok(re)), Some(Ok(im)), None) => Ok(C64::new(re, im)),
                            _ => Err(err(format!("malformed payload line {}", i + 1))),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                vals
            }
            Some("binary") => {
                if body.len() != 16 * n {
                    return Err(err(format!("binary payload has {} bytes, expected {}", body.len(), 16 * n)));
                }
                body.chunks_exact(16)
                    .map(|c| {
                        let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                        let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                        C64::new(re, im)
                    })
                    .collect()
            }
            other => return Err(err(format!("unknown payload format {other:?}"))),
        };
        if values.len() != n {
            return Err(err(format!("payload has {} values, expected {n}", values.len())));
        }
        Ok(Self { k: get(&header, "k", context)?, window, values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read(path)?, &path.display().to_string())
    }

    pub fn value(&self, row: usize, col: usize) -> C64 {
        self.values[row * self.window.columns() + col]
    }

    /// `(l2, max)` over the samples.
    pub fn summary(&self) -> (f64, f64) {
        let l2 = self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let max = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        (l2, max)
    }
}

/// Selection of samples for [`export_plot_data`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slice {
    /// Every `stride`-th row and column.
    Full { stride: usize },
    /// The grid row nearest to `x2`.
    Row { x2: f64 },
    /// The grid column nearest to `x1`.
    Column { x1: f64 },
}

impl std::str::FromStr for Slice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::parse("slice spec", format!("'{s}': {m}"));
        if s == "full" {
            return Ok(Slice::Full { stride: 1 });
        }
        if let Some(r) = s.strip_prefix("full:") {
            let stride: usize = r.parse().map_err(|_| bad("stride must be a positive integer"))?;
            if stride == 0 {
                return Err(bad("stride must be a positive integer"));
            }
            return Ok(Slice::Full { stride });
        }
        let value = |r: &str| r.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("expected a number"));
        if let Some(r) = s.strip_prefix("x2=") {
            return Ok(Slice::Row { x2: value(r)? });
        }
        if let Some(r) = s.strip_prefix("x1=") {
            return Ok(Slice::Column { x1: value(r)? });
        }
        Err(bad("expected full, full:<stride>, x1=<value> or x2=<value>"))
    }
}

/// Tab-separated `x1 x2 re im abs` rows after one `#` header line.
pub fn export_plot_data(field: &FieldFile, slice: Slice) -> Result<String> {
    let w = &field.window;
    let (rows, cols): (Vec<usize>, Vec<usize>) = match slice {
        Slice::Full { stride } => ((0..w.rows()).step_by(stride).collect(), (0..w.columns()).step_by(stride).collect()),
        Slice::Row { x2 } => {
            let top = w.x2(w.rows() - 1);
            if x2 < -0.5 * w.dx2() || x2 > top + 0.5 * w.dx2() {
                return Err(Error::parse("slice spec", format!("x2 = {x2} outside [0, {top}]")));
            }
            let r = ((x2 / w.dx2()).round() as usize).min(w.rows() - 1);
            (vec![r], (0..w.columns()).collect())
        }
        Slice::Column { x1 } => {
            let (lo, hi) = (w.x1(0), w.x1(w.columns() - 1));
            if x1 < lo - 0.5 * w.dx1() || x1 > hi + 0.5 * w.dx1() {
                return Err(Error::parse("slice spec", format!("x1 = {x1} outside [{lo}, {hi}]")));
            }
            let c = (((x1 - lo) / w.dx1()).round() as usize).min(w.columns() - 1);
            ((0..w.rows()).collect(), vec![c])
        }
    };
    let mut out = String::from("# x1\tx2\tre\tim\tabs\n");
    for &r in &rows {
        for &c in &cols {
            let v = field.value(r, c);
            let _ = writeln!(out, "{:?}\t{:?}\t{:?}\t{:?}\t{:?}", w.x1(c), w.x2(r), v.re, v.im, v.norm());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasSummary {
    pub regular: bool,
    pub exceptional: Vec<f64>,
    pub modes: usize,
    pub min_sigma: f64,
    pub threshold: f64,
}

impl AtlasSummary {
    fn of(atlas: &ModeAtlas) -> Self {
        Self {
            regular: atlas.regular,
            exceptional: atlas.exceptional.iter().map(|e| e.alpha_j).collect(),
            modes: atlas.modes.len(),
            min_sigma: atlas.min_sigma,
            threshold: atlas.threshold,
        }
    }
}

/// One pass/fail line of a validate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, pass: value <= limit }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, pass: value >= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_hash: String,
    pub artifact_version: String,
    pub mode: RunMode,
    pub threads: usize,
    pub override_uniqueness: bool,
    pub scenario: Scenario,
    pub atlas: Option<AtlasSummary>,
    pub path: Option<SolvePath>,
    /// Named scalar diagnostics of the run.
    pub diagnostics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub monotonicity: Option<MonotonicityReport>,
    pub outputs: Vec<String>,
    /// Wall-clock seconds per stage; excluded from determinism comparisons.
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub override_uniqueness: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub exit_code: i32,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        Category::Input => EXIT_INPUT,
        Category::Solver => EXIT_SOLVER,
        Category::Validation => EXIT_VALIDATION,
    }
}

/// Sets the global thread pool once; later calls keep the first size.
pub fn configure_threads(threads: Option<usize>) -> usize {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    rayon::current_num_threads()
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.0.insert(stage.into(), t.elapsed().as_secs_f64());
        out
    }
}

fn field_diagnostics(d: &mut BTreeMap<String, f64>, prefix: &str, field: &FieldFile) {
    let (l2, max) = field.summary();
    d.insert(format!("{prefix}.l2"), l2);
    d.insert(format!("{prefix}.max_abs"), max);
}

/// Runs one CLI verb on a scenario and writes artifacts under `opts.out`.
pub fn run(mode: RunMode, scenario_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let scenario = Scenario::load(scenario_path)?;
    run_scenario(mode, &scenario, opts)
}

pub fn run_scenario(mode: RunMode, scenario: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    scenario.validate(mode)?;
    let threads = configure_threads(opts.threads);
    let kw = Wavenumber::real(scenario.k)?;
    let medium = scenario.medium()?;
    let grid = scenario.grid()?;
    fs::create_dir_all(&opts.out)?;
    let mut timer = Timer(BTreeMap::new());
    let mut manifest = RunManifest {
        scenario_hash: scenario.hash(),
        artifact_version: ARTIFACT_VERSION.into(),
        mode,
        threads,
        override_uniqueness: opts.override_uniqueness,
        scenario: scenario.clone(),
        atlas: None,
        path: None,
        diagnostics: BTreeMap::new(),
        checks: vec![],
        monotonicity: None,
        outputs: vec![],
        timings: BTreeMap::new(),
    };
    let format = scenario.output.format;
    let field_name = |stem: &str| format!("{stem}.{}", if format == PayloadFormat::Text { "txt" } else { "bin" });

    let atlas = timer.time("atlas", || build_atlas(&kw, &medium, &grid, &scenario.scan_options()))?;
    manifest.atlas = Some(AtlasSummary::of(&atlas));
    if mode == RunMode::Modes {
        fs::write(opts.out.join("atlas.json"), atlas.to_json()?)?;
        manifest.outputs.push("atlas.json".into());
        return finish(manifest, timer, opts, EXIT_OK);
    }
    if !atlas.regular {
        return Err(Error::NotRegular(format!(
            "k = {} meets a cutoff exceptional value; the radiating solver is undefined there",
            scenario.k
        )));
    }
    let solver = timer.time("setup", || UnperturbedSolver::new(&kw, &medium, &grid, &atlas, &scenario.solve_params()))?;
    manifest.path = Some(solver.path());
    let ws = scenario.window;
    let window = solver.window(ws.first_period, ws.periods, ws.rows_above);
    let pert = scenario.perturbation()?;
    if let Some(p) = &pert {
        manifest.monotonicity = Some(validate_monotonicity(&medium, p, &grid));
    }

    match mode {
        RunMode::Modes => unreachable!(),
        RunMode::Unperturbed => {
            let f = scenario.source_term()?.expect("validated");
            let src = GridSource::from_source(&f, &grid, medium.h);
            let field = timer.time("solve", || solver.solve(&src, &window))?;
            record_solution(&mut manifest, &field, &medium, &Perturbation::zero(f.support()), &src, scenario)?;
            let file = FieldFile::from_field(&field);
            field_diagnostics(&mut manifest.diagnostics, "field", &file);
            file.write(&opts.out.join(field_name("field")), format)?;
            manifest.outputs.push(field_name("field"));
        }
        RunMode::Perturbed => {
            let f = scenario.source_term()?.expect("validated");
            let p = pert.expect("validated");
            let sol = timer.time("solve", || solve_perturbed(&solver, &p, &f, &window, opts.override_uniqueness))?;
            let src = GridSource::from_source(&f, &grid, medium.h);
            record_solution(&mut manifest, &sol.field, &medium, &p, &src, scenario)?;
            let d = &mut manifest.diagnostics;
            d.insert("ls.iterations".into(), sol.report.iterations as f64);
            d.insert("ls.relative_residual".into(), sol.report.relative_residual);
            d.insert("ls.condition_estimate".into(), sol.report.condition_estimate);
            if let Some(c) = sol.report.consistency {
                d.insert("ls.consistency".into(), c);
            }
            let file = FieldFile::from_field(&sol.field);
            field_diagnostics(&mut manifest.diagnostics, "field", &file);
            file.write(&opts.out.join(field_name("field")), format)?;
            manifest.outputs.push(field_name("field"));
        }
        RunMode::Pointsource => {
            let Some(SourceSpec::Point { position }) = scenario.source else { unreachable!() };
            let p = pert.expect("validated");
            let y = Point2::new(position[0], position[1]);
            let (inc, sc) = timer.time("solve", || {
                scatter_point_source(&solver, &p, y, &window, scenario.solver.source_periods, opts.override_uniqueness)
            })?;
            let inc_file = FieldFile { k: scenario.k, window, values: inc.values };
            let sc_file = FieldFile::from_field(&sc.field);
            field_diagnostics(&mut manifest.diagnostics, "incident", &inc_file);
            field_diagnostics(&mut manifest.diagnostics, "scattered", &sc_file);
            if let Some(c) = sc.report.consistency {
                manifest.diagnostics.insert("ls.consistency".into(), c);
            }
            inc_file.write(&opts.out.join(field_name("incident")), format)?;
            sc_file.write(&opts.out.join(field_name("scattered")), format)?;
            manifest.outputs.push(field_name("incident"));
            manifest.outputs.push(field_name("scattered"));
        }
        RunMode::Validate => {
            let checks = timer.time("validate", || validate_checks(scenario, &solver, &window, pert.as_ref(), opts))?;
            let mut report = String::new();
            for c in &checks {
                let _ = writeln!(report, "{} {} value={:e} limit={:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
            }
            fs::write(opts.out.join("validate.txt"), &report)?;
            manifest.outputs.push("validate.txt".into());
            let failed = checks.iter().any(|c| !c.pass);
            manifest.checks = checks;
            return finish(manifest, timer, opts, if failed { EXIT_VALIDATION } else { EXIT_OK });
        }
    }
    finish(manifest, timer, opts, EXIT_OK)
}

fn record_solution(
    manifest: &mut RunManifest,
    field: &RadiatingField,
    medium: &PeriodicMedium,
    pert: &Perturbation,
    src: &GridSource,
    scenario: &Scenario,
) -> Result<()> {
    let d = &mut manifest.diagnostics;
    d.insert("pde_residual".into(), pde_residual(field, medium, pert, src)?);
    let r = scenario.gamma_height();
    d.insert("flux.gamma_height".into(), r);
    d.insert("flux.im".into(), flux_through_gamma(field, r)?);
    if let Some(lap) = &field.lap {
        d.insert("lap.levels".into(), lap.eps.len() as f64);
        d.insert("lap.final_rel_diff".into(), *lap.rel_diffs.last().unwrap_or(&f64::NAN));
    }
    for c in &field.u2_coeffs {
        let key = format!("mode.alpha={:+.9}.l={}", c.alpha_j, c.l);
        d.insert(format!("{key}.re"), c.a.re);
        d.insert(format!("{key}.im"), c.a.im);
    }
    Ok(())
}

/// Identity checks on a scenario, plus a round trip of a stored field from
/// an earlier run into the same output directory.
fn validate_checks(
    scenario: &Scenario,
    solver: &UnperturbedSolver,
    window: &Window,
    pert: Option<&Perturbation>,
    opts: &RunOptions,
) -> Result<Vec<Check>> {
    let medium = &solver.medium;
    let f = scenario.source_term()?.expect("validated");
    let src = GridSource::from_source(&f, &solver.grid, medium.h);
    let r = scenario.gamma_height();
    let mut checks = vec![];

    let field = solver.solve(&src, window)?;
    checks.push(Check::at_least("flux_nonnegative", flux_through_gamma(&field, r)?, -1e-8));
    match field.path {
        SolvePath::Direct => {
            // the discrete field is periodic over the supercell of α-nodes
            let m = solver.params.alpha_count;
            let sc = solver.window(-(m as i64) / 2, m, 0);
            let full = solver.solve(&src, &sc)?;
            let lo = modal_flux_decomposition(&full, r)?;
            let hi = modal_flux_decomposition(&full, r + 1.0)?;
            checks.push(Check::at_most("flux_modal_mismatch", lo.mismatch, 1e-6));
            checks.push(Check::at_most(
                "flux_height_independence",
                (lo.im_flux - hi.im_flux).abs() / lo.im_flux.abs().max(1e-14),
                1e-6,
            ));
        }
        SolvePath::LimitingAbsorption => {
            let lap = field.lap.as_ref().expect("absorption report");
            let d = &lap.rel_diffs;
            let monotone = d.windows(2).all(|w| w[1] < w[0]);
            checks.push(Check::at_least("lap_monotone_differences", if monotone { 1.0 } else { 0.0 }, 1.0));
            checks.push(Check::at_most("lap_final_difference", *d.last().unwrap_or(&f64::INFINITY), scenario.solver.lap_tol));
        }
    }
    let zero = Perturbation::zero(f.support());
    checks.push(Check::at_most("pde_residual", pde_residual(&field, medium, &zero, &src)?, scenario.solver.pde_tol));

    if let Some(p) = pert.filter(|p| !p.is_zero()) {
        if p.support.contains_box(&f.support()) {
            let sol = solve_perturbed(solver, p, &f, window, true)?;
            checks.push(Check::at_most("perturbed_consistency", sol.report.consistency.unwrap_or(f64::INFINITY), 1e-8));
        }
    }

    // round trip of an earlier unperturbed run of the same scenario
    if let Some(prev) = last_manifest(&opts.out)?.filter(|m| m.scenario_hash == scenario.hash() && m.mode == RunMode::Unperturbed) {
        if let Some(name) = prev.outputs.first() {
            let stored = FieldFile::read(&opts.out.join(name))?;
            let (l2, max) = stored.summary();
            let dev = (l2 - prev.diagnostics["field.l2"]).abs().max((max - prev.diagnostics["field.max_abs"]).abs());
            checks.push(Check::at_most("field_file_round_trip", dev, 1e-15));
        }
    }
    Ok(checks)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Most recent manifest appended to `dir`, if any.
pub fn last_manifest(dir: &Path) -> Result<Option<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    match text.lines().rev().find(|l| !l.trim().is_empty()) {
        None => Ok(None),
        Some(line) => serde_json::from_str(line).map(Some).map_err(|e| Error::parse(path.display().to_string(), e)),
    }
}

fn finish(mut manifest: RunManifest, timer: Timer, opts: &RunOptions, exit_code: i32) -> Result<RunOutcome> {
    manifest.timings = timer.0;
    let line = serde_json::to_string(&manifest).map_err(|e| Error::parse("manifest", e))?;
    let mut file = fs::OpenOptions::new().create(true).append(true).open(opts.out.join(MANIFEST_FILE))?;
    writeln!(file, "{line}")?;
    Ok(RunOutcome { manifest, exit_code })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_specs_parse() {
        assert_eq!("full".parse::<Slice>().unwrap(), Slice::Full { stride: 1 });
        assert_eq!("full:4".parse::<Slice>().unwrap(), Slice::Full { stride: 4 });
        assert_eq!("x2=1.5".parse::<Slice>().unwrap(), Slice::Row { x2: 1.5 });
        assert_eq!("x1=-2".parse::<Slice>().unwrap(), Slice::Column { x1: -2.0 });
        for bad in ["", "full:0", "x2=", "x3=1", "x2=nan", "row"] {
            assert!(matches!(bad.parse::<Slice>(), Err(Error::Parse { .. })), "{bad}");
        }
    }
}
