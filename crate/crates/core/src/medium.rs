//! Periodic background media, compact perturbations, volume sources and the
//! cell grid they are sampled on.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::special_fn::Point2;

/// Named refractive-index profiles inside the strip `0 < x2 ≤ h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Profile {
    /// n ≡ 1.
    Free,
    /// n = n_core throughout the strip.
    Slab { n_core: f64 },
    /// n = a + b cos x1.
    Cosine { a: f64, b: f64 },
    /// n = a + b x2 / h, increasing in depth order.
    Graded { a: f64, b: f64 },
    /// Samples on `nx1 × (nx2 + 1)` nodes `(2π i / nx1, h j / nx2)`, row-major
    /// by `j`, interpolated bilinearly and periodically in x1.
    Sampled {
        nx1: usize,
        nx2: usize,
        values: Vec<f64>,
    },
}

type IndexFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Source {
    Named(Profile),
    Function { label: String, f: IndexFn, x1_invariant: bool },
}

impl fmt::Debug for Source {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Named(p) => p.fmt(fm),
            Source::Function { label, .. } => write!(fm, "Function({label})"),
        }
    }
}

/// 2π-periodic refractive index, equal to one above the waveguide height.
#[derive(Debug, Clone)]
pub struct PeriodicMedium {
    source: Source,
    pub h: f64,
    pub n0: f64,
}

impl PeriodicMedium {
    pub fn new(profile: Profile, h: f64, n0: f64) -> Result<Self> {
        let m = Self {
            source: Source::Named(profile),
            h,
            n0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn free(h: f64) -> Self {
        Self::new(Profile::Free, h, 1.0).expect("free medium is valid")
    }

    /// Medium from an arbitrary index function on the strip.
    pub fn from_fn(
        label: impl Into<String>,
        h: f64,
        n0: f64,
        x1_invariant: bool,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let m = Self {
            source: Source::Function {
                label: label.into(),
                f: Arc::new(f),
                x1_invariant,
            },
            h,
            n0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn profile(&self) -> Option<&Profile> {
        match &self.source {
            Source::Named(p) => Some(p),
            Source::Function { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::Domain(format!("waveguide height must be positive, got {}", self.h)));
        }
        if !(self.n0 > 0.0) {
            return Err(Error::Domain(format!("lower bound n0 must be positive, got {}", self.n0)));
        }
        if let Source::Named(Profile::Sampled { nx1, nx2, values }) = &self.source {
            if *nx1 == 0 || *nx2 == 0 || values.len() != nx1 * (nx2 + 1) {
                return Err(Error::Domain("sampled medium has inconsistent dimensions".into()));
            }
        }
        for j in 0..=32 {
            for i in 0..32 {
                let x1 = 2.0 * PI * i as f64 / 32.0;
                let x2 = self.h * j as f64 / 32.0;
                let v = self.n(x1, x2);
                if !(v >= self.n0) || !v.is_finite() {
                    return Err(Error::Domain(format!(
                        "refractive index {v} at ({x1:.3}, {x2:.3}) below n0 = {}",
                        self.n0
                    )));
                }
            }
        }
        Ok(())
    }

    /// Refractive index; the strip value is used up to and including `x2 = h`.
    pub fn n(&self, x1: f64, x2: f64) -> f64 {
        if x2 > self.h {
            return 1.0;
        }
        match &self.source {
            Source::Named(p) => match p {
                Profile::Free => 1.0,
                Profile::Slab { n_core } => *n_core,
                Profile::Cosine { a, b } => a + b * x1.cos(),
                Profile::Graded { a, b } => a + b * x2 / self.h,
                Profile::Sampled { nx1, nx2, values } => {
                    let s = (x1 / (2.0 * PI)).rem_euclid(1.0) * *nx1 as f64;
                    let i0 = (s.floor() as usize) % nx1;
                    let i1 = (i0 + 1) % nx1;
                    let fs = s - s.floor();
                    let t = (x2 / self.h).clamp(0.0, 1.0) * *nx2 as f64;
                    let j0 = (t.floor() as usize).min(nx2 - 1);
                    let ft = t - j0 as f64;
                    let at = |i: usize, j: usize| values[j * nx1 + i];
                    let lo = at(i0, j0) * (1.0 - fs) + at(i1, j0) * fs;
                    let hi = at(i0, j0 + 1) * (1.0 - fs) + at(i1, j0 + 1) * fs;
                    lo * (1.0 - ft) + hi * ft
                }
            },
            Source::Function { f, .. } => f(x1, x2),
        }
    }

    /// True when n does not depend on x1; the cell problem then decouples
    /// into one ODE per Fourier mode.
    pub fn is_x1_invariant(&self) -> bool {
        match &self.source {
            Source::Named(p) => match p {
                Profile::Free | Profile::Slab { .. } | Profile::Graded { .. } => true,
                Profile::Cosine { b, .. } => *b == 0.0,
                Profile::Sampled { nx1, nx2, values } => (0..=*nx2).all(|j| {
                    let row = &values[j * nx1..(j + 1) * nx1];
                    row.iter().all(|v| *v == row[0])
                }),
            },
            Source::Function { x1_invariant, .. } => *x1_invariant,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self.source, Source::Named(Profile::Free))
    }

    /// Stable identifier of the medium, for manifests and atlas files.
    pub fn hash(&self) -> String {
        let desc = match &self.source {
            Source::Named(p) => serde_json::to_string(p).expect("profile serializes"),
            Source::Function { label, .. } => format!("function:{label}"),
        };
        let mut hasher = Sha256::new();
        hasher.update(desc.as_bytes());
        hasher.update(format!("|h={:e}|n0={:e}", self.h, self.n0).as_bytes());
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Smooth compactly supported bump `amplitude · exp(1 − 1/(1 − ρ²))`,
/// `ρ² = ((x1−c1)/r1)² + ((x2−c2)/r2)²`, equal to `amplitude` at the centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: (f64, f64),
    pub radii: (f64, f64),
}

impl Bump {
    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        let u = (x1 - self.center.0) / self.radii.0;
        let v = (x2 - self.center.1) / self.radii.1;
        let rho2 = u * u + v * v;
        if rho2 >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - rho2)).exp()
        }
    }

    pub fn support(&self) -> SupportBox {
        SupportBox {
            x1: (self.center.0 - self.radii.0, self.center.0 + self.radii.0),
            x2: (self.center.1 - self.radii.1, self.center.1 + self.radii.1),
        }
    }

    /// Same bump mirrored across `x1 = 0`.
    pub fn mirrored(&self) -> Self {
        Self {
            center: (-self.center.0, self.center.1),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
}

impl SupportBox {
    pub fn contains(&self, p: Point2) -> bool {
        p.x1 >= self.x1.0 && p.x1 <= self.x1.1 && p.x2 >= self.x2.0 && p.x2 <= self.x2.1
    }

    pub fn contains_box(&self, other: &SupportBox) -> bool {
        other.x1.0 >= self.x1.0 - 1e-12
            && other.x1.1 <= self.x1.1 + 1e-12
            && other.x2.0 >= self.x2.0 - 1e-12
            && other.x2.1 <= self.x2.1 + 1e-12
    }
}

/// Compactly supported real contrast `q` with support box `Q` inside the strip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub bump: Option<Bump>,
    pub support: SupportBox,
}

impl Perturbation {
    pub fn zero(support: SupportBox) -> Self {
        Self { bump: None, support }
    }

    pub fn from_bump(bump: Bump) -> Self {
        Self {
            support: bump.support(),
            bump: Some(bump),
        }
    }

    pub fn validate(&self, h: f64) -> Result<()> {
        let s = &self.support;
        if !(s.x2.0 > 0.0 && s.x2.1 < h && s.x1.0 < s.x1.1 && s.x2.0 < s.x2.1) {
            return Err(Error::Domain(format!(
                "perturbation box x2 ∈ [{}, {}] must lie strictly inside (0, {h})",
                s.x2.0, s.x2.1
            )));
        }
        if let Some(b) = &self.bump {
            if !self.support.contains_box(&b.support()) {
                return Err(Error::Domain("bump support exceeds the perturbation box".into()));
            }
            if b.amplitude <= -1.0 {
                return Err(Error::Domain("1 + q must stay positive".into()));
            }
        }
        Ok(())
    }

    pub fn q(&self, x1: f64, x2: f64) -> f64 {
        match &self.bump {
            Some(b) if self.support.contains(Point2::new(x1, x2)) => b.value(x1, x2),
            _ => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bump.is_none_or(|b| b.amplitude == 0.0)
    }
}

/// Volume source `f`, a smooth bump inside the strip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    pub bump: Bump,
}

impl SourceTerm {
    pub fn new(bump: Bump, h: f64) -> Result<Self> {
        let s = bump.support();
        if !(s.x2.0 > 0.0 && s.x2.1 < h) {
            return Err(Error::Domain(format!(
                "source support x2 ∈ [{}, {}] must lie inside (0, {h})",
                s.x2.0, s.x2.1
            )));
        }
        Ok(Self { bump })
    }

    pub fn value(&self, x1: f64, x2: f64) -> Complex64 {
        Complex64::new(self.bump.value(x1, x2), 0.0)
    }

    pub fn support(&self) -> SupportBox {
        self.bump.support()
    }
}

/// Discretization of the periodicity cell `(0, 2π) × (0, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    /// Collocation points (and Fourier modes) in x1; even.
    pub nx1: usize,
    /// Vertical intervals on `[0, h]`.
    pub nx2: usize,
    /// Rayleigh truncation: modes `|n| ≤ n_trunc` are reported and extended.
    pub n_trunc: usize,
}

impl CellGrid {
    pub fn new(nx1: usize, nx2: usize, n_trunc: usize) -> Result<Self> {
        let g = Self { nx1, nx2, n_trunc };
        g.validate()?;
        Ok(g)
    }

    /// Grid with the default truncation for wavenumber `k` and height `h`.
    pub fn with_default_trunc(nx1: usize, nx2: usize, k: f64, h: f64) -> Result<Self> {
        Self::new(nx1, nx2, default_n_trunc(k, h))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.nx1.is_multiple_of(2) || self.nx1 < 4 {
            return Err(Error::InvalidGrid(format!("nx1 = {} must be even and ≥ 4", self.nx1)));
        }
        if self.nx2 < 8 {
            return Err(Error::InvalidGrid(format!("nx2 = {} must be ≥ 8", self.nx2)));
        }
        if self.nx1 < 2 * self.n_trunc + 2 {
            return Err(Error::InvalidGrid(format!(
                "nx1 = {} cannot carry Rayleigh modes |n| ≤ {}",
                self.nx1, self.n_trunc
            )));
        }
        Ok(())
    }

    pub fn dx1(&self) -> f64 {
        2.0 * PI / self.nx1 as f64
    }

    pub fn dx2(&self, h: f64) -> f64 {
        h / self.nx2 as f64
    }

    /// Active Fourier modes `-nx1/2 + 1 ..= nx1/2 - 1`; the Nyquist mode is
    /// held at zero so the mode set is symmetric.
    pub fn modes(&self) -> Vec<i64> {
        let half = (self.nx1 / 2) as i64;
        (-half + 1..half).collect()
    }
}

/// Smallest `N` with `N − k − 1 ≥ 6/h`.
pub fn default_n_trunc(k: f64, h: f64) -> usize {
    (6.0 / h + k + 1.0).ceil().max(1.0) as usize
}
