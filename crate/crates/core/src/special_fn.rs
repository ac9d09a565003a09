//! Hankel functions of the first kind (orders 0 and 1) and the Green's
//! kernels of the Helmholtz operator in the plane, the half-plane and the
//! half-plane above an elevated line.
//!
//! H₀⁽¹⁾ and H₁⁽¹⁾ are evaluated with the ascending series for J and Y when
//! |z| ≤ [`SERIES_CROSSOVER`] and with the Hankel large-argument expansion
//! beyond. Complex arguments are restricted to the absorbing sector
//! `Im z ≥ 0`, `Im z ≤ Re z`, which is all the limiting-absorption path needs.
//! In the series region the relative error grows like `e^{2 Im z}` because
//! `J` and `Y` both grow while `H⁽¹⁾` decays; for the shifts used by the
//! solvers (`Im z` well below 1) this is irrelevant.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_2_PI, FRAC_PI_4, PI};

use crate::error::{Error, Result};

/// |z| at which evaluation switches from the ascending series to the
/// asymptotic expansion.
pub const SERIES_CROSSOVER: f64 = 12.0;
/// Smallest supported |z|.
pub const MIN_ARG: f64 = 1e-12;
/// Largest supported |z|.
pub const MAX_ARG: f64 = 1e6;
/// Minimal separation of source and observation points.
pub const MIN_DISTANCE: f64 = 1e-8;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x1: f64,
    pub x2: f64,
}

impl Point2 {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    /// Mirror image across the boundary line `x2 = 0`.
    pub fn reflected(self) -> Self {
        Self::new(self.x1, -self.x2)
    }

    /// Mirror image across the line `x2 = h`.
    pub fn reflected_about(self, h: f64) -> Self {
        Self::new(self.x1, 2.0 * h - self.x2)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x1 - other.x1).hypot(self.x2 - other.x2)
    }

    pub fn shifted(self, t: Point2) -> Self {
        Self::new(self.x1 + t.x1, self.x2 + t.x2)
    }
}

/// Wavenumber `k` with an optional absorbing shift: the effective value is `k + iε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wavenumber {
    pub k: f64,
    pub epsilon: f64,
}

impl Wavenumber {
    pub fn new(k: f64, epsilon: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Domain(format!("wavenumber must be positive, got {k}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!(
                "absorption shift must be non-negative, got {epsilon}"
            )));
        }
        Ok(Self { k, epsilon })
    }

    pub fn real(k: f64) -> Result<Self> {
        Self::new(k, 0.0)
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        Self::new(self.k, epsilon)
    }

    pub fn effective(&self) -> Complex64 {
        Complex64::new(self.k, self.epsilon)
    }
}

fn check_argument(z: Complex64) -> Result<()> {
    let modulus = z.norm();
    if modulus == 0.0 {
        return Err(Error::Domain(
            "H0(z) has a logarithmic singularity at z = 0".into(),
        ));
    }
    if !modulus.is_finite() || !(MIN_ARG..=MAX_ARG).contains(&modulus) {
        return Err(Error::AccuracyUnsupported {
            modulus,
            min: MIN_ARG,
            max: MAX_ARG,
        });
    }
    if z.im < 0.0 || z.im > z.re.abs() {
        return Err(Error::Domain(format!(
            "argument {z} outside the absorbing sector 0 <= Im z <= |Re z|"
        )));
    }
    Ok(())
}

/// Ascending series for (J0, Y0, J1, Y1).
pub(crate) fn bessel_series(z: Complex64) -> [Complex64; 4] {
    let t = -(z * z) / 4.0;
    let half = z / 2.0;
    let log_term = (half.ln() + EULER_GAMMA) * FRAC_2_PI;

    let mut term0 = Complex64::new(1.0, 0.0); // t^m / (m!)^2
    let mut term1 = Complex64::new(1.0, 0.0); // t^m / (m! (m+1)!)
    let mut j0 = term0;
    let mut j1s = term1;
    let mut y0s = Complex64::new(0.0, 0.0);
    let mut y1s = term1; // H_0 + H_1 = 1 at m = 0
    let mut harmonic = 0.0;
    for m in 1..200 {
        let mf = m as f64;
        term0 *= t / (mf * mf);
        term1 *= t / (mf * (mf + 1.0));
        harmonic += 1.0 / mf;
        let h_next = harmonic + 1.0 / (mf + 1.0);
        j0 += term0;
        j1s += term1;
        y0s -= term0 * harmonic;
        y1s += term1 * (harmonic + h_next);
        if term0.norm() < 1e-18 * j0.norm().max(1e-300)
            && term1.norm() < 1e-18 * j1s.norm().max(1e-300)
            && m > 4
        {
            break;
        }
    }
    let j1 = half * j1s;
    let y0 = log_term * j0 + y0s * FRAC_2_PI;
    let y1 = log_term * j1 - FRAC_2_PI / z - half * y1s / PI;
    [j0, y0, j1, y1]
}

/// Large-argument expansion of H_ν⁽¹⁾(z) for ν ∈ {0, 1}.
pub(crate) fn hankel_asymptotic(order: u32, z: Complex64) -> Complex64 {
    let nu = order as f64;
    let mu = 4.0 * nu * nu;
    let i = Complex64::i();
    let inv_z = 1.0 / z;
    let mut coeff = 1.0; // a_k(ν)
    let mut ipow = Complex64::new(1.0, 0.0);
    let mut zpow = Complex64::new(1.0, 0.0);
    let mut sum = Complex64::new(1.0, 0.0);
    let mut last = f64::INFINITY;
    for k in 1..80 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        coeff *= (mu - odd * odd) / (8.0 * kf);
        ipow *= i;
        zpow *= inv_z;
        let term = ipow * zpow * coeff;
        let size = term.norm();
        if size > last {
            break;
        }
        sum += term;
        last = size;
        if size < 1e-17 * sum.norm() {
            break;
        }
    }
    let omega = z - (nu * std::f64::consts::FRAC_PI_2 + FRAC_PI_4);
    (2.0 / (PI * z)).sqrt() * (i * omega).exp() * sum
}

/// H₀⁽¹⁾(z).
pub fn hankel1_0(z: Complex64) -> Result<Complex64> {
    check_argument(z)?;
    Ok(hankel1_0_unchecked(z))
}

/// H₁⁽¹⁾(z); same domain as [`hankel1_0`].
pub fn hankel1_1(z: Complex64) -> Result<Complex64> {
    check_argument(z)?;
    Ok(hankel1_1_unchecked(z))
}

pub(crate) fn hankel1_0_unchecked(z: Complex64) -> Complex64 {
    if z.norm() <= SERIES_CROSSOVER {
        let [j0, y0, _, _] = bessel_series(z);
        j0 + Complex64::i() * y0
    } else {
        hankel_asymptotic(0, z)
    }
}

pub(crate) fn hankel1_1_unchecked(z: Complex64) -> Complex64 {
    if z.norm() <= SERIES_CROSSOVER {
        let [_, _, j1, y1] = bessel_series(z);
        j1 + Complex64::i() * y1
    } else {
        hankel_asymptotic(1, z)
    }
}

fn kernel_argument(kw: &Wavenumber, r: f64) -> Result<Complex64> {
    if !(r >= MIN_DISTANCE) {
        return Err(Error::Singular(r));
    }
    Ok(kw.effective() * r)
}

/// Fundamental solution Φ(x, y) = (i/4) H₀⁽¹⁾((k + iε)|x − y|).
pub fn phi_k(kw: &Wavenumber, x: Point2, y: Point2) -> Result<Complex64> {
    let z = kernel_argument(kw, x.distance(y))?;
    Ok(Complex64::new(0.0, 0.25) * hankel1_0(z)?)
}

/// ∂Φ(x, y)/∂y₂.
pub fn dphi_dy2(kw: &Wavenumber, x: Point2, y: Point2) -> Result<Complex64> {
    let r = x.distance(y);
    let z = kernel_argument(kw, r)?;
    // d/dr H0(κr) = -κ H1(κr), dr/dy2 = (y2 - x2)/r
    let h1 = hankel1_1(z)?;
    Ok(Complex64::new(0.0, -0.25) * kw.effective() * h1 * ((y.x2 - x.x2) / r))
}

/// Dirichlet Green's function of the upper half-plane, `Φ(x,y) − Φ(x,y*)`.
pub fn green_halfplane(kw: &Wavenumber, x: Point2, y: Point2) -> Result<Complex64> {
    Ok(phi_k(kw, x, y)? - phi_k(kw, x, y.reflected())?)
}

/// Dirichlet Green's function of the half-plane `x2 > h`.
pub fn green_elevated(kw: &Wavenumber, h: f64, x: Point2, y: Point2) -> Result<Complex64> {
    if x.x2 < h || y.x2 < h {
        return Err(Error::Precondition(format!(
            "elevated kernel needs x2, y2 >= h = {h}, got {} and {}",
            x.x2, y.x2
        )));
    }
    Ok(phi_k(kw, x, y)? - phi_k(kw, x, y.reflected_about(h))?)
}
