//! Discrete Floquet–Bloch transform.
//!
//! A [`LineSignal`] lives on `M` consecutive periods `[2πm₀, 2π(m₀+M))`
//! sampled with `P` points per period. The transform evaluates
//! `f̃_α(t) = Σ_m f(t + 2πm) e^{-iα(t+2πm)}` on the `M` equispaced
//! quasimomenta of `(-1/2, 1/2]`, and the inverse is the `M`-node rule
//! `f(t + 2πm) = (1/M) Σ_α f̃_α(t) e^{iα(t+2πm)}`. Both are exact finite
//! sums, so the round trip is an identity for window-supported signals.
//!
//! The transform can also be taken with more α-nodes than periods, which
//! embeds the signal into a longer supercell of `M_α` periods.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

type C64 = Complex64;

/// The `m` quasimomentum nodes `j/m`, ordered ascending in `(-1/2, 1/2]`.
pub fn alpha_nodes(m: usize) -> Vec<f64> {
    let lo = -(m as i64 - 1) / 2; // -ceil(m/2) + 1
    (0..m as i64).map(|i| (lo + i) as f64 / m as f64).collect()
}

/// Integer numerator of the α-node with index `a`, i.e. `alpha_nodes(m)[a] * m`.
pub fn alpha_numerator(m: usize, a: usize) -> i64 {
    -(m as i64 - 1) / 2 + a as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSignal {
    pub samples: Vec<C64>,
    pub first_period: i64,
    pub period_count: usize,
    pub samples_per_period: usize,
}

impl LineSignal {
    pub fn zeros(first_period: i64, period_count: usize, samples_per_period: usize) -> Self {
        Self {
            samples: vec![C64::new(0.0, 0.0); period_count * samples_per_period],
            first_period,
            period_count,
            samples_per_period,
        }
    }

    /// Window `[-πM, πM)` for even `M`; for odd `M` the window starts at the
    /// period `-(M-1)/2`.
    pub fn centered(period_count: usize, samples_per_period: usize) -> Self {
        Self::zeros(-(period_count as i64) / 2, period_count, samples_per_period)
    }

    pub fn from_fn(
        first_period: i64,
        period_count: usize,
        samples_per_period: usize,
        f: impl Fn(f64) -> C64,
    ) -> Self {
        let mut s = Self::zeros(first_period, period_count, samples_per_period);
        for i in 0..s.samples.len() {
            s.samples[i] = f(s.position(i));
        }
        s
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.samples_per_period as f64
    }

    /// x-coordinate of sample `i`.
    pub fn position(&self, i: usize) -> f64 {
        let p = self.samples_per_period;
        let m = self.first_period + (i / p) as i64;
        2.0 * PI * (m as f64 + (i % p) as f64 / p as f64)
    }

    /// Discrete ℓ² norm with quadrature weight `2π/P`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.spacing()
    }
}

/// Values `f̃_α(t)` on `P` cell points and `M` α-nodes, stored α-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochArray {
    pub values: Vec<C64>,
    pub alpha_count: usize,
    pub samples_per_period: usize,
}

impl BlochArray {
    pub fn zeros(alpha_count: usize, samples_per_period: usize) -> Self {
        Self {
            values: vec![C64::new(0.0, 0.0); alpha_count * samples_per_period],
            alpha_count,
            samples_per_period,
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        alpha_nodes(self.alpha_count)
    }

    pub fn row(&self, a: usize) -> &[C64] {
        let p = self.samples_per_period;
        &self.values[a * p..(a + 1) * p]
    }

    pub fn row_mut(&mut self, a: usize) -> &mut [C64] {
        let p = self.samples_per_period;
        &mut self.values[a * p..(a + 1) * p]
    }

    /// `(1/M) Σ_α ‖f̃_α‖²` with cell quadrature weight `2π/P`.
    pub fn energy(&self) -> f64 {
        let w = 2.0 * PI / self.samples_per_period as f64;
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * w / self.alpha_count as f64
    }
}

/// e^{iα x} with the phase reduced exactly when `α = j/M` and `x = 2π(m + p/P)`.
#[inline]
pub fn bloch_phase(numerator: i64, alpha_count: usize, period: i64, p: usize, samples_per_period: usize) -> C64 {
    // α x = 2π (j/M) (m + p/P); split the period part modulo M to keep the
    // argument small.
    let m = alpha_count as i64;
    let jm = (numerator * period).rem_euclid(m) as f64 / m as f64;
    let frac = numerator as f64 * p as f64 / (alpha_count as f64 * samples_per_period as f64);
    C64::from_polar(1.0, 2.0 * PI * (jm + frac))
}

/// Forward transform with one α-node per period of the window.
pub fn bloch_forward(f: &LineSignal) -> BlochArray {
    bloch_forward_nodes(f, f.period_count).expect("node count equals period count")
}

/// Forward transform on `alpha_count ≥ period_count` nodes.
pub fn bloch_forward_nodes(f: &LineSignal, alpha_count: usize) -> Result<BlochArray> {
    if alpha_count < f.period_count || alpha_count == 0 {
        return Err(Error::Precondition(format!(
            "{alpha_count} α-nodes cannot represent a {}-period window",
            f.period_count
        )));
    }
    let p = f.samples_per_period;
    let mut out = BlochArray::zeros(alpha_count, p);
    for a in 0..alpha_count {
        let j = alpha_numerator(alpha_count, a);
        let row = out.row_mut(a);
        for mi in 0..f.period_count {
            let m = f.first_period + mi as i64;
            for (t, slot) in row.iter_mut().enumerate() {
                let v = f.samples[mi * p + t];
                if v != C64::new(0.0, 0.0) {
                    *slot += v * bloch_phase(j, alpha_count, m, t, p).conj();
                }
            }
        }
    }
    Ok(out)
}

/// Inverse transform evaluated on periods `first_period .. first_period + period_count`.
pub fn bloch_inverse(g: &BlochArray, first_period: i64, period_count: usize) -> LineSignal {
    let p = g.samples_per_period;
    let mut out = LineSignal::zeros(first_period, period_count, p);
    let scale = 1.0 / g.alpha_count as f64;
    for a in 0..g.alpha_count {
        let j = alpha_numerator(g.alpha_count, a);
        let row = g.row(a);
        for mi in 0..period_count {
            let m = first_period + mi as i64;
            for t in 0..p {
                out.samples[mi * p + t] += row[t] * bloch_phase(j, g.alpha_count, m, t, p) * scale;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_cover_half_open_interval() {
        for m in 1..12 {
            let a = alpha_nodes(m);
            assert_eq!(a.len(), m);
            assert!(a.iter().all(|&x| x > -0.5 && x <= 0.5));
            for (i, x) in a.iter().enumerate() {
                assert!((x * m as f64 - alpha_numerator(m, i) as f64).abs() < 1e-12);
            }
        }
        assert_eq!(alpha_nodes(4), vec![-0.25, 0.0, 0.25, 0.5]);
    }

    #[test]
    fn single_period_support() {
        let mut f = LineSignal::zeros(0, 4, 8);
        for t in 0..8 {
            f.samples[t] = C64::new(1.0 + t as f64, -0.5);
        }
        let g = bloch_forward(&f);
        for (a, alpha) in g.alphas().iter().enumerate() {
            for t in 0..8 {
                let x = f.position(t);
                let expected = f.samples[t] * C64::from_polar(1.0, -alpha * x);
                assert!((g.row(a)[t] - expected).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn impulse_pair() {
        let mut f = LineSignal::zeros(0, 8, 4);
        f.samples[1] = C64::new(1.0, 0.0);
        f.samples[4 + 1] = C64::new(1.0, 0.0);
        let t0 = f.position(1);
        let g = bloch_forward(&f);
        for (a, alpha) in g.alphas().iter().enumerate() {
            let expected = C64::from_polar(1.0, -alpha * t0)
                * (C64::new(1.0, 0.0) + C64::from_polar(1.0, -2.0 * PI * alpha));
            assert!((g.row(a)[1] - expected).norm() < 1e-13);
        }
    }

    #[test]
    fn single_node_gives_quasiperiodic_exponential() {
        let m = 6;
        let p = 5;
        let mut g = BlochArray::zeros(m, p);
        let a = 4;
        for v in g.row_mut(a) {
            *v = C64::new(1.0, 0.0);
        }
        let alpha = g.alphas()[a];
        let f = bloch_inverse(&g, -3, m);
        for i in 0..f.samples.len() {
            let expected = C64::from_polar(1.0, alpha * f.position(i)) / m as f64;
            assert!((f.samples[i] - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_signal() {
        let f = LineSignal::centered(4, 4);
        assert!(bloch_forward(&f).values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn too_few_nodes_rejected() {
        let f = LineSignal::centered(4, 4);
        assert!(bloch_forward_nodes(&f, 3).is_err());
    }
}
