//! Banded LU with partial pivoting, smallest singular values by inverse
//! subspace iteration, and restarted GMRES.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Something that can solve `A x = b` and `Aᴴ x = b` in place.
pub trait LinearSolve {
    fn dim(&self) -> usize;
    fn solve_in_place(&self, b: &mut [C64]);
    fn solve_adjoint_in_place(&self, b: &mut [C64]);
}

/// Square band matrix in column-major band storage (LAPACK layout with
/// `kl` extra rows reserved for pivoting fill-in).
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            data: vec![ZERO; ldab * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `(kl, ku)`.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) + j * self.ldab
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            ZERO
        }
    }

    /// Adds `v` to entry `(i, j)`, which must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.data[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Frobenius norm of the stored entries.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = j;
            let mut best = self.data[self.idx(j, j)].norm_sqr();
            for i in j + 1..=j + km {
                let v = self.data[self.idx(i, j)].norm_sqr();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            ipiv[j] = p;
            min_pivot = min_pivot.min(best.sqrt());
            if best == 0.0 {
                return Err(Error::ExceptionalValue {
                    alpha: f64::NAN,
                    sigma_min: 0.0,
                });
            }
            ju = ju.max((p + ku).min(n - 1));
            if p != j {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(j, j)];
            let inv = 1.0 / pivot;
            for i in j + 1..=j + km {
                let k = self.idx(i, j);
                self.data[k] *= inv;
            }
            for c in j + 1..=ju {
                let ujc = self.data[self.idx(j, c)];
                if ujc == ZERO {
                    continue;
                }
                for i in j + 1..=j + km {
                    let lij = self.data[self.idx(i, j)];
                    let k = self.idx(i, c);
                    self.data[k] -= lij * ujc;
                }
            }
        }
        Ok(BandLu {
            band: self,
            ipiv,
            min_pivot,
        })
    }
}

/// Factored band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    band: BandMatrix,
    ipiv: Vec<usize>,
    min_pivot: f64,
}

impl BandLu {
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }
}

impl LinearSolve for BandLu {
    fn dim(&self) -> usize {
        self.band.n
    }

    fn solve_in_place(&self, b: &mut [C64]) {
        let a = &self.band;
        let n = a.n;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj == ZERO {
                continue;
            }
            let km = a.kl.min(n - 1 - j);
            for i in j + 1..=j + km {
                b[i] -= a.data[a.idx(i, j)] * bj;
            }
        }
        let kuu = a.kl + a.ku;
        for j in (0..n).rev() {
            b[j] /= a.data[a.idx(j, j)];
            let bj = b[j];
            for i in j.saturating_sub(kuu)..j {
                b[i] -= a.data[a.idx(i, j)] * bj;
            }
        }
    }

    fn solve_adjoint_in_place(&self, b: &mut [C64]) {
        let a = &self.band;
        let n = a.n;
        let kuu = a.kl + a.ku;
        for j in 0..n {
            let mut s = b[j];
            for i in j.saturating_sub(kuu)..j {
                s -= a.data[a.idx(i, j)].conj() * b[i];
            }
            b[j] = s / a.data[a.idx(j, j)].conj();
        }
        for j in (0..n).rev() {
            let km = a.kl.min(n - 1 - j);
            let mut s = b[j];
            for i in j + 1..=j + km {
                s -= a.data[a.idx(i, j)].conj() * b[i];
            }
            b[j] = s;
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }
}

/// Result of the inverse subspace iteration.
#[derive(Debug, Clone)]
pub struct SmallSingular {
    /// Ascending singular value estimates.
    pub values: Vec<f64>,
    /// Matching right singular vectors (unit ℓ² norm).
    pub vectors: Vec<Vec<C64>>,
    pub iterations: usize,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn orthonormalize(vs: &mut [Vec<C64>]) {
    for i in 0..vs.len() {
        for _ in 0..2 {
            for j in 0..i {
                let (head, tail) = vs.split_at_mut(i);
                let c = dot(&head[j], &tail[0]);
                for (t, h) in tail[0].iter_mut().zip(&head[j]) {
                    *t -= c * h;
                }
            }
        }
        let nv = norm(&vs[i]);
        if nv > 0.0 {
            for t in vs[i].iter_mut() {
                *t /= nv;
            }
        }
    }
}

/// Deterministic start vector with no special structure.
fn start_vector(n: usize, col: usize) -> Vec<C64> {
    (0..n)
        .map(|i| {
            let a = ((i as f64 + 1.0) * 12.9898 + (col as f64 + 1.0) * 78.233).sin() * 43_758.545;
            let b = ((i as f64 + 1.0) * 39.346 + (col as f64 + 1.0) * 11.135).sin() * 24_634.634;
            C64::new(a - a.floor() - 0.5, b - b.floor() - 0.5)
        })
        .collect()
}

/// The `count` smallest singular values of `A` (given through its
/// factorization), by inverse subspace iteration on `AᴴA`.
pub fn smallest_singular<S: LinearSolve + ?Sized>(
    op: &S,
    count: usize,
    rel_tol: f64,
    max_iter: usize,
) -> SmallSingular {
    let n = op.dim();
    let p = (count + 1).min(n).max(1);
    let want = count.min(p);
    let mut x: Vec<Vec<C64>> = (0..p).map(|c| start_vector(n, c)).collect();
    orthonormalize(&mut x);
    let mut prev = vec![f64::INFINITY; p];
    let mut values = vec![0.0; p];
    for it in 0..max_iter {
        let iterations = it + 1;
        let w: Vec<Vec<C64>> = x
            .iter()
            .map(|v| {
                let mut t = v.clone();
                op.solve_adjoint_in_place(&mut t);
                t
            })
            .collect();
        let h = DMatrix::from_fn(p, p, |i, j| dot(&w[i], &w[j]));
        let eig = nalgebra::SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let rotate = |vs: &[Vec<C64>]| -> Vec<Vec<C64>> {
            order
                .iter()
                .map(|&c| {
                    let mut out = vec![ZERO; n];
                    for (r, v) in vs.iter().enumerate() {
                        let q = eig.eigenvectors[(r, c)];
                        for (o, vi) in out.iter_mut().zip(v) {
                            *o += q * vi;
                        }
                    }
                    out
                })
                .collect()
        };
        let x_rot = rotate(&x);
        let w_rot = rotate(&w);
        for (slot, &c) in values.iter_mut().zip(&order) {
            let mu = eig.eigenvalues[c].max(1e-300);
            *slot = 1.0 / mu.sqrt();
        }
        let converged = (0..want).all(|i| (values[i] - prev[i]).abs() <= rel_tol * values[i]);
        prev.copy_from_slice(&values);
        if converged || it + 1 == max_iter {
            let mut vectors = x_rot;
            vectors.truncate(want);
            values.truncate(want);
            return SmallSingular {
                values,
                vectors,
                iterations,
            };
        }
        x = w_rot
            .into_iter()
            .map(|mut t| {
                op.solve_in_place(&mut t);
                t
            })
            .collect();
        orthonormalize(&mut x);
    }
    unreachable!("loop returns on the final iteration")
}

/// Outcome of a GMRES run.
#[derive(Debug, Clone)]
pub struct GmresReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Ratio of extreme singular values of the last Hessenberg matrix.
    pub condition_estimate: f64,
}

/// Restarted GMRES for `A x = b`, starting from zero.
pub fn gmres<F>(
    mut apply: F,
    b: &[C64],
    restart: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, GmresReport)>
where
    F: FnMut(&[C64]) -> Result<Vec<C64>>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![ZERO; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            GmresReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
                condition_estimate: 1.0,
            },
        ));
    }
    let mut total = 0;
    let mut rel = 1.0;
    let mut cond = 1.0;
    while total < max_iter {
        let ax = if total == 0 { vec![ZERO; n] } else { apply(&x)? };
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol {
            break;
        }
        let m = restart.min(max_iter - total);
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|t| t / beta).collect()];
        let mut hess = DMatrix::<C64>::zeros(m + 1, m);
        let mut cs = vec![ZERO; m];
        let mut sn = vec![ZERO; m];
        let mut g = vec![ZERO; m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut used = 0;
        for j in 0..m {
            let mut w = apply(&v[j])?;
            total += 1;
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(vi, &w);
                hess[(i, j)] = hij;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
            // one reorthogonalization pass
            for (i, vi) in v.iter().enumerate() {
                let c = dot(vi, &w);
                hess[(i, j)] += c;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= c * vk;
                }
            }
            let hn = norm(&w);
            hess[(j + 1, j)] = C64::new(hn, 0.0);
            let mut col: Vec<C64> = (0..=j + 1).map(|i| hess[(i, j)]).collect();
            for i in 0..j {
                let t = cs[i].conj() * col[i] + sn[i].conj() * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let (a, bb) = (col[j], col[j + 1]);
            let d = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if d == 0.0 {
                cs[j] = C64::new(1.0, 0.0);
                sn[j] = ZERO;
            } else {
                cs[j] = a / d;
                sn[j] = bb / d;
            }
            col[j] = C64::new(d, 0.0);
            col[j + 1] = ZERO;
            for (i, c) in col.iter().enumerate().take(j + 1) {
                hess[(i, j)] = *c;
            }
            hess[(j + 1, j)] = ZERO;
            let gj = g[j];
            g[j] = cs[j].conj() * gj;
            g[j + 1] = -sn[j] * gj;
            used = j + 1;
            rel = g[j + 1].norm() / bnorm;
            if rel <= tol || hn == 0.0 || total >= max_iter {
                break;
            }
            v.push(w.iter().map(|t| t / hn).collect());
        }
        // back substitution on the triangularized Hessenberg block
        let mut y = vec![ZERO; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= hess[(i, k)] * y[k];
            }
            y[i] = s / hess[(i, i)];
        }
        for (k, yk) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&v[k]) {
                *xi += yk * vi;
            }
        }
        let diag: Vec<f64> = (0..used).map(|i| hess[(i, i)].norm()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if dmin > 0.0 {
            cond = dmax / dmin;
        }
        if rel <= tol {
            // confirm with the true residual
            let ax = apply(&x)?;
            let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            rel = norm(&r) / bnorm;
            if rel <= tol * 10.0 {
                return Ok((
                    x,
                    GmresReport {
                        iterations: total,
                        relative_residual: rel,
                        converged: true,
                        condition_estimate: cond,
                    },
                ));
            }
        }
    }
    Ok((
        x,
        GmresReport {
            iterations: total,
            relative_residual: rel,
            converged: rel <= tol,
            condition_estimate: cond,
        },
    ))
}

/// Dense LU solve, used as a fallback on small systems.
pub fn dense_solve(a: DMatrix<C64>, b: &[C64]) -> Result<Vec<C64>> {
    let lu = a.lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| Error::Domain("dense system is singular".into()))
}
