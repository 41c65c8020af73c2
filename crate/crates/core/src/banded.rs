//! Complex banded LU with partial pivoting and a bordered solver.
//!
//! Storage follows the LAPACK band layout: entry `A(i, j)` lives at row
//! `kl + ku + i - j` of column `j`, leaving `kl` extra rows for the fill
//! produced by row interchanges.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandError {
    #[error("zero pivot in column {0}")]
    ZeroPivot(usize),
    #[error("bordered system is singular (Schur complement {0:e})")]
    SingularBorder(f64),
}

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, ldab, ab: vec![Complex64::new(0.0, 0.0); ldab * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

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

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// Adds `z` to entry `(i, j)`, which must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, z: Complex64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] += z;
    }

    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] = z;
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.ab[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    /// LU factorization with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu, BandError> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = -1.0;
            for r in 0..=km {
                let a = self.ab[kv + r + j * self.ldab].norm();
                if a > best {
                    best = a;
                    jp = r;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(BandError::ZeroPivot(j));
            }
            ju = ju.max((j + self.ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + jp, c);
                    self.ab.swap(a, b);
                }
            }
            if km > 0 {
                let piv = self.ab[kv + j * self.ldab];
                let inv = Complex64::new(1.0, 0.0) / piv;
                for r in 1..=km {
                    self.ab[kv + r + j * self.ldab] *= inv;
                }
                for c in (j + 1)..=ju {
                    let ujc = self.ab[self.idx(j, c)];
                    if ujc == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for r in 1..=km {
                        let l = self.ab[kv + r + j * self.ldab];
                        let k = self.idx(j + r, c);
                        self.ab[k] -= l * ujc;
                    }
                }
            }
        }
        Ok(BandLu { m: self, ipiv })
    }
}

/// Factored banded matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn n(&self) -> usize {
        self.m.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.m.n;
        let kl = self.m.kl;
        let kv = self.m.kl + self.m.ku;
        let ld = self.m.ldab;
        let ab = &self.m.ab;
        if kl > 0 {
            for j in 0..n.saturating_sub(1) {
                let lm = kl.min(n - 1 - j);
                let l = self.ipiv[j];
                if l != j {
                    b.swap(l, j);
                }
                let bj = b[j];
                for r in 1..=lm {
                    b[j + r] -= ab[kv + r + j * ld] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= ab[kv + j * ld];
            let bj = b[j];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= ab[kv + i - j + j * ld] * bj;
            }
        }
    }

    /// Solves `Aᵀ x = b` in place (plain transpose, no conjugation).
    pub fn solve_transpose_in_place(&self, b: &mut [Complex64]) {
        let n = self.m.n;
        let kl = self.m.kl;
        let kv = self.m.kl + self.m.ku;
        let ld = self.m.ldab;
        let ab = &self.m.ab;
        for j in 0..n {
            let lo = j.saturating_sub(kv);
            let mut s = b[j];
            for i in lo..j {
                s -= ab[kv + i - j + j * ld] * b[i];
            }
            b[j] = s / ab[kv + j * ld];
        }
        if kl > 0 {
            for j in (0..n.saturating_sub(1)).rev() {
                let lm = kl.min(n - 1 - j);
                let mut s = b[j];
                for r in 1..=lm {
                    s -= ab[kv + r + j * ld] * b[j + r];
                }
                b[j] = s;
                let l = self.ipiv[j];
                if l != j {
                    b.swap(l, j);
                }
            }
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_transpose(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the bordered system
///
/// ```text
/// [ A   col ] [x]   [f]
/// [ rowᵀ  d ] [y] = [g]
/// ```
///
/// by mixed block elimination, which stays stable when `A` itself is
/// close to singular as long as the bordered matrix is not.
pub fn solve_bordered(
    lu: &BandLu,
    col: &[Complex64],
    row: &[Complex64],
    d: Complex64,
    f: &[Complex64],
    g: Complex64,
) -> Result<(Vec<Complex64>, Complex64), BandError> {
    // Aᵀ v = row, δ* = d - colᵀ v
    let v = lu.solve_transpose(row);
    let delta_star = d - dot(col, &v);
    if delta_star.norm() == 0.0 || !delta_star.is_finite() {
        return Err(BandError::SingularBorder(delta_star.norm()));
    }
    let y1 = (g - dot(&v, f)) / delta_star;
    let f1: Vec<Complex64> = f.iter().zip(col).map(|(fi, ci)| fi - ci * y1).collect();
    let x1 = lu.solve(&f1);
    // A w = col, δ = d - rowᵀ w
    let w = lu.solve(col);
    let delta = d - dot(row, &w);
    if delta.norm() == 0.0 || !delta.is_finite() {
        return Err(BandError::SingularBorder(delta.norm()));
    }
    let g1 = g - dot(row, &x1) - d * y1;
    let y2 = g1 / delta;
    let x: Vec<Complex64> = x1.iter().zip(&w).map(|(a, b)| a - b * y2).collect();
    Ok((x, y1 + y2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix, DMatrix<Complex64>) {
        let mut rng = rand::rngs::SmallRng::seed_from_u64(seed);
        let mut b = BandMatrix::zeros(n, kl, ku);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                b.set(i, j, z);
                d[(i, j)] = z;
            }
        }
        (b, d)
    }

    #[test]
    fn lu_matches_dense_solve() {
        for (kl, ku) in [(1, 1), (2, 3), (5, 5), (0, 2)] {
            let n = 40;
            let (b, d) = random_band(n, kl, ku, 11 + kl as u64);
            let rhs: Vec<Complex64> = (0..n).map(|k| c(k as f64, 1.0 - k as f64 * 0.3)).collect();
            let lu = b.clone().factor().unwrap();
            let x = lu.solve(&rhs);
            let ax = b.matvec(&x);
            let scale = 1.0 + x.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for k in 0..n {
                assert!((ax[k] - rhs[k]).norm() < 1e-12 * scale, "kl={kl} ku={ku}");
            }
            let xt = lu.solve_transpose(&rhs);
            let dt = d.transpose();
            let r = &dt * nalgebra::DVector::from_vec(xt.clone());
            let scale = 1.0 + xt.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for k in 0..n {
                assert!((r[k] - rhs[k]).norm() < 1e-12 * scale, "transpose kl={kl} ku={ku}");
            }
        }
    }

    #[test]
    fn bordered_matches_dense() {
        let n = 30;
        let (b, d) = random_band(n, 1, 1, 3);
        let col: Vec<Complex64> = (0..n).map(|k| c(0.1 * k as f64, 0.2)).collect();
        let row: Vec<Complex64> = (0..n).map(|k| c(1.0, -0.05 * k as f64)).collect();
        let dd = c(-1.0, 0.0);
        let f: Vec<Complex64> = (0..n).map(|k| c((k as f64).sin(), 0.0)).collect();
        let g = c(0.5, 0.5);
        let (x, y) = solve_bordered(&b.clone().factor().unwrap(), &col, &row, dd, &f, g).unwrap();
        let mut big = DMatrix::zeros(n + 1, n + 1);
        big.view_mut((0, 0), (n, n)).copy_from(&d);
        for k in 0..n {
            big[(k, n)] = col[k];
            big[(n, k)] = row[k];
        }
        big[(n, n)] = dd;
        let mut rhs = nalgebra::DVector::from_vec(f.clone());
        rhs = rhs.push(g);
        let sol = big.lu().solve(&rhs).unwrap();
        for k in 0..n {
            assert!((sol[k] - x[k]).norm() < 1e-10);
        }
        assert!((sol[n] - y).norm() < 1e-10);
    }

    #[test]
    fn bordered_handles_singular_block() {
        // A = tridiag(-1, 2, -1) with zero row sums at the ends has kernel (1,…,1).
        let n = 20;
        let mut b = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            let mut diag = 0.0;
            if i > 0 {
                b.set(i, i - 1, c(-1.0, 0.0));
                diag += 1.0;
            }
            if i + 1 < n {
                b.set(i, i + 1, c(-1.0, 0.0));
                diag += 1.0;
            }
            b.set(i, i, c(diag, 0.0));
        }
        // perturb so the LU does not hit an exact zero pivot
        b.add(0, 0, c(1e-15, 0.0));
        let ones = vec![c(1.0, 0.0); n];
        let f: Vec<Complex64> = (0..n).map(|k| c(k as f64 - 9.5, 0.0)).collect();
        let lu = b.clone().factor().unwrap();
        let (x, y) = solve_bordered(&lu, &ones, &ones, c(0.0, 0.0), &f, c(0.0, 0.0)).unwrap();
        let ax = b.matvec(&x);
        for k in 0..n {
            assert!((ax[k] + y - f[k]).norm() < 1e-8, "row {k}");
        }
        let s: Complex64 = x.iter().sum();
        assert!(s.norm() < 1e-8);
    }
}
