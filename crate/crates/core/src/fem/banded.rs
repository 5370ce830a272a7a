//! Symmetric positive-definite banded storage with an in-place Cholesky
//! factorization.

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix: `data[i * (bw + 1) + k] = A[i][i - k]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Value of `A[i][j]` (zero outside the band).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Add `v` to `A[i][j]` (and implicitly `A[j][i]`). Panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Zero row and column `i` and put `diag` on the diagonal.
    pub fn set_identity_row(&mut self, i: usize, diag: f64) {
        let lo = i.saturating_sub(self.bw);
        for j in lo..i {
            let k = self.idx(i, j);
            self.data[k] = 0.0;
        }
        let hi = (i + self.bw).min(self.n - 1);
        for r in i + 1..=hi {
            let k = self.idx(r, i);
            self.data[k] = 0.0;
        }
        let k = self.idx(i, i);
        self.data[k] = diag;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            y[i] += self.data[self.idx(i, i)] * x[i];
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
        }
        y
    }

    /// Cholesky factor `L` stored in the same band layout.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let mut l = self.data.clone();
        let at = |i: usize, j: usize| i * (bw + 1) + (i - j);
        let max_diag = (0..n).map(|i| self.data[at(i, i)].abs()).fold(0.0, f64::max);
        let tiny = max_diag * 1e-14;
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = l[at(j, j)];
            for k in lo..j {
                d -= l[at(j, k)] * l[at(j, k)];
            }
            if !(d > tiny) || !d.is_finite() {
                return Err(Error::Solver(format!("non-positive pivot {d:e} at row {j}")));
            }
            let d = d.sqrt();
            l[at(j, j)] = d;
            let hi = (j + bw).min(n - 1);
            for i in j + 1..=hi {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut s = l[at(i, j)];
                for k in lo_i..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                l[at(i, j)] = s / d;
            }
        }
        Ok(BandCholesky { n, bw, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let at = |i: usize, j: usize| i * (bw + 1) + (i - j);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[at(i, k)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= self.l[at(k, i)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        y
    }
}
