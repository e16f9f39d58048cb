use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

const TILE: usize = 4;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_shape(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(Error::shape(format!(
                "{what}: expected {rows}x{cols}, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add_scaled operands differ in shape"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data: out }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::shape("vstack column mismatch"));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// `self · otherᵀ` for `self: m×k`, `other: n×k`.
    pub fn matmul_nt(&self, other: &Matrix, exec: Execution) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_nt: inner dims {} vs {}",
                self.cols, other.cols
            )));
        }
        let (m, n) = (self.rows, other.rows);
        let mut out = Matrix::zeros(m, n);
        if n == 0 {
            return Ok(out);
        }
        par::for_each_row_mut(exec, &mut out.data, TILE * n, |blk, chunk| {
            let r0 = blk * TILE;
            let nr = chunk.len() / n;
            let a: Vec<&[f64]> = (r0..r0 + nr).map(|r| self.row(r)).collect();
            nt_block(&a, other, chunk);
        });
        Ok(out)
    }

    /// `self · other` for `self: m×n`, `other: n×k`.
    pub fn matmul_nn(&self, other: &Matrix, exec: Execution) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul_nn: inner dims {} vs {}",
                self.cols, other.rows
            )));
        }
        let (m, k) = (self.rows, other.cols);
        let mut out = Matrix::zeros(m, k);
        if k == 0 {
            return Ok(out);
        }
        par::for_each_row_mut(exec, &mut out.data, TILE * k, |blk, chunk| {
            let r0 = blk * TILE;
            let nr = chunk.len() / k;
            for j in 0..self.cols {
                let b = other.row(j);
                for r in 0..nr {
                    let s = self.get(r0 + r, j);
                    let dst = &mut chunk[r * k..(r + 1) * k];
                    for (d, &bv) in dst.iter_mut().zip(b) {
                        *d += s * bv;
                    }
                }
            }
        });
        Ok(out)
    }

    /// `selfᵀ · other` for `self: m×n`, `other: m×k`.
    pub fn matmul_tn(&self, other: &Matrix, exec: Execution) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "matmul_tn: inner dims {} vs {}",
                self.rows, other.rows
            )));
        }
        let (n, k) = (self.cols, other.cols);
        let mut out = Matrix::zeros(n, k);
        if k == 0 {
            return Ok(out);
        }
        par::for_each_row_mut(exec, &mut out.data, TILE * k, |blk, chunk| {
            let j0 = blk * TILE;
            let nj = chunk.len() / k;
            for i in 0..self.rows {
                let b = other.row(i);
                for jj in 0..nj {
                    let s = self.get(i, j0 + jj);
                    let dst = &mut chunk[jj * k..(jj + 1) * k];
                    for (d, &bv) in dst.iter_mut().zip(b) {
                        *d += s * bv;
                    }
                }
            }
        });
        Ok(out)
    }

    /// Column sums, accumulated top to bottom.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (a, b) in s.iter_mut().zip(row) {
                *a += b;
            }
        }
        s
    }
}

/// Sequential dot product; every output element of `matmul_nt` uses exactly
/// this accumulation order regardless of tiling.
#[inline]
fn dot_seq(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn nt_block(a: &[&[f64]], b: &Matrix, out: &mut [f64]) {
    let n = b.rows;
    let full = a.len() == TILE;
    let mut j = 0;
    if full {
        while j + TILE <= n {
            let bs = [b.row(j), b.row(j + 1), b.row(j + 2), b.row(j + 3)];
            let mut acc = [[0.0f64; TILE]; TILE];
            for kk in 0..b.cols {
                let av = [a[0][kk], a[1][kk], a[2][kk], a[3][kk]];
                let bv = [bs[0][kk], bs[1][kk], bs[2][kk], bs[3][kk]];
                for r in 0..TILE {
                    for c in 0..TILE {
                        acc[r][c] += av[r] * bv[c];
                    }
                }
            }
            for r in 0..TILE {
                out[r * n + j..r * n + j + TILE].copy_from_slice(&acc[r]);
            }
            j += TILE;
        }
    }
    for jj in j..n {
        let bj = b.row(jj);
        for (r, ar) in a.iter().enumerate() {
            out[r * n + jj] = dot_seq(ar, bj);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn transpose(m: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(m.cols(), m.rows());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                t.set(j, i, m.get(i, j));
            }
        }
        t
    }

    #[test]
    fn products_match_naive_reference() {
        for &(m, k, n) in &[(1, 1, 1), (5, 7, 3), (9, 13, 10), (4, 4, 4), (17, 3, 6)] {
            let a = random(m, k, 1);
            let b = random(k, n, 2);
            let want = naive(&a, &b);
            let bt = transpose(&b);
            let at = transpose(&a);
            for exec in [Execution::Sequential, Execution::Parallel] {
                let nt = a.matmul_nt(&bt, exec).unwrap();
                let nn = a.matmul_nn(&b, exec).unwrap();
                let tn = at.matmul_tn(&b, exec).unwrap();
                for got in [nt, nn, tn] {
                    for (x, y) in got.as_slice().iter().zip(want.as_slice()) {
                        assert!((x - y).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn parallel_and_sequential_are_bit_identical() {
        let a = random(37, 129, 3);
        let b = random(23, 129, 4);
        let s = a.matmul_nt(&b, Execution::Sequential).unwrap();
        let p = a.matmul_nt(&b, Execution::Parallel).unwrap();
        assert_eq!(s, p);
        let c = random(37, 11, 5);
        assert_eq!(
            a.matmul_tn(&c, Execution::Sequential).unwrap(),
            a.matmul_tn(&c, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        assert!(a.matmul_nt(&b, Execution::Sequential).is_err());
        assert!(a.matmul_nn(&b, Execution::Sequential).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
    }
}
