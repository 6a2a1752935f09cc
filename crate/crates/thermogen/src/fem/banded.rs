//! Symmetric positive-definite banded systems with in-place Cholesky.
//!
//! Lower-band storage, column-contiguous: entry `A[j+d, j]` (0 ≤ d ≤ bw) lives
//! at `data[j*(bw+1) + d]`. The FEM stiffness matrix on an `m × m` node grid
//! has half-bandwidth `m + 1`, so the factor stays dense only inside the band.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    /// Adds `v` to `A[i,j]` (and implicitly `A[j,i]`); `|i-j|` must fit the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        debug_assert!(d <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        self.data[lo * (self.bw + 1) + d] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bw {
            return 0.0;
        }
        self.data[lo * (self.bw + 1) + d]
    }

    /// Zeroes row and column `node` and sets its diagonal to 1, the symmetric
    /// elimination used for Dirichlet constraints.
    pub fn pin_unit(&mut self, node: usize) {
        let s = self.bw + 1;
        // Column `node`: entries (node+d, node).
        for d in 0..=self.bw.min(self.n - 1 - node) {
            self.data[node * s + d] = 0.0;
        }
        // Row `node`: entries (node, j) for j < node live in column j.
        let lo = node.saturating_sub(self.bw);
        for j in lo..node {
            self.data[j * s + (node - j)] = 0.0;
        }
        self.data[node * s] = 1.0;
    }

    /// In-place Cholesky `A = L Lᵀ`; consumes the matrix.
    pub fn factorize(mut self) -> Result<CholeskyBand> {
        let n = self.n;
        let bw = self.bw;
        let s = bw + 1;
        let a = &mut self.data;
        for j in 0..n {
            let diag = a[j * s];
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite (pivot {diag:e} at column {j})"
                )));
            }
            let d = diag.sqrt();
            a[j * s] = d;
            let inv = 1.0 / d;
            let m = bw.min(n - 1 - j);
            for r in 1..=m {
                a[j * s + r] *= inv;
            }
            for c in 1..=m {
                let ljc = a[j * s + c];
                if ljc == 0.0 {
                    continue;
                }
                let (head, tail) = a.split_at_mut((j + c) * s);
                let col_j = &head[j * s + c..j * s + m + 1];
                let col_c = &mut tail[..m + 1 - c];
                for (t, x) in col_c.iter_mut().enumerate() {
                    *x -= col_j[t] * ljc;
                }
            }
        }
        Ok(CholeskyBand { n, bw, data: self.data })
    }
}

#[derive(Debug, Clone)]
pub struct CholeskyBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl CholeskyBand {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let s = self.bw + 1;
        let a = &self.data;
        // L y = b
        for j in 0..self.n {
            let yj = b[j] / a[j * s];
            b[j] = yj;
            let m = self.bw.min(self.n - 1 - j);
            let col = &a[j * s + 1..j * s + m + 1];
            let out = &mut b[j + 1..j + m + 1];
            for (t, o) in out.iter_mut().enumerate() {
                *o -= col[t] * yj;
            }
        }
        // Lᵀ x = y
        for j in (0..self.n).rev() {
            let m = self.bw.min(self.n - 1 - j);
            let mut acc = b[j];
            let col = &a[j * s + 1..j * s + m + 1];
            for t in 0..m {
                acc -= col[t] * b[j + 1 + t];
            }
            b[j] = acc / a[j * s];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Dense Gaussian elimination with partial pivoting; oracle for the
    /// banded path.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, piv);
            x.swap(col, piv);
            let p = m[col][col];
            assert!(p.abs() > 1e-12);
            for row in col + 1..n {
                let f = m[row][col] / p;
                if f != 0.0 {
                    for k in col..n {
                        let v = m[col][k];
                        m[row][k] -= f * v;
                    }
                    x[row] -= f * x[col];
                }
            }
        }
        for col in (0..n).rev() {
            let mut acc = x[col];
            for k in col + 1..n {
                acc -= m[col][k] * x[k];
            }
            x[col] = acc / m[col][col];
        }
        x
    }

    fn random_banded_spd(n: usize, bw: usize, rng: &mut impl Rng) -> (BandedSpd, Vec<Vec<f64>>) {
        let mut band = BandedSpd::zeros(n, bw);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v = rng.random_range(-1.0..1.0);
                band.add(i, j, v);
                dense[i][j] = v;
                dense[j][i] = v;
            }
            // Diagonal dominance keeps it SPD.
            let v = 2.0 * bw as f64 + rng.random_range(1.0..2.0);
            band.add(i, i, v);
            dense[i][i] = v;
        }
        (band, dense)
    }

    #[test]
    fn banded_solve_matches_dense_oracle() {
        let mut rng = crate::rng::tagged(11, "banded-test");
        for &(n, bw) in &[(1usize, 0usize), (5, 1), (12, 3), (40, 7), (60, 12)] {
            let (band, dense) = random_banded_spd(n, bw, &mut rng);
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let expect = dense_solve(&dense, &rhs);
            let chol = band.factorize().unwrap();
            let mut got = rhs.clone();
            chol.solve_in_place(&mut got);
            for (g, e) in got.iter().zip(&expect) {
                assert!((g - e).abs() < 1e-8, "n={n} bw={bw}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn factorize_rejects_indefinite() {
        let mut band = BandedSpd::zeros(3, 1);
        band.add(0, 0, 1.0);
        band.add(1, 1, -2.0);
        band.add(2, 2, 1.0);
        assert!(band.factorize().is_err());
    }

    #[test]
    fn pin_unit_decouples_node() {
        let mut rng = crate::rng::tagged(12, "banded-test");
        let (mut band, _) = random_banded_spd(10, 3, &mut rng);
        band.pin_unit(4);
        assert_eq!(band.get(4, 4), 1.0);
        for j in 0..10 {
            if j != 4 {
                assert_eq!(band.get(4, j), 0.0);
                assert_eq!(band.get(j, 4), 0.0);
            }
        }
        let chol = band.factorize().unwrap();
        let mut rhs = vec![1.0; 10];
        rhs[4] = 7.5;
        chol.solve_in_place(&mut rhs);
        assert!((rhs[4] - 7.5).abs() < 1e-12, "pinned node must return its rhs value");
    }
}
