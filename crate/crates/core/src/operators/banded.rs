// Banded LU with partial pivoting, laid out like LAPACK's gbtrf: row i keeps
// columns i−kl ..= i+ku+kl so pivoting fill-in has room.

use alloc::{vec, vec::Vec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("zero pivot at row {row}")]
pub struct SingularPivot {
    pub row: usize,
}

#[derive(Debug, Clone)]
pub struct BandMatrix {
    size: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(size: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix { size, kl, ku, width, data: vec![0.0; size * width] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl >= i && j <= i + self.ku + self.kl {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside the band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside the band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.size) {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku + 1).min(self.size);
            let mut s = 0.0;
            for (j, xj) in x.iter().enumerate().take(hi).skip(lo) {
                s += self.data[self.idx(i, j)] * xj;
            }
            *yi = s;
        }
    }

    pub fn factor(mut self) -> Result<BandLu, SingularPivot> {
        let n = self.size;
        let (kl, ku) = (self.kl, self.ku);
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tiny = scale * 1e-300_f64.max(f64::EPSILON * 1e-3);
        let mut ipiv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(SingularPivot { row: k });
            }
            ipiv[k] = p;
            let jmax = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = self.data[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(BandLu { a: self, ipiv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn size(&self) -> usize {
        self.a.size
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.a;
        let n = a.size;
        for k in 0..n {
            let p = self.ipiv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + a.kl).min(n - 1) {
                    b[i] -= a.data[a.idx(i, k)] * bk;
                }
            }
        }
        self.upper_solve(b);
    }

    /// Solves Aᵀx = b.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let a = &self.a;
        let n = a.size;
        let w = a.ku + a.kl;
        // Uᵀ y = b
        for j in 0..n {
            let mut s = b[j];
            for i in j.saturating_sub(w)..j {
                s -= a.data[a.idx(i, j)] * b[i];
            }
            b[j] = s / a.data[a.idx(j, j)];
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + a.kl).min(n - 1) {
                s -= a.data[a.idx(i, k)] * b[i];
            }
            b[k] = s;
            let p = self.ipiv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }

    fn upper_solve(&self, b: &mut [f64]) {
        let a = &self.a;
        let n = a.size;
        let w = a.ku + a.kl;
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + w).min(n - 1) {
                s -= a.data[a.idx(i, j)] * b[j];
            }
            b[i] = s / a.data[a.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = BandMatrix::zeros(n, kl, ku);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                // small diagonal forces pivoting
                let v = if i == j { 0.01 * rng.random::<f64>() } else { rng.random::<f64>() - 0.5 };
                b.set(i, j, v);
                d[(i, j)] = v;
            }
        }
        (b, d)
    }

    #[test]
    fn solves_match_dense() {
        for (n, kl, ku, seed) in [(30, 3, 3, 1), (25, 1, 4, 2), (40, 5, 2, 3)] {
            let (b, d) = random_band(n, kl, ku, seed);
            let rhs = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
            let mut y = vec![0.0; n];
            b.matvec(rhs.as_slice(), &mut y);
            let dy = &d * &rhs;
            assert!((DVector::from_vec(y) - dy).amax() < 1e-13);
            let lu = b.factor().unwrap();
            let mut x = rhs.as_slice().to_vec();
            lu.solve_in_place(&mut x);
            let expect = d.clone().lu().solve(&rhs).unwrap();
            assert!((DVector::from_vec(x) - &expect).amax() < 1e-9 * expect.amax().max(1.0));
            let mut xt = rhs.as_slice().to_vec();
            lu.solve_transpose_in_place(&mut xt);
            let expect_t = d.transpose().lu().solve(&rhs).unwrap();
            assert!((DVector::from_vec(xt) - &expect_t).amax() < 1e-9 * expect_t.amax().max(1.0));
        }
    }

    #[test]
    fn singular_is_reported() {
        let b = BandMatrix::zeros(4, 1, 1);
        assert!(b.factor().is_err());
    }
}
