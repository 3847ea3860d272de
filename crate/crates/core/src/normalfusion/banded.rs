use crate::error::{Error, Result};

/// Symmetric positive definite matrix stored as its lower band.
///
/// Entry `(i, j)` with `i - bw <= j <= i` lives at `data[i * (bw + 1) + (bw - (i - j))]`.
#[derive(Clone, Debug)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let bw = bandwidth.min(n.saturating_sub(1));
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Adds `v` to entry `(i, j)`; entries above the diagonal are mirrored.
    /// Panics outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) lies outside the band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            let s = self.slot(i, i);
            self.data[s] += v;
        }
    }

    /// Solves `A x = b` by an in-place banded Cholesky factorisation.
    /// `damping` is only reported in the error.
    pub fn solve(mut self, b: &[f64], damping: f64) -> Result<Vec<f64>> {
        let (n, bw) = (self.n, self.bw);
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut sum = self.data[self.slot(i, j)];
                for k in k0..j {
                    sum -= self.data[self.slot(i, k)] * self.data[self.slot(j, k)];
                }
                let s = self.slot(i, j);
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::SingularSystem { damping });
                    }
                    self.data[s] = sum.sqrt();
                } else {
                    self.data[s] = sum / self.data[self.slot(j, j)];
                }
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let mut sum = y[i];
            for k in i.saturating_sub(bw)..i {
                sum -= self.data[self.slot(i, k)] * y[k];
            }
            y[i] = sum / self.data[self.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                sum -= self.data[self.slot(k, i)] * y[k];
            }
            y[i] = sum / self.data[self.slot(i, i)];
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, bw) = (40, 5);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let mut band = BandedSpd::zeros(n, bw);
        // Sum of rank-one updates inside the band plus a diagonal shift.
        for _ in 0..200 {
            let s = rng.random_range(0..n - bw);
            let v: Vec<f64> = (0..=bw).map(|_| rng.random_range(-1.0..1.0)).collect();
            for a in 0..=bw {
                for c in 0..=bw {
                    dense[(s + a, s + c)] += v[a] * v[c];
                    if a >= c {
                        band.add(s + a, s + c, v[a] * v[c]);
                    }
                }
            }
        }
        for i in 0..n {
            dense[(i, i)] += 0.1;
        }
        band.add_diagonal(0.1);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = dense.cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
        let got = band.solve(&b, 0.0).unwrap();
        for i in 0..n {
            assert!((got[i] - want[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_system_is_reported() {
        let mut a = BandedSpd::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 1.0);
        a.add(2, 2, 1.0);
        assert!(matches!(a.solve(&[1.0, 1.0, 1.0], 1e-6), Err(Error::SingularSystem { .. })));
    }
}
