//! Small dense linear algebra on row-major slices, plus compensated summation.
//!
//! The systems solved here are tiny (`1 + d_w` for the local fits, `d_x` or
//! `1 + 2 d_x + 1` for the slope estimators), so a hand-rolled Cholesky on a
//! stack-friendly buffer beats pulling a general matrix type into the hot loop.

/// Lower-triangular Cholesky factor of an SPD matrix, stored row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

/// Reason a factorization was rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

impl Cholesky {
    /// Factor `a` (row-major `n x n`, only the lower triangle is read).
    ///
    /// A pivot is rejected when it falls to `floor` or below; callers pass a
    /// floor relative to the matrix scale.
    pub fn factor(a: &[f64], n: usize, floor: f64) -> Result<Self, NotPositiveDefinite> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > floor) || !s.is_finite() {
                        return Err(NotPositiveDefinite { pivot: i });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let l = &self.l;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[k * n + i] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Dense inverse, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

/// Cholesky of a Gram matrix after Jacobi equilibration, so that the
/// singularity threshold does not depend on column scales.
///
/// Solves go through [`ScaledCholesky::solve`], which undoes the scaling.
#[derive(Debug, Clone)]
pub struct ScaledCholesky {
    scale: Vec<f64>,
    chol: Cholesky,
}

impl ScaledCholesky {
    /// `rel_floor` is the smallest admissible pivot of the unit-diagonal matrix.
    pub fn factor(a: &[f64], n: usize, rel_floor: f64) -> Result<Self, NotPositiveDefinite> {
        let mut scale = Vec::with_capacity(n);
        for i in 0..n {
            let d = a[i * n + i];
            if !(d > 0.0) || !d.is_finite() {
                return Err(NotPositiveDefinite { pivot: i });
            }
            scale.push(1.0 / d.sqrt());
        }
        let mut b = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                b[i * n + j] = a[i * n + j] * scale[i] * scale[j];
            }
        }
        let chol = Cholesky::factor(&b, n, rel_floor)?;
        Ok(Self { scale, chol })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = rhs.iter().zip(&self.scale).map(|(r, s)| r * s).collect();
        self.chol.solve_in_place(&mut x);
        x.iter_mut().zip(&self.scale).for_each(|(v, s)| *v *= s);
        x
    }

    pub fn inverse(&self) -> Vec<f64> {
        let n = self.scale.len();
        let mut inv = self.chol.inverse();
        for i in 0..n {
            for j in 0..n {
                inv[i * n + j] *= self.scale[i] * self.scale[j];
            }
        }
        inv
    }
}

/// `A B` for row-major `A (m x k)` and `B (k x n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            for j in 0..n {
                c[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    c
}

/// `Aᵀ A` for row-major `A (rows x cols)`.
pub fn gram(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        for i in 0..cols {
            for j in 0..=i {
                g[i * cols + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..cols {
        for j in 0..i {
            g[j * cols + i] = g[i * cols + j];
        }
    }
    g
}

/// `Aᵀ v` for row-major `A (rows x cols)`.
pub fn gram_rhs(a: &[f64], v: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        for (o, x) in out.iter_mut().zip(row) {
            *o += x * v[r];
        }
    }
    out
}

/// Sandwich `B M B` for symmetric `B`, `M` of size `n`.
pub fn sandwich(bread: &[f64], meat: &[f64], n: usize) -> Vec<f64> {
    let bm = matmul(bread, meat, n, n, n);
    let mut v = matmul(&bm, bread, n, n, n);
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (v[i * n + j] + v[j * n + i]);
            v[i * n + j] = s;
            v[j * n + i] = s;
        }
    }
    v
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().copied().collect::<NeumaierSum>().value() / v.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss = v.iter().map(|x| (x - m) * (x - m)).collect::<NeumaierSum>().value();
    (ss / (v.len() - 1) as f64).sqrt()
}

/// Quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// Upper-tail probability of the standard normal, `1 - Φ(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let chol = Cholesky::factor(&a, 3, 0.0).unwrap();
        let x = chol.solve(&[1.0, 2.0, 3.0]);
        let back = matmul(&a, &x, 3, 3, 1);
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-12);
        }
        let inv = chol.inverse();
        let id = matmul(&a, &inv, 3, 3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[i * 3 + j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert_eq!(
            Cholesky::factor(&a, 2, 1e-12).unwrap_err(),
            NotPositiveDefinite { pivot: 1 }
        );
    }

    #[test]
    fn scaled_cholesky_ignores_column_scale() {
        // Columns on wildly different scales, still well conditioned after scaling.
        let a = [1e12, 1e4, 1e4, 1e-2];
        let s = ScaledCholesky::factor(&a, 2, 1e-10).unwrap();
        let x = s.solve(&[1.0, 1.0]);
        let back = matmul(&a, &x, 2, 2, 1);
        assert!((back[0] - 1.0).abs() < 1e-9 && (back[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let s: NeumaierSum = [1.0, 1e100, 1.0, -1e100].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn normal_tail() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_sf(1.645) - 0.05).abs() < 1e-4);
        assert!((normal_quantile(0.975) - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
