//! Literal reference implementations used as oracles.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use panelfactor::kernels::epanechnikov;

/// Explicit `NT x NT` local-linear smoother matrix at the sample points.
pub fn dense_smoother(w: &[f64], d_w: usize, h: &[f64]) -> DMatrix<f64> {
    let n = w.len() / d_w;
    let h_prod: f64 = h.iter().product();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut z = DMatrix::zeros(n, d_w + 1);
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            z[(j, 0)] = 1.0;
            let mut kern = 1.0 / h_prod;
            for l in 0..d_w {
                let diff = w[j * d_w + l] - w[i * d_w + l];
                z[(j, l + 1)] = diff;
                kern *= epanechnikov(diff / h[l]);
            }
            k[(j, j)] = kern;
        }
        let ztk = z.transpose() * &k;
        let m = &ztk * &z;
        let inv = m.try_inverse().expect("local design invertible");
        let row = inv.row(0) * ztk;
        s.set_row(i, &row);
    }
    s
}

/// `β̂ = [X'(I-S)'(I-S)X]⁻¹ X'(I-S)'(I-S)Y` through the dense smoother.
pub fn dense_beta(y: &[f64], x: &[f64], d_x: usize, w: &[f64], d_w: usize, h: &[f64]) -> Vec<f64> {
    let n = y.len();
    let s = dense_smoother(w, d_w, h);
    let resid = DMatrix::identity(n, n) - s;
    let xm = DMatrix::from_row_slice(n, d_x, x);
    let ym = DVector::from_column_slice(y);
    let xt = &resid * xm;
    let yt = &resid * ym;
    let lhs = xt.transpose() * &xt;
    let rhs = xt.transpose() * yt;
    lhs.lu().solve(&rhs).expect("X̃'X̃ invertible").iter().copied().collect()
}

/// `(V_NT, υ̂₀²)` from four nested loops over `(i, j, t, s)`.
pub fn quadruple_loop(e: &[f64], chi: &[f64], h: &[f64], n: usize, t: usize) -> (f64, f64) {
    let d = h.len();
    let hd: f64 = h.iter().product();
    let (mut v, mut u) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for a in 0..t {
                for b in 0..t {
                    let (ra, rb) = (i * t + a, j * t + b);
                    let mut k = 1.0;
                    for l in 0..d {
                        k *= epanechnikov((chi[ra * d + l] - chi[rb * d + l]) / h[l]);
                    }
                    v += k * e[ra] * e[rb];
                    u += k * k * e[ra] * e[ra] * e[rb] * e[rb];
                }
            }
        }
    }
    let norm = (n * n * t * t) as f64 * hd;
    (v / norm, 2.0 * u / norm)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
