//! Kernel U-statistic test of conditional mean independence.
//!
//! With `χ_it = (x_it, w_it)` and residuals `ε̂` from the profile fit,
//!
//! ```text
//! V_NT  = (N²T² ∏h)⁻¹ Σ_{i≠j} Σ_{t,s} K((χ_it - χ_js)/h) ε̂_it ε̂_js
//! υ̂₀²  = 2 (N²T² ∏h)⁻¹ Σ_{i≠j} Σ_{t,s} K²((χ_it - χ_js)/h) ε̂²_it ε̂²_js
//! ```
//!
//! and `N T √∏h · V_NT / υ̂₀` is asymptotically standard normal under the
//! null. Pairs within the same unit never enter either sum.
//!
//! The sums run over unit pairs `i < j` (doubling at the end). Each `T x T`
//! block is summed in plain floating point, blocks are folded per unit with
//! compensated summation, and the per-unit partials are combined in unit
//! order, so the result does not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::kernels::{validate_positive, BandwidthSpec, SUPPORT_RADIUS};
use crate::linalg::{normal_sf, NeumaierSum};
use crate::panel::PanelDataset;

/// Upper bound on `N(N-1)T²/2` for which the nonzero kernel pairs are
/// cached for repeated evaluation (bootstrap); beyond it every evaluation
/// recomputes the kernel.
pub const MAX_CACHED_PAIRS: usize = 8 << 20;

/// Residuals no larger than this times `max |y|` are treated as exact zeros,
/// making the statistic degenerate.
pub const RESIDUAL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecTestResult {
    pub v_nt: f64,
    /// `√υ̂₀²`.
    pub upsilon0_hat: f64,
    /// `N T √∏h V_NT / υ̂₀`.
    pub standardized: f64,
    /// One-sided upper-tail normal p-value.
    pub p_asymptotic: f64,
    pub p_bootstrap: Option<f64>,
    pub bootstrap_replications: usize,
    pub bootstrap_failures: usize,
    pub h_test: Vec<f64>,
    /// `N(N-1)T²`, the number of kernel terms in each double sum.
    pub n_pairs: u64,
}

impl SpecTestResult {
    /// One-line summary, e.g. `Test statistic for our model is -0.484 with p-value 0.740`.
    pub fn summary_line(&self) -> String {
        format!(
            "Test statistic for our model is {:.3} with p-value {:.3}",
            self.standardized,
            self.p_bootstrap.unwrap_or(self.p_asymptotic)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VntParts {
    pub v_nt: f64,
    pub upsilon0_sq: f64,
}

/// `χ` as row-major `N·T x (d_x + d_w)`: the x columns, then the w columns.
pub fn assemble_chi(ds: &PanelDataset) -> Vec<f64> {
    let d = ds.d_x() + ds.d_w();
    let mut chi = Vec::with_capacity(ds.n_obs() * d);
    for r in 0..ds.n_obs() {
        chi.extend_from_slice(ds.x_row(r));
        chi.extend_from_slice(ds.w_row(r));
    }
    chi
}

/// Precomputed geometry of the double sum for a fixed `(χ, h)`.
#[derive(Debug, Clone)]
pub struct PairwiseKernel {
    n_units: usize,
    n_periods: usize,
    h_prod: f64,
    inner: PairStore,
}

#[derive(Debug, Clone)]
enum PairStore {
    /// `χ / h`, row-major; kernels recomputed per evaluation.
    Direct { scaled: Vec<f64>, d: usize },
    /// Nonzero pairs `(a, b)` with `a` in unit `i < j ∋ b`, grouped by `i`.
    Cached {
        unit_offsets: Vec<usize>,
        a: Vec<u32>,
        b: Vec<u32>,
        k: Vec<f64>,
    },
}

impl PairwiseKernel {
    pub fn new(chi: &[f64], h: &[f64], n_units: usize, n_periods: usize) -> Result<Self> {
        let cache = n_units * n_units.saturating_sub(1) / 2 * n_periods * n_periods <= MAX_CACHED_PAIRS;
        Self::build(chi, h, n_units, n_periods, cache)
    }

    /// Never cache; every evaluation recomputes the kernel.
    pub fn direct(chi: &[f64], h: &[f64], n_units: usize, n_periods: usize) -> Result<Self> {
        Self::build(chi, h, n_units, n_periods, false)
    }

    fn build(chi: &[f64], h: &[f64], n_units: usize, n_periods: usize, cache: bool) -> Result<Self> {
        let d = h.len();
        validate_positive(h)?;
        if d == 0 || chi.len() != n_units * n_periods * d {
            return Err(Error::DimensionMismatch {
                what: "chi",
                expected: n_units * n_periods * d,
                got: chi.len(),
            });
        }
        let scaled: Vec<f64> = chi
            .chunks(d)
            .flat_map(|row| row.iter().zip(h).map(|(v, b)| v / b))
            .collect();
        let h_prod = h.iter().product();
        let inner = if cache {
            let per_unit: Vec<(Vec<u32>, Vec<u32>, Vec<f64>)> = (0..n_units)
                .into_par_iter()
                .map(|i| {
                    let (mut a, mut b, mut k) = (Vec::new(), Vec::new(), Vec::new());
                    for j in i + 1..n_units {
                        for t in 0..n_periods {
                            let ra = i * n_periods + t;
                            let pa = &scaled[ra * d..(ra + 1) * d];
                            for s in 0..n_periods {
                                let rb = j * n_periods + s;
                                let kv = kernel_scaled(pa, &scaled[rb * d..(rb + 1) * d]);
                                if kv != 0.0 {
                                    a.push(ra as u32);
                                    b.push(rb as u32);
                                    k.push(kv);
                                }
                            }
                        }
                    }
                    (a, b, k)
                })
                .collect();
            let mut unit_offsets = vec![0];
            let (mut a, mut b, mut k) = (Vec::new(), Vec::new(), Vec::new());
            for (pa, pb, pk) in per_unit {
                a.extend(pa);
                b.extend(pb);
                k.extend(pk);
                unit_offsets.push(a.len());
            }
            PairStore::Cached { unit_offsets, a, b, k }
        } else {
            PairStore::Direct { scaled, d }
        };
        Ok(Self {
            n_units,
            n_periods,
            h_prod,
            inner,
        })
    }

    pub fn is_cached(&self) -> bool {
        matches!(self.inner, PairStore::Cached { .. })
    }

    pub fn n_obs(&self) -> usize {
        self.n_units * self.n_periods
    }

    pub fn h_prod(&self) -> f64 {
        self.h_prod
    }

    /// `(V_NT, υ̂₀²)` for the given residuals. Does not check for zero variance.
    pub fn evaluate_raw(&self, residuals: &[f64]) -> Result<VntParts> {
        if residuals.len() != self.n_obs() {
            return Err(Error::DimensionMismatch {
                what: "residuals",
                expected: self.n_obs(),
                got: residuals.len(),
            });
        }
        let (n, t_len) = (self.n_units, self.n_periods);
        let partials: Vec<(NeumaierSum, NeumaierSum)> = match &self.inner {
            PairStore::Direct { scaled, d } => (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut s1 = NeumaierSum::new();
                    let mut s2 = NeumaierSum::new();
                    for j in i + 1..n {
                        let (mut b1, mut b2) = (0.0, 0.0);
                        for t in 0..t_len {
                            let ra = i * t_len + t;
                            let ea = residuals[ra];
                            let pa = &scaled[ra * d..(ra + 1) * d];
                            for s in 0..t_len {
                                let rb = j * t_len + s;
                                let k = kernel_scaled(pa, &scaled[rb * d..(rb + 1) * d]);
                                if k != 0.0 {
                                    let p = ea * residuals[rb];
                                    b1 += k * p;
                                    b2 += k * k * p * p;
                                }
                            }
                        }
                        s1.add(b1);
                        s2.add(b2);
                    }
                    (s1, s2)
                })
                .collect(),
            PairStore::Cached { unit_offsets, a, b, k } => (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut s1 = NeumaierSum::new();
                    let mut s2 = NeumaierSum::new();
                    for q in unit_offsets[i]..unit_offsets[i + 1] {
                        let p = residuals[a[q] as usize] * residuals[b[q] as usize];
                        s1.add(k[q] * p);
                        s2.add(k[q] * k[q] * p * p);
                    }
                    (s1, s2)
                })
                .collect(),
        };
        let mut s1 = NeumaierSum::new();
        let mut s2 = NeumaierSum::new();
        for (a, b) in partials {
            s1.add(a.value());
            s2.add(b.value());
        }
        let norm = (n * n) as f64 * (t_len * t_len) as f64 * self.h_prod;
        Ok(VntParts {
            v_nt: 2.0 * s1.value() / norm,
            upsilon0_sq: 4.0 * s2.value() / norm,
        })
    }

    /// `(V_NT, υ̂₀²)`, failing with `ZeroVariance` when `υ̂₀² = 0`.
    pub fn evaluate(&self, residuals: &[f64]) -> Result<VntParts> {
        let parts = self.evaluate_raw(residuals)?;
        if !(parts.upsilon0_sq > 0.0) {
            return Err(Error::ZeroVariance { v_nt: parts.v_nt });
        }
        Ok(parts)
    }

    /// `N T √∏h V_NT / υ̂₀`.
    pub fn standardize(&self, parts: VntParts) -> f64 {
        self.n_obs() as f64 * self.h_prod.sqrt() * parts.v_nt / parts.upsilon0_sq.sqrt()
    }

    pub fn standardized(&self, residuals: &[f64]) -> Result<f64> {
        Ok(self.standardize(self.evaluate(residuals)?))
    }
}

/// Product Epanechnikov kernel of the difference of two pre-scaled points.
#[inline(always)]
fn kernel_scaled(a: &[f64], b: &[f64]) -> f64 {
    let mut k = 1.0;
    for (x, y) in a.iter().zip(b) {
        let u = x - y;
        if u.abs() >= SUPPORT_RADIUS {
            return 0.0;
        }
        k *= 0.75 * (1.0 - u * u);
    }
    k
}

/// `(V_NT, υ̂₀²)` from residuals and `χ` (row-major `N·T x d`, `d = h.len()`).
pub fn compute_vnt(residuals: &[f64], chi: &[f64], h: &[f64], n_units: usize, n_periods: usize) -> Result<VntParts> {
    PairwiseKernel::direct(chi, h, n_units, n_periods)?.evaluate(residuals)
}

/// Run the test on the residuals of `fit`. The bootstrap p-value is left
/// empty; see [`crate::bootstrap`].
pub fn run_test(ds: &PanelDataset, bw: &BandwidthSpec, fit: &FitResult) -> Result<SpecTestResult> {
    bw.validate(ds)?;
    if fit.residuals.len() != ds.n_obs() || fit.n_units != ds.n_units() {
        return Err(Error::DimensionMismatch {
            what: "fit residuals",
            expected: ds.n_obs(),
            got: fit.residuals.len(),
        });
    }
    let kernel = PairwiseKernel::new(&assemble_chi(ds), &bw.h_test, ds.n_units(), ds.n_periods())?;
    test_with_kernel(&kernel, &fit.residuals, ds.y(), &bw.h_test)
}

/// True when every residual is rounding noise relative to the response.
pub fn residuals_vanish(residuals: &[f64], y: &[f64]) -> bool {
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    residuals.iter().all(|e| e.abs() <= RESIDUAL_FLOOR * scale)
}

/// Standardized statistic, failing with `ZeroVariance` when the residuals vanish.
pub(crate) fn standardized_checked(kernel: &PairwiseKernel, residuals: &[f64], y: &[f64]) -> Result<f64> {
    let parts = kernel.evaluate(residuals)?;
    if residuals_vanish(residuals, y) {
        return Err(Error::ZeroVariance { v_nt: parts.v_nt });
    }
    Ok(kernel.standardize(parts))
}

pub(crate) fn test_with_kernel(
    kernel: &PairwiseKernel,
    residuals: &[f64],
    y: &[f64],
    h: &[f64],
) -> Result<SpecTestResult> {
    let scale = kernel.n_obs() as f64 * kernel.h_prod().sqrt();
    if scale < 1.0 {
        log::warn!(
            "N·T·√∏h = {scale:.3} < 1: test bandwidths are small relative to the sample; \
             the normal approximation is unreliable"
        );
    }
    let parts = kernel.evaluate(residuals)?;
    if residuals_vanish(residuals, y) {
        return Err(Error::ZeroVariance { v_nt: parts.v_nt });
    }
    let standardized = kernel.standardize(parts);
    let (n, t) = (kernel.n_units as u64, kernel.n_periods as u64);
    Ok(SpecTestResult {
        v_nt: parts.v_nt,
        upsilon0_hat: parts.upsilon0_sq.sqrt(),
        standardized,
        p_asymptotic: normal_sf(standardized),
        p_bootstrap: None,
        bootstrap_replications: 0,
        bootstrap_failures: 0,
        h_test: h.to_vec(),
        n_pairs: n * n.saturating_sub(1) * t * t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::epanechnikov;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The two displays evaluated literally with four nested loops.
    fn quadruple_loop(e: &[f64], chi: &[f64], h: &[f64], n: usize, t: usize) -> (f64, f64) {
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
                        let k: f64 = (0..d)
                            .map(|l| epanechnikov((chi[ra * d + l] - chi[rb * d + l]) / h[l]))
                            .product();
                        v += k * e[ra] * e[rb];
                        u += k * k * e[ra] * e[ra] * e[rb] * e[rb];
                    }
                }
            }
        }
        let norm = (n * n * t * t) as f64 * hd;
        (v / norm, 2.0 * u / norm)
    }

    #[test]
    fn coincident_pair_by_hand() {
        let parts = compute_vnt(&[1.0, 1.0], &[0.3, 0.3], &[1.0], 2, 1).unwrap();
        assert!((parts.v_nt - 0.375).abs() < 1e-15);
        assert!((parts.upsilon0_sq - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn zero_residuals_have_zero_variance() {
        let err = compute_vnt(&[0.0; 6], &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5], &[1.0], 3, 2).unwrap_err();
        assert_eq!(err, Error::ZeroVariance { v_nt: 0.0 });
    }

    #[test]
    fn same_unit_pairs_are_excluded() {
        // One unit only: every pair shares the unit, so both sums are empty.
        let parts = PairwiseKernel::direct(&[0.0, 0.0, 0.0], &[1.0], 1, 3)
            .unwrap()
            .evaluate_raw(&[1.0, 2.0, 3.0])
            .unwrap();
        assert_eq!(parts.v_nt, 0.0);
        assert_eq!(parts.upsilon0_sq, 0.0);
    }

    #[test]
    fn matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (n, t, d) = (6, 4, 3);
            let chi: Vec<f64> = (0..n * t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e: Vec<f64> = (0..n * t).map(|_| rng.random_range(-2.0..2.0)).collect();
            let h: Vec<f64> = (0..d).map(|_| rng.random_range(0.6..1.5)).collect();
            let (v, u) = quadruple_loop(&e, &chi, &h, n, t);
            for kernel in [
                PairwiseKernel::new(&chi, &h, n, t).unwrap(),
                PairwiseKernel::direct(&chi, &h, n, t).unwrap(),
            ] {
                let p = kernel.evaluate(&e).unwrap();
                assert!((p.v_nt - v).abs() <= 1e-12 * v.abs());
                assert!((p.upsilon0_sq - u).abs() <= 1e-12 * u.abs());
            }
        }
    }

    #[test]
    fn invariant_under_unit_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (n, t, d) = (5, 3, 2);
        let chi: Vec<f64> = (0..n * t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..n * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = [1.1, 0.9];
        let perm = [3, 0, 4, 1, 2];
        let mut chi_p = Vec::new();
        let mut e_p = Vec::new();
        for &i in &perm {
            chi_p.extend_from_slice(&chi[i * t * d..(i + 1) * t * d]);
            e_p.extend_from_slice(&e[i * t..(i + 1) * t]);
        }
        let a = compute_vnt(&e, &chi, &h, n, t).unwrap();
        let b = compute_vnt(&e_p, &chi_p, &h, n, t).unwrap();
        assert!((a.v_nt - b.v_nt).abs() <= 1e-15 * a.v_nt.abs().max(1e-300));
        assert!((a.upsilon0_sq - b.upsilon0_sq).abs() <= 1e-15 * a.upsilon0_sq);
    }

    #[test]
    fn asymptotic_p_values() {
        assert!((normal_sf(1.645) - 0.05).abs() < 1e-4);
        assert_eq!(normal_sf(0.0), 0.5);
    }
}
