//! Pooled local-linear regression on `w` and the residualizing map `I - S`.
//!
//! At an evaluation point `w0` the local fit solves the weighted normal
//! equations with regressors `[1, (w_it - w0)']` and weights
//! `K_h(w_it - w0) = ∏_l h_l⁻¹ k((w_it,l - w0_l) / h_l)`. The fitted value
//! `a` is linear in the target, `a = Σ_j l_j(w0) target_j`, and the vector
//! `l(w0)` is the row of the smoother matrix `S` at `w0`. Rows are computed once
//! per evaluation point and applied to every target column.
//!
//! The slope regressors are rescaled to `(w_it - w0) / h` before the normal
//! matrix is formed. This leaves `a` unchanged and makes the singularity floor
//! independent of the units of `w`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{validate_positive, SUPPORT_RADIUS};
use crate::linalg::Cholesky;
use crate::panel::PanelDataset;

/// Relative pivot floor for the local normal matrix. When a pivot falls
/// below `RIDGE_FLOOR * trace` the neighbourhood of `w0` cannot identify a
/// local plane, and the matrix is refactored with `RIDGE_FLOOR * trace`
/// added to its diagonal. Well-posed fits are never regularized.
pub const RIDGE_FLOOR: f64 = 1e-10;

/// Largest number of stored smoother weights before falling back to
/// recomputing rows on the fly (~100 MB).
pub const MAX_STORED_WEIGHTS: usize = 8 << 20;

/// Largest supported number of smoothing covariates.
pub const MAX_W_DIM: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    /// Fitted value at the evaluation point.
    pub a: f64,
    /// Local slope in the units of `w`.
    pub b: Vec<f64>,
    /// Sum of the normalized kernel weights; `effective_n / n` is a kernel
    /// density estimate at the evaluation point.
    pub effective_n: f64,
}

/// Local-linear smoother over a fixed design `w` with bandwidths `h`.
#[derive(Debug, Clone)]
pub struct Smoother {
    w: Vec<f64>,
    d_w: usize,
    h: Vec<f64>,
    inv_h_prod: f64,
    /// Sample indices sorted by the first coordinate of `w`.
    order: Vec<u32>,
    keys: Vec<f64>,
}

#[derive(Default)]
struct Scratch {
    idx: Vec<u32>,
    kern: Vec<f64>,
    u: Vec<f64>,
    weights: Vec<f64>,
}

impl Smoother {
    /// `w` is row-major `n x d_w`.
    pub fn new(w: &[f64], d_w: usize, h: &[f64]) -> Result<Self> {
        if d_w == 0 || !w.len().is_multiple_of(d_w) {
            return Err(Error::DimensionMismatch {
                what: "smoother design",
                expected: d_w.max(1),
                got: w.len(),
            });
        }
        if d_w > MAX_W_DIM {
            return Err(Error::InvalidArgument(format!(
                "at most {MAX_W_DIM} smoothing covariates are supported, got {d_w}"
            )));
        }
        if h.len() != d_w {
            return Err(Error::DimensionMismatch {
                what: "estimation bandwidths",
                expected: d_w,
                got: h.len(),
            });
        }
        validate_positive(h)?;
        let n = w.len() / d_w;
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| w[a as usize * d_w].total_cmp(&w[b as usize * d_w]));
        let keys = order.iter().map(|&j| w[j as usize * d_w]).collect();
        Ok(Self {
            w: w.to_vec(),
            d_w,
            h: h.to_vec(),
            inv_h_prod: h.iter().map(|v| 1.0 / v).product(),
            order,
            keys,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.order.len()
    }

    pub fn d_w(&self) -> usize {
        self.d_w
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.h
    }

    /// Range of `order` whose first coordinate lies strictly inside the support.
    fn window(&self, w0: &[f64]) -> std::ops::Range<usize> {
        let reach = SUPPORT_RADIUS * self.h[0];
        let lo = self.keys.partition_point(|&k| k <= w0[0] - reach);
        let hi = self.keys.partition_point(|&k| k < w0[0] + reach);
        lo..hi.max(lo)
    }

    /// Collect neighbours of `w0` and accumulate the scaled normal matrix.
    fn gather(&self, w0: &[f64], s: &mut Scratch, normal: &mut [f64]) -> f64 {
        let d = self.d_w;
        let p = d + 1;
        s.idx.clear();
        s.kern.clear();
        s.u.clear();
        normal.iter_mut().for_each(|m| *m = 0.0);
        let mut z = [0.0f64; 16];
        let mut total = 0.0;
        'points: for &j in &self.order[self.window(w0)] {
            let row = &self.w[j as usize * d..(j as usize + 1) * d];
            let mut k = self.inv_h_prod;
            for l in 0..d {
                let u = (row[l] - w0[l]) / self.h[l];
                if u.abs() >= SUPPORT_RADIUS {
                    continue 'points;
                }
                k *= 0.75 * (1.0 - u * u);
                z[l + 1] = u;
            }
            z[0] = 1.0;
            for a in 0..p {
                let kz = k * z[a];
                for b in 0..=a {
                    normal[a * p + b] += kz * z[b];
                }
            }
            total += k;
            s.idx.push(j);
            s.kern.push(k);
            s.u.extend_from_slice(&z[1..p]);
        }
        for a in 0..p {
            for b in 0..a {
                normal[b * p + a] = normal[a * p + b];
            }
        }
        total
    }

    fn factor(&self, normal: &[f64]) -> Option<Cholesky> {
        let p = self.d_w + 1;
        let trace: f64 = (0..p).map(|a| normal[a * p + a]).sum();
        if !(trace > 0.0) {
            return None;
        }
        if let Ok(chol) = Cholesky::factor(normal, p, RIDGE_FLOOR * trace) {
            return Some(chol);
        }
        let mut ridged = normal.to_vec();
        for a in 0..p {
            ridged[a * p + a] += RIDGE_FLOOR * trace;
        }
        Cholesky::factor(&ridged, p, 0.0).ok()
    }

    /// Smoother row at `w0`: fills `s.idx` / `s.weights` and returns the
    /// effective sample size, or `None` when the neighbourhood is degenerate.
    fn row_weights(&self, w0: &[f64], s: &mut Scratch) -> Option<f64> {
        let p = self.d_w + 1;
        let mut normal = [0.0f64; 256];
        let normal = &mut normal[..p * p];
        let eff = self.gather(w0, s, normal);
        let chol = self.factor(normal)?;
        let mut c = [0.0f64; 16];
        c[0] = 1.0;
        chol.solve_in_place(&mut c[..p]);
        s.weights.clear();
        for (n, &k) in s.kern.iter().enumerate() {
            let u = &s.u[n * self.d_w..(n + 1) * self.d_w];
            let lin: f64 = u.iter().zip(&c[1..p]).map(|(a, b)| a * b).sum();
            s.weights.push(k * (c[0] + lin));
        }
        Some(eff)
    }

    /// Full local-linear fit (intercept and slope) of `target` at `w0`.
    pub fn fit_at(&self, w0: &[f64], target: &[f64]) -> Result<LocalFit> {
        self.check_point(w0)?;
        if target.len() != self.n_obs() {
            return Err(Error::DimensionMismatch {
                what: "smoother target",
                expected: self.n_obs(),
                got: target.len(),
            });
        }
        let d = self.d_w;
        let p = d + 1;
        let mut s = Scratch::default();
        let mut normal = vec![0.0; p * p];
        let eff = self.gather(w0, &mut s, &mut normal);
        let chol = self.factor(&normal).ok_or(Error::InsufficientLocalData { row: None })?;
        let mut rhs = vec![0.0; p];
        for (n, (&j, &k)) in s.idx.iter().zip(&s.kern).enumerate() {
            let kt = k * target[j as usize];
            rhs[0] += kt;
            for l in 0..d {
                rhs[l + 1] += kt * s.u[n * d + l];
            }
        }
        chol.solve_in_place(&mut rhs);
        Ok(LocalFit {
            a: rhs[0],
            b: (0..d).map(|l| rhs[l + 1] / self.h[l]).collect(),
            effective_n: eff,
        })
    }

    fn check_point(&self, w0: &[f64]) -> Result<()> {
        if w0.len() != self.d_w {
            return Err(Error::DimensionMismatch {
                what: "evaluation point",
                expected: self.d_w,
                got: w0.len(),
            });
        }
        Ok(())
    }

    /// Upper bound on the number of nonzero smoother weights over `points`,
    /// from the first-coordinate windows alone.
    fn weight_count_bound(&self, points: &[f64]) -> usize {
        points.chunks(self.d_w).map(|p| self.window(p).len()).sum()
    }

    /// `Σ_i (Σ_t K_h(w_it - w0) v_it)²` over consecutive clusters of
    /// `cluster_size` rows, together with `Σ K_h(w_it - w0)`.
    pub fn clustered_kernel_moment(&self, w0: &[f64], values: &[f64], cluster_size: usize) -> (f64, f64) {
        let p = self.d_w + 1;
        let mut s = Scratch::default();
        let mut normal = vec![0.0; p * p];
        let eff = self.gather(w0, &mut s, &mut normal);
        let mut sums = std::collections::BTreeMap::<usize, f64>::new();
        for (&j, &k) in s.idx.iter().zip(&s.kern) {
            *sums.entry(j as usize / cluster_size).or_default() += k * values[j as usize];
        }
        (sums.values().map(|v| v * v).sum(), eff)
    }

    /// Effective sample sizes at each point (no factorization).
    pub fn effective_n(&self, points: &[f64]) -> Vec<f64> {
        let p = self.d_w + 1;
        points
            .par_chunks(self.d_w)
            .map_init(
                || (Scratch::default(), vec![0.0; p * p]),
                |(s, normal), w0| self.gather(w0, s, normal),
            )
            .collect()
    }
}

/// The smoother restricted to a set of evaluation points: either stored as a
/// sparse matrix or recomputed per application when it would be too large.
#[derive(Debug, Clone)]
pub struct SmootherOperator {
    smoother: Smoother,
    points: Vec<f64>,
    stored: Option<SparseRows>,
}

/// Column indices, weights and effective sample size of one operator row.
type RowEntry = (Vec<u32>, Vec<f64>, f64);

#[derive(Debug, Clone)]
struct SparseRows {
    offsets: Vec<usize>,
    idx: Vec<u32>,
    weights: Vec<f64>,
    effective_n: Vec<f64>,
}

impl SmootherOperator {
    /// `points` is row-major `P x d_w`.
    pub fn new(smoother: Smoother, points: Vec<f64>) -> Result<Self> {
        Self::with_budget(smoother, points, MAX_STORED_WEIGHTS)
    }

    /// Operator at the sample points of the smoother's own design.
    pub fn at_sample(smoother: Smoother) -> Result<Self> {
        let points = smoother.w.clone();
        Self::new(smoother, points)
    }

    pub fn with_budget(smoother: Smoother, points: Vec<f64>, budget: usize) -> Result<Self> {
        if !points.len().is_multiple_of(smoother.d_w) {
            return Err(Error::DimensionMismatch {
                what: "evaluation points",
                expected: smoother.d_w,
                got: points.len(),
            });
        }
        let stored = if smoother.weight_count_bound(&points) <= budget {
            Some(Self::store(&smoother, &points)?)
        } else {
            None
        };
        Ok(Self {
            smoother,
            points,
            stored,
        })
    }

    fn store(smoother: &Smoother, points: &[f64]) -> Result<SparseRows> {
        let rows: Vec<Option<RowEntry>> = points
            .par_chunks(smoother.d_w)
            .map_init(Scratch::default, |s, w0| {
                smoother
                    .row_weights(w0, s)
                    .map(|eff| (s.idx.clone(), s.weights.clone(), eff))
            })
            .collect();
        let total: usize = rows.iter().flatten().map(|r| r.0.len()).sum();
        let mut out = SparseRows {
            offsets: Vec::with_capacity(rows.len() + 1),
            idx: Vec::with_capacity(total),
            weights: Vec::with_capacity(total),
            effective_n: Vec::with_capacity(rows.len()),
        };
        out.offsets.push(0);
        for (r, row) in rows.into_iter().enumerate() {
            let (idx, weights, eff) = row.ok_or(Error::InsufficientLocalData { row: Some(r) })?;
            out.idx.extend(idx);
            out.weights.extend(weights);
            out.effective_n.push(eff);
            out.offsets.push(out.idx.len());
        }
        Ok(out)
    }

    pub fn n_points(&self) -> usize {
        self.points.len() / self.smoother.d_w
    }

    pub fn smoother(&self) -> &Smoother {
        &self.smoother
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn is_stored(&self) -> bool {
        self.stored.is_some()
    }

    /// Apply `S` to each column; returns one fitted column per input column.
    pub fn apply_columns(&self, columns: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let n = self.smoother.n_obs();
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "smoother target",
                expected: n,
                got: bad.len(),
            });
        }
        let k = columns.len();
        let per_point: Vec<Vec<f64>> = match &self.stored {
            Some(rows) => (0..self.n_points())
                .into_par_iter()
                .map(|r| {
                    let span = rows.offsets[r]..rows.offsets[r + 1];
                    let idx = &rows.idx[span.clone()];
                    let wts = &rows.weights[span];
                    columns
                        .iter()
                        .map(|col| idx.iter().zip(wts).map(|(&j, &l)| l * col[j as usize]).sum())
                        .collect()
                })
                .collect(),
            None => self
                .points
                .par_chunks(self.smoother.d_w)
                .enumerate()
                .map_init(Scratch::default, |s, (r, w0)| {
                    self.smoother
                        .row_weights(w0, s)
                        .ok_or(Error::InsufficientLocalData { row: Some(r) })?;
                    Ok(columns
                        .iter()
                        .map(|col| s.idx.iter().zip(&s.weights).map(|(&j, &l)| l * col[j as usize]).sum())
                        .collect())
                })
                .collect::<Result<_>>()?,
        };
        let mut out = vec![Vec::with_capacity(per_point.len()); k];
        for row in per_point {
            for (c, v) in row.into_iter().enumerate() {
                out[c].push(v);
            }
        }
        Ok(out)
    }

    pub fn apply(&self, column: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_columns(&[column])?.pop().unwrap_or_default())
    }

    /// Effective sample sizes at the evaluation points.
    pub fn effective_n(&self) -> Vec<f64> {
        match &self.stored {
            Some(rows) => rows.effective_n.clone(),
            None => self.smoother.effective_n(&self.points),
        }
    }
}

/// Local-linear fit of `target` at `w0`; `w` is row-major `n x d_w` with
/// `d_w = w0.len()`.
pub fn fit_at_point(w0: &[f64], w: &[f64], target: &[f64], h: &[f64]) -> Result<LocalFit> {
    Smoother::new(w, w0.len(), h)?.fit_at(w0, target)
}

/// Output of [`residualize`].
#[derive(Debug, Clone)]
pub struct Residualized {
    /// `(I - S) y`.
    pub y_tilde: Vec<f64>,
    /// `(I - S) X`, row-major `N·T x d_x`.
    pub x_tilde: Vec<f64>,
    /// `S y` followed by `S x_c` for each x column.
    pub fitted: Vec<Vec<f64>>,
}

/// Apply `I - S` to the response and every regressor column.
pub fn residualize(ds: &PanelDataset, h: &[f64]) -> Result<Residualized> {
    let op = SmootherOperator::at_sample(Smoother::new(ds.w(), ds.d_w(), h)?)?;
    residualize_with(&op, ds)
}

pub fn residualize_with(op: &SmootherOperator, ds: &PanelDataset) -> Result<Residualized> {
    let mut columns: Vec<Vec<f64>> = vec![ds.y().to_vec()];
    columns.extend((0..ds.d_x()).map(|c| ds.x_column(c)));
    let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    let fitted = op.apply_columns(&refs)?;
    let y_tilde = ds.y().iter().zip(&fitted[0]).map(|(y, s)| y - s).collect();
    let n = ds.n_obs();
    let d_x = ds.d_x();
    let mut x_tilde = vec![0.0; n * d_x];
    for c in 0..d_x {
        for r in 0..n {
            x_tilde[r * d_x + c] = columns[c + 1][r] - fitted[c + 1][r];
        }
    }
    Ok(Residualized {
        y_tilde,
        x_tilde,
        fitted,
    })
}
