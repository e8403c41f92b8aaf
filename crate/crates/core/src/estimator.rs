//! Profile least-squares estimation of the slope, the feasible estimate of
//! `g`, and their variance plug-ins.
//!
//! With `S` the local-linear smoother at the sample points, the slope is
//! `β̂ = [X̃'X̃]⁻¹ X̃'Ỹ` for `Ỹ = (I - S)Y`, `X̃ = (I - S)X`, and the nuisance
//! function is recovered as `ĝ = S(Y - Xβ̂)`.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap, BootstrapPlan};
use crate::error::{Error, Result};
use crate::kernels::{BandwidthSpec, EPANECHNIKOV_NU0};
use crate::linalg::{gram, gram_rhs, normal_quantile, normal_sf, sample_sd, sandwich, ScaledCholesky};
use crate::panel::PanelDataset;
use crate::smoother::{Smoother, SmootherOperator};

/// Relative pivot floor for the equilibrated `X̃'X̃`.
pub const DESIGN_FLOOR: f64 = 1e-10;

/// Columns with a sample standard deviation below this are treated as constant.
pub const CONSTANT_COLUMN_SD: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// Cluster-by-unit sandwich covariance of `β̂`, row-major `d_x x d_x`.
    pub vcov_beta: Vec<f64>,
    /// `ĝ(w_it)` at every sample row.
    pub g_hat_at_sample: Vec<f64>,
    /// `ε̂_it = y_it - x_it'β̂ - ĝ(w_it)`.
    pub residuals: Vec<f64>,
    /// `(NT)⁻¹ X̃'X̃`, row-major.
    pub omega_x_hat: Vec<f64>,
    pub bandwidths: BandwidthSpec,
    pub x_names: Vec<String>,
    pub n_units: usize,
    pub n_periods: usize,
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_ratio: f64,
    /// Two-sided normal p-value.
    pub p_value: f64,
}

pub(crate) fn coefficient_table(names: &[String], beta: &[f64], vcov: &[f64]) -> Vec<Coefficient> {
    let k = beta.len();
    names
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(c, (name, &b))| {
            let se = vcov[c * k + c].max(0.0).sqrt();
            let t = b / se;
            Coefficient {
                name: name.clone(),
                estimate: b,
                std_error: se,
                t_ratio: t,
                p_value: 2.0 * normal_sf(t.abs()),
            }
        })
        .collect()
}

impl FitResult {
    pub fn d_x(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        let k = self.d_x();
        (0..k).map(|c| self.vcov_beta[c * k + c].max(0.0).sqrt()).collect()
    }

    pub fn coefficients(&self) -> Vec<Coefficient> {
        coefficient_table(&self.x_names, &self.beta_hat, &self.vcov_beta)
    }

    /// `x_it'β̂ + ĝ(w_it)`, the null-model fitted values.
    pub fn fitted(&self, ds: &PanelDataset) -> Vec<f64> {
        (0..ds.n_obs())
            .map(|r| dot(ds.x_row(r), &self.beta_hat) + self.g_hat_at_sample[r])
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Everything about the profile fit that depends on `(x, w, h_est)` only.
/// Refitting a new response costs two smoother applications.
#[derive(Debug, Clone)]
pub struct ProfileDesign {
    op: SmootherOperator,
    x_tilde: Vec<f64>,
    gram: Vec<f64>,
    gram_chol: ScaledCholesky,
    n_obs: usize,
    d_x: usize,
}

/// Slope, nuisance fit and residuals for one response vector.
#[derive(Debug, Clone)]
pub struct ProfileEstimate {
    pub beta: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl ProfileDesign {
    pub fn new(ds: &PanelDataset, h_est: &[f64]) -> Result<Self> {
        let (n, d_x, d_w) = (ds.n_obs(), ds.d_x(), ds.d_w());
        if n <= d_x + d_w + 1 {
            return Err(Error::InvalidArgument(format!(
                "need more than d_x + d_w + 1 = {} observations, got {n}",
                d_x + d_w + 1
            )));
        }
        for c in 0..d_x {
            if sample_sd(&ds.x_column(c)) < CONSTANT_COLUMN_SD {
                return Err(Error::ConstantRegressor {
                    column: ds.x_names()[c].clone(),
                });
            }
        }
        let op = SmootherOperator::at_sample(Smoother::new(ds.w(), d_w, h_est)?)?;
        let columns: Vec<Vec<f64>> = (0..d_x).map(|c| ds.x_column(c)).collect();
        let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
        let fitted = op.apply_columns(&refs)?;
        let mut x_tilde = vec![0.0; n * d_x];
        for c in 0..d_x {
            for r in 0..n {
                x_tilde[r * d_x + c] = columns[c][r] - fitted[c][r];
            }
        }
        let gram = gram(&x_tilde, n, d_x);
        for (c, column) in columns.iter().enumerate() {
            let m = column.iter().sum::<f64>() / n as f64;
            let total: f64 = column.iter().map(|v| (v - m) * (v - m)).sum();
            if !(gram[c * d_x + c] > DESIGN_FLOOR * total) {
                return Err(Error::SingularDesign(format!(
                    "regressor `{}` is almost entirely explained by a smooth function of w",
                    ds.x_names()[c]
                )));
            }
        }
        let gram_chol = ScaledCholesky::factor(&gram, d_x, DESIGN_FLOOR).map_err(|e| {
            Error::SingularDesign(format!(
                "X̃'X̃ is singular at regressor `{}`: after smoothing on w the regressors are \
                 collinear (x is predictable from w)",
                ds.x_names()[e.pivot]
            ))
        })?;
        Ok(Self {
            op,
            x_tilde,
            gram,
            gram_chol,
            n_obs: n,
            d_x,
        })
    }

    pub fn operator(&self) -> &SmootherOperator {
        &self.op
    }

    /// Row-major `N·T x d_x`.
    pub fn x_tilde(&self) -> &[f64] {
        &self.x_tilde
    }

    pub fn estimate(&self, ds: &PanelDataset, y: &[f64]) -> Result<ProfileEstimate> {
        if y.len() != self.n_obs {
            return Err(Error::DimensionMismatch {
                what: "response length",
                expected: self.n_obs,
                got: y.len(),
            });
        }
        let sy = self.op.apply(y)?;
        let y_tilde: Vec<f64> = y.iter().zip(&sy).map(|(a, b)| a - b).collect();
        let beta = self
            .gram_chol
            .solve(&gram_rhs(&self.x_tilde, &y_tilde, self.n_obs, self.d_x));
        let partial: Vec<f64> = (0..self.n_obs).map(|r| y[r] - dot(ds.x_row(r), &beta)).collect();
        let g_hat = self.op.apply(&partial)?;
        let residuals = partial.iter().zip(&g_hat).map(|(p, g)| p - g).collect();
        Ok(ProfileEstimate { beta, g_hat, residuals })
    }

    /// Cluster-by-unit sandwich `(X̃'X̃)⁻¹ [Σ_i s_i s_i'] (X̃'X̃)⁻¹`, with
    /// `s_i = Σ_t x̃_it ε̂_it`.
    pub fn cluster_vcov(&self, residuals: &[f64], n_periods: usize) -> Vec<f64> {
        cluster_sandwich(&self.x_tilde, residuals, self.d_x, n_periods, &self.gram_chol.inverse())
    }

    pub fn omega_x(&self) -> Vec<f64> {
        self.gram.iter().map(|g| g / self.n_obs as f64).collect()
    }
}

pub(crate) fn cluster_sandwich(
    design: &[f64],
    residuals: &[f64],
    k: usize,
    cluster_size: usize,
    bread: &[f64],
) -> Vec<f64> {
    let n = residuals.len();
    let mut meat = vec![0.0; k * k];
    let mut score = vec![0.0; k];
    for start in (0..n).step_by(cluster_size) {
        score.iter_mut().for_each(|s| *s = 0.0);
        for r in start..(start + cluster_size).min(n) {
            for c in 0..k {
                score[c] += design[r * k + c] * residuals[r];
            }
        }
        for a in 0..k {
            for b in 0..k {
                meat[a * k + b] += score[a] * score[b];
            }
        }
    }
    sandwich(bread, &meat, k)
}

/// Profile least-squares fit.
pub fn fit(ds: &PanelDataset, bw: &BandwidthSpec) -> Result<FitResult> {
    bw.validate(ds)?;
    let design = ProfileDesign::new(ds, &bw.h_est)?;
    let est = design.estimate(ds, ds.y())?;
    Ok(FitResult {
        vcov_beta: design.cluster_vcov(&est.residuals, ds.n_periods()),
        omega_x_hat: design.omega_x(),
        beta_hat: est.beta,
        g_hat_at_sample: est.g_hat,
        residuals: est.residuals,
        bandwidths: bw.clone(),
        x_names: ds.x_names().to_vec(),
        n_units: ds.n_units(),
        n_periods: ds.n_periods(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GCurveMethod {
    /// Pointwise percentile bands from the wild bootstrap.
    BootstrapPercentile { replications: usize, seed: u64 },
    /// Asymptotic plug-in `ν₀^{d_w} Ψ̂(w) / (ρ̂(w) N T ∏h)`, no bias correction.
    PlugIn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GCurve {
    /// Row-major `G x d_w`.
    pub grid: Vec<f64>,
    pub g_hat: Vec<f64>,
    /// Plug-in standard errors, or bootstrap band half-widths.
    pub se_pointwise: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub method: GCurveMethod,
}

/// Check that every grid coordinate lies inside the observed range of `w`.
pub fn check_grid(ds: &PanelDataset, grid: &[f64]) -> Result<()> {
    let d_w = ds.d_w();
    if !grid.len().is_multiple_of(d_w) {
        return Err(Error::DimensionMismatch {
            what: "grid",
            expected: d_w,
            got: grid.len(),
        });
    }
    let ranges: Vec<(f64, f64)> = (0..d_w)
        .map(|c| {
            ds.w_column(c)
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect();
    for (point, g) in grid.chunks(d_w).enumerate() {
        for (coord, (&v, &(lo, hi))) in g.iter().zip(&ranges).enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::GridOutsideHull { point, coord });
            }
        }
    }
    Ok(())
}

/// `ĝ` on `grid` (row-major `G x d_w`) with pointwise bands at `level`.
pub fn g_curve(fit: &FitResult, ds: &PanelDataset, grid: &[f64], method: GCurveMethod, level: f64) -> Result<GCurve> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    check_grid(ds, grid)?;
    let h = &fit.bandwidths.h_est;
    let smoother = Smoother::new(ds.w(), ds.d_w(), h)?;
    let partial: Vec<f64> = (0..ds.n_obs())
        .map(|r| ds.y()[r] - dot(ds.x_row(r), &fit.beta_hat))
        .collect();
    let g_hat = SmootherOperator::new(smoother.clone(), grid.to_vec())?.apply(&partial)?;

    let (lower, upper, se) = match method {
        GCurveMethod::PlugIn => {
            let z = normal_quantile(0.5 + level / 2.0);
            let se = plug_in_se(&smoother, grid, &fit.residuals, ds.n_periods());
            let lower = g_hat.iter().zip(&se).map(|(g, s)| g - z * s).collect();
            let upper = g_hat.iter().zip(&se).map(|(g, s)| g + z * s).collect();
            (lower, upper, se)
        }
        GCurveMethod::BootstrapPercentile { replications, seed } => {
            let plan = BootstrapPlan::new(replications, seed)
                .with_g_bands(grid.to_vec(), level)
                .without_test();
            let report = run_bootstrap(ds, &fit.bandwidths, fit, &plan)?;
            let bands = report
                .g_bands
                .ok_or_else(|| Error::InvalidArgument("bootstrap produced no bands".into()))?;
            let se = bands
                .lower
                .iter()
                .zip(&bands.upper)
                .map(|(l, u)| 0.5 * (u - l))
                .collect();
            (bands.lower, bands.upper, se)
        }
    };
    Ok(GCurve {
        grid: grid.to_vec(),
        g_hat,
        se_pointwise: se,
        lower,
        upper,
        level,
        method,
    })
}

/// Plug-in standard error of `ĝ(w)`.
///
/// `ρ̂(w) = Σ K_h / NT` and `Ψ̂(w) = ∏h Σ_i (Σ_t K_h ε̂_it)² / (NT ν₀^{d_w} ρ̂(w))`,
/// which keeps the within-unit covariance of the residuals.
fn plug_in_se(smoother: &Smoother, grid: &[f64], residuals: &[f64], n_periods: usize) -> Vec<f64> {
    let n = residuals.len() as f64;
    let h_prod: f64 = smoother.bandwidths().iter().product();
    let nu0 = EPANECHNIKOV_NU0.powi(smoother.d_w() as i32);
    grid.chunks(smoother.d_w())
        .map(|w0| {
            let (clustered, kernel_sum) = smoother.clustered_kernel_moment(w0, residuals, n_periods);
            let rho = kernel_sum / n;
            if !(rho > 0.0) {
                return f64::NAN;
            }
            let psi = h_prod * clustered / (n * nu0 * rho);
            (nu0 * psi / (rho * n * h_prod)).sqrt()
        })
        .collect()
}
