//! Wild bootstrap with one standard-normal multiplier per unit.
//!
//! Replication `b` draws `ϑ_1..ϑ_N` from the substream `(seed, b)`, builds
//! `y*_it = x_it'β̂ + ĝ(w_it) + ε̂_it ϑ_i` from the null fit, and reruns the
//! whole pipeline with the bandwidths held fixed.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{check_grid, dot, FitResult, ProfileDesign};
use crate::kernels::BandwidthSpec;
use crate::linalg::{mean, quantile_sorted, sample_sd};
use crate::panel::PanelDataset;
use crate::rng::substream;
use crate::smoother::{Smoother, SmootherOperator};
use crate::spec_test::{assemble_chi, run_test, standardized_checked, PairwiseKernel, SpecTestResult};

/// Largest tolerated share of replications whose refit fails.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Multiplier {
    #[default]
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub n_replications: usize,
    pub seed: u64,
    pub multiplier: Multiplier,
    pub beta_moments: bool,
    /// Row-major `G x d_w` grid for pointwise `ĝ` bands.
    pub g_grid: Option<Vec<f64>>,
    pub g_level: f64,
    pub test_pvalue: bool,
}

impl BootstrapPlan {
    /// Slope moments and the test p-value; no `ĝ` bands.
    pub fn new(n_replications: usize, seed: u64) -> Self {
        Self {
            n_replications,
            seed,
            multiplier: Multiplier::StandardNormal,
            beta_moments: true,
            g_grid: None,
            g_level: 0.95,
            test_pvalue: true,
        }
    }

    pub fn with_g_bands(mut self, grid: Vec<f64>, level: f64) -> Self {
        self.g_grid = Some(grid);
        self.g_level = level;
        self
    }

    pub fn without_test(mut self) -> Self {
        self.test_pvalue = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replications < 2 {
            return Err(Error::InvalidArgument(format!(
                "bootstrap needs at least 2 replications, got {}",
                self.n_replications
            )));
        }
        if self.test_pvalue && self.n_replications < 19 {
            return Err(Error::InvalidArgument(format!(
                "bootstrap p-values need at least 19 replications, got {}",
                self.n_replications
            )));
        }
        if self.g_grid.is_some() && !(self.g_level > 0.0 && self.g_level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "band level must lie in (0, 1), got {}",
                self.g_level
            )));
        }
        if self.test_pvalue && self.n_replications < 199 {
            log::warn!(
                "{} bootstrap replications is coarse for a p-value; 199 or more is advisable",
                self.n_replications
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBands {
    pub grid: Vec<f64>,
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub n_replications: usize,
    pub seed: u64,
    /// Mean of `β̂*` minus `β̂`.
    pub beta_bias: Vec<f64>,
    pub beta_sd: Vec<f64>,
    pub g_bands: Option<GBands>,
    /// Standardized statistic on the original sample.
    pub observed_statistic: Option<f64>,
    /// `(1 + #{stat* ≥ stat}) / (B' + 1)` over the `B'` usable replications.
    pub test_pvalue: Option<f64>,
    /// Standardized statistic per replication; `None` where it failed or was not requested.
    pub replication_statistics: Vec<Option<f64>>,
    /// Replications whose refit failed (excluded everywhere).
    pub n_failed: usize,
    /// Replications whose test statistic was degenerate.
    pub test_failures: usize,
}

/// `ϑ_1..ϑ_N` for replication `b`.
pub fn draw_multipliers(seed: u64, b: u64, n_units: usize) -> Vec<f64> {
    let mut rng = substream(seed, b);
    (0..n_units).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `y*_it = x_it'β̂ + ĝ(w_it) + ε̂_it ϑ_i` for given multipliers.
pub fn make_bootstrap_sample_with(fit: &FitResult, ds: &PanelDataset, multipliers: &[f64]) -> Result<Vec<f64>> {
    if multipliers.len() != ds.n_units() {
        return Err(Error::DimensionMismatch {
            what: "multipliers",
            expected: ds.n_units(),
            got: multipliers.len(),
        });
    }
    if fit.residuals.len() != ds.n_obs() || fit.d_x() != ds.d_x() {
        return Err(Error::DimensionMismatch {
            what: "fit residuals",
            expected: ds.n_obs(),
            got: fit.residuals.len(),
        });
    }
    let t_len = ds.n_periods();
    Ok((0..ds.n_obs())
        .map(|r| dot(ds.x_row(r), &fit.beta_hat) + fit.g_hat_at_sample[r] + fit.residuals[r] * multipliers[r / t_len])
        .collect())
}

/// Bootstrap response for replication `b` under `seed`.
pub fn make_bootstrap_sample(fit: &FitResult, ds: &PanelDataset, seed: u64, b: u64) -> Result<Vec<f64>> {
    make_bootstrap_sample_with(fit, ds, &draw_multipliers(seed, b, ds.n_units()))
}

struct Replication {
    beta: Vec<f64>,
    g_grid: Vec<f64>,
    statistic: std::result::Result<f64, Error>,
}

pub fn run_bootstrap(
    ds: &PanelDataset,
    bw: &BandwidthSpec,
    fit: &FitResult,
    plan: &BootstrapPlan,
) -> Result<BootstrapReport> {
    plan.validate()?;
    bw.validate(ds)?;
    let design = ProfileDesign::new(ds, &bw.h_est)?;
    let grid_op = match &plan.g_grid {
        Some(grid) => {
            check_grid(ds, grid)?;
            Some(SmootherOperator::new(
                Smoother::new(ds.w(), ds.d_w(), &bw.h_est)?,
                grid.clone(),
            )?)
        }
        None => None,
    };
    let kernel = if plan.test_pvalue {
        Some(PairwiseKernel::new(
            &assemble_chi(ds),
            &bw.h_test,
            ds.n_units(),
            ds.n_periods(),
        )?)
    } else {
        None
    };
    let observed = match &kernel {
        Some(k) => match standardized_checked(k, &fit.residuals, ds.y()) {
            Ok(s) => Some(s),
            Err(Error::ZeroVariance { .. }) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };

    let outcomes: Vec<Result<Replication>> = (0..plan.n_replications)
        .into_par_iter()
        .map(|b| {
            let y_star = make_bootstrap_sample(fit, ds, plan.seed, b as u64)?;
            let est = design.estimate(ds, &y_star)?;
            let g_grid = match &grid_op {
                Some(op) => {
                    let partial: Vec<f64> = (0..ds.n_obs())
                        .map(|r| y_star[r] - dot(ds.x_row(r), &est.beta))
                        .collect();
                    op.apply(&partial)?
                }
                None => Vec::new(),
            };
            let statistic = match &kernel {
                Some(k) => standardized_checked(k, &est.residuals, &y_star),
                None => Err(Error::InvalidArgument("not requested".into())),
            };
            Ok(Replication {
                beta: est.beta,
                g_grid,
                statistic,
            })
        })
        .collect();

    let total = plan.n_replications;
    let mut first_error = None;
    let mut ok = Vec::with_capacity(total);
    for outcome in outcomes {
        match outcome {
            Ok(r) => ok.push(r),
            Err(e) => {
                first_error.get_or_insert(e.to_string());
                ok.push(Replication {
                    beta: Vec::new(),
                    g_grid: Vec::new(),
                    statistic: Err(e),
                });
            }
        }
    }
    let n_failed = ok.iter().filter(|r| r.beta.is_empty()).count();
    if n_failed as f64 > MAX_FAILURE_SHARE * total as f64 {
        return Err(Error::TooManyFailures {
            failed: n_failed,
            total,
            first: first_error.unwrap_or_default(),
        });
    }
    let good: Vec<&Replication> = ok.iter().filter(|r| !r.beta.is_empty()).collect();

    let d_x = fit.d_x();
    let (mut beta_bias, mut beta_sd) = (Vec::new(), Vec::new());
    if plan.beta_moments {
        for c in 0..d_x {
            let draws: Vec<f64> = good.iter().map(|r| r.beta[c]).collect();
            beta_bias.push(mean(&draws) - fit.beta_hat[c]);
            beta_sd.push(sample_sd(&draws));
        }
    }

    let g_bands = plan.g_grid.as_ref().map(|grid| {
        let g_len = grid.len() / ds.d_w();
        let (lo_p, hi_p) = ((1.0 - plan.g_level) / 2.0, (1.0 + plan.g_level) / 2.0);
        let mut lower = Vec::with_capacity(g_len);
        let mut upper = Vec::with_capacity(g_len);
        for p in 0..g_len {
            let mut v: Vec<f64> = good.iter().map(|r| r.g_grid[p]).collect();
            v.sort_by(f64::total_cmp);
            lower.push(quantile_sorted(&v, lo_p));
            upper.push(quantile_sorted(&v, hi_p));
        }
        GBands {
            grid: grid.clone(),
            level: plan.g_level,
            lower,
            upper,
        }
    });

    let replication_statistics: Vec<Option<f64>> = ok.iter().map(|r| r.statistic.as_ref().ok().copied()).collect();
    let mut test_failures = 0;
    if plan.test_pvalue {
        for r in &good {
            match &r.statistic {
                Ok(_) => {}
                Err(Error::ZeroVariance { .. }) => test_failures += 1,
                Err(e) => {
                    first_error.get_or_insert(e.to_string());
                    test_failures += 1;
                }
            }
        }
    }
    let test_pvalue = observed.and_then(|obs| {
        let usable: Vec<f64> = replication_statistics.iter().flatten().copied().collect();
        if usable.is_empty() {
            return None;
        }
        let exceed = usable.iter().filter(|&&s| s >= obs).count();
        Some((1 + exceed) as f64 / (usable.len() + 1) as f64)
    });

    Ok(BootstrapReport {
        n_replications: total,
        seed: plan.seed,
        beta_bias,
        beta_sd,
        g_bands,
        observed_statistic: observed,
        test_pvalue,
        replication_statistics,
        n_failed,
        test_failures,
    })
}

/// Specification test with the bootstrap p-value filled in.
pub fn bootstrap_test(
    ds: &PanelDataset,
    bw: &BandwidthSpec,
    fit: &FitResult,
    replications: usize,
    seed: u64,
) -> Result<SpecTestResult> {
    let mut result = run_test(ds, bw, fit)?;
    if replications == 0 {
        return Ok(result);
    }
    let mut plan = BootstrapPlan::new(replications, seed);
    plan.beta_moments = false;
    let report = run_bootstrap(ds, bw, fit, &plan)?;
    result.p_bootstrap = report.test_pvalue;
    result.bootstrap_replications = replications;
    result.bootstrap_failures = report.n_failed + report.test_failures;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::fit as fit_model;
    use crate::kernels::BandwidthSource;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_panel(seed: u64, n: usize, t: usize) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n * t).map(|r| 0.5 * w[r] + rng.random_range(-1.0..1.0)).collect();
        let y = (0..n * t)
            .map(|r| x[r] + (2.0 * w[r]).sin() + 0.5 * rng.random_range(-1.0..1.0))
            .collect();
        PanelDataset::new(n, t, y, x, 1, w, 1).unwrap()
    }

    fn bw() -> BandwidthSpec {
        BandwidthSpec {
            h_est: vec![0.6],
            h_test: vec![1.0, 0.8],
            source: BandwidthSource::UserSupplied,
        }
    }

    #[test]
    fn multiplier_extremes() {
        let ds = noisy_panel(1, 6, 4);
        let f = fit_model(&ds, &bw()).unwrap();
        let zero = make_bootstrap_sample_with(&f, &ds, &[0.0; 6]).unwrap();
        assert_eq!(zero, f.fitted(&ds));
        let one = make_bootstrap_sample_with(&f, &ds, &[1.0; 6]).unwrap();
        for (a, b) in one.iter().zip(ds.y()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_multiplier_per_unit() {
        let ds = noisy_panel(2, 5, 6);
        let f = fit_model(&ds, &bw()).unwrap();
        let fitted = f.fitted(&ds);
        let y = make_bootstrap_sample(&f, &ds, 11, 3).unwrap();
        let theta = draw_multipliers(11, 3, 5);
        for (i, th) in theta.iter().enumerate() {
            for t in 0..6 {
                let r = i * 6 + t;
                let ratio = (y[r] - fitted[r]) / f.residuals[r];
                assert!((ratio - th).abs() < 1e-9 * th.abs().max(1.0));
            }
        }
    }

    #[test]
    fn report_is_reproducible_and_p_value_bounded() {
        let ds = noisy_panel(3, 8, 5);
        let f = fit_model(&ds, &bw()).unwrap();
        let plan = BootstrapPlan::new(39, 5).with_g_bands(vec![-0.5, 0.0, 0.5], 0.9);
        let a = run_bootstrap(&ds, &bw(), &f, &plan).unwrap();
        let b = run_bootstrap(&ds, &bw(), &f, &plan).unwrap();
        assert_eq!(a, b);
        let p = a.test_pvalue.unwrap();
        assert!((1.0 / 40.0..=1.0).contains(&p));
        let bands = a.g_bands.unwrap();
        assert!(bands.lower.iter().zip(&bands.upper).all(|(l, u)| l <= u));
        assert!(a.beta_sd[0] > 0.0);
    }

    #[test]
    fn noiseless_sample_records_degenerate_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30;
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n).map(|r| 2.0 * x[r] + 1.0 - w[r]).collect();
        let ds = PanelDataset::new(6, 5, y, x, 1, w, 1).unwrap();
        let f = fit_model(&ds, &bw()).unwrap();
        assert!(matches!(run_test(&ds, &bw(), &f), Err(Error::ZeroVariance { .. })));
        let report = run_bootstrap(&ds, &bw(), &f, &BootstrapPlan::new(19, 1)).unwrap();
        assert_eq!(report.n_failed, 0);
        assert_eq!(report.test_failures, 19);
        assert_eq!(report.test_pvalue, None);
        assert!(report.beta_sd[0] < 1e-12);
    }

    #[test]
    fn plan_validation() {
        assert!(BootstrapPlan::new(1, 0).without_test().validate().is_err());
        assert!(BootstrapPlan::new(18, 0).validate().is_err());
        assert!(BootstrapPlan::new(2, 0).without_test().validate().is_ok());
    }
}
