//! Data-generating process and Monte Carlo harness.
//!
//! The default design is
//!
//! ```text
//! y_it = β₁ x_it + β₂ z_t + m₀(w_it) + Δ (4 x_it² + z_t³ - 3 w_it) + u_it
//! m₀   = -w_it² + 2 w_it + ξ_it
//! ```
//!
//! with the covariate recipe in [`RECIPE`]. Every replication is generated
//! from a seed derived from `(study seed, N, T, r)` only, so cells that differ
//! in `Δ` share their covariates and noise (common random numbers).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::bootstrap_test;
use crate::comparators::{cce_pooled_fit, naive_fit};
use crate::error::{Error, Result};
use crate::estimator::fit;
use crate::kernels::BandwidthSpec;
use crate::linalg::{mean, median, sample_sd};
use crate::panel::PanelDataset;
use crate::rng::derive_seed;

pub const RECIPE_VERSION: &str = "1";

/// Printed into every report.
pub const RECIPE: &str = "lambda_i ~ N(0,1); f_t = 0.5 f_(t-1) + N(0,1) started from its stationary law N(0,4/3); \
w_it = 0.6 lambda_i + 0.6 f_t + zeta_it, zeta_it ~ N(0,0.25); x_it = 0.5 w_it + nu_it, nu_it ~ N(0,1); \
z_t = 0.5 f_t + e_t, e_t ~ N(0,1); xi_it, u_it ~ N(0,1); m0 = -w^2 + 2w + xi; \
y = beta1 x + beta2 z + m0 + delta (4 x^2 + z^3 - 3 w) + u; beta1 = beta2 = 1";

/// AR(1) coefficient of the latent factor.
const FACTOR_AR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_units: usize,
    pub n_periods: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Departure from the null, in `[0, 1]`.
    pub delta: f64,
    pub seed: u64,
    /// Loading of `x` on `w`.
    pub x_on_w: f64,
    /// Debug switch: force `ξ ≡ 0` and `u ≡ 0`.
    pub noiseless: bool,
}

impl DgpSpec {
    pub fn new(n_units: usize, n_periods: usize, delta: f64, seed: u64) -> Self {
        Self {
            n_units,
            n_periods,
            beta1: 1.0,
            beta2: 1.0,
            delta,
            seed,
            x_on_w: 0.5,
            noiseless: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.n_periods == 0 {
            return Err(Error::InvalidArgument("DGP sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Latent draws and true regression components behind a generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: [f64; 2],
    /// `-w² + 2w` at each row.
    pub g: Vec<f64>,
    /// `m₀`, including `ξ`.
    pub m0: Vec<f64>,
    pub lambda: Vec<f64>,
    pub factor: Vec<f64>,
    pub xi: Vec<f64>,
    pub u: Vec<f64>,
}

pub fn true_g(w: f64) -> f64 {
    -w * w + 2.0 * w
}

/// Draw one panel. Columns: `y`; x = `[x, z]` with `z` flagged time-only; w = `[w]`.
pub fn generate(spec: &DgpSpec) -> Result<(PanelDataset, Truth)> {
    spec.validate()?;
    let (n, t_len) = (spec.n_units, spec.n_periods);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut std = || -> f64 { StandardNormal.sample(&mut rng) };
    let lambda: Vec<f64> = (0..n).map(|_| std()).collect();
    let mut factor = Vec::with_capacity(t_len);
    let mut f = std() * (1.0 / (1.0 - FACTOR_AR * FACTOR_AR)).sqrt();
    for _ in 0..t_len {
        factor.push(f);
        f = FACTOR_AR * f + std();
    }
    let z: Vec<f64> = factor.iter().map(|f| 0.5 * f + std()).collect();

    let rows = n * t_len;
    let mut x = Vec::with_capacity(rows * 2);
    let mut w = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    let (mut g, mut m0, mut xi_all, mut u_all) = (
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
    );
    let zeta_law = Normal::new(0.0, 0.5).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    for &lam in &lambda {
        for t in 0..t_len {
            let zeta = zeta_law.sample(&mut rng);
            let nu: f64 = StandardNormal.sample(&mut rng);
            let xi: f64 = StandardNormal.sample(&mut rng);
            let u: f64 = StandardNormal.sample(&mut rng);
            let (xi, u) = if spec.noiseless { (0.0, 0.0) } else { (xi, u) };
            let wv = 0.6 * lam + 0.6 * factor[t] + zeta;
            let xv = spec.x_on_w * wv + nu;
            let zv = z[t];
            let gv = true_g(wv);
            let m = gv + xi;
            let alt = spec.delta * (4.0 * xv * xv + zv * zv * zv - 3.0 * wv);
            y.push(spec.beta1 * xv + spec.beta2 * zv + m + alt + u);
            x.extend([xv, zv]);
            w.push(wv);
            g.push(gv);
            m0.push(m);
            xi_all.push(xi);
            u_all.push(u);
        }
    }
    let ds = PanelDataset::new(n, t_len, y, x, 2, w, 1)?
        .with_names("y", &["x", "z"], &["w"])?
        .with_time_only(&[1])?;
    Ok((
        ds,
        Truth {
            beta: [spec.beta1, spec.beta2],
            g,
            m0,
            lambda,
            factor,
            xi: xi_all,
            u: u_all,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Naive,
    Cce,
}

impl std::str::FromStr for Comparator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(Self::Naive),
            "cce" => Ok(Self::Cce),
            other => Err(Error::InvalidArgument(format!(
                "unknown comparator `{other}` (expected naive or cce)"
            ))),
        }
    }
}

/// Study grid, as read from the `--grid` JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub n: Vec<usize>,
    pub t: Vec<usize>,
    #[serde(default = "default_deltas")]
    pub delta: Vec<f64>,
    pub replications: usize,
    /// Bootstrap draws per replication; 0 uses the asymptotic p-value.
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub comparators: Vec<Comparator>,
    /// Run the specification test in every replication.
    #[serde(default = "default_true")]
    pub test: bool,
}

fn default_deltas() -> Vec<f64> {
    vec![0.0]
}

fn default_levels() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}

fn default_seed() -> u64 {
    crate::cli::DEFAULT_SEED
}

fn default_true() -> bool {
    true
}

impl StudyConfig {
    pub fn new(
        n: Vec<usize>,
        t: Vec<usize>,
        delta: Vec<f64>,
        replications: usize,
        bootstrap: usize,
        seed: u64,
    ) -> Self {
        Self {
            n,
            t,
            delta,
            replications,
            bootstrap,
            levels: default_levels(),
            seed,
            comparators: Vec::new(),
            test: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("malformed study grid: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.t.is_empty() || self.delta.is_empty() {
            return Err(Error::InvalidArgument(
                "study grid needs non-empty n, t and delta lists".into(),
            ));
        }
        if self.n.iter().chain(&self.t).any(|&v| v == 0) {
            return Err(Error::InvalidArgument("panel sizes must be positive".into()));
        }
        if let Some(d) = self.delta.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::InvalidArgument(format!("delta must lie in [0, 1], got {d}")));
        }
        if self.replications < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 replications, got {}",
                self.replications
            )));
        }
        if self.bootstrap != 0 && self.bootstrap < 19 {
            return Err(Error::InvalidArgument(format!(
                "bootstrap must be 0 or at least 19, got {}",
                self.bootstrap
            )));
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::InvalidArgument(format!("levels must lie in (0, 1), got {l}")));
        }
        Ok(())
    }

    /// Cells in `n`-major, then `t`, then `delta` order.
    pub fn cells(&self) -> Vec<(usize, usize, f64)> {
        let mut cells = Vec::new();
        for &n in &self.n {
            for &t in &self.t {
                for &d in &self.delta {
                    cells.push((n, t, d));
                }
            }
        }
        cells
    }
}

/// Bias (times 100) and RMSE of one coefficient over replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRmse {
    pub bias_x100: f64,
    pub rmse: f64,
    /// Monte Carlo standard error of the bias (not scaled).
    pub bias_se: f64,
}

impl BiasRmse {
    fn from_errors(err: &[f64]) -> Self {
        let r = err.len() as f64;
        Self {
            bias_x100: 100.0 * mean(err),
            rmse: (err.iter().map(|e| e * e).sum::<f64>() / r).sqrt(),
            bias_se: sample_sd(err) / r.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub level: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Bootstrap,
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub n: usize,
    pub t: usize,
    pub delta: f64,
    pub replications: usize,
    pub n_failed: usize,
    /// `[β₁, β₂]` for the profile estimator.
    pub beta: Vec<BiasRmse>,
    pub naive: Option<Vec<BiasRmse>>,
    /// `β₁` only; `z` is time-only and not identified by pooled CCE.
    pub cce: Option<Vec<BiasRmse>>,
    /// Medians across replications of the per-replication mean error and
    /// RMSE of `ĝ` at the sample points; null-cells only.
    pub g_median_bias: Option<f64>,
    pub g_median_rmse: Option<f64>,
    pub test_method: Option<PValueMethod>,
    pub rejections: Vec<Rejection>,
    pub test_failures: usize,
    pub statistic_mean: Option<f64>,
    pub statistic_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub recipe_version: String,
    pub recipe: String,
    pub config: StudyConfig,
    pub cells: Vec<CellReport>,
}

/// Per-replication outcome; `None` fields were not computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub beta_error: [f64; 2],
    pub naive_error: Option<[f64; 2]>,
    pub cce_error: Option<f64>,
    pub g_bias: f64,
    pub g_rmse: f64,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
}

/// Seed of replication `r` in the `(n, t)` cells.
pub fn replication_seed(study_seed: u64, n: usize, t: usize, r: usize) -> u64 {
    derive_seed(study_seed, &[n as u64, t as u64, r as u64])
}

/// One replication: generate, fit, optionally compare and test.
pub fn run_replication(cfg: &StudyConfig, n: usize, t: usize, delta: f64, r: usize) -> Result<ReplicationOutcome> {
    let seed = replication_seed(cfg.seed, n, t, r);
    let (ds, truth) = generate(&DgpSpec::new(n, t, delta, seed))?;
    let bw = BandwidthSpec::rule_of_thumb(&ds)?;
    let f = fit(&ds, &bw)?;
    let beta_error = [f.beta_hat[0] - truth.beta[0], f.beta_hat[1] - truth.beta[1]];
    let g_err: Vec<f64> = f.g_hat_at_sample.iter().zip(&truth.g).map(|(a, b)| a - b).collect();
    let g_bias = mean(&g_err);
    let g_rmse = (g_err.iter().map(|e| e * e).sum::<f64>() / g_err.len() as f64).sqrt();

    let naive_error = if cfg.comparators.contains(&Comparator::Naive) {
        let s = naive_fit(&ds)?;
        Some([s.slopes()[0] - truth.beta[0], s.slopes()[1] - truth.beta[1]])
    } else {
        None
    };
    let cce_error = if cfg.comparators.contains(&Comparator::Cce) {
        let s = cce_pooled_fit(&ds.select_x(&[0])?)?;
        Some(s.slopes()[0] - truth.beta[0])
    } else {
        None
    };

    let (statistic, p_value) = if cfg.test {
        match bootstrap_test(&ds, &bw, &f, cfg.bootstrap, derive_seed(seed, &[2])) {
            Ok(res) => (
                Some(res.standardized),
                if cfg.bootstrap > 0 {
                    res.p_bootstrap
                } else {
                    Some(res.p_asymptotic)
                },
            ),
            Err(Error::ZeroVariance { .. }) => (None, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    Ok(ReplicationOutcome {
        beta_error,
        naive_error,
        cce_error,
        g_bias,
        g_rmse,
        statistic,
        p_value,
    })
}

pub fn run_cell(cfg: &StudyConfig, n: usize, t: usize, delta: f64) -> Result<CellReport> {
    let outcomes: Vec<Result<ReplicationOutcome>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, n, t, delta, r))
        .collect();
    let total = outcomes.len();
    let mut first = None;
    let ok: Vec<ReplicationOutcome> = outcomes
        .into_iter()
        .filter_map(|o| o.map_err(|e| first.get_or_insert(e.to_string()).clone()).ok())
        .collect();
    let n_failed = total - ok.len();
    if n_failed as f64 > crate::bootstrap::MAX_FAILURE_SHARE * total as f64 || ok.is_empty() {
        return Err(Error::TooManyFailures {
            failed: n_failed,
            total,
            first: first.unwrap_or_default(),
        });
    }
    if n_failed > 0 {
        log::warn!("cell N={n} T={t} delta={delta}: {n_failed} of {total} replications failed");
    }

    let column = |f: &dyn Fn(&ReplicationOutcome) -> f64| -> Vec<f64> { ok.iter().map(f).collect() };
    let beta = vec![
        BiasRmse::from_errors(&column(&|o| o.beta_error[0])),
        BiasRmse::from_errors(&column(&|o| o.beta_error[1])),
    ];
    let naive = cfg.comparators.contains(&Comparator::Naive).then(|| {
        vec![
            BiasRmse::from_errors(&column(&|o| o.naive_error.unwrap()[0])),
            BiasRmse::from_errors(&column(&|o| o.naive_error.unwrap()[1])),
        ]
    });
    let cce = cfg
        .comparators
        .contains(&Comparator::Cce)
        .then(|| vec![BiasRmse::from_errors(&column(&|o| o.cce_error.unwrap()))]);
    let null_cell = delta == 0.0;
    let g_median_bias = null_cell.then(|| median(&column(&|o| o.g_bias)));
    let g_median_rmse = null_cell.then(|| median(&column(&|o| o.g_rmse)));

    let (test_method, rejections, test_failures, statistic_mean, statistic_sd) = if cfg.test {
        let p: Vec<f64> = ok.iter().filter_map(|o| o.p_value).collect();
        let stats: Vec<f64> = ok.iter().filter_map(|o| o.statistic).collect();
        let rejections = cfg
            .levels
            .iter()
            .map(|&level| Rejection {
                level,
                rate: if p.is_empty() {
                    f64::NAN
                } else {
                    p.iter().filter(|&&v| v <= level).count() as f64 / p.len() as f64
                },
            })
            .collect();
        let method = if cfg.bootstrap > 0 {
            PValueMethod::Bootstrap
        } else {
            PValueMethod::Asymptotic
        };
        (
            Some(method),
            rejections,
            ok.len() - p.len(),
            (!stats.is_empty()).then(|| mean(&stats)),
            (stats.len() > 1).then(|| sample_sd(&stats)),
        )
    } else {
        (None, Vec::new(), 0, None, None)
    };

    Ok(CellReport {
        n,
        t,
        delta,
        replications: total,
        n_failed,
        beta,
        naive,
        cce,
        g_median_bias,
        g_median_rmse,
        test_method,
        rejections,
        test_failures,
        statistic_mean,
        statistic_sd,
    })
}

pub fn run_study(cfg: &StudyConfig) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for (n, t, delta) in cfg.cells() {
        log::info!("simulating cell N={n} T={t} delta={delta}");
        cells.push(run_cell(cfg, n, t, delta)?);
    }
    Ok(MonteCarloReport {
        recipe_version: RECIPE_VERSION.into(),
        recipe: RECIPE.into(),
        config: cfg.clone(),
        cells,
    })
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.6}")
    }
}

/// Write `table_beta.csv`, `table_g.csv`, `table_size.csv`,
/// `power_curve.csv` and `report.json` into `dir`.
pub fn write_report(report: &MonteCarloReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut beta = csv::Writer::from_path(dir.join("table_beta.csv"))?;
    beta.write_record([
        "n",
        "t",
        "delta",
        "replications",
        "estimator",
        "parameter",
        "bias_x100",
        "rmse",
    ])?;
    for c in &report.cells {
        let mut rows: Vec<(&str, &str, BiasRmse)> =
            vec![("profile", "beta1", c.beta[0]), ("profile", "beta2", c.beta[1])];
        if let Some(nv) = &c.naive {
            rows.push(("naive", "beta1", nv[0]));
            rows.push(("naive", "beta2", nv[1]));
        }
        if let Some(cc) = &c.cce {
            rows.push(("cce", "beta1", cc[0]));
        }
        for (est, par, v) in rows {
            beta.write_record([
                c.n.to_string(),
                c.t.to_string(),
                c.delta.to_string(),
                c.replications.to_string(),
                est.into(),
                par.into(),
                fmt(v.bias_x100),
                fmt(v.rmse),
            ])?;
        }
    }
    beta.flush()?;

    let mut g = csv::Writer::from_path(dir.join("table_g.csv"))?;
    g.write_record(["n", "t", "delta", "replications", "median_bias", "median_rmse"])?;
    for c in &report.cells {
        if let (Some(b), Some(r)) = (c.g_median_bias, c.g_median_rmse) {
            g.write_record([
                c.n.to_string(),
                c.t.to_string(),
                c.delta.to_string(),
                c.replications.to_string(),
                fmt(b),
                fmt(r),
            ])?;
        }
    }
    g.flush()?;

    let mut size = csv::Writer::from_path(dir.join("table_size.csv"))?;
    let mut power = csv::Writer::from_path(dir.join("power_curve.csv"))?;
    size.write_record(["n", "t", "replications", "method", "level", "rejection_rate"])?;
    power.write_record(["n", "t", "delta", "level", "rejection_rate"])?;
    for c in &report.cells {
        let method = match c.test_method {
            Some(PValueMethod::Bootstrap) => "bootstrap",
            Some(PValueMethod::Asymptotic) => "asymptotic",
            None => continue,
        };
        for rej in &c.rejections {
            if c.delta == 0.0 {
                size.write_record([
                    c.n.to_string(),
                    c.t.to_string(),
                    c.replications.to_string(),
                    method.into(),
                    rej.level.to_string(),
                    fmt(rej.rate),
                ])?;
            }
            power.write_record([
                c.n.to_string(),
                c.t.to_string(),
                c.delta.to_string(),
                rej.level.to_string(),
                fmt(rej.rate),
            ])?;
        }
    }
    size.flush()?;
    power.flush()?;

    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::NeumaierSum;

    #[test]
    fn noiseless_null_satisfies_dgp_algebra() {
        let spec = DgpSpec {
            noiseless: true,
            ..DgpSpec::new(5, 7, 0.0, 3)
        };
        let (ds, _) = generate(&spec).unwrap();
        for r in 0..ds.n_obs() {
            let (x, z, w) = (ds.x_row(r)[0], ds.x_row(r)[1], ds.w_row(r)[0]);
            assert!((ds.y()[r] - x - z + w * w - 2.0 * w).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic_and_z_is_time_only() {
        let spec = DgpSpec::new(6, 4, 0.5, 11);
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.time_only_flags(), &[false, true]);
        assert_eq!(a.detect_time_only_columns(), vec![1]);
    }

    #[test]
    fn moments_match_recipe() {
        let (ds, _) = generate(&DgpSpec::new(200, 200, 0.0, 5)).unwrap();
        let x = ds.x_column(0);
        let w = ds.w_column(0);
        let (mx, mw) = (mean(&x), mean(&w));
        let cov: f64 = x
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - mx) * (b - mw))
            .collect::<NeumaierSum>()
            .value()
            / (x.len() - 1) as f64;
        let corr = cov / (sample_sd(&x) * sample_sd(&w));
        let analytic = 0.5 * 1.09 / (1.09f64 * 1.2725).sqrt();
        assert!((corr - analytic).abs() < 0.05, "corr {corr} vs {analytic}");
    }

    #[test]
    fn alternative_only_changes_the_response() {
        let (a, _) = generate(&DgpSpec::new(4, 5, 0.0, 9)).unwrap();
        let (b, _) = generate(&DgpSpec::new(4, 5, 1.0, 9)).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.w(), b.w());
        for r in 0..a.n_obs() {
            let (x, z, w) = (a.x_row(r)[0], a.x_row(r)[1], a.w_row(r)[0]);
            assert!((b.y()[r] - a.y()[r] - (4.0 * x * x + z * z * z - 3.0 * w)).abs() < 1e-10);
        }
    }

    #[test]
    fn tiny_study_is_deterministic() {
        let mut cfg = StudyConfig::new(vec![8], vec![6], vec![0.0], 2, 0, 1);
        cfg.comparators = vec![Comparator::Naive, Comparator::Cce];
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(a, b);
        let c = &a.cells[0];
        assert!(c.g_median_rmse.unwrap() > 0.0);
        assert_eq!(c.rejections.len(), 3);
        assert_eq!(c.cce.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn naive_pooled_slope_is_biased_by_the_omitted_nonlinearity() {
        let mut cfg = StudyConfig::new(vec![30], vec![10], vec![0.0], 20, 0, 4);
        cfg.comparators = vec![Comparator::Naive];
        cfg.test = false;
        let c = &run_study(&cfg).unwrap().cells[0];
        let naive = c.naive.as_ref().unwrap()[0].bias_x100.abs();
        assert!(
            naive > 3.0 * c.beta[0].bias_x100.abs(),
            "naive {naive}, profile {}",
            c.beta[0].bias_x100
        );
    }

    #[test]
    fn malformed_grids_are_rejected() {
        assert!(StudyConfig::from_json("{\"n\": [10]}").is_err());
        assert!(StudyConfig::from_json("{\"n\": [10], \"t\": [5], \"replications\": 2, \"bogus\": 1}").is_err());
        assert!(StudyConfig::from_json("{\"n\": [10], \"t\": [5], \"delta\": [2.0], \"replications\": 2}").is_err());
        let ok = StudyConfig::from_json("{\"n\": [10], \"t\": [5], \"replications\": 2, \"comparators\": [\"naive\"]}")
            .unwrap();
        assert_eq!(ok.levels, vec![0.01, 0.05, 0.10]);
    }
}
