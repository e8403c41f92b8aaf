//! Pooled comparators: naive OLS that ignores the factor structure, and the
//! pooled common-correlated-effects (CCE) estimator that proxies the factors
//! with cross-sectional averages `ȳ_t`, `x̄_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{cluster_sandwich, coefficient_table, Coefficient, DESIGN_FLOOR};
use crate::linalg::{gram, gram_rhs, ScaledCholesky};
use crate::panel::PanelDataset;

/// Pooled least-squares fit with unit-clustered standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Row-major covariance over all coefficients.
    pub vcov: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Position of the first x coefficient; the x block has length `d_x`.
    pub slope_offset: usize,
    pub d_x: usize,
}

impl PooledFit {
    /// Coefficients on the original x columns.
    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[self.slope_offset..self.slope_offset + self.d_x]
    }

    pub fn table(&self) -> Vec<Coefficient> {
        coefficient_table(&self.names, &self.coefficients, &self.vcov)
    }
}

fn pooled_ols(
    design: Vec<f64>,
    k: usize,
    y: &[f64],
    names: Vec<String>,
    n_periods: usize,
    slope_offset: usize,
    d_x: usize,
) -> Result<PooledFit> {
    let n = y.len();
    if n <= k {
        return Err(Error::InvalidArgument(format!(
            "pooled regression needs more than {k} observations, got {n}"
        )));
    }
    let g = gram(&design, n, k);
    let chol = ScaledCholesky::factor(&g, k, DESIGN_FLOOR).map_err(|e| {
        Error::SingularDesign(format!(
            "regressor `{}` is collinear with earlier columns",
            names[e.pivot]
        ))
    })?;
    let coefficients = chol.solve(&gram_rhs(&design, y, n, k));
    let residuals: Vec<f64> = (0..n)
        .map(|r| {
            let row = &design[r * k..(r + 1) * k];
            y[r] - row.iter().zip(&coefficients).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let vcov = cluster_sandwich(&design, &residuals, k, n_periods, &chol.inverse());
    Ok(PooledFit {
        names,
        coefficients,
        vcov,
        residuals,
        slope_offset,
        d_x,
    })
}

/// Pooled OLS of `y` on `[1, x]`.
pub fn naive_fit(ds: &PanelDataset) -> Result<PooledFit> {
    let k = 1 + ds.d_x();
    let mut design = Vec::with_capacity(ds.n_obs() * k);
    for r in 0..ds.n_obs() {
        design.push(1.0);
        design.extend_from_slice(ds.x_row(r));
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend(ds.x_names().iter().cloned());
    pooled_ols(design, k, ds.y(), names, ds.n_periods(), 1, ds.d_x())
}

/// Pooled CCE: OLS of `y` on `[1, x, ȳ_t, x̄_t]`, reporting the x block.
pub fn cce_pooled_fit(ds: &PanelDataset) -> Result<PooledFit> {
    let (n_units, n_periods, d_x) = (ds.n_units(), ds.n_periods(), ds.d_x());
    if n_units < d_x + 2 {
        return Err(Error::InvalidArgument(format!(
            "pooled CCE needs at least d_x + 2 = {} units, got {n_units}",
            d_x + 2
        )));
    }
    if let Some(&c) = ds.detect_time_only_columns().first() {
        return Err(Error::SingularDesign(format!(
            "regressor `{}` varies over time only and is identical to its own cross-sectional \
             average; individual-invariant regressors are not identified by pooled CCE",
            ds.x_names()[c]
        )));
    }
    let mut y_bar = vec![0.0; n_periods];
    let mut x_bar = vec![0.0; n_periods * d_x];
    for i in 0..n_units {
        for t in 0..n_periods {
            let r = ds.row(i, t);
            y_bar[t] += ds.y()[r] / n_units as f64;
            for (c, v) in ds.x_row(r).iter().enumerate() {
                x_bar[t * d_x + c] += v / n_units as f64;
            }
        }
    }
    let k = 2 + 2 * d_x;
    let mut design = Vec::with_capacity(ds.n_obs() * k);
    for r in 0..ds.n_obs() {
        let t = r % n_periods;
        design.push(1.0);
        design.extend_from_slice(ds.x_row(r));
        design.push(y_bar[t]);
        design.extend_from_slice(&x_bar[t * d_x..(t + 1) * d_x]);
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend(ds.x_names().iter().cloned());
    names.push(format!("mean({})", ds.y_name()));
    names.extend(ds.x_names().iter().map(|x| format!("mean({x})")));
    pooled_ols(design, k, ds.y(), names, n_periods, 1, d_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel(seed: u64, n: usize, t: usize, d_x: usize, noise: f64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * t * d_x).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n * t)
            .map(|r| {
                0.5 + (0..d_x).map(|c| (c as f64 + 1.0) * x[r * d_x + c]).sum::<f64>()
                    + noise * rng.random_range(-1.0..1.0)
            })
            .collect();
        PanelDataset::new(n, t, y, x, d_x, w, 1).unwrap()
    }

    /// Normal-equations oracle through nalgebra's QR.
    fn oracle(design: &[f64], k: usize, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let a = nalgebra::DMatrix::from_row_slice(n, k, design);
        let b = nalgebra::DVector::from_column_slice(y);
        let ata = a.transpose() * &a;
        let atb = a.transpose() * b;
        ata.qr().solve(&atb).unwrap().iter().copied().collect()
    }

    #[test]
    fn naive_recovers_exact_linear_model() {
        let ds = panel(1, 6, 5, 2, 0.0);
        let f = naive_fit(&ds).unwrap();
        assert!((f.coefficients[0] - 0.5).abs() < 1e-12);
        assert!((f.slopes()[0] - 1.0).abs() < 1e-12 && (f.slopes()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn naive_matches_oracle() {
        let ds = panel(2, 7, 4, 2, 1.0);
        let f = naive_fit(&ds).unwrap();
        let design: Vec<f64> = (0..ds.n_obs())
            .flat_map(|r| std::iter::once(1.0).chain(ds.x_row(r).iter().copied()))
            .collect();
        for (a, b) in f.coefficients.iter().zip(oracle(&design, 3, ds.y())) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn duplicated_column_is_singular() {
        let ds = panel(3, 5, 4, 1, 1.0);
        let x: Vec<f64> = ds.x().iter().flat_map(|&v| [v, v]).collect();
        let dup = PanelDataset::new(5, 4, ds.y().to_vec(), x, 2, ds.w().to_vec(), 1).unwrap();
        assert!(matches!(naive_fit(&dup), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn cce_matches_augmented_oracle() {
        let ds = panel(4, 8, 6, 2, 1.0);
        let f = cce_pooled_fit(&ds).unwrap();
        let (n, t) = (8, 6);
        let mut design = Vec::new();
        for i in 0..n {
            for s in 0..t {
                let r = i * t + s;
                let ybar: f64 = (0..n).map(|j| ds.y()[j * t + s]).sum::<f64>() / n as f64;
                let xbar: Vec<f64> = (0..2)
                    .map(|c| (0..n).map(|j| ds.x()[(j * t + s) * 2 + c]).sum::<f64>() / n as f64)
                    .collect();
                design.extend([1.0, ds.x()[r * 2], ds.x()[r * 2 + 1], ybar, xbar[0], xbar[1]]);
            }
        }
        for (a, b) in f.coefficients.iter().zip(oracle(&design, 6, ds.y())) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
        assert_eq!(f.slopes().len(), 2);
    }

    #[test]
    fn cce_rejects_time_only_regressor() {
        let ds = panel(5, 6, 5, 1, 1.0);
        let x: Vec<f64> = (0..ds.n_obs()).flat_map(|r| [ds.x()[r], (r % 5) as f64]).collect();
        let with_z = PanelDataset::new(6, 5, ds.y().to_vec(), x, 2, ds.w().to_vec(), 1).unwrap();
        match cce_pooled_fit(&with_z) {
            Err(Error::SingularDesign(msg)) => assert!(msg.contains("x2") && msg.contains("time only")),
            other => panic!("expected SingularDesign, got {other:?}"),
        }
        assert!(matches!(
            cce_pooled_fit(&panel(6, 3, 5, 2, 1.0)),
            Err(Error::InvalidArgument(_))
        ));
    }
}
