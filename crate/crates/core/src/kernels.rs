//! Epanechnikov kernel, product kernels and rule-of-thumb bandwidths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sample_sd;
use crate::panel::PanelDataset;

/// Half-width of the kernel support: `k(u) = 0` for `|u| >= SUPPORT_RADIUS`.
pub const SUPPORT_RADIUS: f64 = 1.0;

/// `∫ u² k(u) du` for the Epanechnikov kernel.
pub const EPANECHNIKOV_MU2: f64 = 0.2;
/// `∫ k(u)² du` for the Epanechnikov kernel.
pub const EPANECHNIKOV_NU0: f64 = 0.6;
/// `∫ u² k(u)² du` for the Epanechnikov kernel.
pub const EPANECHNIKOV_NU2: f64 = 3.0 / 35.0;

/// Rule-of-thumb constant for the Epanechnikov kernel.
pub const SILVERMAN_CONSTANT: f64 = 2.345;

#[inline]
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= SUPPORT_RADIUS {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// `∏ k(v_l / h_l)`. No `1/h` normalization is applied here; call sites
/// either divide by `∏ h_l` themselves or fold it into their weights.
pub fn product_kernel(v: &[f64], h: &[f64]) -> Result<f64> {
    if v.len() != h.len() {
        return Err(Error::DimensionMismatch {
            what: "product_kernel bandwidths",
            expected: v.len(),
            got: h.len(),
        });
    }
    if let Some(bad) = h.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive and finite, got {bad}"
        )));
    }
    Ok(product_kernel_unchecked(v, h))
}

/// Same as [`product_kernel`] with the checks hoisted out; exits at the first
/// coordinate outside the support.
#[inline]
pub(crate) fn product_kernel_unchecked(v: &[f64], h: &[f64]) -> f64 {
    let mut k = 1.0;
    for (vl, hl) in v.iter().zip(h) {
        let u = vl / hl;
        if u.abs() >= SUPPORT_RADIUS {
            return 0.0;
        }
        k *= 0.75 * (1.0 - u * u);
    }
    k
}

/// `h = 2.345 σ n^{-1/5}`.
pub fn silverman_bandwidth(sample_sd: f64, n_obs: usize) -> Result<f64> {
    check_scale(sample_sd, n_obs)?;
    Ok(SILVERMAN_CONSTANT * sample_sd * (n_obs as f64).powf(-0.2))
}

/// Default per-coordinate test bandwidth `2.345 σ n^{-2/(d+4)}`, undersmoothed
/// relative to the `d`-dimensional rate.
pub fn default_test_bandwidth(sample_sd: f64, n_obs: usize, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("test dimension d must be at least 1".into()));
    }
    check_scale(sample_sd, n_obs)?;
    Ok(SILVERMAN_CONSTANT * sample_sd * (n_obs as f64).powf(-2.0 / (d as f64 + 4.0)))
}

fn check_scale(sample_sd: f64, n_obs: usize) -> Result<()> {
    if n_obs < 2 {
        return Err(Error::InvalidArgument(format!(
            "bandwidth rule needs at least 2 observations, got {n_obs}"
        )));
    }
    if sample_sd == 0.0 {
        return Err(Error::DegenerateScale);
    }
    if !(sample_sd > 0.0) || !sample_sd.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sample standard deviation must be positive and finite, got {sample_sd}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandwidthSource {
    RuleOfThumb,
    UserSupplied,
}

/// Estimation bandwidths (one per `w` coordinate) and test bandwidths (one per
/// coordinate of `χ = (x, w)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSpec {
    pub h_est: Vec<f64>,
    pub h_test: Vec<f64>,
    pub source: BandwidthSource,
}

impl BandwidthSpec {
    /// Silverman bandwidths for `w`, [`default_test_bandwidth`] for `χ`.
    pub fn rule_of_thumb(ds: &PanelDataset) -> Result<Self> {
        Ok(Self {
            h_est: rule_of_thumb_estimation(ds)?,
            h_test: rule_of_thumb_test(ds)?,
            source: BandwidthSource::RuleOfThumb,
        })
    }

    pub fn user_supplied(ds: &PanelDataset, h_est: Vec<f64>, h_test: Vec<f64>) -> Result<Self> {
        let spec = Self {
            h_est,
            h_test,
            source: BandwidthSource::UserSupplied,
        };
        spec.validate(ds)?;
        Ok(spec)
    }

    /// Accepts `None` for "use the rule of thumb" on either component. A single
    /// supplied value is broadcast to every coordinate.
    pub fn resolve(ds: &PanelDataset, h_est: Option<&[f64]>, h_test: Option<&[f64]>) -> Result<Self> {
        let any_user = h_est.is_some() || h_test.is_some();
        let h_est = match h_est {
            Some(h) => broadcast(h, ds.d_w(), "estimation bandwidth")?,
            None => rule_of_thumb_estimation(ds)?,
        };
        let h_test = match h_test {
            Some(h) => broadcast(h, ds.d_x() + ds.d_w(), "test bandwidth")?,
            None => rule_of_thumb_test(ds)?,
        };
        let spec = Self {
            h_est,
            h_test,
            source: if any_user {
                BandwidthSource::UserSupplied
            } else {
                BandwidthSource::RuleOfThumb
            },
        };
        spec.validate(ds)?;
        Ok(spec)
    }

    pub fn validate(&self, ds: &PanelDataset) -> Result<()> {
        if self.h_est.len() != ds.d_w() {
            return Err(Error::DimensionMismatch {
                what: "estimation bandwidths",
                expected: ds.d_w(),
                got: self.h_est.len(),
            });
        }
        if self.h_test.len() != ds.d_x() + ds.d_w() {
            return Err(Error::DimensionMismatch {
                what: "test bandwidths",
                expected: ds.d_x() + ds.d_w(),
                got: self.h_test.len(),
            });
        }
        validate_positive(&self.h_est)?;
        validate_positive(&self.h_test)
    }
}

pub(crate) fn validate_positive(h: &[f64]) -> Result<()> {
    match h.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
        Some(bad) => Err(Error::InvalidArgument(format!(
            "bandwidths must be positive and finite, got {bad}"
        ))),
        None => Ok(()),
    }
}

fn broadcast(h: &[f64], d: usize, what: &'static str) -> Result<Vec<f64>> {
    match h.len() {
        1 => Ok(vec![h[0]; d]),
        n if n == d => Ok(h.to_vec()),
        n => Err(Error::DimensionMismatch {
            what,
            expected: d,
            got: n,
        }),
    }
}

fn rule_of_thumb_estimation(ds: &PanelDataset) -> Result<Vec<f64>> {
    (0..ds.d_w())
        .map(|c| silverman_bandwidth(sample_sd(&ds.w_column(c)), ds.n_obs()))
        .collect()
}

fn rule_of_thumb_test(ds: &PanelDataset) -> Result<Vec<f64>> {
    let d = ds.d_x() + ds.d_w();
    let x = (0..ds.d_x()).map(|c| ds.x_column(c));
    let w = (0..ds.d_w()).map(|c| ds.w_column(c));
    x.chain(w)
        .map(|col| default_test_bandwidth(sample_sd(&col), ds.n_obs(), d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn epanechnikov_values() {
        assert_eq!(epanechnikov(0.0), 0.75);
        assert_eq!(epanechnikov(1.0), 0.0);
        assert_eq!(epanechnikov(-1.0), 0.0);
        assert_eq!(epanechnikov(0.5), 0.5625);
        assert_eq!(epanechnikov(1.5), 0.0);
    }

    #[test]
    fn product_kernel_values() {
        assert_eq!(product_kernel(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.5625);
        assert_eq!(product_kernel(&[2.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        let k = product_kernel(&[0.3, -0.3], &[1.0, 1.0]).unwrap();
        assert!((k - epanechnikov(0.3).powi(2)).abs() < 1e-16);
        assert!(matches!(
            product_kernel(&[0.0], &[1.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(product_kernel(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn kernel_moments_by_quadrature() {
        // Composite Simpson on [-1, 1].
        let n = 20_000;
        let step = 2.0 / n as f64;
        let simpson = |f: &dyn Fn(f64) -> f64| {
            let mut s = f(-1.0) + f(1.0);
            for i in 1..n {
                let u = -1.0 + i as f64 * step;
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(u);
            }
            s * step / 3.0
        };
        assert!((simpson(&epanechnikov) - 1.0).abs() < 1e-6);
        assert!((simpson(&|u| u * epanechnikov(u))).abs() < 1e-12);
        assert!((simpson(&|u| u * u * epanechnikov(u)) - EPANECHNIKOV_MU2).abs() < 1e-8);
        assert!((simpson(&|u| epanechnikov(u).powi(2)) - EPANECHNIKOV_NU0).abs() < 1e-8);
        assert!((simpson(&|u| (u * epanechnikov(u)).powi(2)) - EPANECHNIKOV_NU2).abs() < 1e-8);
    }

    #[test]
    fn silverman_values() {
        assert!((silverman_bandwidth(1.0, 100_000).unwrap() - 0.2345).abs() < 1e-12);
        assert!((silverman_bandwidth(2.0, 32).unwrap() - 2.345).abs() < 1e-12);
        assert_eq!(silverman_bandwidth(0.0, 100), Err(Error::DegenerateScale));
    }

    #[test]
    fn test_bandwidth_values() {
        // 1024^{-1/3} = 2^{-10/3}
        let expected = 2.345 * 2f64.powf(-10.0 / 3.0);
        let h = default_test_bandwidth(1.0, 1024, 2).unwrap();
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 0.2326).abs() < 1e-4);
        assert!((default_test_bandwidth(1.0, 100_000, 1).unwrap() - 0.02345).abs() < 1e-12);
        assert!(default_test_bandwidth(1.0, 100, 0).is_err());
        assert_eq!(default_test_bandwidth(0.0, 100, 2), Err(Error::DegenerateScale));
    }

    proptest! {
        #[test]
        fn epanechnikov_is_symmetric_and_nonnegative(u in -3.0f64..3.0) {
            prop_assert_eq!(epanechnikov(u), epanechnikov(-u));
            prop_assert!(epanechnikov(u) >= 0.0 && epanechnikov(u) <= 0.75);
        }

        #[test]
        fn product_kernel_is_permutation_equivariant(
            v in proptest::collection::vec(-1.5f64..1.5, 3),
            h in proptest::collection::vec(0.1f64..2.0, 3),
        ) {
            let a = product_kernel(&v, &h).unwrap();
            let b = product_kernel(&[v[2], v[0], v[1]], &[h[2], h[0], h[1]]).unwrap();
            prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }

        #[test]
        fn silverman_is_homogeneous(sd in 0.01f64..100.0, c in 0.01f64..100.0, n in 2usize..10_000) {
            let a = silverman_bandwidth(c * sd, n).unwrap();
            let b = c * silverman_bandwidth(sd, n).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b);
        }
    }
}
