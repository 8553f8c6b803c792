use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Residual variance and the two cluster-level random-effect variances.
///
/// `tau_alpha2` is the cluster random intercept, `tau_gamma2` the
/// cluster-by-period interaction (zero for the exchangeable model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents<T> {
    pub sigma_w2: T,
    pub tau_alpha2: T,
    pub tau_gamma2: T,
}

/// Smallest admissible residual share of the total variance.
pub const MIN_RESIDUAL_SHARE: f64 = 1e-10;

impl<T: Scalar> VarianceComponents<T> {
    pub fn new(sigma_w2: T, tau_alpha2: T, tau_gamma2: T) -> Result<Self> {
        let vc = Self { sigma_w2, tau_alpha2, tau_gamma2 };
        vc.validate()?;
        Ok(vc)
    }

    pub fn exchangeable(sigma_w2: T, tau_alpha2: T) -> Result<Self> {
        Self::new(sigma_w2, tau_alpha2, T::zero())
    }

    pub fn independent(sigma_w2: T) -> Result<Self> {
        Self::new(sigma_w2, T::zero(), T::zero())
    }

    /// Exchangeable components with total variance `total` and ICC `rho`.
    pub fn from_icc(total: T, rho: T) -> Result<Self> {
        check_unit("rho", rho)?;
        Self::new(total * (T::one() - rho), total * rho, T::zero())
    }

    /// Nested-exchangeable components from the within-period ICC and the
    /// cluster autocorrelation `cac = rho_bp / rho_wp`.
    pub fn from_iccs(total: T, rho_wp: T, cac: T) -> Result<Self> {
        check_unit("rho_wp", rho_wp)?;
        if !(cac >= T::zero() && cac <= T::one()) {
            return Err(Error::invalid(format!("cac must lie in [0, 1], got {cac}")));
        }
        let cluster = total * rho_wp;
        Self::new(total * (T::one() - rho_wp), cluster * cac, cluster * (T::one() - cac))
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_w2, self.tau_alpha2, self.tau_gamma2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("variance components must be finite"));
        }
        if !(self.sigma_w2 > T::zero()) {
            return Err(Error::invalid(format!(
                "sigma_w2 must be positive, got {}",
                self.sigma_w2
            )));
        }
        if self.tau_alpha2 < T::zero() || self.tau_gamma2 < T::zero() {
            return Err(Error::invalid("tau_alpha2 and tau_gamma2 must be non-negative"));
        }
        Ok(())
    }

    /// Rejects components whose residual share is numerically zero; every
    /// closed-form denominator carries `sigma_w2`.
    pub fn check_nondegenerate(&self) -> Result<()> {
        self.validate()?;
        if self.sigma_w2 < T::lit(MIN_RESIDUAL_SHARE) * self.total() {
            return Err(Error::Degenerate(format!(
                "residual variance {:e} is negligible relative to total {:e}",
                self.sigma_w2,
                self.total()
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> T {
        self.sigma_w2 + self.tau_alpha2 + self.tau_gamma2
    }

    /// Exchangeable ICC, ignoring `tau_gamma2`.
    pub fn rho(&self) -> T {
        self.tau_alpha2 / (self.tau_alpha2 + self.sigma_w2)
    }

    pub fn rho_wp(&self) -> T {
        (self.tau_alpha2 + self.tau_gamma2) / self.total()
    }

    pub fn rho_bp(&self) -> T {
        self.tau_alpha2 / self.total()
    }

    /// Cluster autocorrelation; `None` when there is no cluster variance.
    pub fn cac(&self) -> Option<T> {
        let wp = self.tau_alpha2 + self.tau_gamma2;
        (wp > T::zero()).then(|| self.tau_alpha2 / wp)
    }

    /// Same components with the period interaction dropped.
    pub fn without_period_effect(&self) -> Self {
        Self { tau_gamma2: T::zero(), ..*self }
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            sigma_w2: self.sigma_w2 * c,
            tau_alpha2: self.tau_alpha2 * c,
            tau_gamma2: self.tau_gamma2 * c,
        }
    }

    pub fn cast<U: Scalar>(&self) -> VarianceComponents<U> {
        VarianceComponents {
            sigma_w2: U::lit(self.sigma_w2.to_f64_lossy()),
            tau_alpha2: U::lit(self.tau_alpha2.to_f64_lossy()),
            tau_gamma2: U::lit(self.tau_gamma2.to_f64_lossy()),
        }
    }
}

fn check_unit<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v >= T::zero() && v < T::one() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1), got {v}")))
    }
}

/// Working correlation of the outcomes within a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorrelationStructure {
    Independence,
    Exchangeable,
    NestedExchangeable,
}

/// How clusters are weighted in the estimating equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightingScheme {
    Unweighted,
    /// Cluster weight `K_i` for the correlated models, cell weight `1/K_ij`
    /// for the independence and fixed-effects fits.
    InverseClusterPeriodSize,
}

impl WeightingScheme {
    pub fn is_weighted(self) -> bool {
        matches!(self, WeightingScheme::InverseClusterPeriodSize)
    }
}
