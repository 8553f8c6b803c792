//! Exact estimands and probability limits over a discrete superpopulation of
//! cluster types.
//!
//! Each type `u` has probability `p_u`, cluster-period sizes `(K_u0, K_u1)`
//! and cluster-specific treatment effect `δ_u`. Every estimator converges to
//! a weighted mean `Σ p_u ω_u δ_u / Σ p_u ω_u`; only the weight `ω_u` differs.

use serde::{Deserialize, Serialize};

use crate::estimators::EstimatorKind;
use crate::model::VarianceComponents;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subpopulation<T> {
    pub p: T,
    pub k0: T,
    pub k1: T,
    pub delta: T,
}

impl<T: Scalar> Subpopulation<T> {
    /// Equal sizes `k` in both periods.
    pub fn new(p: T, k: T, delta: T) -> Self {
        Self { p, k0: k, k1: k, delta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMixture<T> {
    pub subpops: Vec<Subpopulation<T>>,
}

impl<T: Scalar> PopulationMixture<T> {
    pub fn new(subpops: Vec<Subpopulation<T>>) -> Result<Self> {
        if subpops.is_empty() {
            return Err(Error::invalid("a mixture needs at least one subpopulation"));
        }
        for s in &subpops {
            if !(s.p > T::zero()) || !s.p.is_finite() {
                return Err(Error::invalid(format!("subpopulation probability {} must be positive", s.p)));
            }
            if !(s.k0 >= T::one() && s.k1 >= T::one()) || !s.k0.is_finite() || !s.k1.is_finite() {
                return Err(Error::invalid("cluster-period sizes must be at least 1"));
            }
            if !s.delta.is_finite() {
                return Err(Error::invalid("treatment effects must be finite"));
            }
        }
        let total: T = subpops.iter().map(|s| s.p).sum();
        let tol = T::lit(1e-12).max(T::epsilon() * T::from_count(8 * subpops.len()));
        if (total - T::one()).abs() > tol {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { subpops })
    }

    pub fn single(k: T, delta: T) -> Result<Self> {
        Self::new(vec![Subpopulation::new(T::one(), k, delta)])
    }

    pub fn two_point(p1: T, k1: T, k2: T, delta1: T, delta2: T) -> Result<Self> {
        Self::new(vec![
            Subpopulation::new(p1, k1, delta1),
            Subpopulation::new(T::one() - p1, k2, delta2),
        ])
    }

    /// Sizes drawn from a zero-truncated Poisson within each component,
    /// enumerated exactly up to a negligible tail. `components` holds
    /// `(p_u, mean_u, δ_u)`; the size is shared by both periods.
    pub fn zero_truncated_poisson(components: &[(T, T, T)]) -> Result<Self> {
        let mut subpops = Vec::new();
        for &(p, lambda, delta) in components {
            for (k, pk) in zero_truncated_poisson_pmf(lambda.to_f64_lossy())? {
                subpops.push(Subpopulation::new(p * T::lit(pk), T::from_count(k), delta));
            }
        }
        Self::new(subpops)
    }

    pub fn all_equal_periods(&self) -> bool {
        self.subpops.iter().all(|s| s.k0 == s.k1)
    }

    pub fn all_equal_sizes(&self) -> bool {
        let first = self.subpops[0];
        self.subpops.iter().all(|s| s.k0 == first.k0 && s.k1 == first.k1)
    }

    fn weighted_mean(&self, weight: impl Fn(&Subpopulation<T>) -> T) -> T {
        let (num, den) = self.subpops.iter().fold((T::zero(), T::zero()), |(n, d), s| {
            let w = s.p * weight(s);
            (n + w * s.delta, d + w)
        });
        num / den
    }
}

/// Probabilities of a Poisson(λ) variable conditioned on being positive,
/// truncated where the remaining mass is below 1e-16 and renormalized.
pub fn zero_truncated_poisson_pmf(lambda: f64) -> Result<Vec<(usize, f64)>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("Poisson mean must be positive, got {lambda}")));
    }
    let mode = lambda.floor().max(1.0) as usize;
    let ln_pmf = |k: usize| {
        let kf = k as f64;
        kf * lambda.ln() - lambda - ln_factorial(k)
    };
    let mut out = Vec::new();
    let mut k = 1usize;
    loop {
        let pk = ln_pmf(k).exp();
        if pk > 0.0 {
            out.push((k, pk));
        }
        if k > mode && pk < 1e-18 {
            break;
        }
        k += 1;
    }
    let total: f64 = out.iter().map(|x| x.1).sum();
    out.retain(|x| x.1 / total > 1e-17);
    let total: f64 = out.iter().map(|x| x.1).sum();
    Ok(out.into_iter().map(|(k, p)| (k, p / total)).collect())
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Participant-average treatment effect `Σ p_u K_u1 δ_u / Σ p_u K_u1`.
pub fn true_pate<T: Scalar>(mix: &PopulationMixture<T>) -> T {
    mix.weighted_mean(|s| s.k1)
}

/// Cluster-average treatment effect `Σ p_u δ_u`.
pub fn true_cate<T: Scalar>(mix: &PopulationMixture<T>) -> T {
    mix.weighted_mean(|_| T::one())
}

/// Size factor of the exchangeable model, `(1+(K−1)ρ)/(1+(2K−1)ρ)`.
pub fn g_exchangeable<T: Scalar>(k: T, rho: T) -> T {
    let one = T::one();
    (one + (k - one) * rho) / (one + (T::lit(2.0) * k - one) * rho)
}

/// Size factor of the nested model,
/// `(1+(K−1)ρ_wp)/((1+(K−1)ρ_wp)² − K²ρ_bp²)`.
pub fn g_nested<T: Scalar>(k: T, rho_wp: T, rho_bp: T) -> T {
    let a = T::one() + (k - T::one()) * rho_wp;
    a / (a * a - k * k * rho_bp * rho_bp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightScheme {
    #[serde(rename = "emew")]
    Emew,
    #[serde(rename = "nemew")]
    Nemew,
}

fn size_factor<T: Scalar>(scheme: WeightScheme, k: T, vc: &VarianceComponents<T>) -> T {
    match scheme {
        WeightScheme::Emew => g_exchangeable(k, vc.rho()),
        WeightScheme::Nemew => g_nested(k, vc.rho_wp(), vc.rho_bp()),
    }
}

fn require_vc<T>(kind: EstimatorKind, vc: Option<&VarianceComponents<T>>) -> Result<&VarianceComponents<T>> {
    vc.ok_or_else(|| Error::invalid(format!("{kind} limit needs variance components")))
}

/// Probability limit of an estimator as the number of clusters grows, with
/// `vc` the limit of the working variance components of the mixed models.
pub fn plim<T: Scalar>(
    kind: EstimatorKind,
    mix: &PopulationMixture<T>,
    vc: Option<&VarianceComponents<T>>,
) -> Result<T> {
    if kind.is_mixed() && !mix.all_equal_periods() {
        return Err(Error::Unsupported(format!(
            "{kind} limit requires equal cluster-period sizes"
        )));
    }
    let scheme = match kind.structure() {
        crate::model::CorrelationStructure::Exchangeable => WeightScheme::Emew,
        _ => WeightScheme::Nemew,
    };
    Ok(match kind {
        EstimatorKind::Iee => true_pate(mix),
        EstimatorKind::Ieew | EstimatorKind::Few => true_cate(mix),
        EstimatorKind::Fe => mix.weighted_mean(|s| s.k0 * s.k1 / (s.k0 + s.k1)),
        EstimatorKind::Eme | EstimatorKind::Neme => {
            let vc = require_vc(kind, vc)?;
            vc.validate()?;
            mix.weighted_mean(|s| s.k1 * size_factor(scheme, s.k1, vc))
        }
        EstimatorKind::Emew | EstimatorKind::Nemew => {
            let vc = require_vc(kind, vc)?;
            vc.validate()?;
            mix.weighted_mean(|s| size_factor(scheme, s.k1, vc))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandWeights<T> {
    pub scheme: WeightScheme,
    pub lambda: Vec<T>,
}

/// Estimand weights `λ_u = g(K_u) / Σ p_v g(K_v)` of the weighted mixed
/// models, so that their limit is `Σ p_u λ_u δ_u`.
pub fn estimand_weights<T: Scalar>(
    scheme: WeightScheme,
    mix: &PopulationMixture<T>,
    vc: &VarianceComponents<T>,
) -> Result<EstimandWeights<T>> {
    if !mix.all_equal_periods() {
        return Err(Error::Unsupported("estimand weights require equal cluster-period sizes".into()));
    }
    vc.validate()?;
    let g: Vec<T> = mix.subpops.iter().map(|s| size_factor(scheme, s.k1, vc)).collect();
    let norm: T = mix.subpops.iter().zip(&g).map(|(s, &g)| s.p * g).sum();
    Ok(EstimandWeights { scheme, lambda: g.into_iter().map(|g| g / norm).collect() })
}

/// One row of a weight curve over the ICC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPoint<T> {
    /// `ρ` for the exchangeable scheme, `ρ_wp` for the nested one.
    pub rho: T,
    pub lambda1: T,
    pub lambda2: T,
}

/// Estimand weights of a two-type mixture along a grid of ICC values; the
/// nested scheme uses `ρ_bp = cac · ρ_wp`.
pub fn weight_curve<T: Scalar>(
    scheme: WeightScheme,
    k1: T,
    k2: T,
    p1: T,
    cac: T,
    rhos: &[T],
) -> Result<Vec<WeightPoint<T>>> {
    let mix = PopulationMixture::two_point(p1, k1, k2, T::zero(), T::zero())?;
    rhos.iter()
        .map(|&rho| {
            let vc = match scheme {
                WeightScheme::Emew => VarianceComponents::from_icc(T::one(), rho)?,
                WeightScheme::Nemew => VarianceComponents::from_iccs(T::one(), rho, cac)?,
            };
            let w = estimand_weights(scheme, &mix, &vc)?;
            Ok(WeightPoint { rho, lambda1: w.lambda[0], lambda2: w.lambda[1] })
        })
        .collect()
}

/// ICC at which the gap between the exchangeable estimand weights of two
/// cluster sizes is largest: `1/(1+√(2 K1 K2))`.
pub fn optimal_icc<T: Scalar>(k1: T, k2: T) -> T {
    T::one() / (T::one() + (T::lit(2.0) * k1 * k2).sqrt())
}

/// Probability of the first type that maximizes the weighted exchangeable
/// estimator's bias, `√g₂/(√g₁+√g₂)`.
pub fn optimal_sampling_prob<T: Scalar>(k1: T, k2: T, rho: T) -> T {
    let r1 = g_exchangeable(k1, rho).sqrt();
    let r2 = g_exchangeable(k2, rho).sqrt();
    r2 / (r1 + r2)
}

/// Bias of the weighted exchangeable estimator relative to the cATE for a
/// two-type mixture with effects `delta1`, `delta2`:
/// `P(1−P)(g₁−g₂)(δ₁−δ₂)/(P g₁ + (1−P) g₂)`.
pub fn emew_bias<T: Scalar>(mix2: &PopulationMixture<T>, rho: T, delta1: T, delta2: T) -> Result<T> {
    if mix2.subpops.len() != 2 {
        return Err(Error::invalid("the bias formula needs exactly two subpopulations"));
    }
    if !mix2.all_equal_periods() {
        return Err(Error::Unsupported("the bias formula requires equal cluster-period sizes".into()));
    }
    let p = mix2.subpops[0].p;
    let q = T::one() - p;
    let g1 = g_exchangeable(mix2.subpops[0].k1, rho);
    let g2 = g_exchangeable(mix2.subpops[1].k1, rho);
    Ok(p * q * (g1 - g2) * (delta1 - delta2) / (p * g1 + q * g2))
}
