//! Model-based and jackknife variances, t intervals and Wald tests.
//!
//! All t-based inference uses `I − 2` degrees of freedom.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::estimators::{fit, EstimatorKind, FitOptions};
use crate::model::ObservedTrial;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceSource {
    ModelBased,
    Jackknife,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate<T> {
    pub lower: T,
    pub upper: T,
    pub level: f64,
    pub df: usize,
    pub variance_source: VarianceSource,
}

impl<T: Scalar> IntervalEstimate<T> {
    /// Whether `value` lies in the interval, allowing for rounding in
    /// zero-width intervals.
    pub fn covers(&self, value: T) -> bool {
        let slack = T::epsilon() * T::lit(16.0) * value.abs().max(self.lower.abs()).max(self.upper.abs());
        self.lower - slack <= value && value <= self.upper + slack
    }

    pub fn width(&self) -> T {
        self.upper - self.lower
    }
}

/// Degrees of freedom for `n_clusters` clusters.
pub fn degrees_of_freedom(n_clusters: usize) -> Result<usize> {
    if n_clusters < 3 {
        return Err(Error::invalid(format!(
            "t inference needs at least 3 clusters, got {n_clusters}"
        )));
    }
    Ok(n_clusters - 2)
}

fn t_dist(df: usize) -> StudentsT {
    StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom")
}

/// Two-sided critical value `t_{df, 1 − (1 − level)/2}`.
pub fn t_critical(level: f64, df: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    if df == 0 {
        return Err(Error::invalid("degrees of freedom must be positive"));
    }
    Ok(t_dist(df).inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Model-based variance of `δ̂`: the `(δ, δ)` entry of the inverse GLS
/// information, with `σ̂_w²` plugged in for the independence fits.
pub fn model_based_variance<T: Scalar>(
    trial: &ObservedTrial<T>,
    kind: EstimatorKind,
    options: &FitOptions<T>,
) -> Result<T> {
    let opts = FitOptions { jackknife: false, ..options.clone() };
    Ok(fit(trial, kind, &opts)?.model_based_var)
}

/// Leave-one-cluster-out jackknife variance with full refits; returns the
/// variance and the leave-one-out estimates in cluster-id order.
pub fn jackknife_variance<T: Scalar>(
    trial: &ObservedTrial<T>,
    kind: EstimatorKind,
    options: &FitOptions<T>,
) -> Result<(T, Vec<T>)> {
    let opts = FitOptions { jackknife: true, ..options.clone() };
    let f = fit(trial, kind, &opts)?;
    match (f.jackknife_var, f.jackknife_replicates) {
        (Some(v), Some(reps)) => Ok((v, reps)),
        _ => Err(Error::Estimation("jackknife replicates missing".into())),
    }
}

/// `((I−1)/I) Σ (δ̂₍₋ᵢ₎ − δ̄)²` centred at the mean of the replicates.
pub fn jackknife_from_replicates<T: Scalar>(replicates: &[T]) -> T {
    let n = T::from_count(replicates.len());
    if replicates.is_empty() {
        return T::zero();
    }
    // Shifting by the first replicate keeps identical replicates exactly at 0.
    let shift = replicates[0];
    let mean = replicates.iter().map(|&d| d - shift).sum::<T>() / n;
    let ss = replicates.iter().map(|&d| (d - shift - mean) * (d - shift - mean)).sum::<T>();
    (n - T::one()) / n * ss
}

pub fn confidence_interval<T: Scalar>(
    delta_hat: T,
    variance: T,
    n_clusters: usize,
    level: f64,
    source: VarianceSource,
) -> Result<IntervalEstimate<T>> {
    if !(variance >= T::zero()) {
        return Err(Error::invalid(format!("variance must be non-negative, got {variance}")));
    }
    let df = degrees_of_freedom(n_clusters)?;
    let half = T::lit(t_critical(level, df)?) * variance.sqrt();
    Ok(IntervalEstimate {
        lower: delta_hat - half,
        upper: delta_hat + half,
        level,
        df,
        variance_source: source,
    })
}

/// Two-sided p-value of `δ = 0`.
pub fn wald_test<T: Scalar>(delta_hat: T, variance: T, n_clusters: usize) -> Result<f64> {
    if !(variance >= T::zero()) {
        return Err(Error::invalid(format!("variance must be non-negative, got {variance}")));
    }
    let df = degrees_of_freedom(n_clusters)?;
    let d = delta_hat.to_f64_lossy();
    if d == 0.0 {
        return Ok(1.0);
    }
    let v = variance.to_f64_lossy();
    if v == 0.0 {
        return Ok(0.0);
    }
    let t = d.abs() / v.sqrt();
    Ok((2.0 * t_dist(df).sf(t)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_critical_table_value() {
        let ci = confidence_interval(0.0_f64, 1.0, 10, 0.95, VarianceSource::ModelBased).unwrap();
        assert!((ci.upper - 2.306004135).abs() < 1e-8);
        assert_eq!(ci.df, 8);
    }

    #[test]
    fn zero_variance_interval() {
        let ci = confidence_interval(0.3, 0.0, 5, 0.95, VarianceSource::Jackknife).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.3, 0.3));
        assert!(ci.covers(0.3));
        assert!(!ci.covers(0.31));
    }

    #[test]
    fn wald_edge_cases() {
        assert_eq!(wald_test(0.0, 1.0, 10).unwrap(), 1.0);
        assert_eq!(wald_test(0.5, 0.0, 10).unwrap(), 0.0);
        let t = t_critical(0.95, 8).unwrap();
        assert!((wald_test(t, 1.0, 10).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn jackknife_hand_value() {
        // mean 2.5, squared deviations sum 5, times 3/4.
        assert!((jackknife_from_replicates(&[1.0_f64, 2.0, 3.0, 4.0]) - 3.75).abs() < 1e-15);
        assert_eq!(jackknife_from_replicates(&[0.7, 0.7, 0.7]), 0.0);
    }
}
