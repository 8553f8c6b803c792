use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gls::{fit_fixed_effects, fit_independence, fit_mixed, PointFit, DELTA};
use super::reml::{reml, RemlFit, RemlOptions};
use super::EstimatorKind;
use crate::inference::jackknife_from_replicates;
use crate::model::{CorrelationStructure, ObservedTrial, TrialSummary, VarianceComponents};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions<T> {
    /// Plug-in variance components for the mixed models; estimated by REML
    /// when absent.
    pub vc: Option<VarianceComponents<T>>,
    /// Also compute the leave-one-cluster-out jackknife variance.
    pub jackknife: bool,
    pub reml: RemlOptions,
}

impl<T> Default for FitOptions<T> {
    fn default() -> Self {
        Self { vc: None, jackknife: false, reml: RemlOptions::default() }
    }
}

impl<T: Scalar> FitOptions<T> {
    pub fn with_vc(vc: VarianceComponents<T>) -> Self {
        Self { vc: Some(vc), ..Self::default() }
    }

    pub fn with_jackknife() -> Self {
        Self { jackknife: true, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub kind: EstimatorKind,
    pub delta_hat: T,
    /// `(μ, δ, φ₁)`, followed by `α_2, …, α_I` for the fixed-effects fits
    /// (`α_1 = 0`, clusters in id order).
    pub theta_hat: Vec<T>,
    /// Variance components used by the mixed models.
    pub vc_hat: Option<VarianceComponents<T>>,
    /// Residual scale: `σ̂_w²` (weighted units for the weighted independence
    /// and fixed-effects fits).
    pub scale_hat: T,
    pub model_based_var: T,
    pub jackknife_var: Option<T>,
    pub jackknife_replicates: Option<Vec<T>>,
    pub n_clusters: usize,
    pub converged: bool,
}

/// Fits one estimator.
pub fn fit<T: Scalar>(
    trial: &ObservedTrial<T>,
    kind: EstimatorKind,
    options: &FitOptions<T>,
) -> Result<FitResult<T>> {
    fit_summary(&trial.summarize()?, kind, options)
}

pub fn fit_summary<T: Scalar>(
    summary: &TrialSummary<T>,
    kind: EstimatorKind,
    options: &FitOptions<T>,
) -> Result<FitResult<T>> {
    fit_summary_many(summary, &[kind], options).pop().expect("one result per kind")
}

/// Fits several estimators on one trial, sharing the REML fit of each
/// correlation structure between its weighted and unweighted estimators
/// (also inside every jackknife refit).
pub fn fit_many<T: Scalar>(
    trial: &ObservedTrial<T>,
    kinds: &[EstimatorKind],
    options: &FitOptions<T>,
) -> Result<Vec<Result<FitResult<T>>>> {
    Ok(fit_summary_many(&trial.summarize()?, kinds, options))
}

pub fn fit_summary_many<T: Scalar>(
    summary: &TrialSummary<T>,
    kinds: &[EstimatorKind],
    options: &FitOptions<T>,
) -> Vec<Result<FitResult<T>>> {
    let points = point_fits(summary, kinds, options);
    let jackknife = if options.jackknife {
        Some(jackknife_deltas(summary, kinds, options))
    } else {
        None
    };
    points
        .into_iter()
        .enumerate()
        .map(|(k, point)| {
            let (fit, reml) = point?;
            let (jackknife_var, jackknife_replicates) = match &jackknife {
                None => (None, None),
                Some(Err(e)) => return Err(duplicate(e)),
                Some(Ok(reps)) => {
                    let deltas = reps.iter().map(|r| r[k].as_ref().map(|v| *v).map_err(duplicate)).collect::<Result<Vec<T>>>()?;
                    (Some(jackknife_from_replicates(&deltas)), Some(deltas))
                }
            };
            Ok(FitResult {
                kind: kinds[k],
                delta_hat: fit.theta[DELTA],
                model_based_var: fit.var_delta.max(T::zero()),
                theta_hat: fit.theta,
                vc_hat: reml.map(|r| r.vc),
                scale_hat: fit.scale,
                jackknife_var,
                jackknife_replicates,
                n_clusters: summary.n_clusters(),
                converged: reml.is_none_or(|r| r.converged),
            })
        })
        .collect()
}

type PointResult<T> = Result<(PointFit<T>, Option<RemlFit<T>>)>;

fn point_fits<T: Scalar>(
    summary: &TrialSummary<T>,
    kinds: &[EstimatorKind],
    options: &FitOptions<T>,
) -> Vec<PointResult<T>> {
    let mut eme: Option<Result<RemlFit<T>>> = None;
    let mut neme: Option<Result<RemlFit<T>>> = None;
    kinds
        .iter()
        .map(|&kind| {
            let structure = kind.structure();
            let weighting = kind.weighting();
            match structure {
                CorrelationStructure::Independence => {
                    let fit = if kind.has_cluster_fixed_effects() {
                        fit_fixed_effects(summary, weighting)?
                    } else {
                        fit_independence(summary, weighting)?
                    };
                    Ok((fit, None))
                }
                _ => {
                    let reml_fit = match options.vc {
                        Some(vc) => {
                            let vc = if structure == CorrelationStructure::Exchangeable {
                                vc.without_period_effect()
                            } else {
                                vc
                            };
                            RemlFit { vc, converged: true, iterations: 0, objective: T::nan() }
                        }
                        None => {
                            let slot = if structure == CorrelationStructure::Exchangeable {
                                &mut eme
                            } else {
                                &mut neme
                            };
                            let r = slot.get_or_insert_with(|| reml(summary, structure, &options.reml));
                            r.as_ref().map(|r| *r).map_err(duplicate)?
                        }
                    };
                    let fit = fit_mixed(summary, structure, &reml_fit.vc, weighting)?;
                    Ok((fit, Some(reml_fit)))
                }
            }
        })
        .collect()
}

/// Leave-one-cluster-out estimates, indexed `[cluster][kind]`.
fn jackknife_deltas<T: Scalar>(
    summary: &TrialSummary<T>,
    kinds: &[EstimatorKind],
    options: &FitOptions<T>,
) -> Result<Vec<Vec<Result<T>>>> {
    let n = summary.n_clusters();
    if n < 3 {
        return Err(Error::invalid(format!("the jackknife needs at least 3 clusters, got {n}")));
    }
    let subtrials = (0..n).map(|i| summary.leave_out(i)).collect::<Result<Vec<_>>>()?;
    Ok(subtrials
        .par_iter()
        .map(|sub| {
            point_fits(sub, kinds, options)
                .into_iter()
                .map(|r| r.map(|(fit, _)| fit.theta[DELTA]))
                .collect()
        })
        .collect())
}

/// Copies an error that has to be reported for more than one estimator.
fn duplicate(e: &Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(m.clone()),
        Error::Parse { line, message } => Error::Parse { line: *line, message: message.clone() },
        Error::Degenerate(m) => Error::Degenerate(m.clone()),
        Error::Singular(m) => Error::Singular(m.clone()),
        Error::Unsupported(m) => Error::Unsupported(m.clone()),
        Error::Estimation(m) => Error::Estimation(m.clone()),
        Error::Study(m) => Error::Study(m.clone()),
        other => Error::Estimation(other.to_string()),
    }
}
