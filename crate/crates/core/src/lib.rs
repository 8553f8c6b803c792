//! Analysis toolkit for parallel cluster randomized trials with a baseline
//! period (two periods, all clusters in control at baseline, half of the
//! clusters switching to treatment in the second period).
//!
//! The crate covers
//!
//! - closed-form inverses of exchangeable and nested-exchangeable cluster
//!   covariance blocks ([`model`]),
//! - the eight treatment-effect estimators (independence, two-way fixed
//!   effects, exchangeable and nested-exchangeable mixed models, each with and
//!   without inverse cluster-period size weights) together with REML variance
//!   components ([`estimators`]),
//! - model-based and leave-one-cluster-out jackknife inference ([`inference`]),
//! - exact participant- and cluster-average estimands and the probability
//!   limits of every estimator over a discrete superpopulation ([`oracle`]),
//! - a seeded Monte Carlo engine ([`sim`]) and file formats ([`io`]).
//!
//! All numerical code is generic over the floating-point type through
//! [`Scalar`]; the `*F64` aliases below cover the common case.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read closest to the textbook form of the small solvers.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod estimators;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod sim;

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use error::{Error, Result};
pub use estimators::{
    estimate_variance_components, fit, fit_many, fit_summary, fit_summary_many,
    gls_point_estimate, EstimatorKind, FitOptions, FitResult, RemlFit, RemlOptions,
};
pub use inference::{
    confidence_interval, jackknife_variance, model_based_variance, wald_test, IntervalEstimate,
    VarianceSource,
};
pub use model::{
    block_logdet, dense_block, eme_block_terms, neme_block_terms, BlockTerms, ClusterSummary,
    CorrelationStructure, ObservedTrial, Record, TrialSummary, VarianceComponents,
    WeightingScheme,
};
pub use linalg::SymMatrix;
pub use oracle::{
    emew_bias, estimand_weights, optimal_icc, optimal_sampling_prob, plim, true_cate, true_pate,
    EstimandWeights, PopulationMixture, Subpopulation, WeightScheme,
};
pub use sim::{generate_trial, run_study, SimReport, SimScenario};
pub use io::{parse_trial_csv, write_trial_csv};

/// Floating-point scalar used throughout the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type ObservedTrialF64 = ObservedTrial<f64>;
pub type TrialSummaryF64 = TrialSummary<f64>;
pub type VarianceComponentsF64 = VarianceComponents<f64>;
pub type BlockTermsF64 = BlockTerms<f64>;
pub type FitResultF64 = FitResult<f64>;
pub type PopulationMixtureF64 = PopulationMixture<f64>;
pub type SimScenarioF64 = SimScenario<f64>;
pub type SimReportF64 = SimReport<f64>;

pub type ObservedTrialF32 = ObservedTrial<f32>;
pub type VarianceComponentsF32 = VarianceComponents<f32>;
pub type FitResultF32 = FitResult<f32>;
