use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{CorrelationStructure, WeightingScheme};
use crate::Error;

/// The eight treatment-effect estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    /// Independence estimating equation (OLS with period and treatment).
    #[serde(rename = "IEE")]
    Iee,
    #[serde(rename = "IEEW", alias = "IEEw")]
    Ieew,
    /// Two-way fixed effects (cluster and period dummies).
    #[serde(rename = "FE")]
    Fe,
    #[serde(rename = "FEW", alias = "FEw")]
    Few,
    /// Exchangeable mixed-effects model.
    #[serde(rename = "EME")]
    Eme,
    #[serde(rename = "EMEW", alias = "EMEw")]
    Emew,
    /// Nested-exchangeable mixed-effects model.
    #[serde(rename = "NEME")]
    Neme,
    #[serde(rename = "NEMEW", alias = "NEMEw")]
    Nemew,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Iee,
        EstimatorKind::Ieew,
        EstimatorKind::Fe,
        EstimatorKind::Few,
        EstimatorKind::Eme,
        EstimatorKind::Emew,
        EstimatorKind::Neme,
        EstimatorKind::Nemew,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Iee => "IEE",
            EstimatorKind::Ieew => "IEEW",
            EstimatorKind::Fe => "FE",
            EstimatorKind::Few => "FEW",
            EstimatorKind::Eme => "EME",
            EstimatorKind::Emew => "EMEW",
            EstimatorKind::Neme => "NEME",
            EstimatorKind::Nemew => "NEMEW",
        }
    }

    pub fn structure(self) -> CorrelationStructure {
        match self {
            EstimatorKind::Iee | EstimatorKind::Ieew | EstimatorKind::Fe | EstimatorKind::Few => {
                CorrelationStructure::Independence
            }
            EstimatorKind::Eme | EstimatorKind::Emew => CorrelationStructure::Exchangeable,
            EstimatorKind::Neme | EstimatorKind::Nemew => CorrelationStructure::NestedExchangeable,
        }
    }

    pub fn weighting(self) -> WeightingScheme {
        match self {
            EstimatorKind::Ieew | EstimatorKind::Few | EstimatorKind::Emew | EstimatorKind::Nemew => {
                WeightingScheme::InverseClusterPeriodSize
            }
            _ => WeightingScheme::Unweighted,
        }
    }

    pub fn is_weighted(self) -> bool {
        self.weighting().is_weighted()
    }

    pub fn has_cluster_fixed_effects(self) -> bool {
        matches!(self, EstimatorKind::Fe | EstimatorKind::Few)
    }

    pub fn is_mixed(self) -> bool {
        self.structure() != CorrelationStructure::Independence
    }

    /// The same model without weights.
    pub fn unweighted(self) -> Self {
        match self {
            EstimatorKind::Ieew => EstimatorKind::Iee,
            EstimatorKind::Few => EstimatorKind::Fe,
            EstimatorKind::Emew => EstimatorKind::Eme,
            EstimatorKind::Nemew => EstimatorKind::Neme,
            k => k,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .ok_or_else(|| Error::invalid(format!("unknown estimator '{s}'")))
    }
}
