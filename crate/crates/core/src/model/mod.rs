//! Trial data, variance components and covariance-block algebra.

mod blocks;
mod trial;
mod variance;

pub use blocks::{
    block_logdet, cell_block, dense_block, eme_block_terms, neme_block_terms, BlockCache,
    BlockTerms, CellBlock,
};
pub use trial::{ClusterSummary, ObservedTrial, Record, TrialSummary};
pub use variance::{CorrelationStructure, VarianceComponents, WeightingScheme, MIN_RESIDUAL_SHARE};
