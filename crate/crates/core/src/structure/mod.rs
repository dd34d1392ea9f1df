//! Structure learning: pairwise statistics, Chow-Liu trees, information
//! distances, recursive grouping, the unidimensionality test and bridged
//! islands.

mod chow_liu;
mod distance;
mod grouping;
mod islands;
pub(crate) mod mi;
mod search;

use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{Error, Result};

pub use chow_liu::chow_liu;
pub use distance::{additivity_check, distance_from_joint, information_distance, InformationDistanceMatrix};
pub use grouping::{clrg, recursive_grouping, LocalTree};
pub use islands::{
    bridge_islands, bridged_islands, build_islands, unidimensionality_test, Island, UnidimensionalityOutcome,
};
pub use mi::{empirical_mutual_information, format_matrix, mi_of_counts};
pub use search::search_cardinalities;

pub(crate) use islands::build_islands_named;
pub(crate) use search::fresh_names;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructureConfig {
    pub em: EmConfig,
    /// Pseudo-count added to every cell of the pairwise tables behind
    /// mutual information and information distances.
    pub statistic_smoothing: f64,
    /// BIC gain the two-latent model needs over the one-latent model for a
    /// variable set to count as multidimensional.
    pub ud_threshold: f64,
    pub max_island_size: usize,
    /// Relative tolerance of the sibling and parent tests in recursive
    /// grouping, before shrinking with the sample size.
    pub grouping_tolerance: f64,
    /// Upper limit for searched latent cardinalities.
    pub max_cardinality: usize,
    /// Use this cardinality for every latent instead of searching.
    pub fixed_cardinality: Option<usize>,
    /// Refit bridged models with progressive EM instead of full EM.
    pub progressive: bool,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            em: EmConfig::default(),
            statistic_smoothing: 1.0,
            ud_threshold: 3.0,
            max_island_size: 10,
            grouping_tolerance: 0.25,
            max_cardinality: 8,
            fixed_cardinality: None,
            progressive: false,
        }
    }
}

impl StructureConfig {
    pub fn validate(&self) -> Result<()> {
        self.em.validate()?;
        if !(self.statistic_smoothing >= 0.0) {
            return Err(Error::InvalidArgument("statistic smoothing must be non-negative".into()));
        }
        if !self.ud_threshold.is_finite() {
            return Err(Error::InvalidArgument("unidimensionality threshold must be finite".into()));
        }
        if self.max_island_size < 3 {
            return Err(Error::InvalidArgument("islands must be allowed at least 3 members".into()));
        }
        if !(self.grouping_tolerance >= 0.0) {
            return Err(Error::InvalidArgument("grouping tolerance must be non-negative".into()));
        }
        if self.max_cardinality < 2 {
            return Err(Error::InvalidArgument("max_cardinality must be at least 2".into()));
        }
        if self.fixed_cardinality.is_some_and(|c| c < 1) {
            return Err(Error::InvalidArgument("fixed cardinality must be at least 1".into()));
        }
        Ok(())
    }
}
