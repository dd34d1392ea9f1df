//! Latent tree analysis: models with observed leaves and latent internal
//! nodes, their inference and parameter estimation, structure learning,
//! hierarchical topic detection and multidimensional clustering.

pub mod clustering;
pub mod data;
pub mod em;
pub mod error;
pub mod hlta;
pub mod inference;
pub mod model;
pub mod structure;
pub mod synthetic;

pub use data::{Row, Schema, VarKind, Variable, WeightedDataset};
pub use em::{em_fit, em_refine, progressive_em, EmConfig, EmFit, EmRun};
pub use error::{Error, Result};
pub use inference::{log_likelihood, posterior_marginal, Completion, Evidence, JointTable, PosteriorTable};
pub use model::{LatentTreeModel, LatentTreeStructure, ModelDocument};
pub use clustering::{build_unidimensional_model, extract_partitions, normalized_mutual_information, Partition};
pub use hlta::{build_hierarchy, extract_topics, HierarchicalModel, TopicTable};
pub use structure::StructureConfig;
