use std::path::Path;

use clap::Args;
use lta_core::{EmConfig, StructureConfig};
use serde::{Deserialize, Serialize};

/// Every setting that influences an output. Serialized into the metadata
/// header of each file the tool writes; passing that file back through
/// `--config` reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Pseudo-count for EM and for pairwise statistics.
    pub smoothing: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub restarts: usize,
    pub ud_threshold: f64,
    pub rg_tolerance: f64,
    pub max_levels: usize,
    pub max_island_size: usize,
    pub max_cardinality: usize,
    /// Every latent gets this cardinality instead of a BIC search.
    pub latent_cardinality: Option<usize>,
    pub progressive: bool,
    pub vocab_size: usize,
    pub outputs: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = StructureConfig::default();
        RunConfig {
            seed: s.em.seed,
            smoothing: s.em.smoothing,
            max_iterations: s.em.max_iterations,
            tolerance: s.em.tolerance,
            restarts: s.em.restarts,
            ud_threshold: s.ud_threshold,
            rg_tolerance: s.grouping_tolerance,
            max_levels: 3,
            max_island_size: s.max_island_size,
            max_cardinality: s.max_cardinality,
            latent_cardinality: None,
            progressive: s.progressive,
            vocab_size: 1000,
            outputs: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn structure(&self) -> StructureConfig {
        StructureConfig {
            em: EmConfig {
                max_iterations: self.max_iterations,
                tolerance: self.tolerance,
                restarts: self.restarts,
                seed: self.seed,
                smoothing: self.smoothing,
            },
            statistic_smoothing: self.smoothing,
            ud_threshold: self.ud_threshold,
            max_island_size: self.max_island_size,
            grouping_tolerance: self.rg_tolerance,
            max_cardinality: self.max_cardinality,
            fixed_cardinality: self.latent_cardinality,
            progressive: self.progressive,
        }
    }

    pub fn validate(&self) -> lta_core::Result<()> {
        self.structure().validate()?;
        if self.max_levels < 1 {
            return Err(lta_core::Error::InvalidArgument("max_levels must be at least 1".into()));
        }
        if self.vocab_size < 1 {
            return Err(lta_core::Error::InvalidArgument("vocab_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Reads a configuration from a plain JSON config, a JSON output of this
    /// tool (its `metadata.config`), or the `#` header line of a text output.
    pub fn load(path: &Path) -> lta_core::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| lta_core::Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let trimmed = text.trim_start();
        let json = if let Some(rest) = trimmed.strip_prefix('#') {
            rest.lines().next().unwrap_or("").trim().to_string()
        } else if let Some(rest) = trimmed.strip_prefix("<!--") {
            rest.split("-->").next().unwrap_or("").trim().to_string()
        } else {
            trimmed.to_string()
        };
        let mut value: serde_json::Value = serde_json::from_str(&json)?;
        if let Some(meta) = value.get("metadata").cloned() {
            value = meta;
        }
        if let Some(cfg) = value.get("config").cloned() {
            value = cfg;
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigFlags {
    /// JSON config, or any output of this tool whose header to reuse.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub smoothing: Option<f64>,
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// BIC gain that makes a variable set multidimensional.
    #[arg(long, global = true)]
    pub ud_threshold: Option<f64>,
    /// Relative tolerance of the recursive-grouping tests.
    #[arg(long, global = true)]
    pub rg_tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub max_levels: Option<usize>,
    #[arg(long, global = true)]
    pub max_island_size: Option<usize>,
    #[arg(long, global = true)]
    pub max_cardinality: Option<usize>,
    /// Fix the cardinality of every latent.
    #[arg(long, global = true)]
    pub latent_cardinality: Option<usize>,
    /// Fit bridged models with progressive EM.
    #[arg(long, global = true)]
    pub progressive: bool,
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
}

impl ConfigFlags {
    pub fn resolve(&self) -> lta_core::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.outputs.clear();
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(seed, smoothing, max_iterations, tolerance, restarts, ud_threshold, rg_tolerance, max_levels, max_island_size, max_cardinality, vocab_size);
        if self.latent_cardinality.is_some() {
            c.latent_cardinality = self.latent_cardinality;
        }
        if self.progressive {
            c.progressive = true;
        }
        c.validate()?;
        Ok(c)
    }
}
