use std::collections::HashSet;

use crate::data::WeightedDataset;
use crate::em::{em_fit, progressive_em};
use crate::error::Result;
use crate::model::{bic_score, max_regular_cardinality, LatentTreeModel, LatentTreeStructure};

use super::StructureConfig;

/// `count` names `{prefix}{k}` for k = 1, 2, ... that are not in `taken`.
pub(crate) fn fresh_names<S: AsRef<str>>(taken: &[S], prefix: &str, count: usize) -> Vec<String> {
    let taken: HashSet<&str> = taken.iter().map(|s| s.as_ref()).collect();
    (1..)
        .map(|k| format!("{prefix}{k}"))
        .filter(|n| !taken.contains(n.as_str()))
        .take(count)
        .collect()
}

/// Fits parameters on a structure and returns the model with its BIC.
pub(crate) fn fit_scored(structure: &LatentTreeStructure, data: &WeightedDataset, config: &StructureConfig) -> Result<(LatentTreeModel, f64)> {
    let root = structure
        .variables()
        .iter()
        .find(|v| v.is_latent())
        .unwrap_or(&structure.variables()[0])
        .name
        .clone();
    let run = if config.progressive {
        progressive_em(structure, &root, data, &config.em)?.run
    } else {
        em_fit(structure, &root, data, &config.em)?.best
    };
    let bic = bic_score(run.log_likelihood, run.model.dimension(), data.total_weight());
    Ok((run.model, bic))
}

/// Chooses latent cardinalities greedily by BIC. Every latent starts at 2;
/// one at a time, each latent tries cardinality 1 and otherwise grows while
/// BIC improves, never past the regularity bound or `max_cardinality`.
/// With `fixed_cardinality` set, that value is used for all latents.
pub fn search_cardinalities(structure: &LatentTreeStructure, data: &WeightedDataset, config: &StructureConfig) -> Result<(LatentTreeModel, f64)> {
    search_with_extra(structure, data, config, &|_| None)
}

/// As [`search_cardinalities`], treating each latent for which
/// `extra_neighbor` returns a cardinality as having one more neighbor of
/// that cardinality when computing its bound.
pub(crate) fn search_with_extra(
    structure: &LatentTreeStructure,
    data: &WeightedDataset,
    config: &StructureConfig,
    extra_neighbor: &dyn Fn(usize) -> Option<usize>,
) -> Result<(LatentTreeModel, f64)> {
    let mut current = structure.clone();
    let latents: Vec<usize> = (0..current.num_nodes()).filter(|&v| current.variables()[v].is_latent()).collect();
    if let Some(c) = config.fixed_cardinality {
        for &l in &latents {
            current = with_cardinality(&current, l, c);
        }
        return fit_scored(&current, data, config);
    }
    let adj = current.adjacency();
    let cap = |s: &LatentTreeStructure, l: usize| {
        let mut cards: Vec<usize> = adj[l].iter().map(|&u| s.variables()[u].cardinality).collect();
        cards.extend(extra_neighbor(l));
        max_regular_cardinality(&cards).min(config.max_cardinality)
    };
    for &l in &latents {
        let c = 2.min(cap(&current, l));
        current = with_cardinality(&current, l, c);
    }
    let mut best = fit_scored(&current, data, config)?;
    for &l in &latents {
        let c = current.variables()[l].cardinality;
        if c >= 2 {
            let candidate = with_cardinality(&current, l, 1);
            let scored = fit_scored(&candidate, data, config)?;
            if scored.1 > best.1 {
                best = scored;
                current = candidate;
                continue;
            }
        }
        loop {
            let c = current.variables()[l].cardinality + 1;
            if c > cap(&current, l) {
                break;
            }
            let candidate = with_cardinality(&current, l, c);
            let scored = fit_scored(&candidate, data, config)?;
            if scored.1 > best.1 {
                best = scored;
                current = candidate;
            } else {
                break;
            }
        }
    }
    Ok(best)
}

pub(crate) fn with_cardinality(s: &LatentTreeStructure, v: usize, c: usize) -> LatentTreeStructure {
    let mut vars = s.variables().to_vec();
    vars[v].cardinality = c;
    LatentTreeStructure::new(vars, s.edges().to_vec())
}
