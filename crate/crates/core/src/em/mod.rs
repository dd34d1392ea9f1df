//! Maximum-likelihood parameter estimation by expectation-maximization.
//!
//! The E-step runs one calibrated propagation per distinct row and weights
//! the resulting posteriors by the row's multiplicity. The M-step normalizes
//! expected counts plus a pseudo-count per cell.

mod progressive;

pub use progressive::{progressive_em, ProgressiveRun, SubmodelStep};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Row, WeightedDataset};
use crate::error::{Error, Result};
use crate::inference::{Binding, Engine, CHUNK};
use crate::model::{LatentTreeModel, LatentTreeStructure};

/// Largest log-likelihood drop between iterations that still counts as
/// non-decreasing.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood gain of an iteration falls
    /// below this.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Pseudo-count added to every table cell in the M-step.
    pub smoothing: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 500,
            tolerance: 1e-4,
            restarts: 5,
            seed: 0,
            smoothing: 1.0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::InvalidArgument("smoothing must be non-negative".into()));
        }
        Ok(())
    }

    /// Seed for restart `r`, decorrelated from neighbouring seeds.
    pub(crate) fn restart_seed(&self, r: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((r as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9))
    }
}

/// Result of one EM run.
#[derive(Clone, Debug)]
pub struct EmRun {
    pub model: LatentTreeModel,
    pub log_likelihood: f64,
    /// Log-likelihood of the starting point followed by one entry per
    /// accepted iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Best run over restarts plus every restart's trace.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub best: EmRun,
    pub best_restart: usize,
    pub traces: Vec<Vec<f64>>,
}

/// Fits the parameters of `structure` rooted at `root` with random restarts.
pub fn em_fit(structure: &LatentTreeStructure, root: &str, data: &WeightedDataset, config: &EmConfig) -> Result<EmFit> {
    config.validate()?;
    let problems = structure.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidModel(problems));
    }
    let root = structure.require(root)?;
    let skeleton = LatentTreeModel::uniform(structure.clone(), root)?;
    let data = observed_projection(&skeleton, data)?;

    let restarts = if skeleton.latent_nodes().is_empty() { 1 } else { config.restarts };
    let runs = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.restart_seed(r));
            let init = LatentTreeModel::random(structure.clone(), root, &mut rng)?;
            run_em(init, &data, config, None)
        })
        .collect::<Vec<Result<EmRun>>>();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let traces = runs.iter().map(|r| r.trace.clone()).collect();
    let mut best_restart = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.log_likelihood > runs[best_restart].log_likelihood {
            best_restart = i;
        }
    }
    let best = runs.into_iter().nth(best_restart).expect("at least one restart");
    Ok(EmFit {
        best,
        best_restart,
        traces,
    })
}

/// EM from the given parameters (a single run, no restarts).
pub fn em_refine(model: &LatentTreeModel, data: &WeightedDataset, config: &EmConfig) -> Result<EmRun> {
    config.validate()?;
    let data = observed_projection(model, data)?;
    run_em(model.clone(), &data, config, None)
}

/// Dataset restricted to the model's observed variables, which it must
/// cover.
pub(crate) fn observed_projection(model: &LatentTreeModel, data: &WeightedDataset) -> Result<WeightedDataset> {
    let names = model.observed_names();
    for n in &names {
        if data.column_index(n).is_none() {
            return Err(Error::VariableMismatch(format!("dataset lacks observed variable `{n}`")));
        }
    }
    if names.len() == data.num_variables() && names.iter().zip(data.variable_names()).all(|(a, b)| *a == b) {
        Ok(data.clone())
    } else {
        data.project(&names)
    }
}

/// Expected counts, shaped like the model's tables.
pub(crate) struct Statistics {
    pub log_likelihood: f64,
    pub counts: Vec<Vec<f64>>,
}

pub(crate) fn e_step(model: &LatentTreeModel, data: &WeightedDataset, binding: &Binding) -> Result<Statistics> {
    let zero = || -> Vec<Vec<f64>> { model.tables().iter().map(|t| vec![0.0; t.len()]).collect() };
    let run = |(ci, chunk): (usize, &[Row])| -> Result<Statistics> {
        let mut engine = Engine::new(model);
        let mut ev = Vec::new();
        let mut counts = zero();
        let mut ll = 0.0;
        for (k, row) in chunk.iter().enumerate() {
            binding.evidence(row, &mut ev);
            let row_ll = engine.collect(&ev);
            if row_ll == f64::NEG_INFINITY {
                return Err(Error::ZeroProbability { row: ci * CHUNK + k });
            }
            engine.distribute(&ev);
            let w = row.weight as f64;
            ll += w * row_ll;
            for &v in model.preorder() {
                match model.parent(v) {
                    None => {
                        let b = engine.belief(v);
                        counts[v].iter_mut().zip(&b).for_each(|(c, p)| *c += w * p);
                    }
                    Some(_) => engine.accumulate_pair(v, w, &mut counts[v]),
                }
            }
        }
        Ok(Statistics {
            log_likelihood: ll,
            counts,
        })
    };
    let rows = data.rows();
    let parts: Vec<Result<Statistics>> = if rows.len() <= CHUNK {
        vec![run((0, rows))]
    } else {
        rows.par_chunks(CHUNK).enumerate().map(run).collect()
    };
    // Fixed-order reduction keeps results independent of the schedule.
    let mut total = Statistics {
        log_likelihood: 0.0,
        counts: zero(),
    };
    for part in parts {
        let part = part?;
        total.log_likelihood += part.log_likelihood;
        for (acc, c) in total.counts.iter_mut().zip(&part.counts) {
            acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
    }
    Ok(total)
}

pub(crate) fn m_step(model: &LatentTreeModel, stats: &Statistics, smoothing: f64, frozen: Option<&[bool]>) -> LatentTreeModel {
    let mut next = model.clone();
    for v in 0..model.num_nodes() {
        if frozen.is_some_and(|f| f[v]) {
            continue;
        }
        let c = model.cardinality(v);
        let mut table = model.table(v).to_vec();
        for (row, counts) in table.chunks_mut(c).zip(stats.counts[v].chunks(c)) {
            let total: f64 = counts.iter().sum::<f64>() + smoothing * c as f64;
            if total > 0.0 {
                for (p, n) in row.iter_mut().zip(counts) {
                    *p = (n + smoothing) / total;
                }
            }
        }
        next.set_table(v, table);
    }
    next
}

/// EM iterations from `model`. Tables flagged in `frozen` are held fixed.
///
/// An iteration whose log-likelihood falls by more than [`MONOTONE_SLACK`]
/// is rejected and the run stops at the previous parameters; this can only
/// happen through the pseudo-counts, which make each step increase the
/// smoothed objective rather than the likelihood itself.
pub(crate) fn run_em(model: LatentTreeModel, data: &WeightedDataset, config: &EmConfig, frozen: Option<&[bool]>) -> Result<EmRun> {
    let binding = Binding::new(&model, data)?;
    let mut model = model;
    let mut stats = e_step(&model, data, &binding)?;
    let mut trace = vec![stats.log_likelihood];
    let mut converged = false;
    for _ in 0..config.max_iterations {
        let next = m_step(&model, &stats, config.smoothing, frozen);
        let next_stats = e_step(&next, data, &binding)?;
        let prev = stats.log_likelihood;
        let gain = next_stats.log_likelihood - prev;
        if gain < -MONOTONE_SLACK {
            log::debug!("EM stopped on a likelihood decrease of {:.3e}", -gain);
            converged = true;
            break;
        }
        model = next;
        stats = next_stats;
        trace.push(stats.log_likelihood);
        if gain <= config.tolerance * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        model,
        log_likelihood: stats.log_likelihood,
        trace,
        converged,
    })
}
