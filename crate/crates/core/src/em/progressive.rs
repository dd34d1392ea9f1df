//! Progressive EM: parameters are estimated a few at a time on small
//! submodels whose datasets are projections onto 3 or 4 observed variables.
//!
//! A submodel is a connected window of the tree. Its top node gets a free
//! marginal and every other window node keeps its table from the full model,
//! so the submodel's distribution over the window is exactly the full
//! model's. Tables already estimated stay frozen; the ones being estimated
//! and any not-yet-estimated tables on proxy paths are free.

use std::collections::{HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{observed_projection, run_em, EmConfig, EmRun};
use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::{LatentTreeModel, LatentTreeStructure};
use crate::structure::mi::column_mi;

/// Submodel iterations stop on a relative gain below this or the configured
/// tolerance, whichever is smaller. Windows have at most 16 distinct rows so
/// the extra iterations are cheap.
const SUBMODEL_TOLERANCE: f64 = 1e-6;

/// One submodel fit.
#[derive(Clone, Debug, PartialEq)]
pub struct SubmodelStep {
    /// Nodes whose tables were estimated and frozen.
    pub targets: Vec<String>,
    /// Observed variables the dataset was projected onto.
    pub observed: Vec<String>,
    /// Distinct rows of the projected dataset.
    pub distinct_rows: usize,
}

#[derive(Clone, Debug)]
pub struct ProgressiveRun {
    /// Result of the final full-EM refinement.
    pub run: EmRun,
    pub steps: Vec<SubmodelStep>,
}

/// Estimates the parameters of `structure` rooted at `root` by EM on small
/// submodels followed by one bounded full-EM pass.
pub fn progressive_em(
    structure: &LatentTreeStructure,
    root: &str,
    data: &WeightedDataset,
    config: &EmConfig,
) -> Result<ProgressiveRun> {
    config.validate()?;
    let problems = structure.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidModel(problems));
    }
    let root = structure.require(root)?;
    let skeleton = LatentTreeModel::uniform(structure.clone(), root)?;
    let data = observed_projection(&skeleton, data)?;
    let latents = skeleton.latent_nodes();
    if latents.is_empty() {
        let run = run_em(skeleton, &data, config, None)?;
        return Ok(ProgressiveRun { run, steps: Vec::new() });
    }

    // Windows assume a latent root so that every observed node is a child.
    let work_root = if structure.variables()[root].is_latent() { root } else { latents[0] };
    let mut rng = ChaCha8Rng::seed_from_u64(config.restart_seed(0));
    let model = LatentTreeModel::random(structure.clone(), work_root, &mut rng)?;
    let mut state = Progress::new(model, &data, config);
    state.estimate_observed_tables()?;
    state.estimate_latent_edges()?;
    state.estimate_root()?;
    let Progress { model, steps, .. } = state;

    let run = run_em(model, &data, config, None)?;
    let run = EmRun {
        model: run.model.reroot_at(root),
        ..run
    };
    Ok(ProgressiveRun { run, steps })
}

struct Progress<'d> {
    model: LatentTreeModel,
    data: &'d WeightedDataset,
    config: EmConfig,
    frozen: Vec<bool>,
    mi: HashMap<(usize, usize), f64>,
    steps: Vec<SubmodelStep>,
}

impl<'d> Progress<'d> {
    fn new(model: LatentTreeModel, data: &'d WeightedDataset, config: &EmConfig) -> Self {
        let n = model.num_nodes();
        Progress {
            model,
            data,
            config: EmConfig {
                tolerance: config.tolerance.min(SUBMODEL_TOLERANCE),
                ..config.clone()
            },
            frozen: vec![false; n],
            mi: HashMap::new(),
            steps: Vec::new(),
        }
    }

    /// Empirical MI between two observed nodes.
    fn mi(&mut self, a: usize, b: usize) -> f64 {
        let key = (a.min(b), a.max(b));
        if let Some(&v) = self.mi.get(&key) {
            return v;
        }
        let ca = self.data.column_index(self.model.name(key.0)).expect("observed column");
        let cb = self.data.column_index(self.model.name(key.1)).expect("observed column");
        let v = column_mi(self.data, ca, cb, 0.0);
        self.mi.insert(key, v);
        v
    }

    fn observed_children(&self, h: usize) -> Vec<usize> {
        self.model
            .children(h)
            .iter()
            .copied()
            .filter(|&c| self.model.variable(c).is_observed())
            .collect()
    }

    /// Greedy selection: the pair with the largest MI, then repeatedly the
    /// candidate with the largest summed MI to those chosen.
    fn greedy_by_mi(&mut self, candidates: &[usize], k: usize) -> Vec<usize> {
        let mut best = (f64::NEG_INFINITY, 0, 1);
        for i in 0..candidates.len() {
            for j in i + 1..candidates.len() {
                let v = self.mi(candidates[i], candidates[j]);
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        let mut chosen = vec![candidates[best.1], candidates[best.2]];
        while chosen.len() < k {
            let mut pick: Option<(f64, usize)> = None;
            for &c in candidates {
                if chosen.contains(&c) {
                    continue;
                }
                let s: f64 = chosen.clone().into_iter().map(|o| self.mi(c, o)).sum();
                if pick.is_none_or(|(b, _)| s > b) {
                    pick = Some((s, c));
                }
            }
            chosen.push(pick.expect("enough candidates").1);
        }
        chosen
    }

    /// Nearest observed nodes reachable from `start` without passing
    /// `blocked`, with the paths to them. Closer nodes come first, then
    /// nodes whose tables are already estimated, then MI with `reference`.
    fn proxies(&mut self, start: usize, blocked: Option<usize>, exclude: &[usize], reference: &[usize], k: usize) -> Vec<Vec<usize>> {
        let n = self.model.num_nodes();
        let mut prev = vec![usize::MAX; n];
        let mut depth = vec![usize::MAX; n];
        depth[start] = 0;
        let mut queue = VecDeque::from([start]);
        let mut found = Vec::new();
        while let Some(v) = queue.pop_front() {
            if v != start && self.model.variable(v).is_observed() {
                if !exclude.contains(&v) {
                    found.push(v);
                }
                continue;
            }
            for u in self.model.neighbors(v) {
                if Some(u) == blocked || depth[u] != usize::MAX {
                    continue;
                }
                depth[u] = depth[v] + 1;
                prev[u] = v;
                queue.push_back(u);
            }
        }
        let mut keyed: Vec<(usize, bool, f64, usize)> = found
            .into_iter()
            .map(|v| {
                let score: f64 = reference.iter().map(|&r| self.mi(v, r)).sum();
                (depth[v], !self.frozen[v], -score, v)
            })
            .collect();
        keyed.sort_by(|a, b| a.partial_cmp(b).expect("finite MI"));
        keyed
            .into_iter()
            .take(k)
            .map(|(_, _, _, v)| {
                let mut path = vec![v];
                while *path.last().unwrap() != start {
                    path.push(prev[*path.last().unwrap()]);
                }
                path.reverse();
                path
            })
            .collect()
    }

    /// Fits a submodel over `window` with only `targets` and unestimated
    /// window tables free, then freezes and stores the targets.
    fn fit_window(&mut self, window: &[usize], targets: &[usize]) -> Result<()> {
        let mut nodes: Vec<usize> = window.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        let top = *nodes
            .iter()
            .find(|&&v| self.model.parent(v).is_none_or(|p| !nodes.contains(&p)))
            .expect("window has a top node");
        let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let variables = nodes.iter().map(|&v| self.model.variable(v).clone()).collect();
        let edges = nodes
            .iter()
            .filter(|&&v| v != top)
            .map(|&v| (local[&self.model.parent(v).unwrap()], local[&v]))
            .collect();
        let marginals = self.model.node_marginals();
        let tables: Vec<Vec<f64>> = nodes
            .iter()
            .map(|&v| if v == top { marginals[v].clone() } else { self.model.table(v).to_vec() })
            .collect();
        let base = LatentTreeModel::from_parts_unchecked(LatentTreeStructure::new(variables, edges), local[&top], tables);
        let frozen: Vec<bool> = nodes
            .iter()
            .map(|&v| v != top && (self.frozen[v] && !targets.contains(&v)))
            .collect();

        let observed: Vec<String> = nodes
            .iter()
            .filter(|&&v| self.model.variable(v).is_observed())
            .map(|&v| self.model.name(v).to_string())
            .collect();
        let projected = self.data.project(&observed)?;
        self.steps.push(SubmodelStep {
            targets: targets.iter().map(|&t| self.model.name(t).to_string()).collect(),
            observed,
            distinct_rows: projected.num_rows(),
        });

        let step = self.steps.len() as u64;
        let mut best: Option<EmRun> = None;
        for r in 0..self.config.restarts {
            let mut init = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.restart_seed(r) ^ step.wrapping_mul(0x94D0_49BB_1331_11EB));
            for (i, &f) in frozen.iter().enumerate() {
                if !f {
                    init.randomize_table(i, &mut rng);
                }
            }
            let run = run_em(init, &projected, &self.config, Some(&frozen))?;
            if best.as_ref().is_none_or(|b| run.log_likelihood > b.log_likelihood) {
                best = Some(run);
            }
        }
        let fitted = best.expect("at least one restart").model;
        for &t in targets {
            if t == top && self.model.parent(t).is_some() {
                continue;
            }
            self.model.set_table(t, fitted.table(local[&t]).to_vec());
            self.frozen[t] = true;
        }
        Ok(())
    }

    /// Tables of observed nodes, latent by latent in breadth-first order.
    fn estimate_observed_tables(&mut self) -> Result<()> {
        let order: Vec<usize> = self.model.preorder().to_vec();
        for h in order {
            if self.model.variable(h).is_observed() {
                continue;
            }
            let kids = self.observed_children(h);
            if kids.is_empty() {
                continue;
            }
            if kids.len() >= 3 {
                let k = if kids.len() >= 4 { 4 } else { 3 };
                let first = self.greedy_by_mi(&kids, k);
                self.fit_window(&[&[h], first.as_slice()].concat(), &first)?;
                let mut done = first;
                for &c in &kids {
                    if done.contains(&c) {
                        continue;
                    }
                    let mut anchors = done.clone();
                    anchors.sort_by(|&a, &b| {
                        let (ma, mb) = (self.mi(a, c), self.mi(b, c));
                        mb.partial_cmp(&ma).unwrap().then(a.cmp(&b))
                    });
                    anchors.truncate(2);
                    self.fit_window(&[h, c, anchors[0], anchors[1]], &[c])?;
                    done.push(c);
                }
            } else {
                let mut window = vec![h];
                window.extend(&kids);
                for path in self.proxies(h, None, &kids, &kids, 3 - kids.len()) {
                    window.extend(path);
                }
                self.fit_window(&window, &kids)?;
            }
        }
        Ok(())
    }

    /// Tables of non-root latent nodes given their parents.
    fn estimate_latent_edges(&mut self) -> Result<()> {
        let order: Vec<usize> = self.model.preorder().to_vec();
        for u in order {
            let Some(h) = self.model.parent(u) else { continue };
            if self.model.variable(u).is_observed() {
                continue;
            }
            let below = self.proxies(u, Some(h), &[], &[], 2);
            let reference: Vec<usize> = below.iter().map(|p| *p.last().unwrap()).collect();
            let above = self.proxies(h, Some(u), &[], &reference, 2);
            let mut window = vec![h, u];
            for p in below.into_iter().chain(above) {
                window.extend(p);
            }
            self.fit_window(&window, &[u])?;
        }
        Ok(())
    }

    fn estimate_root(&mut self) -> Result<()> {
        let r = self.model.root();
        let mut window = vec![r];
        for p in self.proxies(r, None, &[], &[], 3) {
            window.extend(p);
        }
        self.fit_window(&window, &[r])
    }
}
