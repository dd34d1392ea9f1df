//! Exact inference on latent tree models.
//!
//! [`Engine`] runs one upward (collect) and optionally one downward
//! (distribute) pass per evidence vector. Upward messages are rescaled to sum
//! to one and the scale factors are accumulated in log space, so long chains
//! do not underflow.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Row, Variable, WeightedDataset};
use crate::error::{Error, Result};
use crate::model::LatentTreeModel;

/// Largest observed joint table [`observed_marginal`] will build.
pub const OBSERVED_GUARD: u128 = 1 << 20;
/// Largest full joint table [`brute_force_joint`] will build.
pub const JOINT_GUARD: u128 = 1 << 22;

/// Rows per parallel work unit. Fixed so that reductions happen in the same
/// order whatever the thread count.
pub(crate) const CHUNK: usize = 128;

/// Message-passing workspace bound to one model.
pub struct Engine<'m> {
    model: &'m LatentTreeModel,
    lambda: Vec<Vec<f64>>,
    up: Vec<Vec<f64>>,
    outside: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
    log_likelihood: f64,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m LatentTreeModel) -> Self {
        let n = model.num_nodes();
        let zeros = |v: usize| vec![0.0; model.cardinality(v)];
        let parent_zeros = |v: usize| model.parent(v).map_or(Vec::new(), |p| vec![0.0; model.cardinality(p)]);
        Engine {
            model,
            lambda: (0..n).map(zeros).collect(),
            up: (0..n).map(parent_zeros).collect(),
            outside: (0..n).map(parent_zeros).collect(),
            pi: (0..n).map(zeros).collect(),
            log_likelihood: f64::NEG_INFINITY,
        }
    }

    pub fn model(&self) -> &'m LatentTreeModel {
        self.model
    }

    /// Upward pass. `evidence[v]` fixes node `v` to a state; unassigned
    /// nodes are summed out. Returns `ln P(evidence)` (`-inf` when zero).
    pub fn collect(&mut self, evidence: &[Option<usize>]) -> f64 {
        let m = self.model;
        let mut log_scale = 0.0;
        for &v in m.preorder().iter().rev() {
            let c = m.cardinality(v);
            {
                let lam = &mut self.lambda[v];
                match evidence[v] {
                    Some(s) => {
                        lam.iter_mut().for_each(|x| *x = 0.0);
                        lam[s] = 1.0;
                    }
                    None => lam.iter_mut().for_each(|x| *x = 1.0),
                }
            }
            for &ch in m.children(v) {
                let (lam, msg) = (&mut self.lambda[v], &self.up[ch]);
                lam.iter_mut().zip(msg).for_each(|(l, u)| *l *= u);
            }
            match m.parent(v) {
                None => {
                    let z: f64 = m.table(v).iter().zip(&self.lambda[v]).map(|(p, l)| p * l).sum();
                    self.log_likelihood = if z > 0.0 { log_scale + z.ln() } else { f64::NEG_INFINITY };
                }
                Some(_) => {
                    let t = m.table(v);
                    let lam = &self.lambda[v];
                    let msg = &mut self.up[v];
                    let mut total = 0.0;
                    for (j, out) in msg.iter_mut().enumerate() {
                        let row = &t[j * c..(j + 1) * c];
                        *out = row.iter().zip(lam).map(|(p, l)| p * l).sum();
                        total += *out;
                    }
                    if total <= 0.0 {
                        self.log_likelihood = f64::NEG_INFINITY;
                        return self.log_likelihood;
                    }
                    msg.iter_mut().for_each(|x| *x /= total);
                    log_scale += total.ln();
                }
            }
        }
        self.log_likelihood
    }

    /// Downward pass; call after [`collect`](Self::collect) returned a
    /// finite value.
    pub fn distribute(&mut self, evidence: &[Option<usize>]) {
        let m = self.model;
        let root = m.root();
        self.pi[root].copy_from_slice(m.table(root));
        let mut prefix: Vec<f64> = Vec::new();
        for &v in m.preorder() {
            let kids = m.children(v);
            if kids.is_empty() {
                continue;
            }
            let c = m.cardinality(v);
            let mut base = self.pi[v].clone();
            if let Some(s) = evidence[v] {
                for (x, b) in base.iter_mut().enumerate() {
                    if x != s {
                        *b = 0.0;
                    }
                }
            }
            // outside[k] = base * prod_{j != k} up[kid_j], via prefix/suffix products.
            prefix.clear();
            prefix.extend_from_slice(&base);
            for &k in kids {
                self.outside[k].copy_from_slice(&prefix);
                prefix.iter_mut().zip(&self.up[k]).for_each(|(p, u)| *p *= u);
            }
            let mut suffix = vec![1.0; c];
            for &k in kids.iter().rev() {
                let out = &mut self.outside[k];
                out.iter_mut().zip(&suffix).for_each(|(o, s)| *o *= s);
                normalize(out);
                suffix.iter_mut().zip(&self.up[k]).for_each(|(s, u)| *s *= u);
            }
            for &k in kids {
                let ck = m.cardinality(k);
                let t = m.table(k);
                let out = &self.outside[k];
                let pi = &mut self.pi[k];
                pi.iter_mut().for_each(|x| *x = 0.0);
                for (j, &o) in out.iter().enumerate() {
                    if o == 0.0 {
                        continue;
                    }
                    let row = &t[j * ck..(j + 1) * ck];
                    pi.iter_mut().zip(row).for_each(|(p, r)| *p += o * r);
                }
                normalize(pi);
            }
        }
    }

    /// Posterior of node `v` after both passes.
    pub fn belief(&self, v: usize) -> Vec<f64> {
        let mut b: Vec<f64> = self.pi[v].iter().zip(&self.lambda[v]).map(|(p, l)| p * l).collect();
        normalize(&mut b);
        b
    }

    /// Writes `P(parent(v), v | evidence)` row-major by parent state into
    /// `out`, scaled by `weight`, accumulating.
    pub fn accumulate_pair(&self, v: usize, weight: f64, out: &mut [f64]) {
        let m = self.model;
        let c = m.cardinality(v);
        let t = m.table(v);
        let lam = &self.lambda[v];
        let outside = &self.outside[v];
        let mut z = 0.0;
        for (j, &o) in outside.iter().enumerate() {
            if o == 0.0 {
                continue;
            }
            for i in 0..c {
                z += o * t[j * c + i] * lam[i];
            }
        }
        if z <= 0.0 {
            return;
        }
        let scale = weight / z;
        for (j, &o) in outside.iter().enumerate() {
            if o == 0.0 {
                continue;
            }
            for i in 0..c {
                out[j * c + i] += scale * o * t[j * c + i] * lam[i];
            }
        }
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Column-to-node mapping for a dataset evaluated under a model.
#[derive(Clone, Debug)]
pub struct Binding {
    pub nodes: Vec<usize>,
    num_nodes: usize,
}

impl Binding {
    /// Every dataset column must name an observed node whose cardinality
    /// covers the column's. Observed nodes absent from the data are summed
    /// out.
    pub fn new(model: &LatentTreeModel, data: &WeightedDataset) -> Result<Self> {
        let nodes = data
            .variables()
            .iter()
            .map(|var| {
                let v = model.index_of(&var.name).ok_or_else(|| {
                    Error::VariableMismatch(format!("`{}` is not a model variable", var.name))
                })?;
                if !model.variable(v).is_observed() {
                    return Err(Error::VariableMismatch(format!("`{}` is latent in the model", var.name)));
                }
                if var.cardinality > model.cardinality(v) {
                    return Err(Error::VariableMismatch(format!(
                        "`{}` has {} states in the data but {} in the model",
                        var.name,
                        var.cardinality,
                        model.cardinality(v)
                    )));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Binding {
            nodes,
            num_nodes: model.num_nodes(),
        })
    }

    pub fn evidence(&self, row: &Row, buf: &mut Vec<Option<usize>>) {
        buf.clear();
        buf.resize(self.num_nodes, None);
        for (&node, &value) in self.nodes.iter().zip(&row.values) {
            buf[node] = Some(value);
        }
    }
}

/// Applies `f` to every row with one engine per fixed-size chunk; results
/// come back in row order.
pub(crate) fn map_rows<T, F>(model: &LatentTreeModel, data: &WeightedDataset, binding: &Binding, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut Engine<'_>, &[Option<usize>], usize, &Row) -> T + Sync,
{
    let run = |(ci, chunk): (usize, &[Row])| {
        let mut engine = Engine::new(model);
        let mut ev = Vec::new();
        chunk
            .iter()
            .enumerate()
            .map(|(k, row)| {
                binding.evidence(row, &mut ev);
                f(&mut engine, &ev, ci * CHUNK + k, row)
            })
            .collect::<Vec<T>>()
    };
    let rows = data.rows();
    if rows.len() <= CHUNK {
        return run((0, rows));
    }
    rows.par_chunks(CHUNK)
        .enumerate()
        .map(run)
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// `ln P(row)` for every distinct row (unweighted).
pub fn row_log_likelihoods(model: &LatentTreeModel, data: &WeightedDataset) -> Result<Vec<f64>> {
    let binding = Binding::new(model, data)?;
    Ok(map_rows(model, data, &binding, |e, ev, _, _| e.collect(ev)))
}

/// `sum_rows weight * ln P(row)`. Columns missing from the data are summed
/// out. Rows of probability zero make the result `-inf`; they are logged,
/// and [`zero_probability_rows`] lists them.
pub fn log_likelihood(model: &LatentTreeModel, data: &WeightedDataset) -> Result<f64> {
    let per_row = row_log_likelihoods(model, data)?;
    let mut total = 0.0;
    let mut zeros = 0usize;
    for (ll, row) in per_row.iter().zip(data.rows()) {
        if *ll == f64::NEG_INFINITY {
            zeros += 1;
        }
        total += row.weight as f64 * ll;
    }
    if zeros > 0 {
        log::warn!("{zeros} distinct rows have zero probability under the model");
    }
    Ok(total)
}

pub fn zero_probability_rows(model: &LatentTreeModel, data: &WeightedDataset) -> Result<Vec<usize>> {
    Ok(row_log_likelihoods(model, data)?
        .iter()
        .enumerate()
        .filter(|(_, ll)| **ll == f64::NEG_INFINITY)
        .map(|(i, _)| i)
        .collect())
}

/// Partial assignment of observed variables.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Evidence {
    pub assignments: BTreeMap<String, usize>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, state: usize) -> Self {
        self.assignments.insert(name.into(), state);
        self
    }

    fn to_vector(&self, model: &LatentTreeModel) -> Result<Vec<Option<usize>>> {
        let mut ev = vec![None; model.num_nodes()];
        for (name, &s) in &self.assignments {
            let v = model.require(name)?;
            if !model.variable(v).is_observed() {
                return Err(Error::InvalidArgument(format!("evidence on latent `{name}`")));
            }
            if s >= model.cardinality(v) {
                return Err(Error::InvalidArgument(format!(
                    "state {s} of `{name}` outside cardinality {}",
                    model.cardinality(v)
                )));
            }
            ev[v] = Some(s);
        }
        Ok(ev)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    pub target: String,
    pub distribution: Vec<f64>,
}

pub fn posterior_marginal(model: &LatentTreeModel, evidence: &Evidence, target: &str) -> Result<PosteriorTable> {
    let t = model.require(target)?;
    if evidence.assignments.contains_key(target) {
        return Err(Error::InvalidArgument(format!("`{target}` is fixed by the evidence")));
    }
    let ev = evidence.to_vector(model)?;
    let mut engine = Engine::new(model);
    if engine.collect(&ev) == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability { row: 0 });
    }
    engine.distribute(&ev);
    Ok(PosteriorTable {
        target: target.to_string(),
        distribution: engine.belief(t),
    })
}

/// Posterior of each target node for every distinct row:
/// `result[row][k]` is the distribution of `targets[k]`.
pub fn row_posteriors(model: &LatentTreeModel, data: &WeightedDataset, targets: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
    let binding = Binding::new(model, data)?;
    let out = map_rows(model, data, &binding, |e, ev, i, _| {
        if e.collect(ev) == f64::NEG_INFINITY {
            return Err(Error::ZeroProbability { row: i });
        }
        e.distribute(ev);
        Ok(targets.iter().map(|&t| e.belief(t)).collect::<Vec<_>>())
    });
    out.into_iter().collect()
}

/// How [`complete_data`] turns posteriors into values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Completion {
    /// Posterior mode per variable, lowest state on ties.
    Map,
    /// One draw per record from each variable's posterior.
    Sample { seed: u64 },
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Dataset over the latent `targets`, filled in from their posteriors.
pub fn complete_data<S: AsRef<str>>(
    model: &LatentTreeModel,
    data: &WeightedDataset,
    targets: &[S],
    mode: Completion,
) -> Result<WeightedDataset> {
    let nodes = targets
        .iter()
        .map(|t| {
            let v = model.require(t.as_ref())?;
            if !model.variable(v).is_latent() {
                return Err(Error::InvalidArgument(format!("`{}` is not latent", t.as_ref())));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let posts = row_posteriors(model, data, &nodes)?;
    let variables: Vec<Variable> = nodes
        .iter()
        .map(|&v| Variable::observed(model.name(v), model.cardinality(v)))
        .collect();
    match mode {
        Completion::Map => {
            let rows = posts
                .iter()
                .zip(data.rows())
                .map(|(p, row)| (p.iter().map(|d| argmax(d)).collect(), row.weight));
            WeightedDataset::from_weighted_rows(variables, rows)
        }
        Completion::Sample { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = Vec::new();
            for (p, row) in posts.iter().zip(data.rows()) {
                for _ in 0..row.weight {
                    let values = p.iter().map(|d| draw(d, &mut rng)).collect();
                    rows.push((values, 1));
                }
            }
            WeightedDataset::from_weighted_rows(variables, rows)
        }
    }
}

fn draw<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// A full joint table, row-major with the first variable most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    pub variables: Vec<Variable>,
    pub probabilities: Vec<f64>,
}

impl JointTable {
    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    /// Sums out every variable not in `keep`; the result follows `keep`'s order.
    pub fn marginalize<S: AsRef<str>>(&self, keep: &[S]) -> Result<JointTable> {
        let idx = keep
            .iter()
            .map(|k| {
                self.variables
                    .iter()
                    .position(|v| v.name == k.as_ref())
                    .ok_or_else(|| Error::UnknownVariable(k.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let cards = self.cardinalities();
        let out_vars: Vec<Variable> = idx.iter().map(|&i| self.variables[i].clone()).collect();
        let out_size: usize = out_vars.iter().map(|v| v.cardinality).product();
        let mut out = vec![0.0; out_size];
        let mut config = vec![0usize; cards.len()];
        for &p in &self.probabilities {
            let mut k = 0;
            for &i in &idx {
                k = k * cards[i] + config[i];
            }
            out[k] += p;
            increment(&mut config, &cards);
        }
        Ok(JointTable {
            variables: out_vars,
            probabilities: out,
        })
    }
}

/// Odometer increment, last position fastest.
pub(crate) fn increment(config: &mut [usize], cards: &[usize]) -> bool {
    for i in (0..config.len()).rev() {
        config[i] += 1;
        if config[i] < cards[i] {
            return true;
        }
        config[i] = 0;
    }
    false
}

fn state_space(cards: impl Iterator<Item = usize>) -> u128 {
    cards.fold(1u128, |acc, c| acc.saturating_mul(c as u128))
}

/// Exact distribution over the observed variables (model order), one
/// upward pass per configuration.
pub fn observed_marginal(model: &LatentTreeModel) -> Result<JointTable> {
    let observed = model.observed_nodes();
    let cards: Vec<usize> = observed.iter().map(|&v| model.cardinality(v)).collect();
    let states = state_space(cards.iter().copied());
    if states > OBSERVED_GUARD {
        return Err(Error::GuardExceeded {
            states,
            limit: OBSERVED_GUARD,
        });
    }
    let mut engine = Engine::new(model);
    let mut ev = vec![None; model.num_nodes()];
    let mut config = vec![0usize; cards.len()];
    let mut probabilities = Vec::with_capacity(states as usize);
    loop {
        for (&v, &s) in observed.iter().zip(&config) {
            ev[v] = Some(s);
        }
        probabilities.push(engine.collect(&ev).exp());
        if !increment(&mut config, &cards) {
            break;
        }
    }
    Ok(JointTable {
        variables: observed.iter().map(|&v| model.variable(v).clone()).collect(),
        probabilities,
    })
}

/// Joint over every variable (model order) by direct product of tables at
/// each configuration. Test oracle; shares no code with [`Engine`].
pub fn brute_force_joint(model: &LatentTreeModel) -> Result<JointTable> {
    let n = model.num_nodes();
    let cards: Vec<usize> = (0..n).map(|v| model.cardinality(v)).collect();
    let states = state_space(cards.iter().copied());
    if states > JOINT_GUARD {
        return Err(Error::GuardExceeded {
            states,
            limit: JOINT_GUARD,
        });
    }
    let mut config = vec![0usize; n];
    let mut probabilities = Vec::with_capacity(states as usize);
    loop {
        let mut p = 1.0;
        for v in 0..n {
            p *= match model.parent(v) {
                None => model.table(v)[config[v]],
                Some(u) => model.table(v)[config[u] * cards[v] + config[v]],
            };
        }
        probabilities.push(p);
        if !increment(&mut config, &cards) {
            break;
        }
    }
    Ok(JointTable {
        variables: model.variables().to_vec(),
        probabilities,
    })
}
