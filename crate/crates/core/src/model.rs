//! Latent tree models.
//!
//! A model is an undirected tree whose leaves are observed variables and whose
//! internal nodes are latent. It is stored as one directed member of its
//! equivalence class: a chosen root with a marginal table, and for every other
//! node a table `P(node | parent)` laid out row-major by parent state.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{VarKind, Variable, WeightedDataset};
use crate::error::{Error, Result};
use crate::inference;

/// Normalization slack accepted by [`LatentTreeModel::validate`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Variables plus undirected edges. Not necessarily a tree; see
/// [`LatentTreeStructure::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTreeStructure {
    variables: Vec<Variable>,
    edges: Vec<(usize, usize)>,
}

impl LatentTreeStructure {
    pub fn new(variables: Vec<Variable>, edges: Vec<(usize, usize)>) -> Self {
        LatentTreeStructure { variables, edges }
    }

    /// Builds a structure from edges given by variable name.
    pub fn from_named_edges<S: AsRef<str>>(variables: Vec<Variable>, edges: &[(S, S)]) -> Result<Self> {
        let index: HashMap<&str, usize> = variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), i))
            .collect();
        let lookup = |n: &str| {
            index
                .get(n)
                .copied()
                .ok_or_else(|| Error::UnknownVariable(n.to_string()))
        };
        let edges = edges
            .iter()
            .map(|(a, b)| Ok((lookup(a.as_ref())?, lookup(b.as_ref())?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LatentTreeStructure { variables, edges })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.variables.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.variables.len()];
        for &(a, b) in &self.edges {
            if a < adj.len() && b < adj.len() {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Structural violations: tree shape, leaf rule, names and cardinalities.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.variables.len();
        if n == 0 {
            out.push("model has no variables".to_string());
            return out;
        }
        let mut names = HashSet::new();
        for v in &self.variables {
            if v.cardinality == 0 {
                out.push(format!("variable `{}` has cardinality 0", v.name));
            }
            if !names.insert(v.name.as_str()) {
                out.push(format!("duplicate variable name `{}`", v.name));
            }
        }
        let mut seen_edges = HashSet::new();
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                out.push(format!("edge ({a}, {b}) refers to a missing node"));
                return out;
            }
            if a == b {
                out.push(format!("self-loop on `{}`", self.variables[a].name));
            }
            if !seen_edges.insert((a.min(b), a.max(b))) {
                out.push(format!(
                    "duplicate edge `{}`-`{}`",
                    self.variables[a].name, self.variables[b].name
                ));
            }
        }
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    reached += 1;
                    queue.push_back(u);
                }
            }
        }
        if self.edges.len() != n - 1 || reached != n {
            out.push("not a tree".to_string());
        }
        if n > 1 {
            for (i, v) in self.variables.iter().enumerate() {
                match v.kind {
                    VarKind::Observed if adj[i].len() > 1 => {
                        out.push(format!("observed node `{}` not a leaf", v.name))
                    }
                    VarKind::Latent if adj[i].len() < 2 => {
                        out.push(format!("latent node `{}` is a leaf", v.name))
                    }
                    _ => {}
                }
            }
        } else if self.variables[0].is_latent() {
            out.push(format!("latent node `{}` is a leaf", self.variables[0].name));
        }
        out
    }
}

/// Read-only view of one child-given-parent table.
#[derive(Clone, Copy, Debug)]
pub struct ConditionalTable<'a> {
    pub child: usize,
    pub parent: usize,
    pub child_cardinality: usize,
    pub entries: &'a [f64],
}

impl ConditionalTable<'_> {
    /// `P(child = i | parent = j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[j * self.child_cardinality + i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTreeModel {
    structure: LatentTreeStructure,
    root: usize,
    tables: Vec<Vec<f64>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl LatentTreeModel {
    /// Builds a model and rejects it if any invariant is violated.
    pub fn new(structure: LatentTreeStructure, root: usize, tables: Vec<Vec<f64>>) -> Result<Self> {
        let model = Self::from_parts_unchecked(structure, root, tables);
        let violations = model.validate();
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(violations))
        }
    }

    /// Builds a model without checking it, for diagnostics with
    /// [`validate`](Self::validate). Only `validate` is meaningful on an
    /// invalid model.
    pub fn from_parts_unchecked(structure: LatentTreeStructure, root: usize, tables: Vec<Vec<f64>>) -> Self {
        let n = structure.num_nodes();
        let adj = structure.adjacency();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut order = Vec::with_capacity(n);
        if root < n {
            let mut seen = vec![false; n];
            seen[root] = true;
            let mut queue = VecDeque::from([root]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                for &u in &adj[v] {
                    if !seen[u] {
                        seen[u] = true;
                        parent[u] = Some(v);
                        children[v].push(u);
                        queue.push_back(u);
                    }
                }
            }
        }
        LatentTreeModel {
            structure,
            root,
            tables,
            parent,
            children,
            order,
        }
    }

    /// Uniform tables on a given structure and root.
    pub fn uniform(structure: LatentTreeStructure, root: usize) -> Result<Self> {
        let mut m = Self::from_parts_unchecked(structure, root, Vec::new());
        m.tables = (0..m.num_nodes()).map(|v| m.uniform_table(v)).collect();
        m.check()?;
        Ok(m)
    }

    /// Random tables: every distribution is drawn from a symmetric
    /// Dirichlet(2), seeded by the caller's generator.
    pub fn random<R: Rng>(structure: LatentTreeStructure, root: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::uniform(structure, root)?;
        for v in 0..m.num_nodes() {
            m.randomize_table(v, rng);
        }
        Ok(m)
    }

    pub(crate) fn uniform_table(&self, v: usize) -> Vec<f64> {
        let c = self.cardinality(v);
        let rows = self.parent[v].map_or(1, |p| self.cardinality(p));
        vec![1.0 / c as f64; rows * c]
    }

    pub(crate) fn randomize_table<R: Rng>(&mut self, v: usize, rng: &mut R) {
        let c = self.cardinality(v);
        for row in self.tables[v].chunks_mut(c) {
            for x in row.iter_mut() {
                let a: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let b: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                *x = -(a.ln() + b.ln());
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
    }

    fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(v))
        }
    }

    /// Every violated structural or normalization invariant, one line each.
    /// Empty iff the model is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = self.structure.validate();
        let n = self.num_nodes();
        if self.root >= n {
            out.push(format!("root index {} out of range", self.root));
            return out;
        }
        if !out.is_empty() {
            return out;
        }
        if self.tables.len() != n {
            out.push(format!("{} tables for {} nodes", self.tables.len(), n));
            return out;
        }
        for v in 0..n {
            let name = &self.variable(v).name;
            let c = self.cardinality(v);
            let rows = self.parent[v].map_or(1, |p| self.cardinality(p));
            let t = &self.tables[v];
            if t.len() != rows * c {
                out.push(format!(
                    "table of `{name}` has {} entries, expected {}",
                    t.len(),
                    rows * c
                ));
                continue;
            }
            if t.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                out.push(format!("table of `{name}` has entries outside [0, 1]"));
            }
            for (j, row) in t.chunks(c).enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > NORMALIZATION_TOLERANCE * c as f64 {
                    out.push(format!(
                        "distribution of `{name}` (parent state {j}) sums to {s}"
                    ));
                }
            }
        }
        out
    }

    pub fn structure(&self) -> &LatentTreeStructure {
        &self.structure
    }

    pub fn num_nodes(&self) -> usize {
        self.structure.num_nodes()
    }

    pub fn variable(&self, v: usize) -> &Variable {
        &self.structure.variables[v]
    }

    pub fn variables(&self) -> &[Variable] {
        &self.structure.variables
    }

    pub fn cardinality(&self, v: usize) -> usize {
        self.structure.variables[v].cardinality
    }

    pub fn name(&self, v: usize) -> &str {
        &self.structure.variables[v].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.structure.index_of(name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.structure.require(name)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.children[v].clone();
        out.extend(self.parent[v]);
        out.sort_unstable();
        out
    }

    /// Nodes in breadth-first order from the root.
    pub fn preorder(&self) -> &[usize] {
        &self.order
    }

    pub fn observed_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.variable(v).is_observed())
            .collect()
    }

    pub fn latent_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.variable(v).is_latent())
            .collect()
    }

    pub fn observed_names(&self) -> Vec<&str> {
        self.observed_nodes().into_iter().map(|v| self.name(v)).collect()
    }

    /// Root marginal for the root, otherwise the row-major conditional table.
    pub fn table(&self, v: usize) -> &[f64] {
        &self.tables[v]
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    pub fn conditional(&self, v: usize) -> Option<ConditionalTable<'_>> {
        self.parent[v].map(|p| ConditionalTable {
            child: v,
            parent: p,
            child_cardinality: self.cardinality(v),
            entries: &self.tables[v],
        })
    }

    /// `P(v | parent = parent_state)`.
    pub fn conditional_row(&self, v: usize, parent_state: usize) -> &[f64] {
        let c = self.cardinality(v);
        &self.tables[v][parent_state * c..(parent_state + 1) * c]
    }

    pub(crate) fn set_table(&mut self, v: usize, table: Vec<f64>) {
        debug_assert_eq!(table.len(), self.tables[v].len());
        self.tables[v] = table;
    }

    /// Path of nodes from `a` to `b`, both included.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let up = |mut v: usize| {
            let mut chain = vec![v];
            while let Some(p) = self.parent[v] {
                chain.push(p);
                v = p;
            }
            chain
        };
        let ca = up(a);
        let cb = up(b);
        let in_b: HashSet<usize> = cb.iter().copied().collect();
        let meet_pos = ca.iter().position(|v| in_b.contains(v)).unwrap();
        let meet = ca[meet_pos];
        let mut path: Vec<usize> = ca[..=meet_pos].to_vec();
        let pos_b = cb.iter().position(|&v| v == meet).unwrap();
        path.extend(cb[..pos_b].iter().rev());
        path
    }

    /// Nodes in the subtree below `v` (including `v`).
    pub fn descendants(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.children[out[i]].iter().copied());
            i += 1;
        }
        out
    }

    /// Prior marginal of every node.
    pub fn node_marginals(&self) -> Vec<Vec<f64>> {
        let mut marg: Vec<Vec<f64>> = vec![Vec::new(); self.num_nodes()];
        for &v in &self.order {
            marg[v] = match self.parent[v] {
                None => self.tables[v].clone(),
                Some(p) => {
                    let c = self.cardinality(v);
                    let mut m = vec![0.0; c];
                    for (j, &pj) in marg[p].iter().enumerate() {
                        for (i, mi) in m.iter_mut().enumerate() {
                            *mi += pj * self.tables[v][j * c + i];
                        }
                    }
                    m
                }
            };
        }
        marg
    }

    /// `P(descendant | ancestor)` as a row-major (ancestor state) table,
    /// composed along the directed path.
    pub fn descendant_given_ancestor(&self, ancestor: usize, descendant: usize) -> Result<Vec<f64>> {
        let path = self.path(ancestor, descendant);
        for w in path.windows(2) {
            if self.parent[w[1]] != Some(w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "`{}` is not below `{}`",
                    self.name(descendant),
                    self.name(ancestor)
                )));
            }
        }
        let ca = self.cardinality(ancestor);
        let mut acc: Vec<f64> = (0..ca * ca)
            .map(|k| if k / ca == k % ca { 1.0 } else { 0.0 })
            .collect();
        let mut cur = ca;
        for &v in &path[1..] {
            let c = self.cardinality(v);
            let mut next = vec![0.0; ca * c];
            for a in 0..ca {
                for j in 0..cur {
                    let w = acc[a * cur + j];
                    if w == 0.0 {
                        continue;
                    }
                    for i in 0..c {
                        next[a * c + i] += w * self.tables[v][j * c + i];
                    }
                }
            }
            acc = next;
            cur = c;
        }
        Ok(acc)
    }

    /// Re-roots at a latent node. The joint over all variables is unchanged.
    pub fn reroot(&self, new_root: &str) -> Result<Self> {
        let r = self.require(new_root)?;
        if !self.variable(r).is_latent() {
            return Err(Error::InvalidArgument(format!(
                "new root `{new_root}` is not a latent node"
            )));
        }
        Ok(self.reroot_at(r))
    }

    /// Re-roots at any node, including observed ones. Used internally where
    /// an intermediate model needs a particular orientation.
    pub fn reroot_at(&self, r: usize) -> Self {
        if r == self.root {
            return self.clone();
        }
        let marg = self.node_marginals();
        let mut tables = self.tables.clone();
        let path = self.path(self.root, r);
        for w in path.windows(2) {
            let (up, down) = (w[0], w[1]);
            let cu = self.cardinality(up);
            let cd = self.cardinality(down);
            // New table for `up` given `down`: P(up | down) = P(down | up) P(up) / P(down).
            let mut t = vec![0.0; cd * cu];
            for d in 0..cd {
                let pd = marg[down][d];
                for u in 0..cu {
                    t[d * cu + u] = if pd > 0.0 {
                        self.tables[down][u * cd + d] * marg[up][u] / pd
                    } else {
                        1.0 / cu as f64
                    };
                }
            }
            tables[up] = t;
        }
        tables[r] = marg[r].clone();
        Self::from_parts_unchecked(self.structure.clone(), r, tables)
    }

    /// Upper bound on the cardinality of a latent node for the model to be
    /// regular: `prod |Zi| / max |Zi|` over its neighbors. When the node has
    /// exactly two neighbors the inequality must hold strictly.
    pub fn regularity_bound(&self, latent: &str) -> Result<usize> {
        let v = self.require(latent)?;
        if !self.variable(v).is_latent() {
            return Err(Error::InvalidArgument(format!("`{latent}` is not latent")));
        }
        let cards: Vec<usize> = self.neighbors(v).iter().map(|&u| self.cardinality(u)).collect();
        regularity_bound_of(&cards)
    }

    /// True when every latent node satisfies its regularity bound.
    pub fn is_regular(&self) -> bool {
        self.latent_nodes().into_iter().all(|v| {
            let cards: Vec<usize> = self.neighbors(v).iter().map(|&u| self.cardinality(u)).collect();
            match regularity_bound_of(&cards) {
                Ok(b) if cards.len() == 2 => self.cardinality(v) < b,
                Ok(b) => self.cardinality(v) <= b,
                Err(_) => false,
            }
        })
    }

    /// Makes the model regular.
    ///
    /// Latent leaves are dropped. A degree-2 latent violating its strict
    /// bound is removed and its neighbors joined directly, with the composed
    /// table, which leaves the observed distribution unchanged. Any other
    /// oversized latent is cut down to its bound by keeping its most probable
    /// states; those tables need re-estimation afterwards.
    pub fn regularize(&self) -> Self {
        let original_root = self.name(self.root).to_string();
        let mut model = self.clone();
        loop {
            if let Some(next) = model.regularize_step() {
                model = next;
            } else {
                break;
            }
        }
        if let Some(r) = model.index_of(&original_root) {
            model = model.reroot_at(r);
        } else if let Some(&l) = model.latent_nodes().first() {
            model = model.reroot_at(l);
        }
        model
    }

    fn regularize_step(&self) -> Option<Self> {
        if self.num_nodes() <= 1 {
            return None;
        }
        for v in self.latent_nodes() {
            let nbrs = self.neighbors(v);
            if nbrs.len() <= 1 {
                return Some(self.remove_latent_leaf(v));
            }
            let cards: Vec<usize> = nbrs.iter().map(|&u| self.cardinality(u)).collect();
            let bound = regularity_bound_of(&cards).ok()?;
            if nbrs.len() == 2 {
                if self.cardinality(v) >= bound {
                    return Some(self.splice_out(v));
                }
            } else if self.cardinality(v) > bound {
                return Some(self.shrink(v, bound));
            }
        }
        None
    }

    fn remove_latent_leaf(&self, v: usize) -> Self {
        let m = if self.root == v {
            match self.neighbors(v).first() {
                Some(&u) => self.reroot_at(u),
                None => return self.clone(),
            }
        } else {
            self.clone()
        };
        m.without_node(v, None)
    }

    /// Removes a degree-2 node, connecting its two neighbors.
    fn splice_out(&self, z: usize) -> Self {
        let nbrs = self.neighbors(z);
        let (a, b) = (nbrs[0], nbrs[1]);
        let m = self.reroot_at(a);
        // Now z is a child of a and b a child of z.
        let composed = m.descendant_given_ancestor(a, b).expect("b lies below a");
        let mut out = m.without_node(z, Some((a, b)));
        let b_new = if b > z { b - 1 } else { b };
        out.tables[b_new] = composed;
        out
    }

    fn without_node(&self, z: usize, join: Option<(usize, usize)>) -> Self {
        let remap = |i: usize| if i > z { i - 1 } else { i };
        let mut variables = self.structure.variables.clone();
        variables.remove(z);
        let mut edges: Vec<(usize, usize)> = self
            .structure
            .edges
            .iter()
            .filter(|&&(a, b)| a != z && b != z)
            .map(|&(a, b)| (remap(a), remap(b)))
            .collect();
        if let Some((a, b)) = join {
            edges.push((remap(a), remap(b)));
        }
        let mut tables = self.tables.clone();
        tables.remove(z);
        let structure = LatentTreeStructure::new(variables, edges);
        let mut out = Self::from_parts_unchecked(structure, remap(self.root), tables);
        // A node whose parent changed (only possible for the old root's
        // single child) needs its marginal as the root table.
        if self.root == z {
            unreachable!("root is never removed directly");
        }
        let marg = self.node_marginals();
        for v in 0..out.num_nodes() {
            let old = if v >= z { v + 1 } else { v };
            if out.parent[v].is_none() {
                out.tables[v] = marg[old].clone();
            }
        }
        out
    }

    fn shrink(&self, z: usize, new_card: usize) -> Self {
        let marg = self.node_marginals();
        let mut states: Vec<usize> = (0..self.cardinality(z)).collect();
        states.sort_by(|&a, &b| marg[z][b].total_cmp(&marg[z][a]).then(a.cmp(&b)));
        states.truncate(new_card);
        states.sort_unstable();

        let mut variables = self.structure.variables.clone();
        let old_card = variables[z].cardinality;
        variables[z].cardinality = new_card;
        let mut tables = self.tables.clone();
        // z's own table: keep selected columns, renormalize each row.
        tables[z] = self.tables[z]
            .chunks(old_card)
            .flat_map(|row| normalized(states.iter().map(|&s| row[s]).collect()))
            .collect();
        for &c in &self.children[z] {
            let cc = self.cardinality(c);
            tables[c] = states
                .iter()
                .flat_map(|&s| self.tables[c][s * cc..(s + 1) * cc].to_vec())
                .collect();
        }
        let structure = LatentTreeStructure::new(variables, self.structure.edges.clone());
        Self::from_parts_unchecked(structure, self.root, tables)
    }

    /// Number of free parameters.
    pub fn dimension(&self) -> usize {
        (0..self.num_nodes())
            .map(|v| match self.parent[v] {
                None => self.cardinality(v) - 1,
                Some(p) => self.cardinality(p) * (self.cardinality(v) - 1),
            })
            .sum()
    }

    /// `logL - (d / 2) ln N`; higher is better.
    pub fn bic(&self, data: &WeightedDataset) -> Result<f64> {
        let observed: HashSet<&str> = self.observed_names().into_iter().collect();
        let columns: HashSet<&str> = data.variable_names().into_iter().collect();
        if observed != columns {
            return Err(Error::VariableMismatch(
                "BIC needs the dataset to cover exactly the model's observed variables".into(),
            ));
        }
        let ll = inference::log_likelihood(self, data)?;
        Ok(bic_score(ll, self.dimension(), data.total_weight()))
    }

    pub fn to_document(&self) -> ModelDocument {
        let name = |v: usize| self.name(v).to_string();
        ModelDocument {
            metadata: None,
            variables: self.structure.variables.clone(),
            edges: self
                .structure
                .edges
                .iter()
                .map(|&(a, b)| (name(a), name(b)))
                .collect(),
            root: name(self.root),
            tables: self
                .order
                .iter()
                .map(|&v| TableDocument {
                    node: name(v),
                    parent: self.parent[v].map(name),
                    probabilities: self.tables[v]
                        .chunks(self.cardinality(v))
                        .map(<[f64]>::to_vec)
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let structure = LatentTreeStructure::from_named_edges(doc.variables.clone(), &doc.edges)?;
        let problems = structure.validate();
        if !problems.is_empty() {
            return Err(Error::InvalidModel(problems));
        }
        let root = structure.require(&doc.root)?;
        let skeleton = Self::from_parts_unchecked(structure, root, Vec::new());
        let mut tables: Vec<Option<Vec<f64>>> = vec![None; skeleton.num_nodes()];
        for t in &doc.tables {
            let v = skeleton.require(&t.node)?;
            let expected_parent = skeleton.parent[v].map(|p| skeleton.name(p).to_string());
            if t.parent != expected_parent {
                return Err(Error::InvalidModel(vec![format!(
                    "table of `{}` conditions on {:?}, expected {:?}",
                    t.node, t.parent, expected_parent
                )]));
            }
            if tables[v].is_some() {
                return Err(Error::InvalidModel(vec![format!("duplicate table for `{}`", t.node)]));
            }
            tables[v] = Some(t.probabilities.concat());
        }
        let tables = tables
            .into_iter()
            .enumerate()
            .map(|(v, t)| {
                t.ok_or_else(|| {
                    Error::InvalidModel(vec![format!("missing table for `{}`", skeleton.name(v))])
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let LatentTreeModel { structure, .. } = skeleton;
        Self::new(structure, root, tables)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: Option<serde_json::Value>) -> Result<()> {
        let path = path.as_ref();
        let mut doc = self.to_document();
        doc.metadata = metadata;
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// `floor(prod / max)` of the neighbor cardinalities.
pub fn regularity_bound_of(neighbor_cards: &[usize]) -> Result<usize> {
    if neighbor_cards.len() < 2 {
        return Err(Error::InvalidArgument(
            "regularity bound needs at least two neighbors".into(),
        ));
    }
    let max = *neighbor_cards.iter().max().unwrap();
    // Saturate: beyond this the bound never binds in practice.
    let prod = neighbor_cards
        .iter()
        .fold(1u128, |acc, &c| acc.saturating_mul(c as u128));
    Ok((prod / max as u128).min(usize::MAX as u128) as usize)
}

/// Largest cardinality a latent with these neighbors may take in a regular
/// model (accounts for the strict case with two neighbors). At least 1.
pub fn max_regular_cardinality(neighbor_cards: &[usize]) -> usize {
    match regularity_bound_of(neighbor_cards) {
        Ok(b) if neighbor_cards.len() == 2 => b.saturating_sub(1).max(1),
        Ok(b) => b.max(1),
        Err(_) => 1,
    }
}

pub fn bic_score(log_likelihood: f64, dimension: usize, total_weight: u64) -> f64 {
    log_likelihood - 0.5 * dimension as f64 * (total_weight as f64).ln()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let n = v.len() as f64;
        v.iter_mut().for_each(|x| *x = 1.0 / n);
    }
    v
}

/// Serialized form of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
    pub variables: Vec<Variable>,
    pub edges: Vec<(String, String)>,
    pub root: String,
    pub tables: Vec<TableDocument>,
}

/// `probabilities[j][i] = P(node = i | parent = j)`; a single row for the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableDocument {
    pub node: String,
    pub parent: Option<String>,
    pub probabilities: Vec<Vec<f64>>,
}
