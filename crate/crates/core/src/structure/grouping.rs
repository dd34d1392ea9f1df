use std::collections::{BTreeSet, HashMap, HashSet};

use crate::data::{Variable, WeightedDataset};
use crate::error::{Error, Result};
use crate::model::{LatentTreeModel, LatentTreeStructure};

use super::chow_liu::chow_liu;
use super::distance::InformationDistanceMatrix;
use super::search::{fresh_names, search_cardinalities};
use super::StructureConfig;

/// Sample size at which the grouping tolerance takes its configured value;
/// larger samples shrink it with the square root of the ratio.
const REFERENCE_WEIGHT: f64 = 10_000.0;

/// Result of recursive grouping on one patch: edges over the patch nodes
/// and the latent nodes it introduced.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTree {
    pub edges: Vec<(String, String)>,
    pub latents: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Relation {
    None,
    Siblings,
    /// The first node of the pair is the parent of the second.
    FirstParent,
    SecondParent,
}

/// Relation of `i` and `j` among the `active` nodes, from the spread of
/// `d(i,k) - d(j,k)` over witnesses `k`.
fn relation(d: &InformationDistanceMatrix, active: &[usize], i: usize, j: usize, tol: f64) -> Relation {
    let dij = d.get(i, j);
    if !dij.is_finite() {
        return Relation::None;
    }
    let phis: Vec<f64> = active
        .iter()
        .filter(|&&k| k != i && k != j)
        .map(|&k| d.get(i, k) - d.get(j, k))
        .filter(|p| p.is_finite())
        .collect();
    if phis.is_empty() {
        return Relation::None;
    }
    let eps = tol * dij;
    if phis.iter().all(|p| (p - dij).abs() <= eps) {
        return Relation::SecondParent;
    }
    if phis.iter().all(|p| (p + dij).abs() <= eps) {
        return Relation::FirstParent;
    }
    let lo = phis.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = phis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= eps && lo > -dij + eps && hi < dij - eps {
        Relation::Siblings
    } else {
        Relation::None
    }
}

/// Groups the `patch` nodes of `d` into a tree, adding latent nodes (with
/// estimated distances) to `d` as needed. Returns the edges, or `None` when
/// some round finds no relation among three or more active nodes.
///
/// `gates` maps nodes outside the patch to the patch node through which the
/// surrounding tree reaches them; it is kept current as nodes are grouped.
pub(crate) fn group_patch(
    d: &mut InformationDistanceMatrix,
    patch: &[usize],
    tol: f64,
    gates: &mut HashMap<usize, usize>,
    new_name: &mut dyn FnMut() -> String,
) -> Option<(Vec<(usize, usize)>, Vec<usize>)> {
    let mut active = patch.to_vec();
    let mut edges = Vec::new();
    let mut latents = Vec::new();
    loop {
        if active.len() <= 2 {
            if active.len() == 2 {
                edges.push((active[0], active[1]));
            }
            return Some((edges, latents));
        }
        let n = active.len();
        let mut rel = vec![vec![Relation::None; n]; n];
        let mut comp: Vec<usize> = (0..n).collect();
        fn find(c: &mut [usize], mut x: usize) -> usize {
            while c[x] != x {
                c[x] = c[c[x]];
                x = c[x];
            }
            x
        }
        let mut any = false;
        for a in 0..n {
            for b in a + 1..n {
                let r = relation(d, &active, active[a], active[b], tol);
                rel[a][b] = r;
                rel[b][a] = match r {
                    Relation::FirstParent => Relation::SecondParent,
                    Relation::SecondParent => Relation::FirstParent,
                    other => other,
                };
                if r != Relation::None {
                    any = true;
                    let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
                    comp[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        if !any {
            return None;
        }
        let mut families: Vec<Vec<usize>> = Vec::new();
        let mut roots: Vec<usize> = Vec::new();
        for a in 0..n {
            let r = find(&mut comp, a);
            match roots.iter().position(|&x| x == r) {
                Some(p) => families[p].push(a),
                None => {
                    roots.push(r);
                    families.push(vec![a]);
                }
            }
        }
        let mut next = Vec::new();
        for fam in families {
            if fam.len() == 1 {
                next.push(active[fam[0]]);
                continue;
            }
            let parent = fam
                .iter()
                .copied()
                .find(|&p| fam.iter().all(|&c| c == p || rel[p][c] == Relation::FirstParent));
            if let Some(p) = parent {
                for &c in &fam {
                    if c != p {
                        edges.push((active[p], active[c]));
                        reroute(gates, active[c], active[p]);
                    }
                }
                next.push(active[p]);
                continue;
            }
            let members: Vec<usize> = fam.iter().map(|&a| active[a]).collect();
            let h = add_latent(d, &active, &members, gates, new_name());
            for &m in &members {
                edges.push((h, m));
                reroute(gates, m, h);
                gates.insert(m, h);
            }
            latents.push(h);
            next.push(h);
        }
        active = next;
    }
}

fn reroute(gates: &mut HashMap<usize, usize>, from: usize, to: usize) {
    gates.values_mut().filter(|g| **g == from).for_each(|g| *g = to);
}

/// Adds a latent joining `members` to the distance matrix. Member-to-latent
/// distances average the additive solve over partners and witnesses. Any
/// other node is reached through the members, except that a node lying
/// beyond one member is reached only through the others.
fn add_latent(d: &mut InformationDistanceMatrix, active: &[usize], members: &[usize], gates: &HashMap<usize, usize>, name: String) -> usize {
    let to_member: Vec<f64> = members
        .iter()
        .map(|&i| {
            let mut acc = 0.0;
            let mut count = 0usize;
            for &j in members.iter().filter(|&&j| j != i) {
                let phis: Vec<f64> = active
                    .iter()
                    .filter(|&&k| k != i && k != j)
                    .map(|&k| d.get(i, k) - d.get(j, k))
                    .filter(|p| p.is_finite())
                    .collect();
                if phis.is_empty() || !d.get(i, j).is_finite() {
                    continue;
                }
                let phi = phis.iter().sum::<f64>() / phis.len() as f64;
                acc += 0.5 * (d.get(i, j) + phi);
                count += 1;
            }
            if count == 0 { f64::INFINITY } else { (acc / count as f64).max(0.0) }
        })
        .collect();
    let mut row = vec![0.0; d.len()];
    for (k, slot) in row.iter_mut().enumerate() {
        if let Some(p) = members.iter().position(|&m| m == k) {
            *slot = to_member[p];
        } else {
            let gate = gates.get(&k).copied();
            let (s, n) = members
                .iter()
                .zip(&to_member)
                .filter(|(&i, _)| Some(i) != gate)
                .fold((0.0, 0usize), |(s, n), (&i, &dih)| (s + d.get(i, k) - dih, n + 1));
            *slot = (s / n as f64).max(0.0);
        }
    }
    d.push(name, row);
    d.len() - 1
}

/// Recursive grouping on a patch of a distance matrix. `tolerance` is
/// relative to each pair's distance. The matrix gains a row per new latent.
/// With no relation found among three or more nodes the patch nodes are
/// returned ungrouped (no edges).
pub fn recursive_grouping<S: AsRef<str>>(distances: &mut InformationDistanceMatrix, patch: &[S], tolerance: f64) -> Result<LocalTree> {
    let idx = patch
        .iter()
        .map(|p| {
            distances
                .index_of(p.as_ref())
                .ok_or_else(|| Error::UnknownVariable(p.as_ref().to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    if idx.len() < 3 {
        return Ok(LocalTree { edges: Vec::new(), latents: Vec::new() });
    }
    let taken = distances.variables.clone();
    let mut names = fresh_names(&taken, "h", idx.len()).into_iter();
    let mut next = || names.next().expect("a patch of n nodes adds fewer than n latents");
    let out = group_patch(distances, &idx, tolerance, &mut HashMap::new(), &mut next);
    let Some((edges, latents)) = out else {
        return Ok(LocalTree { edges: Vec::new(), latents: Vec::new() });
    };
    let name = |i: usize| distances.variables[i].clone();
    Ok(LocalTree {
        edges: edges.iter().map(|&(a, b)| (name(a), name(b))).collect(),
        latents: latents.iter().map(|&h| name(h)).collect(),
    })
}

/// Learns a latent tree by Chow-Liu plus recursive grouping: each internal
/// node's neighborhood in the Chow-Liu tree is regrouped once, internal
/// observed nodes are then replaced by a latent with the observed node as a
/// leaf, and latent cardinalities are chosen by BIC.
pub fn clrg(data: &WeightedDataset, config: &StructureConfig) -> Result<LatentTreeModel> {
    config.validate()?;
    let names: Vec<String> = data.variable_names().iter().map(|s| s.to_string()).collect();
    if names.len() < 3 {
        return Err(Error::InvalidArgument("CLRG needs at least three observed variables".into()));
    }
    let cl = chow_liu(data, &names, config.statistic_smoothing)?;
    let mut d = InformationDistanceMatrix::from_dataset(data, config.statistic_smoothing)?;
    let scale = (REFERENCE_WEIGHT / data.total_weight() as f64).sqrt().min(1.0);
    let tol = config.grouping_tolerance * scale;

    let n = names.len();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in cl.edges() {
        adj[a].insert(b);
        adj[b].insert(a);
    }
    let mut latent_names = fresh_names(&names, "H", 4 * n).into_iter();
    let mut new_name = || latent_names.next().expect("enough latent names");
    let internal: Vec<usize> = (0..n).filter(|&v| adj[v].len() >= 2).collect();
    for i in internal {
        if adj[i].len() < 2 {
            continue;
        }
        let mut patch = vec![i];
        patch.extend(adj[i].iter().copied());
        let mut gates = HashMap::new();
        for &m in &patch[1..] {
            let mut stack = vec![m];
            let mut seen: HashSet<usize> = [i, m].into_iter().collect();
            while let Some(v) = stack.pop() {
                for &u in &adj[v] {
                    if seen.insert(u) {
                        gates.insert(u, m);
                        stack.push(u);
                    }
                }
            }
        }
        let res = group_patch(&mut d, &patch, tol, &mut gates, &mut new_name);

        let Some((edges, _)) = res else {
            continue;
        };
        for &u in &patch[1..] {
            adj[i].remove(&u);
            adj[u].remove(&i);
        }
        adj.resize(d.len(), BTreeSet::new());
        for (a, b) in edges {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }

    // Observed nodes must be leaves: an internal one becomes a latent with
    // the observed variable hanging off it.
    let mut variables: Vec<Variable> = data.variables().to_vec();
    variables.extend(d.variables[n..].iter().map(|h| Variable::latent(h.clone(), 2)));
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut replacement: Vec<usize> = (0..variables.len()).collect();
    for v in 0..n {
        if adj[v].len() >= 2 {
            replacement[v] = variables.len();
            variables.push(Variable::latent(new_name(), 2));
        }
    }
    for a in 0..adj.len() {
        for &b in &adj[a] {
            if a < b {
                edges.push((replacement[a], replacement[b]));
            }
        }
    }
    for v in 0..n {
        if replacement[v] != v {
            edges.push((replacement[v], v));
        }
    }
    let structure = LatentTreeStructure::new(variables, edges);
    let problems = structure.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidModel(problems));
    }
    let (model, _) = search_cardinalities(&structure, data, config)?;
    Ok(model.regularize())
}
