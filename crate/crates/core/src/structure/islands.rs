use std::collections::HashMap;

use crate::data::{Variable, WeightedDataset};
use crate::em::{em_refine, progressive_em};
use crate::error::{Error, Result};
use crate::inference::{argmax, row_posteriors};
use crate::model::{LatentTreeModel, LatentTreeStructure};

use super::chow_liu::maximum_spanning_tree;
use super::mi::mi_matrix;
use super::search::{fresh_names, search_cardinalities, search_with_extra};
use super::StructureConfig;

/// Subsets up to this size have every bipartition tried in the
/// unidimensionality test.
const EXHAUSTIVE_PARTITION_LIMIT: usize = 5;

/// A unidimensional group of observed variables with its fitted one-latent
/// model.
#[derive(Clone, Debug)]
pub struct Island {
    pub latent: Variable,
    pub members: Vec<String>,
    pub model: LatentTreeModel,
}

#[derive(Clone, Debug)]
pub struct UnidimensionalityOutcome {
    pub unidimensional: bool,
    pub one: LatentTreeModel,
    pub bic_one: f64,
    /// Best two-latent model, its BIC and its two sides. Absent for pairs.
    pub two: Option<(LatentTreeModel, f64, [Vec<String>; 2])>,
}

/// One latent over `members`, cardinality searched.
fn fit_lcm(data: &WeightedDataset, members: &[String], latent: &str, config: &StructureConfig, extra: Option<usize>) -> Result<(LatentTreeModel, f64)> {
    let mut vars = vec![Variable::latent(latent, 2)];
    let mut edges = Vec::new();
    for (i, m) in members.iter().enumerate() {
        let c = data.require_column(m)?;
        vars.push(data.variables()[c].clone());
        edges.push((0, i + 1));
    }
    let s = LatentTreeStructure::new(vars, edges);
    let projected = data.project(members)?;
    search_with_extra(&s, &projected, config, &|v| if v == 0 { extra } else { None })
}

/// Two adjacent latents holding `sides[0]` and `sides[1]`.
fn fit_two(data: &WeightedDataset, sides: &[Vec<String>; 2], names: &[String], config: &StructureConfig) -> Result<(LatentTreeModel, f64)> {
    let mut vars = vec![Variable::latent(&names[0], 2), Variable::latent(&names[1], 2)];
    let mut edges = vec![(0, 1)];
    let mut all = Vec::new();
    for (side, members) in sides.iter().enumerate() {
        for m in members {
            let c = data.require_column(m)?;
            edges.push((side, vars.len()));
            vars.push(data.variables()[c].clone());
            all.push(m.clone());
        }
    }
    let s = LatentTreeStructure::new(vars, edges);
    let projected = data.project(&all)?;
    search_cardinalities(&s, &projected, config)
}

/// Candidate bipartitions of `subset`, given in order of addition.
fn partitions(subset: &[String], mi: &dyn Fn(&str, &str) -> f64) -> Vec<[Vec<String>; 2]> {
    let n = subset.len();
    if n <= EXHAUSTIVE_PARTITION_LIMIT {
        // Element 0 always on the first side, the second side non-empty.
        return (0..(1usize << (n - 1)) - 1)
            .map(|mask| {
                let mut a = vec![subset[0].clone()];
                let mut b = Vec::new();
                for (i, v) in subset.iter().enumerate().skip(1) {
                    if mask >> (i - 1) & 1 == 1 { a.push(v.clone()) } else { b.push(v.clone()) }
                }
                [a, b]
            })
            .collect();
    }
    let mut out = Vec::new();

    // The newest variable with its closest partner against the rest.
    let last = &subset[n - 1];
    let partner = subset[..n - 1]
        .iter()
        .max_by(|a, b| mi(last, a).total_cmp(&mi(last, b)).then(b.cmp(a)))
        .unwrap();
    out.push([
        vec![partner.clone(), last.clone()],
        subset.iter().filter(|v| *v != last && *v != partner).cloned().collect(),
    ]);

    // Bisection seeded by the least dependent pair, each remaining variable
    // joining the side it shares more average information with.
    let mut seed = (f64::INFINITY, 0, 1);
    for i in 0..n {
        for j in i + 1..n {
            let v = mi(&subset[i], &subset[j]);
            if v < seed.0 {
                seed = (v, i, j);
            }
        }
    }
    let mut sides = [vec![subset[seed.1].clone()], vec![subset[seed.2].clone()]];
    let mut rest: Vec<&String> = subset.iter().filter(|v| **v != subset[seed.1] && **v != subset[seed.2]).collect();
    let strength = |v: &str| mi(v, &subset[seed.1]).max(mi(v, &subset[seed.2]));
    rest.sort_by(|a, b| strength(b).total_cmp(&strength(a)).then(a.cmp(b)));
    for v in rest {
        let avg = |side: &Vec<String>| side.iter().map(|s| mi(v, s)).sum::<f64>() / side.len() as f64;
        let k = if avg(&sides[0]) >= avg(&sides[1]) { 0 } else { 1 };
        sides[k].push(v.clone());
    }
    if sides != out[0] && [sides[1].clone(), sides[0].clone()] != out[0] {
        out.push(sides);
    }
    out
}

fn pairwise_mi<'a>(data: &'a WeightedDataset, config: &StructureConfig) -> impl Fn(&str, &str) -> f64 + 'a {
    let cols: Vec<usize> = (0..data.num_variables()).collect();
    let m = mi_matrix(data, &cols, config.statistic_smoothing);
    move |a: &str, b: &str| {
        let i = data.column_index(a).expect("column");
        let j = data.column_index(b).expect("column");
        m[i][j]
    }
}

/// Compares the best one-latent model on `subset` with the best two-latent
/// model. `subset` is taken in order of addition: its last variable is the
/// newest.
pub fn unidimensionality_test<S: AsRef<str>>(data: &WeightedDataset, subset: &[S], config: &StructureConfig) -> Result<UnidimensionalityOutcome> {
    config.validate()?;
    let subset: Vec<String> = subset.iter().map(|s| s.as_ref().to_string()).collect();
    if subset.len() < 2 || subset.len() > config.max_island_size {
        return Err(Error::InvalidArgument(format!(
            "unidimensionality test needs 2 to {} variables, got {}",
            config.max_island_size,
            subset.len()
        )));
    }
    let local = data.project(&subset)?;
    let mi = pairwise_mi(&local, config);
    ud_test(&local, &subset, config, &mi)
}

fn ud_test(data: &WeightedDataset, subset: &[String], config: &StructureConfig, mi: &dyn Fn(&str, &str) -> f64) -> Result<UnidimensionalityOutcome> {
    let names = fresh_names(subset, "U", 2);
    let (one, bic_one) = fit_lcm(data, subset, &names[0], config, None)?;
    if subset.len() == 2 {
        return Ok(UnidimensionalityOutcome {
            unidimensional: true,
            one,
            bic_one,
            two: None,
        });
    }
    let mut best: Option<(LatentTreeModel, f64, [Vec<String>; 2])> = None;
    for sides in partitions(subset, mi) {
        let (m, bic) = fit_two(data, &sides, &names, config)?;
        if best.as_ref().is_none_or(|b| bic > b.1) {
            best = Some((m, bic, sides));
        }
    }
    let two = best.expect("at least one partition");
    Ok(UnidimensionalityOutcome {
        unidimensional: two.1 - bic_one <= config.ud_threshold,
        one,
        bic_one,
        two: Some(two),
    })
}

/// Partitions the observed variables into unidimensional islands, each
/// with a fitted one-latent model. Latents are named `{prefix}{k}`.
pub(crate) fn build_islands_named(data: &WeightedDataset, config: &StructureConfig, prefix: &str) -> Result<Vec<Island>> {
    config.validate()?;
    let names: Vec<String> = data.variable_names().iter().map(|s| s.to_string()).collect();
    if names.len() < 2 {
        return Err(Error::InvalidArgument("islands need at least two observed variables".into()));
    }
    let mi = pairwise_mi(data, config);
    let mut unassigned: Vec<String> = names.clone();
    let mut groups: Vec<Vec<String>> = Vec::new();
    while !unassigned.is_empty() {
        if unassigned.len() == 1 {
            let v = unassigned.pop().unwrap();
            if groups.is_empty() {
                groups.push(vec![v]);
            } else {
                let link = |g: &Vec<String>| g.iter().map(|m| mi(&v, m)).fold(f64::NEG_INFINITY, f64::max);
                let mut k = 0;
                for (i, g) in groups.iter().enumerate() {
                    if link(g) > link(&groups[k]) {
                        k = i;
                    }
                }
                groups[k].push(v);
            }
            break;
        }
        let mut seed = (f64::NEG_INFINITY, 0, 1);
        for i in 0..unassigned.len() {
            for j in i + 1..unassigned.len() {
                let v = mi(&unassigned[i], &unassigned[j]);
                if v > seed.0 {
                    seed = (v, i, j);
                }
            }
        }
        let mut island = vec![unassigned[seed.1].clone(), unassigned[seed.2].clone()];
        loop {
            if island.len() >= config.max_island_size {
                break;
            }
            let candidate = unassigned
                .iter()
                .filter(|v| !island.contains(v))
                .map(|v| (island.iter().map(|m| mi(v, m)).fold(f64::NEG_INFINITY, f64::max), v))
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(a.1)));
            let Some((_, next)) = candidate else { break };
            let mut grown = island.clone();
            grown.push(next.clone());
            let local = data.project(&grown)?;
            let outcome = ud_test(&local, &grown, config, &mi)?;
            log::debug!("island {:?}: unidimensional = {}", grown, outcome.unidimensional);
            if outcome.unidimensional {
                island = grown;
                continue;
            }
            let sides = outcome.two.expect("tested sets have three or more members").2;
            let newest_side = if sides[0].contains(next) { &sides[0] } else { &sides[1] };
            let kept: Vec<String> = island.iter().filter(|v| !newest_side.contains(v)).cloned().collect();
            if kept.len() >= 2 {
                island = kept;
            }
            break;
        }
        unassigned.retain(|v| !island.contains(v));
        groups.push(island);
    }

    let latent_names = fresh_names(&names, prefix, groups.len());
    let single = groups.len() == 1;
    groups
        .into_iter()
        .zip(latent_names)
        .map(|(members, name)| {
            // Bridging adds a neighbor, so bound the search as if it were there.
            let extra = if single {
                None
            } else {
                members.iter().map(|m| data.variables()[data.column_index(m).unwrap()].cardinality).max()
            };
            let (model, _) = fit_lcm(data, &members, &name, config, extra)?;
            let latent = model.variable(model.index_of(&name).unwrap()).clone();
            Ok(Island { latent, members, model })
        })
        .collect()
}

/// Partitions the observed variables into unidimensional islands by greedy
/// growth from the most dependent unassigned pair. When a growth step fails
/// the test, the island keeps its members that the two-latent model does
/// not place with the newest variable.
pub fn build_islands(data: &WeightedDataset, config: &StructureConfig) -> Result<Vec<Island>> {
    build_islands_named(data, config, "H")
}

/// Most probable state of each island's latent for every row of `data`, in
/// row order.
pub(crate) fn map_states(model: &LatentTreeModel, latent: &str, data: &WeightedDataset) -> Result<Vec<usize>> {
    let members: Vec<String> = model.observed_names().iter().map(|s| s.to_string()).collect();
    let cols = members
        .iter()
        .map(|m| data.require_column(m))
        .collect::<Result<Vec<_>>>()?;
    let projected = data.project_indices(&cols)?;
    let target = model.require(latent)?;
    let posts = row_posteriors(model, &projected, &[target])?;
    let lookup: HashMap<&[usize], usize> = projected
        .rows()
        .iter()
        .zip(&posts)
        .map(|(r, p)| (r.values.as_slice(), argmax(&p[0])))
        .collect();
    Ok(data
        .rows()
        .iter()
        .map(|r| {
            let key: Vec<usize> = cols.iter().map(|&c| r.values[c]).collect();
            lookup[key.as_slice()]
        })
        .collect())
}

/// Links island latents by a Chow-Liu tree over their completed values and
/// refits the joined model.
pub fn bridge_islands(islands: &[Island], data: &WeightedDataset, config: &StructureConfig) -> Result<LatentTreeModel> {
    config.validate()?;
    if islands.is_empty() {
        return Err(Error::InvalidArgument("no islands to bridge".into()));
    }
    if islands.len() == 1 {
        let island = &islands[0];
        let projected = data.project(&island.members)?;
        return Ok(em_refine(&island.model, &projected, &config.em)?.model.regularize());
    }

    let states = islands
        .iter()
        .map(|i| map_states(&i.model, &i.latent.name, data))
        .collect::<Result<Vec<_>>>()?;
    let latent_vars: Vec<Variable> = islands
        .iter()
        .map(|i| Variable::observed(i.latent.name.clone(), i.latent.cardinality))
        .collect();
    let rows = (0..data.num_rows()).map(|r| (states.iter().map(|s| s[r]).collect::<Vec<_>>(), data.rows()[r].weight));
    let completed = WeightedDataset::from_weighted_rows(latent_vars.clone(), rows)?;
    let k = islands.len();
    let mi = mi_matrix(&completed, &(0..k).collect::<Vec<_>>(), config.statistic_smoothing);
    let latent_names: Vec<&str> = islands.iter().map(|i| i.latent.name.as_str()).collect();
    let links = maximum_spanning_tree(&latent_names, &mi);

    // Observed columns in dataset order, then the latents.
    let members: Vec<&String> = islands.iter().flat_map(|i| &i.members).collect();
    let mut variables: Vec<Variable> = data
        .variables()
        .iter()
        .filter(|v| members.contains(&&v.name))
        .cloned()
        .collect();
    let offset = variables.len();
    variables.extend(islands.iter().map(|i| i.latent.clone()));
    let mut edges: Vec<(usize, usize)> = links.iter().map(|&(a, b)| (offset + a, offset + b)).collect();
    for (k, island) in islands.iter().enumerate() {
        for m in &island.members {
            let v = variables.iter().position(|x| &x.name == m).unwrap();
            edges.push((offset + k, v));
        }
    }
    let structure = LatentTreeStructure::new(variables, edges);
    let root = offset;
    let projected = data.project(&structure.variables()[..offset].iter().map(|v| v.name.clone()).collect::<Vec<_>>())?;

    let model = if config.progressive {
        progressive_em(&structure, &structure.variables()[root].name, &projected, &config.em)?.run.model
    } else {
        let start = warm_start(&structure, root, islands, &completed, offset, config)?;
        em_refine(&start, &projected, &config.em)?.model
    };
    Ok(model.regularize())
}

/// Island tables for observed nodes, smoothed empirical conditionals of the
/// completed latent columns for the rest.
fn warm_start(
    structure: &LatentTreeStructure,
    root: usize,
    islands: &[Island],
    completed: &WeightedDataset,
    offset: usize,
    config: &StructureConfig,
) -> Result<LatentTreeModel> {
    let mut model = LatentTreeModel::uniform(structure.clone(), root)?;
    let s = config.em.smoothing.max(1e-3);
    for v in 0..model.num_nodes() {
        if v < offset {
            let name = model.name(v).to_string();
            let island = islands.iter().find(|i| i.members.contains(&name)).unwrap();
            let m = &island.model;
            let node = m.require(&name)?;
            if m.parent(node) == m.index_of(&island.latent.name) {
                model.set_table(v, m.table(node).to_vec());
            }
            continue;
        }
        let col = v - offset;
        let c = model.cardinality(v);
        let table = match model.parent(v) {
            None => {
                let counts = completed.marginal_counts(col);
                let total: f64 = counts.iter().sum::<f64>() + s * c as f64;
                counts.iter().map(|n| (n + s) / total).collect()
            }
            Some(p) => {
                let pc = p - offset;
                let joint = completed.joint_counts(pc, col);
                let mut t = Vec::with_capacity(joint.len());
                for row in joint.chunks(c) {
                    let total: f64 = row.iter().sum::<f64>() + s * c as f64;
                    t.extend(row.iter().map(|n| (n + s) / total));
                }
                t
            }
        };
        model.set_table(v, table);
    }
    Ok(model)
}

/// Bridged islands: islands, then bridging.
pub fn bridged_islands(data: &WeightedDataset, config: &StructureConfig) -> Result<LatentTreeModel> {
    let islands = build_islands(data, config)?;
    bridge_islands(&islands, data, config)
}
