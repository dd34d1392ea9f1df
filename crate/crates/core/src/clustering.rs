//! Clustering with latent tree models.
//!
//! A unidimensional model clusters records by one designated latent `Z`
//! that sits above feature latents, so items sharing a feature latent may
//! stay dependent given `Z`. Every latent of a fitted model also induces a
//! soft partition of the records.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Variable, WeightedDataset};
use crate::em::em_fit;
use crate::error::{Error, Result};
use crate::inference::{argmax, row_posteriors};
use crate::model::{bic_score, max_regular_cardinality, LatentTreeModel, LatentTreeStructure};
use crate::structure::mi::mi_of_counts;
use crate::structure::{bridge_islands, build_islands, fresh_names, search_cardinalities, StructureConfig};

/// A fitted unidimensional clustering model.
#[derive(Clone, Debug, PartialEq)]
pub struct UnidimensionalModel {
    pub model: LatentTreeModel,
    /// Name of the clustering latent.
    pub designated: String,
    pub bic: f64,
    /// Latents of the flat model kept as features of `designated`; the
    /// others were bypassed.
    pub features: Vec<String>,
}

/// Latent class model over every column: one latent `latent` with all
/// variables as children, cardinality searched by BIC.
pub fn latent_class_model(data: &WeightedDataset, latent: &str, config: &StructureConfig) -> Result<(LatentTreeModel, f64)> {
    let mut vars = vec![Variable::latent(latent, 2)];
    vars.extend(data.variables().iter().cloned());
    let edges = (1..vars.len()).map(|i| (0, i)).collect();
    search_cardinalities(&LatentTreeStructure::new(vars, edges), data, config)
}

struct Cluster {
    latent: Variable,
    siblings: Vec<Variable>,
}

fn star_over_clusters(z: &Variable, clusters: &[Cluster], features: &[bool]) -> LatentTreeStructure {
    let mut vars = vec![z.clone()];
    let mut edges = Vec::new();
    for (c, &feature) in clusters.iter().zip(features) {
        let attach = if feature {
            vars.push(c.latent.clone());
            edges.push((0, vars.len() - 1));
            vars.len() - 1
        } else {
            0
        };
        for s in &c.siblings {
            vars.push(s.clone());
            edges.push((attach, vars.len() - 1));
        }
    }
    LatentTreeStructure::new(vars, edges)
}

fn fit(structure: &LatentTreeStructure, z: &str, data: &WeightedDataset, config: &StructureConfig) -> Result<(LatentTreeModel, f64)> {
    let run = em_fit(structure, z, data, &config.em)?.best;
    let bic = bic_score(run.log_likelihood, run.model.dimension(), data.total_weight());
    Ok((run.model, bic))
}

/// Grows the cardinality of node 0 (`Z`) from `start` while BIC improves.
fn search_z(structure: &LatentTreeStructure, start: usize, data: &WeightedDataset, config: &StructureConfig) -> Result<(LatentTreeModel, f64)> {
    let neighbor_cards: Vec<usize> = structure.adjacency()[0]
        .iter()
        .map(|&u| structure.variables()[u].cardinality)
        .collect();
    let cap = max_regular_cardinality(&neighbor_cards).min(config.max_cardinality).max(2);
    let with = |c: usize| {
        let mut vars = structure.variables().to_vec();
        vars[0].cardinality = c;
        LatentTreeStructure::new(vars, structure.edges().to_vec())
    };
    let z = structure.variables()[0].name.clone();
    let mut card = start.clamp(2, cap);
    let mut best = fit(&with(card), &z, data, config)?;
    while card < cap {
        let candidate = fit(&with(card + 1), &z, data, config)?;
        if candidate.1 <= best.1 {
            break;
        }
        best = candidate;
        card += 1;
    }
    Ok(best)
}

/// Exact mutual information between two adjacent nodes of a model.
fn edge_mi(model: &LatentTreeModel, parent: usize, child: usize) -> Result<f64> {
    let marg = &model.node_marginals()[parent];
    let cond = model.descendant_given_ancestor(parent, child)?;
    let (cp, cc) = (model.cardinality(parent), model.cardinality(child));
    let joint: Vec<f64> = (0..cp * cc).map(|k| marg[k / cc] * cond[k]).collect();
    Ok(mi_of_counts(&joint, cp, cc))
}

/// Unidimensional clustering model: a flat model from bridged islands
/// provides sibling clusters, a new root `Z` links the feature latents,
/// and a greedy pass decides for each cluster (most informative about `Z`
/// first) whether its latent is kept as a feature or its items attach to
/// `Z` directly. A change is kept only if it improves BIC. The cardinality
/// of `Z` is searched before and after the pass.
pub fn build_unidimensional_model(data: &WeightedDataset, config: &StructureConfig) -> Result<UnidimensionalModel> {
    config.validate()?;
    if data.num_variables() < 3 {
        return Err(Error::InvalidArgument("clustering needs at least 3 observed variables".into()));
    }
    let names = data.variable_names();
    let z_name = if names.contains(&"Z") { fresh_names(&names, "Z", 1).remove(0) } else { "Z".to_string() };

    let islands = build_islands(data, config)?;
    if islands.len() == 1 {
        let (model, bic) = latent_class_model(data, &z_name, config)?;
        return Ok(UnidimensionalModel { model, designated: z_name, bic, features: Vec::new() });
    }
    let flat = bridge_islands(&islands, data, config)?;
    let clusters: Vec<Cluster> = flat
        .latent_nodes()
        .into_iter()
        .map(|h| Cluster {
            latent: flat.variable(h).clone(),
            siblings: flat
                .neighbors(h)
                .into_iter()
                .filter(|&u| flat.variable(u).is_observed())
                .map(|u| flat.variable(u).clone())
                .collect(),
        })
        .filter(|c| !c.siblings.is_empty())
        .collect();
    let z = Variable::latent(&z_name, 2);

    let mut features = vec![true; clusters.len()];
    let mut best = search_z(&star_over_clusters(&z, &clusters, &features), 2, data, config)?;
    let z_card = |m: &LatentTreeModel| m.variables().iter().find(|v| v.name == z_name).map_or(2, |v| v.cardinality);
    let rooted = &best.0;
    let mut order: Vec<(usize, f64)> = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let h = rooted.require(&c.latent.name)?;
            Ok((i, edge_mi(rooted, rooted.root(), h)?))
        })
        .collect::<Result<_>>()?;
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    log::debug!("feature order by MI with {z_name}: {order:?}");

    for &(i, _) in &order {
        features[i] = !features[i];
        let mut zv = z.clone();
        zv.cardinality = z_card(&best.0);
        let candidate = fit(&star_over_clusters(&zv, &clusters, &features), &z_name, data, config)?;
        if candidate.1 > best.1 {
            log::debug!("bypassing {} improves BIC to {:.3}", clusters[i].latent.name, candidate.1);
            best = candidate;
        } else {
            features[i] = !features[i];
        }
    }
    let last = search_z(&star_over_clusters(&z, &clusters, &features), z_card(&best.0), data, config)?;
    if last.1 > best.1 {
        best = last;
    }
    Ok(UnidimensionalModel {
        model: best.0,
        designated: z_name,
        bic: best.1,
        features: clusters
            .iter()
            .zip(&features)
            .filter(|(_, &f)| f)
            .map(|(c, _)| c.latent.name.clone())
            .collect(),
    })
}

/// Which latents [`extract_partitions`] reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PartitionSelection {
    All,
    Designated(String),
}

/// Soft partition of a dataset's distinct rows by one latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub source: String,
    pub cardinality: usize,
    /// Posterior of the latent for each distinct row of the dataset.
    pub posteriors: Vec<Vec<f64>>,
    /// Posterior mode per distinct row, lowest state on ties.
    pub labels: Vec<usize>,
    /// Multiplicity of each distinct row.
    pub weights: Vec<u64>,
}

impl Partition {
    /// Hard label of every record, rows expanded by their weights.
    pub fn record_labels(&self) -> Vec<usize> {
        expand(&self.labels, &self.weights)
    }

    /// Weighted share of records per label.
    pub fn sizes(&self) -> Vec<f64> {
        let total: u64 = self.weights.iter().sum();
        let mut out = vec![0.0; self.cardinality];
        for (&l, &w) in self.labels.iter().zip(&self.weights) {
            out[l] += w as f64 / total as f64;
        }
        out
    }
}

/// Repeats each value by its weight.
pub fn expand<T: Clone>(values: &[T], weights: &[u64]) -> Vec<T> {
    values
        .iter()
        .zip(weights)
        .flat_map(|(v, &w)| std::iter::repeat_n(v.clone(), w as usize))
        .collect()
}

/// Posterior partitions of `data` by the selected latents. Columns of
/// `data` that are not model variables (class labels, for instance) are
/// ignored; every observed model variable must be present.
pub fn extract_partitions(model: &LatentTreeModel, data: &WeightedDataset, which: &PartitionSelection) -> Result<Vec<Partition>> {
    let targets: Vec<usize> = match which {
        PartitionSelection::All => model.latent_nodes(),
        PartitionSelection::Designated(name) => {
            let v = model.require(name)?;
            if !model.variable(v).is_latent() {
                return Err(Error::InvalidArgument(format!("`{name}` is not latent")));
            }
            vec![v]
        }
    };
    let cols = model
        .observed_names()
        .iter()
        .map(|n| data.require_column(n))
        .collect::<Result<Vec<_>>>()?;
    let projected = data.project_indices(&cols)?;
    let posts = row_posteriors(model, &projected, &targets)?;
    let lookup: HashMap<&[usize], usize> = projected
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.values.as_slice(), i))
        .collect();
    let index: Vec<usize> = data
        .rows()
        .iter()
        .map(|r| {
            let key: Vec<usize> = cols.iter().map(|&c| r.values[c]).collect();
            lookup[key.as_slice()]
        })
        .collect();
    let weights: Vec<u64> = data.rows().iter().map(|r| r.weight).collect();
    Ok(targets
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let posteriors: Vec<Vec<f64>> = index.iter().map(|&i| posts[i][k].clone()).collect();
            Partition {
                source: model.name(t).to_string(),
                cardinality: model.cardinality(t),
                labels: posteriors.iter().map(|p| argmax(p)).collect(),
                posteriors,
                weights: weights.clone(),
            }
        })
        .collect())
}

/// `data` with one extra column per partition holding its hard labels.
pub fn append_label_columns(data: &WeightedDataset, partitions: &[Partition]) -> Result<WeightedDataset> {
    let mut vars = data.variables().to_vec();
    for p in partitions {
        if p.labels.len() != data.num_rows() {
            return Err(Error::InvalidArgument(format!("partition `{}` does not match the dataset", p.source)));
        }
        vars.push(Variable::observed(&p.source, p.cardinality));
    }
    let rows = data.rows().iter().enumerate().map(|(i, r)| {
        let mut values = r.values.clone();
        values.extend(partitions.iter().map(|p| p.labels[i]));
        (values, r.weight)
    });
    WeightedDataset::from_weighted_rows(vars, rows)
}

/// `P(variable | latent)` per latent state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub variable: String,
    /// `conditionals[s][k] = P(variable = k | latent = s)`.
    pub conditionals: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionProfile {
    pub latent: String,
    pub shares: Vec<f64>,
    /// Observed variables by mutual information with the latent, descending.
    pub rows: Vec<ProfileRow>,
}

impl PartitionProfile {
    /// A share row, then one row per variable state (binary variables show
    /// only state 1).
    pub fn to_text(&self) -> String {
        let mut out = self.latent.clone();
        for s in 0..self.shares.len() {
            out.push_str(&format!("\ts{s}"));
        }
        out.push_str("\nshare");
        for p in &self.shares {
            out.push_str(&format!("\t{p:.2}"));
        }
        out.push('\n');
        for row in &self.rows {
            let card = row.conditionals[0].len();
            let states: Vec<usize> = if card == 2 { vec![1] } else { (0..card).collect() };
            for k in states {
                if card == 2 {
                    out.push_str(&row.variable);
                } else {
                    out.push_str(&format!("{}={k}", row.variable));
                }
                for c in &row.conditionals {
                    out.push_str(&format!("\t{:.2}", c[k]));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Per-state profile of `latent`: its prior and the exact conditionals of
/// up to `max_variables` observed variables.
pub fn describe_partition(model: &LatentTreeModel, latent: &str, max_variables: usize) -> Result<PartitionProfile> {
    let v = model.require(latent)?;
    if !model.variable(v).is_latent() {
        return Err(Error::InvalidArgument(format!("`{latent}` is not latent")));
    }
    let m = model.reroot_at(v);
    let shares = m.table(v).to_vec();
    let cz = m.cardinality(v);
    let mut rows: Vec<(f64, ProfileRow)> = m
        .observed_nodes()
        .into_iter()
        .map(|w| {
            let cw = m.cardinality(w);
            let cond = m.descendant_given_ancestor(v, w)?;
            let joint: Vec<f64> = (0..cz * cw).map(|k| shares[k / cw] * cond[k]).collect();
            Ok((
                mi_of_counts(&joint, cz, cw),
                ProfileRow {
                    variable: m.name(w).to_string(),
                    conditionals: cond.chunks(cw).map(|c| c.to_vec()).collect(),
                },
            ))
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.variable.cmp(&b.1.variable)));
    rows.truncate(max_variables);
    Ok(PartitionProfile {
        latent: latent.to_string(),
        shares,
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

fn contingency(a: &[usize], b: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("label lengths differ: {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("no labels".into()));
    }
    let ra = a.iter().max().unwrap() + 1;
    let rb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0.0; rb]; ra];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    Ok((table, a.len() as f64))
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts.filter(|&c| c > 0.0).map(|c| -(c / n) * (c / n).ln()).sum()
}

/// `I(a; b) / sqrt(H(a) H(b))` over paired labels; 0 when either entropy
/// is 0.
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    let (table, n) = contingency(a, b)?;
    let ha = entropy(table.iter().map(|r| r.iter().sum()), n);
    let hb = entropy((0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()), n);
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let hab = entropy(table.iter().flatten().copied(), n);
    let mi = (ha + hb - hab).max(0.0);
    Ok((mi / (ha * hb).sqrt()).min(1.0))
}

/// Adjusted Rand index between two labelings; 1 for identical partitions
/// up to relabeling.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let (table, n) = contingency(a, b)?;
    let pairs = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let sa: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let sb: f64 = (0..table[0].len()).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let expected = sa * sb / pairs(n);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::forward_sample;
    use crate::em::EmConfig;
    use crate::inference::brute_force_joint;
    use crate::synthetic::{lcm, random_model, two_layer_generator};

    fn quick() -> StructureConfig {
        StructureConfig {
            em: EmConfig { restarts: 3, ..EmConfig::default() },
            ..StructureConfig::default()
        }
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(normalized_mutual_information(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        let same = normalized_mutual_information(&[0, 1, 2, 1, 0], &[2, 0, 1, 0, 2]).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        assert_eq!(normalized_mutual_information(&[0, 0, 0], &[0, 1, 1]).unwrap(), 0.0);
        assert!(normalized_mutual_information(&[0, 1], &[0]).is_err());
        // Contingency [[2,1],[0,1]]: MI and entropies by hand.
        let a = [0, 0, 0, 1];
        let b = [0, 0, 1, 1];
        let h = |p: &[f64]| -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
        let mi = h(&[0.75, 0.25]) + h(&[0.5, 0.5]) - h(&[0.5, 0.25, 0.25]);
        let expect = mi / (h(&[0.75, 0.25]) * h(&[0.5, 0.5])).sqrt();
        assert!((normalized_mutual_information(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ari_examples() {
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() - 1.0).abs() < 1e-12);
        // Pair counting by hand: index 1, row pairs 2, column pairs 3, C(4,2) = 6.
        let expect = (1.0 - 2.0 * 3.0 / 6.0) / (2.5 - 2.0 * 3.0 / 6.0);
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn lcm_gives_one_partition_and_labels_are_modes() {
        let m = lcm(4, 2);
        let data = forward_sample(&m, 500, 1).unwrap();
        let parts = extract_partitions(&m, &data, &PartitionSelection::All).unwrap();
        assert_eq!(parts.len(), 1);
        let p = &parts[0];
        assert_eq!(p.posteriors.len(), data.num_rows());
        for (post, &l) in p.posteriors.iter().zip(&p.labels) {
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(l, argmax(post));
        }
        assert_eq!(p.record_labels().len() as u64, data.total_weight());
    }

    #[test]
    fn every_latent_gives_a_partition() {
        let m = random_model(4, 14, 3);
        let data = forward_sample(&m, 300, 2).unwrap();
        let parts = extract_partitions(&m, &data, &PartitionSelection::All).unwrap();
        assert_eq!(parts.len(), m.latent_nodes().len());
    }

    #[test]
    fn extra_columns_are_ignored() {
        let m = lcm(3, 2);
        let data = forward_sample(&m, 400, 3).unwrap();
        let parts = extract_partitions(&m, &data, &PartitionSelection::Designated("Y".into())).unwrap();
        let labelled = append_label_columns(&data, &parts).unwrap();
        assert_eq!(labelled.num_variables(), 4);
        let again = extract_partitions(&m, &labelled, &PartitionSelection::Designated("Y".into())).unwrap();
        assert_eq!(again[0].sizes(), parts[0].sizes());
        assert!(extract_partitions(&m, &data, &PartitionSelection::Designated("X0".into())).is_err());
    }

    #[test]
    fn deterministic_model_gives_one_hot_posteriors() {
        let mut m = lcm(3, 2);
        for v in m.observed_nodes() {
            m.set_table(v, vec![1.0, 0.0, 0.0, 1.0]);
        }
        let data = forward_sample(&m, 200, 4).unwrap();
        let parts = extract_partitions(&m, &data, &PartitionSelection::All).unwrap();
        for p in &parts[0].posteriors {
            assert!(p.iter().all(|&x| x == 0.0 || x == 1.0));
        }
    }

    #[test]
    fn profile_matches_enumeration() {
        for seed in 0..5 {
            let m = random_model(seed, 8, 3);
            let h = m.latent_nodes()[0];
            let name = m.name(h).to_string();
            let prof = describe_partition(&m, &name, usize::MAX).unwrap();
            let joint = brute_force_joint(&m).unwrap();
            for row in &prof.rows {
                let pair = joint.marginalize(&[name.as_str(), row.variable.as_str()]).unwrap();
                let cw = row.conditionals[0].len();
                for s in 0..m.cardinality(h) {
                    let ps: f64 = pair.probabilities[s * cw..(s + 1) * cw].iter().sum();
                    assert!((ps - prof.shares[s]).abs() < 1e-10);
                    for k in 0..cw {
                        assert!((pair.probabilities[s * cw + k] / ps - row.conditionals[s][k]).abs() < 1e-10);
                    }
                }
            }
            assert_eq!(prof.rows.len(), m.observed_nodes().len());
        }
    }

    #[test]
    fn uniform_model_profiles_match_across_states() {
        let m = LatentTreeModel::uniform(lcm(3, 2).structure().clone(), 0).unwrap();
        let prof = describe_partition(&m, "Y", 10).unwrap();
        for row in &prof.rows {
            assert_eq!(row.conditionals[0], row.conditionals[1]);
        }
        let text = prof.to_text();
        assert!(text.lines().nth(1).unwrap().starts_with("share\t0.50\t0.50"));
    }

    #[test]
    fn unidimensional_model_beats_lcm_on_two_layer_data() {
        let data = forward_sample(&two_layer_generator(), 5_000, 7).unwrap();
        let cfg = quick();
        let u = build_unidimensional_model(&data, &cfg).unwrap();
        let z = u.model.require(&u.designated).unwrap();
        assert!(u.model.variable(z).is_latent());
        assert!(u.model.validate().is_empty());
        let (_, lcm_bic) = latent_class_model(&data, "Y", &cfg).unwrap();
        assert!(u.bic > lcm_bic, "{} vs {}", u.bic, lcm_bic);
    }

    #[test]
    fn needs_three_variables() {
        let data = WeightedDataset::from_records(vec![Variable::binary("a"), Variable::binary("b")], vec![vec![0, 1]]).unwrap();
        assert!(build_unidimensional_model(&data, &quick()).is_err());
    }
}
