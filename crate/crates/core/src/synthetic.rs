//! Fixed generator models for tests, benchmarks and demos.
//!
//! Parameters are deliberately asymmetric so no two edges share an
//! information distance and no latent state is exchangeable with another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Variable;
use crate::model::{LatentTreeModel, LatentTreeStructure};

fn build(variables: Vec<Variable>, edges: &[(&str, &str)], root: &str, tables: &[(&str, Vec<f64>)]) -> LatentTreeModel {
    let structure = LatentTreeStructure::from_named_edges(variables, edges).expect("generator edges");
    let r = structure.index_of(root).expect("generator root");
    let skeleton = LatentTreeModel::uniform(structure.clone(), r).expect("generator structure");
    let mut t = skeleton.tables().to_vec();
    for (name, table) in tables {
        let v = skeleton.index_of(name).expect("generator table");
        assert_eq!(t[v].len(), table.len(), "table shape for {name}");
        t[v] = table.clone();
    }
    LatentTreeModel::new(structure, r, t).expect("generator model")
}

/// Two binary latents `Y1 - Y2`; `Y1` holds `X1, X2`, `Y2` holds
/// `X3, X4, X5`. Rooted at `Y1`.
pub fn two_latent_tree() -> LatentTreeModel {
    let vars = vec![
        Variable::latent("Y1", 2),
        Variable::latent("Y2", 2),
        Variable::binary("X1"),
        Variable::binary("X2"),
        Variable::binary("X3"),
        Variable::binary("X4"),
        Variable::binary("X5"),
    ];
    build(
        vars,
        &[("Y1", "Y2"), ("Y1", "X1"), ("Y1", "X2"), ("Y2", "X3"), ("Y2", "X4"), ("Y2", "X5")],
        "Y1",
        &[
            ("Y1", vec![0.6, 0.4]),
            ("Y2", vec![0.8, 0.2, 0.3, 0.7]),
            ("X1", vec![0.9, 0.1, 0.25, 0.75]),
            ("X2", vec![0.7, 0.3, 0.1, 0.9]),
            ("X3", vec![0.85, 0.15, 0.2, 0.8]),
            ("X4", vec![0.6, 0.4, 0.05, 0.95]),
            ("X5", vec![0.95, 0.05, 0.35, 0.65]),
        ],
    )
}

/// Same topology as [`two_latent_tree`] with strong edges (flip probabilities
/// 0.05 to 0.12), the benchmark for structure recovery.
pub fn two_latent_strong() -> LatentTreeModel {
    let vars = vec![
        Variable::latent("Y1", 2),
        Variable::latent("Y2", 2),
        Variable::binary("X1"),
        Variable::binary("X2"),
        Variable::binary("X3"),
        Variable::binary("X4"),
        Variable::binary("X5"),
    ];
    build(
        vars,
        &[("Y1", "Y2"), ("Y1", "X1"), ("Y1", "X2"), ("Y2", "X3"), ("Y2", "X4"), ("Y2", "X5")],
        "Y1",
        &[
            ("Y1", vec![0.55, 0.45]),
            ("Y2", vec![0.88, 0.12, 0.1, 0.9]),
            ("X1", vec![0.93, 0.07, 0.08, 0.92]),
            ("X2", vec![0.9, 0.1, 0.06, 0.94]),
            ("X3", vec![0.95, 0.05, 0.09, 0.91]),
            ("X4", vec![0.91, 0.09, 0.05, 0.95]),
            ("X5", vec![0.94, 0.06, 0.11, 0.89]),
        ],
    )
}

/// Latent class model: latent `Y` (root) with `n` leaves `X0..`, all of
/// the given cardinality, with well-separated classes.
pub fn lcm(n: usize, card: usize) -> LatentTreeModel {
    let mut vars = vec![Variable::latent("Y", card)];
    vars.extend((0..n).map(|i| Variable::observed(format!("X{i}"), card)));
    let edges: Vec<(usize, usize)> = (1..=n).map(|i| (0, i)).collect();
    let structure = LatentTreeStructure::new(vars, edges);
    let mut tables = Vec::with_capacity(n + 1);
    let prior: Vec<f64> = (0..card).map(|s| (s + 2) as f64).collect();
    let ps: f64 = prior.iter().sum();
    tables.push(prior.iter().map(|p| p / ps).collect());
    for i in 0..n {
        let mut t = Vec::with_capacity(card * card);
        for y in 0..card {
            let hot = (y + i) % card;
            let strength = 0.75 + 0.03 * ((i + y) % 5) as f64;
            for x in 0..card {
                t.push(if x == hot {
                    strength
                } else {
                    (1.0 - strength) / (card - 1) as f64
                });
            }
        }
        tables.push(t);
    }
    LatentTreeModel::new(structure, 0, tables).expect("lcm")
}

/// Random tree with `n` nodes: internal nodes latent, leaves observed,
/// cardinalities in `2..=max_card`, rooted at the first latent.
pub fn random_model(seed: u64, n: usize, max_card: usize) -> LatentTreeModel {
    assert!(n >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(n - 1);
    let mut degree = vec![0usize; n];
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((j, i));
        degree[i] += 1;
        degree[j] += 1;
    }
    let vars: Vec<Variable> = (0..n)
        .map(|i| {
            let card = rng.gen_range(2..=max_card);
            if degree[i] >= 2 {
                Variable::latent(format!("H{i}"), card)
            } else {
                Variable::observed(format!("X{i}"), card)
            }
        })
        .collect();
    let root = (0..n).find(|&i| degree[i] >= 2).expect("n >= 3 has an internal node");
    let structure = LatentTreeStructure::new(vars, edges);
    LatentTreeModel::random(structure, root, &mut rng).expect("random model")
}

/// Random tree as in [`random_model`] with every node of cardinality
/// `card` and every edge informative: each conditional row puts between
/// 0.7 and 0.9 of its mass on a distinct state. Distances along paths stay
/// moderate, which keeps them well conditioned numerically.
pub fn random_informative_model(seed: u64, n: usize, card: usize) -> LatentTreeModel {
    let base = random_model(seed, n, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66);
    let vars: Vec<Variable> = base
        .variables()
        .iter()
        .map(|v| Variable { cardinality: card, ..v.clone() })
        .collect();
    let structure = LatentTreeStructure::new(vars, base.structure().edges().to_vec());
    let skeleton = LatentTreeModel::uniform(structure.clone(), base.root()).expect("random structure");
    let mut tables = Vec::with_capacity(n);
    for v in 0..n {
        let rows = if skeleton.parent(v).is_some() { card } else { 1 };
        let shift = rng.gen_range(0..card);
        let mut t = Vec::with_capacity(rows * card);
        for j in 0..rows {
            let hot = (j + shift) % card;
            let stay = if rows == 1 { 1.0 / card as f64 + rng.gen_range(0.0..0.2) } else { rng.gen_range(0.7..0.9) };
            let rest: Vec<f64> = (0..card - 1).map(|_| rng.gen_range(0.5..1.5)).collect();
            let rs: f64 = rest.iter().sum();
            let mut k = 0;
            for i in 0..card {
                if i == hot {
                    t.push(stay);
                } else {
                    t.push((1.0 - stay) * rest[k] / rs);
                    k += 1;
                }
            }
        }
        tables.push(t);
    }
    LatentTreeModel::new(structure, base.root(), tables).expect("random informative model")
}

/// Chain of `len` latents of cardinality `card`, each with one observed
/// leaf, plus an extra leaf at each end so no latent is a leaf.
pub fn chain(len: usize, card: usize, seed: u64) -> LatentTreeModel {
    let mut vars = Vec::new();
    let mut edges = Vec::new();
    for i in 0..len {
        vars.push(Variable::latent(format!("H{i}"), card));
    }
    for i in 0..len {
        vars.push(Variable::observed(format!("X{i}"), card));
        edges.push((i, len + i));
        if i > 0 {
            edges.push((i - 1, i));
        }
    }
    vars.push(Variable::observed("Xa", card));
    edges.push((0, vars.len() - 1));
    vars.push(Variable::observed("Xb", card));
    edges.push((len - 1, vars.len() - 1));
    let structure = LatentTreeStructure::new(vars, edges);
    LatentTreeModel::random(structure, 0, &mut ChaCha8Rng::seed_from_u64(seed)).expect("chain")
}

fn channel(stay0: f64, stay1: f64) -> Vec<f64> {
    vec![stay0, 1.0 - stay0, 1.0 - stay1, stay1]
}

/// Clustering variable `Z` (3 states) over four binary feature latents
/// `Y1..Y4`, each with three binary items. Items sharing a feature latent
/// stay dependent given `Z`, which breaks local independence.
pub fn two_layer_generator() -> LatentTreeModel {
    let mut vars = vec![Variable::latent("Z", 3)];
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut tables: Vec<(String, Vec<f64>)> = vec![("Z".into(), vec![0.35, 0.4, 0.25])];
    let zy = [
        vec![0.9, 0.1, 0.5, 0.5, 0.15, 0.85],
        vec![0.85, 0.15, 0.2, 0.8, 0.5, 0.5],
        vec![0.1, 0.9, 0.85, 0.15, 0.6, 0.4],
        vec![0.8, 0.2, 0.45, 0.55, 0.1, 0.9],
    ];
    for f in 0..4 {
        let y = format!("Y{}", f + 1);
        vars.push(Variable::latent(&y, 2));
        edges.push(("Z".into(), y.clone()));
        tables.push((y.clone(), zy[f].clone()));
        for k in 0..3 {
            let x = format!("A{}{}", f + 1, k + 1);
            vars.push(Variable::binary(&x));
            edges.push((y.clone(), x.clone()));
            let s0 = 0.88 + 0.03 * ((f + k) % 3) as f64;
            let s1 = 0.86 + 0.04 * ((f + 2 * k) % 3) as f64;
            tables.push((x, channel(s0, s1)));
        }
    }
    let e: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let t: Vec<(&str, Vec<f64>)> = tables.iter().map(|(a, b)| (a.as_str(), b.clone())).collect();
    build(vars, &e, "Z", &t)
}

/// Class variable `C` (binary) over three binary feature latents, each with
/// three items; strong links so `C` is recoverable from the items.
pub fn labeled_class_generator() -> LatentTreeModel {
    let mut vars = vec![Variable::latent("C", 2)];
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut tables: Vec<(String, Vec<f64>)> = vec![("C".into(), vec![0.45, 0.55])];
    for f in 0..3 {
        let y = format!("F{}", f + 1);
        vars.push(Variable::latent(&y, 2));
        edges.push(("C".into(), y.clone()));
        let s = 0.95 + 0.01 * f as f64;
        tables.push((y.clone(), channel(s, s - 0.01)));
        for k in 0..3 {
            let x = format!("B{}{}", f + 1, k + 1);
            vars.push(Variable::binary(&x));
            edges.push((y.clone(), x.clone()));
            tables.push((x, channel(0.9 + 0.02 * k as f64, 0.88 + 0.02 * f as f64)));
        }
    }
    let e: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let t: Vec<(&str, Vec<f64>)> = tables.iter().map(|(a, b)| (a.as_str(), b.clone())).collect();
    build(vars, &e, "C", &t)
}

/// Two-level topic generator: `R` over level-1 topics `T1..T4`, each with
/// three words (12 words `w11..w43`). State 1 of a topic means "on topic".
pub fn two_level_topic_generator() -> LatentTreeModel {
    let mut vars = vec![Variable::latent("R", 2)];
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut tables: Vec<(String, Vec<f64>)> = vec![("R".into(), vec![0.6, 0.4])];
    for t in 0..4 {
        let z = format!("T{}", t + 1);
        vars.push(Variable::latent(&z, 2));
        edges.push(("R".into(), z.clone()));
        let off = 0.85 - 0.03 * t as f64;
        let on = 0.75 + 0.04 * t as f64;
        tables.push((z.clone(), channel(off, on)));
        for k in 0..3 {
            let w = format!("w{}{}", t + 1, k + 1);
            vars.push(Variable::binary(&w));
            edges.push((z.clone(), w.clone()));
            let absent = 0.95 - 0.01 * k as f64;
            let present = 0.8 - 0.05 * k as f64 + 0.02 * t as f64;
            tables.push((w, channel(absent, present)));
        }
    }
    let e: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let t: Vec<(&str, Vec<f64>)> = tables.iter().map(|(a, b)| (a.as_str(), b.clone())).collect();
    build(vars, &e, "R", &t)
}

/// Three island-shaped blocks on a latent chain `Y1 - Y2 - Y3`, three
/// binary items per latent.
pub fn latent_chain_generator() -> LatentTreeModel {
    let mut vars = vec![];
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut tables: Vec<(String, Vec<f64>)> = Vec::new();
    for l in 0..3 {
        vars.push(Variable::latent(format!("Y{}", l + 1), 2));
    }
    edges.push(("Y1".into(), "Y2".into()));
    edges.push(("Y2".into(), "Y3".into()));
    tables.push(("Y1".into(), vec![0.55, 0.45]));
    tables.push(("Y2".into(), channel(0.85, 0.8)));
    tables.push(("Y3".into(), channel(0.82, 0.87)));
    for l in 0..3 {
        for k in 0..3 {
            let x = format!("C{}{}", l + 1, k + 1);
            vars.push(Variable::binary(&x));
            edges.push((format!("Y{}", l + 1), x.clone()));
            tables.push((x, channel(0.9 + 0.02 * k as f64, 0.88 + 0.03 * l as f64)));
        }
    }
    let e: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let t: Vec<(&str, Vec<f64>)> = tables.iter().map(|(a, b)| (a.as_str(), b.clone())).collect();
    build(vars, &e, "Y1", &t)
}

/// Two independent LCM blocks `{a,b,c}` and `{d,e,f}` (each binary latent,
/// strong items). Used to check that a subset spanning both blocks is not
/// unidimensional.
pub fn two_block_generator(coupling: f64) -> LatentTreeModel {
    let vars = vec![
        Variable::latent("U", 2),
        Variable::latent("V", 2),
        Variable::binary("a"),
        Variable::binary("b"),
        Variable::binary("c"),
        Variable::binary("d"),
        Variable::binary("e"),
        Variable::binary("f"),
    ];
    build(
        vars,
        &[("U", "V"), ("U", "a"), ("U", "b"), ("U", "c"), ("V", "d"), ("V", "e"), ("V", "f")],
        "U",
        &[
            ("U", vec![0.5, 0.5]),
            ("V", channel(0.5 + coupling, 0.5 + coupling)),
            ("a", channel(0.92, 0.9)),
            ("b", channel(0.9, 0.88)),
            ("c", channel(0.88, 0.93)),
            ("d", channel(0.91, 0.89)),
            ("e", channel(0.87, 0.92)),
            ("f", channel(0.93, 0.9)),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_valid() {
        for m in [
            two_latent_tree(),
            two_latent_strong(),
            lcm(4, 3),
            two_layer_generator(),
            labeled_class_generator(),
            two_level_topic_generator(),
            latent_chain_generator(),
            two_block_generator(0.0),
            chain(5, 2, 0),
        ] {
            assert!(m.validate().is_empty(), "{:?}", m.validate());
        }
        for seed in 0..50 {
            let m = random_model(seed, 8, 3);
            assert!(m.validate().is_empty());
            assert!(!m.latent_nodes().is_empty());
        }
    }
}
