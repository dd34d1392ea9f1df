//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use lta_core::clustering::{
    adjusted_rand_index, build_unidimensional_model, extract_partitions, latent_class_model, normalized_mutual_information,
    PartitionSelection,
};
use lta_core::data::{forward_sample, Variable, WeightedDataset};
use lta_core::em::{em_fit, progressive_em, EmConfig};
use lta_core::hlta::{build_hierarchy, extract_topics, TOPIC_STATE_WORDS, TOP_WORDS};
use lta_core::inference::{brute_force_joint, observed_marginal, posterior_marginal, row_log_likelihoods, Evidence};
use lta_core::model::{LatentTreeModel, LatentTreeStructure};
use lta_core::structure::{bridged_islands, clrg, distance_from_joint, StructureConfig};
use lta_core::synthetic::{
    two_latent_strong, labeled_class_generator, random_informative_model, random_model, two_layer_generator,
    two_level_topic_generator,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Verdict)> = vec![
        ("inference oracle equivalence", inference_oracle),
        ("re-root invariance", reroot_invariance),
        ("EM monotonicity", em_monotonicity),
        ("information-distance additivity", distance_additivity),
        ("structure recovery", structure_recovery),
        ("PEM compression", pem_compression),
        ("LCA improvement", lca_improvement),
        ("learner comparison", learner_comparison),
        ("HLTA hierarchy recovery", hierarchy_recovery),
        ("clustering recovery", clustering_recovery),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!("{status} {:>2} {name}: {} [{:.1}s]", i + 1, v.detail, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Index of a full assignment in a row-major table over `cards`.
fn flat_index(values: &[usize], cards: &[usize]) -> usize {
    values.iter().zip(cards).fold(0, |acc, (&v, &c)| acc * c + v)
}

/// Every assignment of `cards` in row-major order.
fn assignments(cards: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = cards.iter().product();
    (0..total)
        .map(|mut k| {
            let mut out = vec![0; cards.len()];
            for i in (0..cards.len()).rev() {
                out[i] = k % cards[i];
                k /= cards[i];
            }
            out
        })
        .collect()
}

fn inference_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut models = 0;
    for seed in 0..200u64 {
        let n = 3 + (seed % 7) as usize;
        let m = random_model(seed, n, 3);
        let joint = brute_force_joint(&m).expect("within guard");
        let cards: Vec<usize> = (0..m.num_nodes()).map(|v| m.cardinality(v)).collect();
        let configs = assignments(&cards);
        let observed = m.observed_nodes();

        // Observed marginal.
        let om = observed_marginal(&m).unwrap();
        let ocards: Vec<usize> = observed.iter().map(|&v| cards[v]).collect();
        let mut oracle = vec![0.0; om.probabilities.len()];
        for (c, p) in configs.iter().zip(&joint.probabilities) {
            let key: Vec<usize> = observed.iter().map(|&v| c[v]).collect();
            oracle[flat_index(&key, &ocards)] += p;
        }
        for (a, b) in om.probabilities.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }

        // Log-likelihood of sampled rows.
        let data = forward_sample(&m, 40, seed).unwrap();
        let lls = row_log_likelihoods(&m, &data).unwrap();
        let cols: Vec<usize> = data.variables().iter().map(|v| m.index_of(&v.name).unwrap()).collect();
        for (row, ll) in data.rows().iter().zip(&lls) {
            let p: f64 = configs
                .iter()
                .zip(&joint.probabilities)
                .filter(|(c, _)| cols.iter().zip(&row.values).all(|(&v, &x)| c[v] == x))
                .map(|(_, p)| p)
                .sum();
            worst = worst.max((ll - p.ln()).abs());
        }

        // Posteriors of every latent given a partial observation.
        let row = &data.rows()[0];
        let mut evidence = Evidence::new();
        for (k, (&v, &x)) in cols.iter().zip(&row.values).enumerate() {
            if k % 2 == 0 || k + 1 == cols.len() {
                evidence = evidence.with(m.name(v), x);
            }
        }
        let fixed: Vec<(usize, usize)> = evidence.assignments.iter().map(|(n, &x)| (m.index_of(n).unwrap(), x)).collect();
        for h in m.latent_nodes() {
            let post = posterior_marginal(&m, &evidence, m.name(h)).unwrap();
            let mut num = vec![0.0; cards[h]];
            for (c, p) in configs.iter().zip(&joint.probabilities) {
                if fixed.iter().all(|&(v, x)| c[v] == x) {
                    num[c[h]] += p;
                }
            }
            let z: f64 = num.iter().sum();
            for (a, b) in post.distribution.iter().zip(&num) {
                worst = worst.max((a - b / z).abs());
            }
        }
        models += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && elapsed < Duration::from_secs(120),
        format!("{models} models, max |difference| {worst:.2e} (limit 1e-9), {:.1}s (limit 120s)", elapsed.as_secs_f64()),
    )
}

fn reroot_invariance() -> Verdict {
    let mut worst = 0.0f64;
    let mut reroots = 0;
    for seed in 0..100u64 {
        let m = random_model(1_000 + seed, 4 + (seed % 6) as usize, 3);
        let base = observed_marginal(&m).unwrap();
        for h in m.latent_nodes() {
            let r = m.reroot(m.name(h)).unwrap();
            let other = observed_marginal(&r).unwrap();
            for (a, b) in base.probabilities.iter().zip(&other.probabilities) {
                worst = worst.max((a - b).abs());
            }
            reroots += 1;
        }
    }
    verdict(worst <= 1e-12, format!("100 models, {reroots} re-rootings, max |difference| {worst:.2e} (limit 1e-12)"))
}

fn em_monotonicity() -> Verdict {
    let mut worst_drop = 0.0f64;
    let mut runs = 0;
    let mut degenerate = 0;
    let check = |trace: &[f64], worst: &mut f64| {
        for w in trace.windows(2) {
            *worst = worst.max(w[0] - w[1]);
        }
    };
    for seed in 0..30u64 {
        let truth = random_model(2_000 + seed, 5 + (seed % 5) as usize, 3);
        let data = forward_sample(&truth, 2_000, seed).unwrap();
        let config = EmConfig { seed, restarts: 3, ..EmConfig::default() };
        let root = truth.name(truth.root()).to_string();
        let fit = em_fit(truth.structure(), &root, &data, &config).unwrap();
        for t in &fit.traces {
            check(t, &mut worst_drop);
            runs += 1;
        }
        let pem = progressive_em(truth.structure(), &root, &data, &config).unwrap();
        check(&pem.run.trace, &mut worst_drop);
        runs += 1;
        for m in [&fit.best.model, &pem.run.model] {
            degenerate += m.tables().iter().flatten().filter(|&&p| p <= 0.0 || p >= 1.0).count();
        }
    }
    verdict(
        worst_drop <= 1e-9 && degenerate == 0,
        format!("{runs} runs, largest logL decrease {worst_drop:.2e} (limit 1e-9), {degenerate} degenerate probabilities"),
    )
}

/// Joint of two nodes by enumeration of the full model.
fn pair_joint(m: &LatentTreeModel, joint: &[f64], configs: &[Vec<usize>], a: usize, b: usize) -> Vec<f64> {
    let cb = m.cardinality(b);
    let mut out = vec![0.0; m.cardinality(a) * cb];
    for (c, p) in configs.iter().zip(joint) {
        out[c[a] * cb + c[b]] += p;
    }
    out
}

fn distance_additivity() -> Verdict {
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for seed in 0..50u64 {
        let card = 2 + (seed % 2) as usize;
        let n = if card == 2 { 10 } else { 8 };
        let m = random_informative_model(seed, n, card);
        let joint = brute_force_joint(&m).unwrap();
        let cards: Vec<usize> = (0..m.num_nodes()).map(|v| m.cardinality(v)).collect();
        let configs = assignments(&cards);
        let d = |a: usize, b: usize| {
            distance_from_joint(&pair_joint(&m, &joint.probabilities, &configs, a, b), cards[a], cards[b]).unwrap()
        };
        let leaves = m.observed_nodes();
        for (i, &x) in leaves.iter().enumerate() {
            for &y in &leaves[i + 1..] {
                let path = m.path(x, y);
                let along: f64 = path.windows(2).map(|w| d(w[0], w[1])).sum();
                worst = worst.max((d(x, y) - along).abs());
                pairs += 1;
            }
        }
    }
    verdict(worst <= 1e-10, format!("50 trees, {pairs} leaf pairs, max |d(x,y) - path sum| {worst:.2e} (limit 1e-10)"))
}

/// Nontrivial leaf bipartitions, one per edge: the unrooted topology.
fn splits(m: &LatentTreeModel) -> BTreeSet<Vec<String>> {
    let adj = m.structure().adjacency();
    let leaves: BTreeSet<String> = m.observed_names().iter().map(|s| s.to_string()).collect();
    let mut out = BTreeSet::new();
    for &(a, b) in m.structure().edges() {
        let mut seen = vec![false; m.num_nodes()];
        seen[a] = true;
        seen[b] = true;
        let mut stack = vec![b];
        let mut side = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if m.variable(v).is_observed() {
                side.insert(m.name(v).to_string());
            }
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        let other: BTreeSet<String> = leaves.difference(&side).cloned().collect();
        if side.len() >= 2 && other.len() >= 2 {
            let (x, y): (Vec<String>, Vec<String>) = (side.into_iter().collect(), other.into_iter().collect());
            out.insert(x.min(y));
        }
    }
    out
}

fn structure_recovery() -> Verdict {
    let truth = two_latent_strong();
    let want = splits(&truth);
    let config = StructureConfig::default();
    let (mut clrg_ok, mut bi_ok) = (0, 0);
    let mut slowest = Duration::ZERO;
    let mut invalid = 0;
    for seed in 0..10u64 {
        let data = forward_sample(&truth, 50_000, seed).unwrap();
        let t = Instant::now();
        let c = clrg(&data, &config).unwrap();
        slowest = slowest.max(t.elapsed());
        let t = Instant::now();
        let b = bridged_islands(&data, &config).unwrap();
        slowest = slowest.max(t.elapsed());
        for m in [&c, &b] {
            if !m.validate().is_empty() || !m.is_regular() {
                invalid += 1;
            }
        }
        clrg_ok += usize::from(splits(&c) == want);
        bi_ok += usize::from(splits(&b) == want);
    }
    verdict(
        clrg_ok >= 9 && bi_ok >= 9 && slowest < Duration::from_secs(60) && invalid == 0,
        format!(
            "exact topology: CLRG {clrg_ok}/10, BI {bi_ok}/10 (need 9); slowest run {:.2}s (limit 60s); {invalid} invalid models",
            slowest.as_secs_f64()
        ),
    )
}

fn fastest<T>(runs: usize, mut f: impl FnMut() -> T) -> (Duration, T) {
    let mut best = Duration::MAX;
    let mut out = None;
    for _ in 0..runs {
        let t = Instant::now();
        let v = f();
        best = best.min(t.elapsed());
        out = Some(v);
    }
    (best, out.unwrap())
}

fn pem_compression() -> Verdict {
    // Projection bound on arbitrary binary data.
    let mut bound_violations = 0;
    for seed in 0..20u64 {
        let m = random_model(3_000 + seed, 12, 2);
        let data = forward_sample(&m, 5_000, seed).unwrap();
        let names = data.variable_names();
        for k in [3usize, 4] {
            if names.len() < k {
                continue;
            }
            let subset: Vec<&str> = (0..k).map(|i| names[(i * 7 + seed as usize) % names.len()]).collect::<BTreeSet<_>>().into_iter().collect();
            let rows = data.project(&subset).unwrap().num_rows();
            if rows > 1 << subset.len() {
                bound_violations += 1;
            }
        }
    }

    let truth = two_latent_strong();
    let root = "Y1";
    let config = EmConfig::default();
    let data = forward_sample(&truth, 5_000, 1).unwrap();
    let big = data.scaled(10).unwrap();
    let (t_small, small) = fastest(5, || progressive_em(truth.structure(), root, &data, &config).unwrap());
    let (t_big, _) = fastest(5, || progressive_em(truth.structure(), root, &big, &config).unwrap());
    for step in &small.steps {
        if step.distinct_rows > 1 << step.observed.len() {
            bound_violations += 1;
        }
    }
    let ratio = t_big.as_secs_f64() / t_small.as_secs_f64();

    let full = em_fit(truth.structure(), root, &data, &EmConfig { restarts: 10, ..config.clone() }).unwrap();
    let gap = (small.run.log_likelihood - full.best.log_likelihood).abs() / full.best.log_likelihood.abs();
    verdict(
        bound_violations == 0 && ratio < 2.0 && gap <= 0.02,
        format!(
            "{bound_violations} projections over 2^k rows; 10x data time ratio {ratio:.2} (limit 2); PEM logL {:.1} vs EM {:.1}, gap {:.3}% (limit 2%)",
            small.run.log_likelihood,
            full.best.log_likelihood,
            100.0 * gap
        ),
    )
}

fn lca_improvement() -> Verdict {
    let generator = two_layer_generator();
    let config = StructureConfig::default();
    let lcm_config = StructureConfig { em: EmConfig { restarts: 10, ..EmConfig::default() }, ..StructureConfig::default() };
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 0..10u64 {
        let data = forward_sample(&generator, 5_000, seed).unwrap();
        let config = StructureConfig { em: EmConfig { seed, ..config.em.clone() }, ..config.clone() };
        let u = build_unidimensional_model(&data, &config).unwrap();
        let (_, lcm_bic) = latent_class_model(&data, "C", &lcm_config).unwrap();
        wins += usize::from(u.bic > lcm_bic);
        margins.push(format!("{:.0}", u.bic - lcm_bic));
    }
    verdict(wins >= 9, format!("LTM BIC above best LCM in {wins}/10 seeds (need 9); margins [{}]", margins.join(", ")))
}

fn learner_comparison() -> Verdict {
    let truth = two_latent_strong();
    let config = StructureConfig::default();
    let mut wins = 0;
    let mut diffs = Vec::new();
    for seed in 0..10u64 {
        let train = forward_sample(&truth, 1_000, seed).unwrap();
        let test = forward_sample(&truth, 10_000, 1_000 + seed).unwrap();
        let b = bridged_islands(&train, &config).unwrap();
        let c = clrg(&train, &config).unwrap();
        let lb: f64 = lta_core::log_likelihood(&b, &test).unwrap();
        let lc: f64 = lta_core::log_likelihood(&c, &test).unwrap();
        wins += usize::from(lb >= lc);
        diffs.push(format!("{:+.1}", lb - lc));
    }
    verdict(wins >= 7, format!("held-out logL BI >= CLRG in {wins}/10 seeds (need 7); BI - CLRG [{}]", diffs.join(", ")))
}

fn hierarchy_recovery() -> Verdict {
    let generator = two_level_topic_generator();
    let config = StructureConfig::default();
    let mut aris = Vec::new();
    let mut layout_problems = Vec::new();
    for seed in 0..10u64 {
        let data = forward_sample(&generator, 5_000, seed).unwrap();
        let config = StructureConfig { em: EmConfig { seed, ..config.em.clone() }, ..config.clone() };
        let h = build_hierarchy(&data, 3, &config).unwrap();
        let flat = &h.levels[0];
        let words = data.variable_names();
        // Generator grouping: word `w{t}{k}` sits under topic `T{t}`.
        let truth: Vec<usize> = words.iter().map(|w| w[1..2].parse().unwrap()).collect();
        let found: Vec<usize> = words
            .iter()
            .map(|w| {
                let v = flat.index_of(w).unwrap();
                flat.neighbors(v).into_iter().find(|&u| flat.variable(u).is_latent()).unwrap()
            })
            .collect();
        aris.push(adjusted_rand_index(&truth, &found).unwrap());

        let topics = extract_topics(&h, &data).unwrap();
        if h.levels.len() < 2 {
            layout_problems.push(format!("seed {seed}: single level"));
        }
        for t in &topics {
            let col: Vec<f64> = t.word_rows.iter().map(|r| r.probabilities[t.topic_state]).collect();
            let other = 1 - t.topic_state;
            let head = t.word_rows.len().min(TOPIC_STATE_WORDS);
            let mean = |s: usize| t.word_rows[..head].iter().map(|r| r.probabilities[s]).sum::<f64>();
            let text = t.to_text();
            let layout_ok = t.state_shares.len() == 2
                && (t.state_shares.iter().sum::<f64>() - 1.0).abs() < 1e-9
                && !t.word_rows.is_empty()
                && t.word_rows.len() <= TOP_WORDS
                && col.windows(2).all(|w| w[0] >= w[1])
                && mean(t.topic_state) >= mean(other)
                && t.word_rows.iter().flat_map(|r| &r.probabilities).all(|p| (0.0..=1.0).contains(p))
                && text.lines().nth(1).is_some_and(|l| l.starts_with("share\t"))
                && text.lines().count() == 2 + t.word_rows.len();
            if !layout_ok {
                layout_problems.push(format!("seed {seed}: {}", t.latent));
            }
        }
    }
    let min = aris.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        min >= 0.9 && layout_problems.is_empty(),
        format!("level-1 adjusted Rand min {min:.3} over 10 seeds (need 0.9); topic table layout problems: {layout_problems:?}"),
    )
}

fn clustering_recovery() -> Verdict {
    // The generator plus an observed copy of its class variable.
    let g = labeled_class_generator();
    let mut vars = g.variables().to_vec();
    vars.push(Variable::observed("class", 2));
    let class = vars.len() - 1;
    let mut edges = g.structure().edges().to_vec();
    edges.push((g.index_of("C").unwrap(), class));
    let mut tables = g.tables().to_vec();
    tables.push(vec![1.0, 0.0, 0.0, 1.0]);
    let labelled = LatentTreeModel::new(LatentTreeStructure::new(vars, edges), g.root(), tables).unwrap();

    let sample = forward_sample(&labelled, 10_000, 0).unwrap();
    let items: Vec<&str> = sample.variable_names().into_iter().filter(|n| *n != "class").collect();
    let data: WeightedDataset = sample.project(&items).unwrap();
    let u = build_unidimensional_model(&data, &StructureConfig::default()).unwrap();
    let parts = extract_partitions(&u.model, &sample, &PartitionSelection::Designated(u.designated.clone())).unwrap();
    let class_col = sample.column_index("class").unwrap();
    let class_labels: Vec<usize> = sample
        .rows()
        .iter()
        .flat_map(|r| std::iter::repeat_n(r.values[class_col], r.weight as usize))
        .collect();
    let nmi = normalized_mutual_information(&parts[0].record_labels(), &class_labels).unwrap();
    verdict(
        nmi >= 0.9,
        format!("NMI of designated `{}` ({} states) vs class {nmi:.3} (need 0.9)", u.designated, parts[0].cardinality),
    )
}
