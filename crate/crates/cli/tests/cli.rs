use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lta_core::data::forward_sample;
use lta_core::hlta::HierarchicalModel;
use lta_core::inference::observed_marginal;
use lta_core::synthetic::{two_latent_strong, two_level_topic_generator};
use lta_core::LatentTreeModel;
use serde_json::Value;
use tempfile::TempDir;

fn lta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lta")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lta(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_csv(dir: &TempDir, name: &str, model: &LatentTreeModel, n: u64, seed: u64) -> PathBuf {
    let path = dir.path().join(name);
    let data = forward_sample(model, n, seed).unwrap();
    let mut f = std::fs::File::create(&path).unwrap();
    data.write_csv(&mut f).unwrap();
    path
}

/// Nontrivial bipartitions of the leaves, one per edge: the unrooted
/// topology over the observed variables.
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

fn fit_of(stdout: &str) -> Value {
    serde_json::from_str::<Value>(stdout.trim()).unwrap()["fit"].clone()
}

#[test]
fn learn_bi_recovers_the_benchmark_topology() {
    let dir = TempDir::new().unwrap();
    let truth = two_latent_strong();
    let data = write_csv(&dir, "d.csv", &truth, 50_000, 3);
    let out = dir.path().join("m.json");
    ok(&["learn", "bi", "--data", s(&data), "--out", s(&out)]);
    let m = LatentTreeModel::load(&out).unwrap();
    assert!(m.validate().is_empty());
    assert_eq!(splits(&m), splits(&truth));
}

#[test]
fn hlta_single_level_matches_binary_bi() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "d.csv", &two_level_topic_generator(), 3_000, 1);
    let h = dir.path().join("h.json");
    let b = dir.path().join("b.json");
    ok(&["learn", "hlta", "--max-levels", "1", "--data", s(&data), "--out", s(&h)]);
    ok(&["learn", "bi", "--latent-cardinality", "2", "--progressive", "--data", s(&data), "--out", s(&b)]);
    let hier = HierarchicalModel::load(&h).unwrap();
    assert_eq!(hier.levels.len(), 1);
    let bi = LatentTreeModel::load(&b).unwrap();
    assert_eq!(splits(&hier.merged), splits(&bi));
    assert_eq!(hier.merged.latent_nodes().len(), bi.latent_nodes().len());
}

#[test]
fn usage_errors_exit_with_one() {
    let out = lta(&["learn", "bi", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = lta(&["learn", "bi", "--restarts", "0", "--data", "x.csv", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("restart"));
}

#[test]
fn eval_reproduces_training_log_likelihood() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "d.csv", &two_latent_strong(), 2_000, 4);
    let model = dir.path().join("m.json");
    let learned = fit_of(&ok(&["learn", "clrg", "--data", s(&data), "--out", s(&model)]));
    let evaluated: Value = serde_json::from_str(ok(&["eval", "--model", s(&model), "--data", s(&data)]).trim()).unwrap();
    assert_eq!(learned["log_likelihood"], evaluated["log_likelihood"]);
    assert_eq!(learned["bic"], evaluated["bic"]);
}

#[test]
fn eval_on_disjoint_variables_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "d.csv", &two_latent_strong(), 500, 4);
    let other = dir.path().join("o.csv");
    std::fs::write(&other, "p,q\n0,1\n1,0\n").unwrap();
    let model = dir.path().join("m.json");
    ok(&["learn", "clrg", "--data", s(&data), "--out", s(&model)]);
    let out = lta(&["eval", "--model", s(&model), "--data", s(&other)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sampled_log_likelihood_matches_generator_entropy() {
    let dir = TempDir::new().unwrap();
    let truth = two_latent_strong();
    let model = dir.path().join("g.json");
    truth.save(&model, None).unwrap();
    let data = dir.path().join("s.csv");
    ok(&["sample", "--model", s(&model), "-n", "50000", "--seed", "9", "--out", s(&data)]);
    let fit: Value = serde_json::from_str(ok(&["eval", "--model", s(&model), "--data", s(&data)]).trim()).unwrap();
    let per_record = fit["per_record"].as_f64().unwrap();
    // Entropy of the observed joint by enumeration.
    let joint = observed_marginal(&truth).unwrap();
    let entropy: f64 = joint.probabilities.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    assert!((-per_record - entropy).abs() <= 0.02 * entropy, "{per_record} vs {entropy}");
}

#[test]
fn sampling_is_seeded_and_rejects_zero() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("g.json");
    two_latent_strong().save(&model, None).unwrap();
    let a = dir.path().join("a.csv");
    ok(&["sample", "--model", s(&model), "-n", "300", "--seed", "5", "--out", s(&a)]);
    let first = std::fs::read(&a).unwrap();
    ok(&["sample", "--model", s(&model), "-n", "300", "--seed", "5", "--out", s(&a)]);
    assert_eq!(first, std::fs::read(&a).unwrap());
    ok(&["sample", "--model", s(&model), "-n", "300", "--seed", "6", "--out", s(&a)]);
    assert_ne!(first, std::fs::read(&a).unwrap());
    let out = lta(&["sample", "--model", s(&model), "-n", "0", "--out", s(&a)]);
    assert!(!out.status.success());
}

#[test]
fn header_reruns_bit_identically_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "d.csv", &two_latent_strong(), 3_000, 6);
    let first = dir.path().join("first.json");
    let again = dir.path().join("again.json");
    ok(&["--threads", "1", "learn", "bi", "--seed", "11", "--restarts", "3", "--data", s(&data), "--out", s(&first)]);
    let text = std::fs::read_to_string(&first).unwrap();
    let header: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(header["metadata"]["config"]["seed"], 11);
    assert_eq!(header["metadata"]["config"]["restarts"], 3);
    // Rebuild from the header alone; the output path differs, so compare
    // everything but the recorded outputs.
    ok(&["--threads", "4", "learn", "bi", "--config", s(&first), "--data", s(&data), "--out", s(&again)]);
    let mut a: Value = serde_json::from_str(&text).unwrap();
    let mut b: Value = serde_json::from_str(&std::fs::read_to_string(&again).unwrap()).unwrap();
    a["metadata"]["config"]["outputs"] = Value::Null;
    b["metadata"]["config"]["outputs"] = Value::Null;
    assert_eq!(a, b);
}

#[test]
fn topics_report_shares_and_sorted_words() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "d.csv", &two_level_topic_generator(), 3_000, 2);
    let h = dir.path().join("h.json");
    ok(&["learn", "hlta", "--restarts", "3", "--data", s(&data), "--out", s(&h)]);
    let json_out = dir.path().join("t.json");
    ok(&["topics", "--model", s(&h), "--data", s(&data), "--format", "json", "--out", s(&json_out)]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    let topics = doc["topics"].as_array().unwrap();
    assert!(!topics.is_empty());
    for t in topics {
        let shares: Vec<f64> = t["state_shares"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let state = t["topic_state"].as_u64().unwrap() as usize;
        let col: Vec<f64> = t["word_rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["probabilities"][state].as_f64().unwrap())
            .collect();
        assert!(col.windows(2).all(|w| w[0] >= w[1]));
    }
    let text_out = dir.path().join("t.txt");
    ok(&["topics", "--model", s(&h), "--data", s(&data), "--out", s(&text_out)]);
    let text = std::fs::read_to_string(&text_out).unwrap();
    assert!(text.starts_with("# {"));
    assert!(text.lines().any(|l| l.starts_with("share\t")));
    let html_out = dir.path().join("t.html");
    ok(&["topics", "--model", s(&h), "--data", s(&data), "--format", "html", "--out", s(&html_out)]);
    assert!(std::fs::read_to_string(&html_out).unwrap().contains("<details"));
}

#[test]
fn cluster_writes_one_column_per_latent_and_nmi_of_itself_is_one() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "d.csv", &two_latent_strong(), 1_000, 8);
    let model = dir.path().join("m.json");
    ok(&["learn", "bi", "--data", s(&data), "--out", s(&model)]);
    let m = LatentTreeModel::load(&model).unwrap();
    let labels = dir.path().join("l.csv");
    let profiles = dir.path().join("p.txt");
    ok(&["cluster", "--model", s(&model), "--data", s(&data), "--out", s(&labels), "--profiles", s(&profiles)]);
    let text = std::fs::read_to_string(&labels).unwrap();
    let header = text.lines().nth(1).unwrap();
    assert_eq!(header.split(',').count(), m.latent_nodes().len());
    assert_eq!(text.lines().count(), 2 + 1_000);
    assert!(std::fs::read_to_string(&profiles).unwrap().contains("share"));

    let one = dir.path().join("one.csv");
    let latent = m.name(m.latent_nodes()[0]).to_string();
    ok(&["cluster", "--model", s(&model), "--data", s(&data), "--latent", &latent, "--out", s(&one)]);
    assert_eq!(std::fs::read_to_string(&one).unwrap().lines().nth(1).unwrap(), latent);

    let report: Value = serde_json::from_str(ok(&["nmi", s(&one), s(&one)]).trim()).unwrap();
    assert_eq!(report["nmi"].as_f64().unwrap(), 1.0);
}

#[test]
fn bag_of_words_input() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("c.txt");
    let mut lines = Vec::new();
    for i in 0..200 {
        lines.push(if i % 2 == 0 { "cat dog pet fur" } else { "car road wheel" }.to_string());
    }
    std::fs::write(&corpus, lines.join("\n")).unwrap();
    let out = dir.path().join("h.json");
    ok(&["learn", "hlta", "--vocab-size", "6", "--corpus", s(&corpus), "--out", s(&out)]);
    let h = HierarchicalModel::load(&out).unwrap();
    assert_eq!(h.merged.observed_names().len(), 6);
}
