//! Hierarchical latent tree analysis for topic detection.
//!
//! Level 1 is a flat model over binary word variables with binary latents.
//! Each further level treats the latents below as observed (by MAP
//! completion) and learns another flat model over them. The levels are then
//! merged into one tree whose leaves are the words.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::WeightedDataset;
use crate::em::progressive_em;
use crate::error::{Error, Result};
use crate::inference::{complete_data, Completion};
use crate::model::{LatentTreeModel, LatentTreeStructure, ModelDocument};
use crate::structure::{bridge_islands, build_islands_named, StructureConfig};

/// Words listed per topic.
pub const TOP_WORDS: usize = 10;
/// Words whose mean presence decides which state is the topic.
pub const TOPIC_STATE_WORDS: usize = 5;

/// Flat structure learning with binary latents and progressive EM.
fn flat_config(config: &StructureConfig) -> StructureConfig {
    StructureConfig {
        fixed_cardinality: Some(2),
        progressive: true,
        ..config.clone()
    }
}

/// Learns a flat model (every latent next to at least one observed
/// variable) with binary latents named `{prefix}{k}`.
pub fn learn_flat_named(data: &WeightedDataset, config: &StructureConfig, prefix: &str) -> Result<LatentTreeModel> {
    let cfg = flat_config(config);
    let islands = build_islands_named(data, &cfg, prefix)?;
    if islands.len() == 1 && islands[0].members.len() == 2 {
        // A binary latent over two variables is irregular; kept as the
        // degenerate one-topic case.
        return Ok(islands.into_iter().next().unwrap().model);
    }
    bridge_islands(&islands, data, &cfg)
}

/// [`learn_flat_named`] with latents `Z1_1, Z1_2, ...`.
pub fn learn_flat(data: &WeightedDataset, config: &StructureConfig) -> Result<LatentTreeModel> {
    learn_flat_named(data, config, "Z1_")
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalModel {
    /// Flat model per level; level k+1 observes level k's latents.
    pub levels: Vec<LatentTreeModel>,
    /// All levels joined into one tree over the words.
    pub merged: LatentTreeModel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HierarchyDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
    pub levels: Vec<ModelDocument>,
    pub merged: ModelDocument,
}

impl HierarchicalModel {
    /// Level (1-based) of a latent of the merged model.
    pub fn level_of(&self, latent: &str) -> Option<usize> {
        self.levels
            .iter()
            .position(|m| m.index_of(latent).is_some_and(|v| m.variable(v).is_latent()))
            .map(|l| l + 1)
    }

    pub fn to_document(&self) -> HierarchyDocument {
        HierarchyDocument {
            metadata: None,
            levels: self.levels.iter().map(|m| m.to_document()).collect(),
            merged: self.merged.to_document(),
        }
    }

    pub fn from_document(doc: &HierarchyDocument) -> Result<Self> {
        Ok(HierarchicalModel {
            levels: doc.levels.iter().map(LatentTreeModel::from_document).collect::<Result<_>>()?,
            merged: LatentTreeModel::from_document(&doc.merged)?,
        })
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
        Self::from_document(&serde_json::from_str(&text)?)
    }
}

/// Stacks flat models up to `max_levels` levels, stopping early once a
/// level has at most one latent, then refits the merged tree.
pub fn build_hierarchy(data: &WeightedDataset, max_levels: usize, config: &StructureConfig) -> Result<HierarchicalModel> {
    if max_levels < 1 {
        return Err(Error::InvalidArgument("max_levels must be at least 1".into()));
    }
    let first = learn_flat(data, config)?;
    log::info!("level 1: {} latents", first.latent_nodes().len());
    let mut levels = vec![first];
    while levels.len() < max_levels {
        let below = levels.last().unwrap();
        let latents: Vec<String> = below.latent_nodes().iter().map(|&v| below.name(v).to_string()).collect();
        if latents.len() <= 1 {
            break;
        }
        let source = level_data(&levels, data)?;
        let completed = complete_data(below, &source, &latents, Completion::Map)?;
        let level = levels.len() + 1;
        let next = learn_flat_named(&completed, config, &format!("Z{level}_"))?;
        let count = next.latent_nodes().len();
        log::info!("level {level}: {count} latents");
        if count >= latents.len() {
            break;
        }
        levels.push(next);
    }
    let merged = if levels.len() == 1 {
        levels[0].clone()
    } else {
        let structure = merge_levels(&levels)?;
        let top = levels.last().unwrap();
        let root = top.name(top.latent_nodes()[0]).to_string();
        progressive_em(&structure, &root, data, &flat_config(config).em)?.run.model
    };
    Ok(HierarchicalModel { levels, merged })
}

/// Completed data observed by the last level's model.
fn level_data(levels: &[LatentTreeModel], data: &WeightedDataset) -> Result<WeightedDataset> {
    let mut current = data.clone();
    for m in &levels[..levels.len() - 1] {
        let latents: Vec<String> = m.latent_nodes().iter().map(|&v| m.name(v).to_string()).collect();
        current = complete_data(m, &current, &latents, Completion::Map)?;
    }
    Ok(current)
}

/// Words and level-1 latents keep their level-1 edges; every level's
/// latent-to-latent edges are replaced by the next level's structure.
fn merge_levels(levels: &[LatentTreeModel]) -> Result<LatentTreeStructure> {
    let mut variables = Vec::new();
    let mut edges: Vec<(String, String)> = Vec::new();
    for (k, m) in levels.iter().enumerate() {
        let top = k + 1 == levels.len();
        for v in 0..m.num_nodes() {
            let var = m.variable(v);
            if k == 0 || var.is_latent() {
                variables.push(var.clone());
            }
        }
        for &(a, b) in m.structure().edges() {
            let both_latent = m.variable(a).is_latent() && m.variable(b).is_latent();
            if !both_latent || top {
                edges.push((m.name(a).to_string(), m.name(b).to_string()));
            }
        }
    }
    let s = LatentTreeStructure::from_named_edges(variables, &edges)?;
    let problems = s.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidModel(problems));
    }
    Ok(s)
}

/// One word's presence probability per latent state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordRow {
    pub word: String,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicTable {
    pub latent: String,
    pub level: usize,
    pub state_shares: Vec<f64>,
    pub topic_state: usize,
    /// Sorted by presence probability under the topic state, descending.
    pub word_rows: Vec<WordRow>,
}

impl TopicTable {
    pub fn topic_share(&self) -> f64 {
        self.state_shares[self.topic_state]
    }

    /// Tabular rendering: a share row, then one row per word.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}", self.latent);
        for s in 0..self.state_shares.len() {
            let label = if s == self.topic_state { "topic" } else { "background" };
            out.push_str(&format!("\t{label}"));
        }
        out.push('\n');
        out.push_str("share");
        for p in &self.state_shares {
            out.push_str(&format!("\t{p:.2}"));
        }
        out.push('\n');
        for row in &self.word_rows {
            out.push_str(&row.word);
            for p in &row.probabilities {
                out.push_str(&format!("\t{p:.2}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Topic table of every latent of the merged model, lowest level first.
/// The dataset only has to carry the model's words.
pub fn extract_topics(hier: &HierarchicalModel, data: &WeightedDataset) -> Result<Vec<TopicTable>> {
    let m = &hier.merged;
    for w in m.observed_names() {
        data.require_column(w)?;
    }
    let marginals = m.node_marginals();
    let mut out = Vec::new();
    for z in m.latent_nodes() {
        let words: Vec<usize> = m
            .descendants(z)
            .into_iter()
            .filter(|&v| m.variable(v).is_observed())
            .collect();
        let mut rows = Vec::with_capacity(words.len());
        for &w in &words {
            let cond = m.descendant_given_ancestor(z, w)?;
            let cw = m.cardinality(w);
            let present: Vec<f64> = (0..m.cardinality(z)).map(|s| cond[s * cw + cw - 1]).collect();
            rows.push(WordRow {
                word: m.name(w).to_string(),
                probabilities: present,
            });
        }
        let spread = |r: &WordRow| {
            let hi = r.probabilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = r.probabilities.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo
        };
        rows.sort_by(|a, b| spread(b).total_cmp(&spread(a)).then_with(|| a.word.cmp(&b.word)));
        rows.truncate(TOP_WORDS);
        let head = rows.len().min(TOPIC_STATE_WORDS);
        let mut topic_state = 0;
        let mut best = f64::NEG_INFINITY;
        for s in 0..m.cardinality(z) {
            let mean = rows[..head].iter().map(|r| r.probabilities[s]).sum::<f64>() / head.max(1) as f64;
            if mean > best {
                best = mean;
                topic_state = s;
            }
        }
        rows.sort_by(|a, b| {
            b.probabilities[topic_state]
                .total_cmp(&a.probabilities[topic_state])
                .then_with(|| a.word.cmp(&b.word))
        });
        out.push(TopicTable {
            latent: m.name(z).to_string(),
            level: hier.level_of(m.name(z)).unwrap_or(1),
            state_shares: marginals[z].clone(),
            topic_state,
            word_rows: rows,
        });
    }
    out.sort_by(|a, b| a.level.cmp(&b.level).then_with(|| natural_key(&a.latent).cmp(&natural_key(&b.latent))));
    Ok(out)
}

fn natural_key(name: &str) -> (String, usize) {
    let digits = name.len() - name.chars().rev().take_while(|c| c.is_ascii_digit()).count();
    (name[..digits].to_string(), name[digits..].parse().unwrap_or(0))
}

/// Node of an exported topic hierarchy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicNode {
    pub latent: String,
    pub level: usize,
    pub share: f64,
    pub words: Vec<(String, f64)>,
    pub children: Vec<TopicNode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Html,
    Text,
}

/// Nests topics by level: a latent's children are the latents one level
/// down adjacent to it in the merged tree, ordered by share, descending.
pub fn topic_tree(topics: &[TopicTable], hier: &HierarchicalModel) -> Vec<TopicNode> {
    let m = &hier.merged;
    let by_name: BTreeMap<&str, &TopicTable> = topics.iter().map(|t| (t.latent.as_str(), t)).collect();
    let top_level = topics.iter().map(|t| t.level).max().unwrap_or(1);
    fn build(name: &str, m: &LatentTreeModel, by_name: &BTreeMap<&str, &TopicTable>) -> TopicNode {
        let t = by_name[name];
        let v = m.index_of(name).expect("topic latent in model");
        let mut children: Vec<TopicNode> = m
            .neighbors(v)
            .into_iter()
            .filter_map(|u| by_name.get(m.name(u)).filter(|c| c.level + 1 == t.level).map(|c| build(&c.latent, m, by_name)))
            .collect();
        children.sort_by(|a, b| b.share.total_cmp(&a.share).then_with(|| a.latent.cmp(&b.latent)));
        TopicNode {
            latent: t.latent.clone(),
            level: t.level,
            share: t.topic_share(),
            words: t.word_rows.iter().map(|r| (r.word.clone(), r.probabilities[t.topic_state])).collect(),
            children,
        }
    }
    let mut roots: Vec<TopicNode> = topics
        .iter()
        .filter(|t| t.level == top_level)
        .map(|t| build(&t.latent, m, &by_name))
        .collect();
    roots.sort_by(|a, b| b.share.total_cmp(&a.share).then_with(|| a.latent.cmp(&b.latent)));
    roots
}

/// Renders the topic hierarchy as JSON, a self-contained HTML page, or
/// indented text.
pub fn export_hierarchy(topics: &[TopicTable], hier: &HierarchicalModel, format: ExportFormat) -> String {
    let tree = topic_tree(topics, hier);
    match format {
        ExportFormat::Json => serde_json::to_string_pretty(&tree).expect("topic tree serializes"),
        ExportFormat::Text => {
            let mut out = String::new();
            fn walk(n: &TopicNode, depth: usize, out: &mut String) {
                let words: Vec<&str> = n.words.iter().map(|w| w.0.as_str()).collect();
                out.push_str(&format!("{}{} ({:.2}): {}\n", "  ".repeat(depth), n.latent, n.share, words.join(" ")));
                for c in &n.children {
                    walk(c, depth + 1, out);
                }
            }
            for n in &tree {
                walk(n, 0, &mut out);
            }
            out
        }
        ExportFormat::Html => {
            let mut out = String::from(
                "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Topic hierarchy</title>\n\
                 <style>body{font-family:sans-serif}details{margin-left:1.5em}summary{cursor:pointer}\
                 .share{color:#666}</style>\n</head>\n<body>\n<h1>Topic hierarchy</h1>\n",
            );
            fn walk(n: &TopicNode, out: &mut String) {
                let words: Vec<String> = n.words.iter().map(|w| escape(&w.0)).collect();
                let summary = format!(
                    "<summary><b>{}</b> <span class=\"share\">({:.2})</span> {}</summary>",
                    escape(&n.latent),
                    n.share,
                    words.join(" ")
                );
                if n.children.is_empty() {
                    out.push_str(&format!("<details>{summary}</details>\n"));
                } else {
                    out.push_str(&format!("<details open>{summary}\n"));
                    for c in &n.children {
                        walk(c, out);
                    }
                    out.push_str("</details>\n");
                }
            }
            for n in &tree {
                walk(n, &mut out);
            }
            out.push_str("</body>\n</html>\n");
            out
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
