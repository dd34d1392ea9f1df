//! Weighted categorical datasets.
//!
//! Every learner in this crate works on distinct rows with integer
//! multiplicities rather than on raw records, so a million documents over a
//! handful of binary variables costs no more than the handful of distinct
//! cases they collapse to.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LatentTreeModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Observed,
    Latent,
}

/// A named discrete variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub cardinality: usize,
    pub kind: VarKind,
}

impl Variable {
    pub fn observed(name: impl Into<String>, cardinality: usize) -> Self {
        Variable {
            name: name.into(),
            cardinality,
            kind: VarKind::Observed,
        }
    }

    pub fn latent(name: impl Into<String>, cardinality: usize) -> Self {
        Variable {
            name: name.into(),
            cardinality,
            kind: VarKind::Latent,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Variable::observed(name, 2)
    }

    pub fn is_latent(&self) -> bool {
        self.kind == VarKind::Latent
    }

    pub fn is_observed(&self) -> bool {
        self.kind == VarKind::Observed
    }
}

/// One distinct case and the number of records sharing it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Row {
    pub values: Vec<usize>,
    pub weight: u64,
}

/// Distinct categorical rows with integer multiplicities.
///
/// Rows are kept sorted by value vector so that two datasets holding the same
/// records compare equal regardless of how they were built.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDataset {
    variables: Vec<Variable>,
    rows: Vec<Row>,
    total_weight: u64,
}

impl WeightedDataset {
    /// Builds a dataset from raw records, merging duplicates.
    pub fn from_records<I>(variables: Vec<Variable>, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<usize>>,
    {
        Self::from_weighted_rows(variables, records.into_iter().map(|v| (v, 1)))
    }

    /// Builds a dataset from (values, weight) pairs. Duplicate value vectors
    /// are merged and zero weights dropped.
    pub fn from_weighted_rows<I>(variables: Vec<Variable>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, u64)>,
    {
        check_variables(&variables)?;
        let mut merged: HashMap<Vec<usize>, u64> = HashMap::new();
        for (values, weight) in rows {
            if values.len() != variables.len() {
                return Err(Error::Data(format!(
                    "row has {} values, expected {}",
                    values.len(),
                    variables.len()
                )));
            }
            for (value, var) in values.iter().zip(&variables) {
                if *value >= var.cardinality {
                    return Err(Error::Data(format!(
                        "value {} of `{}` outside cardinality {}",
                        value, var.name, var.cardinality
                    )));
                }
            }
            if weight > 0 {
                *merged.entry(values).or_insert(0) += weight;
            }
        }
        if merged.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        let mut rows: Vec<Row> = merged
            .into_iter()
            .map(|(values, weight)| Row { values, weight })
            .collect();
        rows.sort_by(|a, b| a.values.cmp(&b.values));
        let total_weight = rows.iter().map(|r| r.weight).sum();
        Ok(WeightedDataset {
            variables,
            rows,
            total_weight,
        })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }

    pub fn variable_names(&self) -> Vec<&str> {
        self.variables.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn require_column(&self, name: &str) -> Result<usize> {
        self.column_index(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Same rows with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("scale factor must be positive".into()));
        }
        let mut out = self.clone();
        for row in &mut out.rows {
            row.weight *= factor;
        }
        out.total_weight *= factor;
        Ok(out)
    }

    /// Restricts the dataset to the named columns, in the given order.
    pub fn project<S: AsRef<str>>(&self, subset: &[S]) -> Result<Self> {
        let cols = subset
            .iter()
            .map(|name| self.require_column(name.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        self.project_indices(&cols)
    }

    pub fn project_indices(&self, cols: &[usize]) -> Result<Self> {
        let variables = cols
            .iter()
            .map(|&c| {
                self.variables.get(c).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("column index {c} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| (cols.iter().map(|&c| r.values[c]).collect(), r.weight));
        Self::from_weighted_rows(variables, rows)
    }

    /// Weighted counts of each state of one column.
    pub fn marginal_counts(&self, col: usize) -> Vec<f64> {
        let mut counts = vec![0.0; self.variables[col].cardinality];
        for r in &self.rows {
            counts[r.values[col]] += r.weight as f64;
        }
        counts
    }

    /// Weighted joint counts of two columns, row-major in `a`.
    pub fn joint_counts(&self, a: usize, b: usize) -> Vec<f64> {
        let cb = self.variables[b].cardinality;
        let mut counts = vec![0.0; self.variables[a].cardinality * cb];
        for r in &self.rows {
            counts[r.values[a] * cb + r.values[b]] += r.weight as f64;
        }
        counts
    }

    /// Record-level random split into (train, test).
    ///
    /// The test part receives `round(test_fraction * total_weight)` records,
    /// clamped so that neither side is empty.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test fraction {test_fraction} outside (0, 1)"
            )));
        }
        let n = self.total_weight;
        if n < 2 {
            return Err(Error::InvalidArgument(
                "splitting needs at least two records".into(),
            ));
        }
        let n_test = ((n as f64) * test_fraction).round().clamp(1.0, (n - 1) as f64) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, n as usize, n_test as usize).into_vec();
        picked.sort_unstable();

        // Walk the cumulative weights once to turn record indices into rows.
        let mut test_w = vec![0u64; self.rows.len()];
        let mut row = 0usize;
        let mut upper = self.rows[0].weight as usize;
        for rec in picked {
            while rec >= upper {
                row += 1;
                upper += self.rows[row].weight as usize;
            }
            test_w[row] += 1;
        }
        let train = self
            .rows
            .iter()
            .zip(&test_w)
            .map(|(r, &t)| (r.values.clone(), r.weight - t));
        let test = self
            .rows
            .iter()
            .zip(&test_w)
            .map(|(r, &t)| (r.values.clone(), t));
        Ok((
            Self::from_weighted_rows(self.variables.clone(), train)?,
            Self::from_weighted_rows(self.variables.clone(), test)?,
        ))
    }

    /// Writes one CSV line per record (rows expanded by weight).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.variables.iter().map(|v| v.name.as_str()))?;
        for r in &self.rows {
            let cells: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            for _ in 0..r.weight {
                w.write_record(&cells)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

fn check_variables(variables: &[Variable]) -> Result<()> {
    let mut seen = HashSet::new();
    for v in variables {
        if v.cardinality == 0 {
            return Err(Error::Data(format!("variable `{}` has cardinality 0", v.name)));
        }
        if !seen.insert(v.name.as_str()) {
            return Err(Error::Data(format!("duplicate variable name `{}`", v.name)));
        }
    }
    Ok(())
}

/// Optional sidecar for CSV input: explicit cardinalities and per-column
/// label lists (a cell equal to `labels[i]` is read as state `i`).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub cardinalities: BTreeMap<String, usize>,
    #[serde(default)]
    pub labels: BTreeMap<String, Vec<String>>,
}

impl Schema {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn load_categorical_csv(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<WeightedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_categorical_csv(file, schema)
}

/// Reads a header row of variable names followed by integer (or labelled)
/// cells. Lines starting with `#` are skipped. Cardinality is `max + 1` per column unless the schema says
/// otherwise.
pub fn read_categorical_csv<R: Read>(reader: R, schema: Option<&Schema>) -> Result<WeightedDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let empty = Schema::default();
    let schema = schema.unwrap_or(&empty);
    for name in schema.cardinalities.keys().chain(schema.labels.keys()) {
        if !names.contains(name) {
            return Err(Error::UnknownVariable(name.clone()));
        }
    }
    let label_maps: Vec<Option<HashMap<&str, usize>>> = names
        .iter()
        .map(|n| {
            schema
                .labels
                .get(n)
                .map(|ls| ls.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect())
        })
        .collect();

    let mut records = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::Data(format!("record {} has {} cells", line + 1, rec.len())));
        }
        let mut values = Vec::with_capacity(names.len());
        for (col, cell) in rec.iter().enumerate() {
            let v = match &label_maps[col] {
                Some(map) => *map.get(cell).ok_or_else(|| {
                    Error::Data(format!("unknown label `{cell}` in column `{}`", names[col]))
                })?,
                None => cell.parse::<usize>().map_err(|_| {
                    Error::Data(format!(
                        "cell `{cell}` in column `{}` is not a non-negative integer",
                        names[col]
                    ))
                })?,
            };
            values.push(v);
        }
        records.push(values);
    }
    if records.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }

    let variables = names
        .iter()
        .enumerate()
        .map(|(col, name)| {
            let observed_max = records.iter().map(|r| r[col]).max().unwrap_or(0);
            let card = schema
                .cardinalities
                .get(name)
                .copied()
                .or_else(|| schema.labels.get(name).map(Vec::len))
                .unwrap_or(observed_max + 1);
            Variable::observed(name.clone(), card)
        })
        .collect();
    WeightedDataset::from_records(variables, records)
}

/// Binary presence/absence dataset over the `vocab_size` tokens with the
/// highest document frequency (ties broken lexicographically).
pub fn ingest_bag_of_words<S: AsRef<str>>(corpus: &[Vec<S>], vocab_size: usize) -> Result<WeightedDataset> {
    if corpus.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    if vocab_size == 0 {
        return Err(Error::InvalidArgument("vocabulary size must be at least 1".into()));
    }
    let mut df: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        let distinct: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for tok in distinct {
            *df.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let vocab: Vec<String> = ranked
        .into_iter()
        .take(vocab_size)
        .map(|(t, _)| t.to_string())
        .collect();
    ingest_with_vocabulary(corpus, &vocab)
}

/// Binary presence/absence dataset over a fixed vocabulary.
pub fn ingest_with_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>], vocabulary: &[String]) -> Result<WeightedDataset> {
    if corpus.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    if vocabulary.is_empty() {
        return Err(Error::InvalidArgument("empty vocabulary".into()));
    }
    let slot: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let variables = vocabulary.iter().map(Variable::binary).collect();
    let records = corpus.iter().map(|doc| {
        let mut row = vec![0usize; vocabulary.len()];
        for tok in doc {
            if let Some(&i) = slot.get(tok.as_ref()) {
                row[i] = 1;
            }
        }
        row
    });
    WeightedDataset::from_records(variables, records)
}

/// One document per line, whitespace-separated tokens.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            line.map(|l| l.split_whitespace().map(str::to_string).collect())
                .map_err(|e| Error::io(path, e))
        })
        .collect()
}

/// One token per line; blank lines ignored.
pub fn read_vocabulary(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Ancestral sampling of `n` joint configurations; latent columns are
/// dropped and the observed rows deduplicated.
pub fn forward_sample(model: &LatentTreeModel, n: u64, seed: u64) -> Result<WeightedDataset> {
    use rand::Rng;

    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    let order = model.preorder();
    let observed: Vec<usize> = model.observed_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = vec![0usize; model.num_nodes()];
    let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();

    for _ in 0..n {
        for &v in order {
            let probs = match model.parent(v) {
                None => model.table(v),
                Some(p) => model.conditional_row(v, state[p]),
            };
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (s, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = s;
                    break;
                }
            }
            // Never land on a zero-probability state through rounding slack.
            while probs[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            state[v] = pick;
        }
        let row: Vec<usize> = observed.iter().map(|&v| state[v]).collect();
        *counts.entry(row).or_insert(0) += 1;
    }
    let variables = observed
        .iter()
        .map(|&v| model.variable(v).clone())
        .collect();
    WeightedDataset::from_weighted_rows(variables, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(names: &[&str]) -> Vec<Variable> {
        names.iter().map(|n| Variable::binary(*n)).collect()
    }

    #[test]
    fn csv_deduplicates_records() {
        let text = "a,b\n0,1\n0,1\n1,0\n1,1\n0,0\n1,1\n";
        let d = read_categorical_csv(text.as_bytes(), None).unwrap();
        assert_eq!(d.num_rows(), 4);
        assert_eq!(d.total_weight(), 6);
    }

    #[test]
    fn csv_skips_comment_lines() {
        let d = read_categorical_csv("# {\"seed\": 1}\na,b\n0,1\n".as_bytes(), None).unwrap();
        assert_eq!(d.variable_names(), vec!["a", "b"]);
        assert_eq!(d.total_weight(), 1);
    }

    #[test]
    fn csv_cardinality_is_max_plus_one() {
        let d = read_categorical_csv("x\n0\n2\n1\n".as_bytes(), None).unwrap();
        assert_eq!(d.variables()[0].cardinality, 3);
    }

    #[test]
    fn csv_value_outside_declared_cardinality() {
        let mut schema = Schema::default();
        schema.cardinalities.insert("x".into(), 4);
        let err = read_categorical_csv("x\n0\n5\n".as_bytes(), Some(&schema)).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn csv_empty_and_bad_cells() {
        assert!(read_categorical_csv("x,y\n".as_bytes(), None).is_err());
        assert!(read_categorical_csv("x\n-1\n".as_bytes(), None).is_err());
        assert!(load_categorical_csv("/nonexistent/file.csv", None).is_err());
    }

    #[test]
    fn csv_labels_from_schema() {
        let mut schema = Schema::default();
        schema
            .labels
            .insert("c".into(), vec!["red".into(), "green".into(), "blue".into()]);
        let d = read_categorical_csv("c,n\nblue,0\nred,1\n".as_bytes(), Some(&schema)).unwrap();
        assert_eq!(d.variables()[0].cardinality, 3);
        assert_eq!(d.rows()[0].values, vec![0, 1]);
        assert_eq!(d.rows()[1].values, vec![2, 0]);
    }

    #[test]
    fn bag_of_words_presence() {
        let corpus = vec![vec!["a", "b"], vec!["a"]];
        let d = ingest_bag_of_words(&corpus, 2).unwrap();
        assert_eq!(d.variable_names(), vec!["a", "b"]);
        assert_eq!(d.rows().len(), 2);
        assert!(d.rows().contains(&Row { values: vec![1, 1], weight: 1 }));
        assert!(d.rows().contains(&Row { values: vec![1, 0], weight: 1 }));

        let d1 = ingest_bag_of_words(&corpus, 1).unwrap();
        assert_eq!(d1.variable_names(), vec!["a"]);
        assert_eq!(d1.rows(), &[Row { values: vec![1], weight: 2 }]);

        let rep = vec![vec!["a", "a", "b"], vec!["a", "b"]];
        let d2 = ingest_bag_of_words(&rep, 2).unwrap();
        assert_eq!(d2.rows(), &[Row { values: vec![1, 1], weight: 2 }]);

        let empty: Vec<Vec<&str>> = vec![];
        assert!(ingest_bag_of_words(&empty, 3).is_err());
    }

    #[test]
    fn bag_of_words_tie_break_is_lexicographic() {
        let corpus = vec![vec!["zeta", "alpha", "mid"], vec!["zeta", "alpha"]];
        let d = ingest_bag_of_words(&corpus, 2).unwrap();
        assert_eq!(d.variable_names(), vec!["alpha", "zeta"]);
    }

    #[test]
    fn project_identity_and_unknown() {
        let d = WeightedDataset::from_records(bin(&["a", "b", "c"]), vec![vec![0, 1, 1], vec![1, 1, 0], vec![0, 1, 1]]).unwrap();
        assert_eq!(d.project(&["a", "b", "c"]).unwrap(), d);
        assert!(matches!(d.project(&["a", "q"]), Err(Error::UnknownVariable(_))));
        let p = d.project(&["b"]).unwrap();
        assert_eq!(p.rows(), &[Row { values: vec![1], weight: 3 }]);
    }

    #[test]
    fn million_records_compress_to_sixteen_rows() {
        let vars = bin(&["w0", "w1", "w2", "w3", "w4", "w5"]);
        let rows = (0..64u64).map(|i| {
            let values = (0..6).map(|b| ((i >> b) & 1) as usize).collect::<Vec<_>>();
            (values, 15_625)
        });
        let d = WeightedDataset::from_weighted_rows(vars, rows).unwrap();
        assert_eq!(d.total_weight(), 1_000_000);
        let p = d.project(&["w0", "w2", "w3", "w5"]).unwrap();
        assert!(p.num_rows() <= 16);
        assert_eq!(p.total_weight(), 1_000_000);
    }

    #[test]
    fn split_is_proportional_and_deterministic() {
        let d = WeightedDataset::from_weighted_rows(bin(&["a", "b"]), vec![(vec![0, 0], 37), (vec![1, 1], 63)]).unwrap();
        let (train, test) = d.split(0.2, 9).unwrap();
        assert_eq!(test.total_weight(), 20);
        assert_eq!(train.total_weight(), 80);
        assert_eq!(d.split(0.2, 9).unwrap(), (train, test));

        let one = WeightedDataset::from_records(bin(&["a"]), vec![vec![1]]).unwrap();
        assert!(one.split(0.5, 0).is_err());
        assert!(d.split(0.0, 0).is_err());
        assert!(d.split(1.0, 0).is_err());
    }

    #[test]
    fn rejects_duplicate_names_and_bad_rows() {
        assert!(WeightedDataset::from_records(bin(&["a", "a"]), vec![vec![0, 0]]).is_err());
        assert!(WeightedDataset::from_records(bin(&["a"]), vec![vec![0, 0]]).is_err());
        assert!(WeightedDataset::from_records(bin(&["a"]), Vec::<Vec<usize>>::new()).is_err());
    }

    #[test]
    fn csv_writer_expands_weights() {
        let d = WeightedDataset::from_weighted_rows(bin(&["a", "b"]), vec![(vec![0, 1], 2), (vec![1, 1], 1)]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_categorical_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, d);
    }
}
