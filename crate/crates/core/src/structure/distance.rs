use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::model::LatentTreeModel;

use super::mi::format_matrix;

/// Distances beyond this come from a numerically singular joint.
const SINGULAR_DISTANCE: f64 = 30.0;

/// Symmetric matrix of pairwise information distances. Entries may be
/// infinite for independent pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct InformationDistanceMatrix {
    pub variables: Vec<String>,
    pub distances: Vec<Vec<f64>>,
}

impl InformationDistanceMatrix {
    /// Distances between all dataset columns.
    pub fn from_dataset(data: &WeightedDataset, smoothing: f64) -> Result<Self> {
        let n = data.num_variables();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let values = pairs
            .par_iter()
            .map(|&(i, j)| column_distance(data, i, j, smoothing))
            .collect::<Vec<Result<f64>>>();
        let mut d = vec![vec![0.0; n]; n];
        for (&(i, j), v) in pairs.iter().zip(values) {
            let v = v?;
            d[i][j] = v;
            d[j][i] = v;
        }
        Ok(InformationDistanceMatrix {
            variables: data.variable_names().iter().map(|s| s.to_string()).collect(),
            distances: d,
        })
    }

    /// Exact distances between the given model nodes.
    pub fn from_model(model: &LatentTreeModel, nodes: &[usize]) -> Result<Self> {
        let n = nodes.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = model_distance(model, nodes[i], nodes[j])?;
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        Ok(InformationDistanceMatrix {
            variables: nodes.iter().map(|&v| model.name(v).to_string()).collect(),
            distances: d,
        })
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.distances[i][j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Appends a node with the given distances to every existing node.
    pub(crate) fn push(&mut self, name: String, to_existing: Vec<f64>) {
        debug_assert_eq!(to_existing.len(), self.len());
        for (row, &d) in self.distances.iter_mut().zip(&to_existing) {
            row.push(d);
        }
        let mut row = to_existing;
        row.push(0.0);
        self.distances.push(row);
        self.variables.push(name);
    }

    pub fn to_text(&self) -> String {
        format_matrix(&self.variables, &self.distances)
    }
}

fn column_distance(data: &WeightedDataset, a: usize, b: usize, smoothing: f64) -> Result<f64> {
    let ca = data.variables()[a].cardinality;
    let cb = data.variables()[b].cardinality;
    let mut joint = data.joint_counts(a, b);
    joint.iter_mut().for_each(|c| *c += smoothing);
    let total: f64 = joint.iter().sum();
    joint.iter_mut().for_each(|c| *c /= total);
    distance_from_joint(&joint, ca, cb).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "{msg} for `{}` and `{}`",
            data.variables()[a].name,
            data.variables()[b].name
        )),
        other => other,
    })
}

/// Information distance between two named columns of a dataset.
pub fn information_distance(data: &WeightedDataset, x: &str, y: &str, smoothing: f64) -> Result<f64> {
    let a = data.require_column(x)?;
    let b = data.require_column(y)?;
    column_distance(data, a, b, smoothing)
}

/// `-ln(|det J| / sqrt(det Dx det Dy))` for a row-major `ca x cb` joint
/// probability table. With unequal cardinalities the larger variable is
/// restricted to its `min(ca, cb)` most probable states.
pub fn distance_from_joint(joint: &[f64], ca: usize, cb: usize) -> Result<f64> {
    let mut pa = vec![0.0; ca];
    let mut pb = vec![0.0; cb];
    for i in 0..ca {
        for j in 0..cb {
            pa[i] += joint[i * cb + j];
            pb[j] += joint[i * cb + j];
        }
    }
    if pa.iter().chain(&pb).any(|&p| p <= 0.0) {
        return Err(Error::Numeric("information distance undefined for a zero-probability state".into()));
    }
    let k = ca.min(cb);
    let rows = top_states(&pa, k);
    let cols = top_states(&pb, k);
    let j = DMatrix::from_fn(k, k, |r, c| joint[rows[r] * cb + cols[c]]);
    let det_j = j.determinant().abs();
    let log_dx: f64 = rows.iter().map(|&r| pa[r].ln()).sum();
    let log_dy: f64 = cols.iter().map(|&c| pb[c].ln()).sum();
    let d = -(det_j.ln() - 0.5 * (log_dx + log_dy));
    // A determinant at rounding level is a rank-deficient joint.
    if det_j == 0.0 || d > SINGULAR_DISTANCE {
        return Ok(f64::INFINITY);
    }
    Ok(d.max(0.0))
}

/// Indices of the `k` largest entries, lowest index first among ties, in
/// ascending index order.
fn top_states(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Exact pairwise joint of two model nodes, row-major in `a`.
pub(crate) fn model_pair_joint(model: &LatentTreeModel, a: usize, b: usize) -> Vec<f64> {
    let rooted = model.reroot_at(a);
    let cond = rooted.descendant_given_ancestor(a, b).expect("every node descends from the root");
    let pa = rooted.table(a);
    let cb = model.cardinality(b);
    let mut joint = cond;
    for (i, row) in joint.chunks_mut(cb).enumerate() {
        row.iter_mut().for_each(|x| *x *= pa[i]);
    }
    joint
}

fn model_distance(model: &LatentTreeModel, a: usize, b: usize) -> Result<f64> {
    let joint = model_pair_joint(model, a, b);
    distance_from_joint(&joint, model.cardinality(a), model.cardinality(b))
}

/// Exact distance between `x` and `y` under the model, and the sum of exact
/// distances over consecutive nodes of the tree path joining them.
pub fn additivity_check(model: &LatentTreeModel, x: &str, y: &str) -> Result<(f64, f64)> {
    let a = model.require(x)?;
    let b = model.require(y)?;
    let direct = model_distance(model, a, b)?;
    let path = model.path(a, b);
    let mut sum = 0.0;
    for w in path.windows(2) {
        sum += model_distance(model, w[0], w[1])?;
    }
    Ok((direct, sum))
}
