use crate::data::{Variable, WeightedDataset};
use crate::error::{Error, Result};
use crate::model::LatentTreeStructure;

use super::mi::mi_matrix;

/// Maximum-weight spanning tree over `names` under `weights`, by Kruskal.
/// Equal weights are broken by the lexicographic order of the edge's
/// (smaller name, larger name) pair. Returns index pairs into `names`.
pub(crate) fn maximum_spanning_tree(names: &[&str], weights: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = names.len();
    let mut edges: Vec<(f64, (&str, &str), usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let key = if names[i] <= names[j] { (names[i], names[j]) } else { (names[j], names[i]) };
            edges.push((weights[i][j], key, i, j));
        }
    }
    edges.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (_, _, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            tree.push((i, j));
            if tree.len() + 1 == n {
                break;
            }
        }
    }
    tree
}

/// Chow-Liu tree over the named columns: the maximum spanning tree under
/// pairwise empirical mutual information. Internal nodes are observed, so
/// the result is an intermediate structure that does not validate as a
/// latent tree.
pub fn chow_liu<S: AsRef<str>>(data: &WeightedDataset, variables: &[S], smoothing: f64) -> Result<LatentTreeStructure> {
    if variables.len() < 2 {
        return Err(Error::InvalidArgument("Chow-Liu tree needs at least two variables".into()));
    }
    let cols = variables
        .iter()
        .map(|v| data.require_column(v.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mi = mi_matrix(data, &cols, smoothing);
    let names: Vec<&str> = variables.iter().map(|v| v.as_ref()).collect();
    let edges = maximum_spanning_tree(&names, &mi);
    let vars: Vec<Variable> = cols.iter().map(|&c| data.variables()[c].clone()).collect();
    Ok(LatentTreeStructure::new(vars, edges))
}
