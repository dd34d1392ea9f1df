use rayon::prelude::*;

use crate::data::WeightedDataset;
use crate::error::Result;

/// Mutual information in nats between two columns, from the empirical joint
/// with `smoothing` added to every cell.
pub fn empirical_mutual_information(data: &WeightedDataset, x: &str, y: &str, smoothing: f64) -> Result<f64> {
    let a = data.require_column(x)?;
    let b = data.require_column(y)?;
    Ok(column_mi(data, a, b, smoothing))
}

pub(crate) fn column_mi(data: &WeightedDataset, a: usize, b: usize, smoothing: f64) -> f64 {
    let ca = data.variables()[a].cardinality;
    let cb = data.variables()[b].cardinality;
    let mut joint = data.joint_counts(a, b);
    joint.iter_mut().for_each(|c| *c += smoothing);
    mi_of_counts(&joint, ca, cb)
}

/// MI of a row-major `ca x cb` table of non-negative counts.
pub fn mi_of_counts(joint: &[f64], ca: usize, cb: usize) -> f64 {
    let total: f64 = joint.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut pa = vec![0.0; ca];
    let mut pb = vec![0.0; cb];
    for i in 0..ca {
        for j in 0..cb {
            pa[i] += joint[i * cb + j];
            pb[j] += joint[i * cb + j];
        }
    }
    let mut mi = 0.0;
    for i in 0..ca {
        for j in 0..cb {
            let n = joint[i * cb + j];
            if n > 0.0 {
                mi += n / total * (n * total / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Symmetric pairwise MI over the given columns.
pub(crate) fn mi_matrix(data: &WeightedDataset, cols: &[usize], smoothing: f64) -> Vec<Vec<f64>> {
    let n = cols.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| column_mi(data, cols[i], cols[j], smoothing))
        .collect();
    let mut m = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        m[i][j] = v;
        m[j][i] = v;
    }
    m
}

/// Whitespace-separated symmetric matrix with a header row of names.
pub fn format_matrix(names: &[String], values: &[Vec<f64>]) -> String {
    let mut out = String::from("-");
    for n in names {
        out.push('\t');
        out.push_str(n);
    }
    out.push('\n');
    for (n, row) in names.iter().zip(values) {
        out.push_str(n);
        for v in row {
            out.push('\t');
            out.push_str(&format!("{v:.6}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Variable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_data(rows: Vec<(Vec<usize>, u64)>, ca: usize, cb: usize) -> WeightedDataset {
        WeightedDataset::from_weighted_rows(vec![Variable::observed("x", ca), Variable::observed("y", cb)], rows).unwrap()
    }

    #[test]
    fn independent_table_has_zero_mi() {
        let d = pair_data(vec![(vec![0, 0], 2), (vec![0, 1], 6), (vec![1, 0], 1), (vec![1, 1], 3)], 2, 2);
        assert!(empirical_mutual_information(&d, "x", "y", 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn copy_has_ln2() {
        let d = pair_data(vec![(vec![0, 0], 5), (vec![1, 1], 5)], 2, 2);
        let mi = empirical_mutual_information(&d, "x", "y", 0.0).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut rows = Vec::new();
            for i in 0..3 {
                for j in 0..3 {
                    rows.push((vec![i, j], rng.gen_range(1..50u64)));
                }
            }
            let d = pair_data(rows.clone(), 3, 3);
            let n: f64 = rows.iter().map(|r| r.1 as f64).sum();
            let p = |i: usize, j: usize| rows.iter().find(|r| r.0 == vec![i, j]).unwrap().1 as f64 / n;
            let px = |i: usize| (0..3).map(|j| p(i, j)).sum::<f64>();
            let py = |j: usize| (0..3).map(|i| p(i, j)).sum::<f64>();
            let mut oracle = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    oracle += p(i, j) * (p(i, j) / (px(i) * py(j))).ln();
                }
            }
            let mi = empirical_mutual_information(&d, "x", "y", 0.0).unwrap();
            assert!((mi - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_shrinks_dependence() {
        let d = pair_data(vec![(vec![0, 0], 5), (vec![1, 1], 5)], 2, 2);
        let raw = empirical_mutual_information(&d, "x", "y", 0.0).unwrap();
        let smooth = empirical_mutual_information(&d, "x", "y", 1.0).unwrap();
        assert!(smooth < raw && smooth > 0.0);
    }

    #[test]
    fn unknown_variable() {
        let d = pair_data(vec![(vec![0, 0], 1)], 2, 2);
        assert!(empirical_mutual_information(&d, "x", "z", 0.0).is_err());
    }

    #[test]
    fn matrix_export() {
        let s = format_matrix(&["a".into(), "b".into()], &[vec![0.0, 0.5], vec![0.5, 0.0]]);
        assert_eq!(s, "-\ta\tb\na\t0.000000\t0.500000\nb\t0.500000\t0.000000\n");
    }
}
