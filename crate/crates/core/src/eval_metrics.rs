//! External clustering metrics: accuracy under the best one-to-one label
//! mapping, normalized mutual information and purity.
//!
//! All metrics accept arbitrary integer ids; they only look at the induced
//! partitions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GmkcfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub nmi: f64,
    pub purity: f64,
}

/// Counts of samples per (true class, predicted cluster).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Array2<usize>,
    pub n: usize,
}

impl ContingencyTable {
    pub fn new(truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(GmkcfError::Dimension(format!(
                "label vectors differ in length: {} vs {}",
                truth.len(),
                pred.len()
            )));
        }
        let rows = compact(truth);
        let cols = compact(pred);
        let r = rows.iter().max().map_or(0, |m| m + 1);
        let c = cols.iter().max().map_or(0, |m| m + 1);
        let mut counts = Array2::zeros((r, c));
        for (&i, &j) in rows.iter().zip(&cols) {
            counts[[i, j]] += 1;
        }
        Ok(Self {
            counts,
            n: truth.len(),
        })
    }

    fn row_sums(&self) -> Vec<usize> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        self.counts.columns().into_iter().map(|c| c.sum()).collect()
    }
}

fn compact(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| {
            seen.iter().position(|s| s == l).unwrap_or_else(|| {
                seen.push(*l);
                seen.len() - 1
            })
        })
        .collect()
}

/// Minimum-cost one-to-one assignment (Kuhn–Munkres with potentials).
///
/// Rectangular inputs are padded with zero-cost rows or columns; the result
/// holds `min(r, c)` pairs `(row, col)` of the original matrix, sorted by row.
pub fn hungarian(cost: &Array2<f64>) -> Vec<(usize, usize)> {
    let (r, c) = cost.dim();
    let size = r.max(c);
    if size == 0 {
        return Vec::new();
    }
    let at = |i: usize, j: usize| if i < r && j < c { cost[[i, j]] } else { 0.0 };

    // 1-based arrays; row 0 / column 0 are sentinels
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut owner = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for row in 1..=size {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=size {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=size)
        .filter_map(|j| {
            let i = owner[j] - 1;
            (i < r && j - 1 < c).then_some((i, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Fraction of samples matched under the best class-to-cluster mapping.
pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(truth, pred)?;
    if table.n == 0 {
        return Ok(1.0);
    }
    let cost = table.counts.mapv(|c| -(c as f64));
    let matched: usize = hungarian(&cost)
        .into_iter()
        .map(|(i, j)| table.counts[[i, j]])
        .sum();
    Ok(matched as f64 / table.n as f64)
}

fn entropy(sums: &[usize], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `MI(C, C') / max(H(C), H(C'))`. When both entropies vanish the result is 1
/// for identical partitions and 0 otherwise.
pub fn nmi(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(truth, pred)?;
    if table.n == 0 {
        return Ok(1.0);
    }
    let n = table.n as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let h = entropy(&rows, n).max(entropy(&cols, n));
    if h <= 0.0 {
        return Ok(if compact(truth) == compact(pred) {
            1.0
        } else {
            0.0
        });
    }
    let mut mi = 0.0;
    for ((i, j), &c) in table.counts.indexed_iter() {
        if c > 0 {
            let pij = c as f64 / n;
            mi += pij * (c as f64 * n / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    Ok((mi / h).clamp(0.0, 1.0))
}

/// Fraction of samples belonging to the majority class of their cluster.
pub fn purity(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(truth, pred)?;
    if table.n == 0 {
        return Ok(1.0);
    }
    let majority: usize = table
        .counts
        .columns()
        .into_iter()
        .map(|col| col.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(majority as f64 / table.n as f64)
}

pub fn evaluate(truth: &[usize], pred: &[usize]) -> Result<MetricReport> {
    Ok(MetricReport {
        acc: accuracy(truth, pred)?,
        nmi: nmi(truth, pred)?,
        purity: purity(truth, pred)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, head);
                out.push(p);
            }
        }
        out
    }

    fn brute_min(cost: &Array2<f64>) -> f64 {
        let n = cost.nrows();
        permutations(&(0..n).collect::<Vec<_>>())
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &j)| cost[[i, j]])
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn total(cost: &Array2<f64>, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| cost[[i, j]]).sum()
    }

    #[test]
    fn hungarian_examples() {
        let cost = array![[1.0, 2.0], [2.0, 1.0]];
        let pairs = hungarian(&cost);
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(total(&cost, &pairs), 2.0);

        let cost = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 });
        assert_eq!(hungarian(&cost), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn hungarian_matches_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for trial in 0..150 {
            let n = 1 + trial % 6;
            let cost = Array2::from_shape_fn((n, n), |_| rng.gen_range(0..20) as f64);
            let pairs = hungarian(&cost);
            assert_eq!(pairs.len(), n);
            assert_eq!(total(&cost, &pairs), brute_min(&cost));
        }
    }

    #[test]
    fn hungarian_rectangular() {
        let cost = array![[5.0, 1.0, 9.0], [1.0, 7.0, 9.0]];
        let pairs = hungarian(&cost);
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        let pairs = hungarian(&cost.t().to_owned());
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(accuracy(&[2, 0, 1, 1], &[2, 0, 1, 1]).unwrap(), 1.0);
        assert!(accuracy(&[0, 1], &[0]).is_err());
        // more clusters than classes
        assert_eq!(accuracy(&[0, 0, 0, 1], &[0, 1, 2, 3]).unwrap(), 0.5);
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[3, 3, 1, 1, 0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);

        // table [[2,1],[0,3]], rows (3,3), cols (2,4)
        let ln = f64::ln;
        let mi = (2.0 / 6.0) * ln(2.0 * 6.0 / (3.0 * 2.0))
            + (1.0 / 6.0) * ln(6.0 / (3.0 * 4.0))
            + (3.0 / 6.0) * ln(3.0 * 6.0 / (3.0 * 4.0));
        let h_truth = ln(2.0);
        let h_pred = -(2.0 / 6.0) * ln(2.0 / 6.0) - (4.0 / 6.0) * ln(4.0 / 6.0);
        let expected = mi / h_truth.max(h_pred);
        let got = nmi(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 1, 1]).unwrap();
        assert!((got - expected).abs() < 1e-12);

        assert_eq!(nmi(&[0, 0, 0], &[4, 4, 4]).unwrap(), 1.0);
        assert!(nmi(&[0], &[]).is_err());
    }

    #[test]
    fn purity_examples() {
        assert_eq!(purity(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(purity(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.5);
        assert!(purity(&[0, 0], &[0]).is_err());
    }

    fn labels(max_k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..30).prop_flat_map(move |n| {
            (
                prop::collection::vec(0..max_k, n),
                prop::collection::vec(0..max_k, n),
            )
        })
    }

    proptest! {
        #[test]
        fn metric_ordering((truth, pred) in labels(5)) {
            let acc = accuracy(&truth, &pred).unwrap();
            let pur = purity(&truth, &pred).unwrap();
            let n = nmi(&truth, &pred).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert!(acc <= pur + 1e-15 && pur <= 1.0);
            prop_assert!((0.0..=1.0).contains(&n));
        }

        #[test]
        fn nmi_is_symmetric((a, b) in labels(4)) {
            let ab = nmi(&a, &b).unwrap();
            let ba = nmi(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
        }

        #[test]
        fn relabeling_invariance((truth, pred) in labels(4), shift in 1usize..7) {
            let perm = |l: &[usize]| l.iter().map(|x| (x * 3 + shift) % 12).collect::<Vec<_>>();
            let base = evaluate(&truth, &pred).unwrap();
            let moved = evaluate(&perm(&truth), &perm(&pred)).unwrap();
            prop_assert!((base.acc - moved.acc).abs() <= 1e-12);
            prop_assert!((base.nmi - moved.nmi).abs() <= 1e-12);
            prop_assert!((base.purity - moved.purity).abs() <= 1e-12);
        }
    }

    #[test]
    fn accuracy_matches_mapping_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let n = rng.gen_range(1..=10);
            let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let best = permutations(&[0, 1, 2, 3, 4])
                .iter()
                .map(|p| {
                    truth
                        .iter()
                        .zip(&pred)
                        .filter(|(t, q)| p[**q] == **t)
                        .count()
                })
                .max()
                .unwrap();
            assert_eq!(accuracy(&truth, &pred).unwrap(), best as f64 / n as f64);
        }
    }
}
