//! k-means discretization of the learned representation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmkcfError, Result};

/// Cluster assignment with ids in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    labels: Vec<usize>,
    k: usize,
}

impl Labeling {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(GmkcfError::Input(format!(
                "label {bad} out of range for k = {k}"
            )));
        }
        Ok(Self { labels, k })
    }

    /// Maps arbitrary ids to contiguous ids in order of first appearance.
    pub fn from_raw(raw: &[usize]) -> Self {
        let mut seen: Vec<usize> = Vec::new();
        let labels = raw
            .iter()
            .map(|x| match seen.iter().position(|s| s == x) {
                Some(p) => p,
                None => {
                    seen.push(*x);
                    seen.len() - 1
                }
            })
            .collect();
        Self {
            labels,
            k: seen.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Scale each row to unit length before clustering.
    pub normalize_rows: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2,
            restarts: 10,
            max_iter: 100,
            seed: 0,
            normalize_rows: false,
        }
    }
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

struct Run {
    labels: Vec<usize>,
    inertia: f64,
}

/// Best-of-`restarts` Lloyd's algorithm with k-means++ seeding. `points` has
/// one sample per row. Returns the labeling and its inertia.
pub fn kmeans_fit(points: ArrayView2<'_, f64>, config: &KMeansConfig) -> Result<(Labeling, f64)> {
    let (n, _) = points.dim();
    if config.k == 0 || n < config.k {
        return Err(GmkcfError::Input(format!(
            "k-means needs 1 ≤ k ≤ n, got k = {} with n = {n}",
            config.k
        )));
    }
    if config.restarts == 0 {
        return Err(GmkcfError::Input(
            "k-means needs at least one restart".into(),
        ));
    }
    let data = if config.normalize_rows {
        let mut p = points.to_owned();
        for mut row in p.axis_iter_mut(Axis(0)) {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
        p
    } else {
        points.to_owned()
    };

    let runs: Vec<Run> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            lloyd(&data, config.k, config.max_iter, &mut rng)
        })
        .collect();

    // first minimum wins, so ties go to the lowest restart index
    let best = runs
        .into_iter()
        .reduce(|best, run| {
            if run.inertia < best.inertia {
                run
            } else {
                best
            }
        })
        .expect("at least one restart");
    Ok((Labeling::new(best.labels, config.k)?, best.inertia))
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seeds(data: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(weights) => weights.sample(rng),
            // every remaining point coincides with a center
            Err(_) => (0..n).find(|i| !chosen.contains(i)).unwrap(),
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    data.select(Axis(0), &chosen)
}

fn assign(data: &Array2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, label) in labels.iter_mut().enumerate() {
        let row = data.row(i);
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in centroids.axis_iter(Axis(0)).enumerate() {
            let d = sq_dist(row, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        if *label != best.0 {
            *label = best.0;
            changed = true;
        }
    }
    changed
}

fn centroids_of(data: &Array2<f64>, labels: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::<f64>::zeros((k, data.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = sums.row_mut(l);
        row += &data.row(i);
        counts[l] += 1;
    }
    for (mut row, &c) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    (sums, counts)
}

/// Moves the point farthest from its centroid into each empty cluster.
fn reseed_empty(data: &Array2<f64>, labels: &mut [usize], k: usize) {
    loop {
        let (centroids, counts) = centroids_of(data, labels, k);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (i, sq_dist(data.row(i), centroids.row(labels[i]))))
            .fold(
                (usize::MAX, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if far.0 == usize::MAX {
            return;
        }
        labels[far.0] = empty;
    }
}

fn lloyd(data: &Array2<f64>, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Run {
    let n = data.nrows();
    let mut centroids = plus_plus_seeds(data, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let changed = assign(data, &centroids, &mut labels);
        reseed_empty(data, &mut labels, k);
        centroids = centroids_of(data, &labels, k).0;
        if !changed {
            break;
        }
    }
    let inertia = inertia(data.view(), &labels, &centroids);
    Run { labels, inertia }
}

fn inertia(data: ArrayView2<'_, f64>, labels: &[usize], centroids: &Array2<f64>) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(data.row(i), centroids.row(l)))
        .sum()
}

/// Within-cluster sum of squares of `labeling`, with centroids at the
/// cluster means.
pub fn labeling_inertia(points: ArrayView2<'_, f64>, labeling: &Labeling) -> f64 {
    let (centroids, _) = centroids_of(&points.to_owned(), labeling.labels(), labeling.k());
    inertia(points, labeling.labels(), &centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn column(values: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
    }

    #[test]
    fn separates_two_far_groups() {
        let mut rows = vec![[0.0, 0.0]; 5];
        rows.extend(vec![[10.0, 10.0]; 5]);
        let pts = Array2::from_shape_fn((10, 2), |(i, j)| rows[i][j]);
        let (lab, inertia) = kmeans_fit(pts.view(), &KMeansConfig::new(2)).unwrap();
        assert_eq!(inertia, 0.0);
        let l = lab.labels();
        assert!(l[..5].iter().all(|&x| x == l[0]));
        assert!(l[5..].iter().all(|&x| x == l[5]));
        assert_ne!(l[0], l[5]);
    }

    #[test]
    fn k_equals_n() {
        let pts = array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0], [9.0, 9.0]];
        let (lab, inertia) = kmeans_fit(pts.view(), &KMeansConfig::new(4)).unwrap();
        assert_eq!(inertia, 0.0);
        let mut l = lab.labels().to_vec();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
    }

    #[test]
    fn line_split_matches_enumeration() {
        let values = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0];
        let pts = column(&values);
        // oracle: every 2-partition of the six points
        let sse = |idx: &[usize]| {
            if idx.is_empty() {
                return 0.0;
            }
            let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64;
            idx.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>()
        };
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 6) - 1 {
            let (a, b): (Vec<usize>, Vec<usize>) = (0..6).partition(|&i| mask & (1 << i) != 0);
            best = best.min(sse(&a) + sse(&b));
        }
        assert_eq!(best, 4.0);

        let (lab, inertia) = kmeans_fit(pts.view(), &KMeansConfig::new(2)).unwrap();
        assert!((inertia - best).abs() < 1e-12);
        let l = lab.labels();
        assert!(l[0] == l[1] && l[1] == l[2] && l[3] == l[4] && l[4] == l[5] && l[0] != l[3]);
    }

    #[test]
    fn inertia_is_consistent_and_best_of_restarts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_fn((60, 3), |_| rng.gen::<f64>());
        let cfg = KMeansConfig {
            restarts: 6,
            ..KMeansConfig::new(4).with_seed(12)
        };
        let (lab, inertia) = kmeans_fit(pts.view(), &cfg).unwrap();
        let recomputed = labeling_inertia(pts.view(), &lab);
        assert!((inertia - recomputed).abs() <= 1e-9 * recomputed);
        for r in 0..cfg.restarts {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let run = lloyd(&pts, 4, cfg.max_iter, &mut rng);
            assert!(inertia <= run.inertia);
        }
        let (again, _) = kmeans_fit(pts.view(), &cfg).unwrap();
        assert_eq!(again, lab);
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let pts = column(&[1.0, 1.0, 1.0, 1.0]);
        let (lab, inertia) = kmeans_fit(pts.view(), &KMeansConfig::new(3)).unwrap();
        assert_eq!(inertia, 0.0);
        assert_eq!(lab.k(), 3);
    }

    #[test]
    fn rejects_too_many_clusters() {
        let pts = column(&[1.0, 2.0]);
        assert!(kmeans_fit(pts.view(), &KMeansConfig::new(3)).is_err());
    }

    #[test]
    fn first_appearance_mapping() {
        let lab = Labeling::from_raw(&[5, 5, 9, 2, 9]);
        assert_eq!(lab.labels(), &[0, 0, 1, 2, 1]);
        assert_eq!(lab.k(), 3);
        assert!(Labeling::new(vec![0, 3], 3).is_err());
    }
}
