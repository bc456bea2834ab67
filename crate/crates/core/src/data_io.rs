//! Dataset loaders, writers and the synthetic blob generator.
//!
//! Dense and label files are row-per-sample; the loaded [`FeatureMatrix`]
//! is stored with samples as columns. Sparse files use 1-based coordinates
//! `(feature, sample)` after a `d n nnz` header.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster_post::Labeling;
use crate::error::{GmkcfError, Result};
use crate::kernel_bank::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: FeatureMatrix,
    pub truth: Option<Labeling>,
    pub name: String,
    pub class_count: Option<usize>,
}

impl Dataset {
    pub fn new(x: FeatureMatrix, name: impl Into<String>) -> Self {
        Self {
            x,
            truth: None,
            name: name.into(),
            class_count: None,
        }
    }

    pub fn with_truth(mut self, truth: Labeling) -> Result<Self> {
        if truth.len() != self.x.samples() {
            return Err(GmkcfError::Dimension(format!(
                "{} labels for {} samples",
                truth.len(),
                self.x.samples()
            )));
        }
        self.class_count = Some(truth.k());
        self.truth = Some(truth);
        Ok(self)
    }
}

/// Isotropic Gaussian blobs with unit within-cluster standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    /// Minimum distance between cluster centres.
    pub separation: f64,
    pub seed: u64,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GmkcfError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GmkcfError::io(path, e))
}

fn name_of(path: &Path) -> String {
    path.file_stem().map_or_else(
        || "dataset".to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

fn parse_finite(tok: &str) -> Option<std::result::Result<f64, ()>> {
    tok.parse::<f64>()
        .ok()
        .map(|v| if v.is_finite() { Ok(v) } else { Err(()) })
}

/// Delimited text (comma or whitespace), one sample per row. A first line
/// with any non-numeric field is treated as a header.
pub fn load_dense(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut first_content = true;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed: Vec<Option<std::result::Result<f64, ()>>> =
            tokens(trimmed).map(parse_finite).collect();
        let is_first = std::mem::replace(&mut first_content, false);
        if parsed.iter().any(Option::is_none) {
            if is_first {
                continue;
            }
            return Err(GmkcfError::parse(path, lineno, "non-numeric field"));
        }
        let row = parsed
            .into_iter()
            .map(|v| v.unwrap())
            .collect::<std::result::Result<Vec<f64>, ()>>()
            .map_err(|_| GmkcfError::parse(path, lineno, "non-finite value"))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(GmkcfError::parse(
                    path,
                    lineno,
                    format!("expected {} fields, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GmkcfError::parse(
            path,
            text.lines().count(),
            "no data rows",
        ));
    }
    let x = FeatureMatrix::from_samples(&rows)
        .map_err(|e| GmkcfError::parse(path, 0, e.to_string()))?;
    Ok(Dataset::new(x, name_of(path)))
}

/// Writes samples as comma separated rows with full `f64` precision.
pub fn save_dense(path: impl AsRef<Path>, x: &FeatureMatrix) -> Result<()> {
    let mut out = String::new();
    for sample in x.data().columns() {
        let fields: Vec<String> = sample.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

/// Coordinate text: header `d n nnz`, then `nnz` lines `feature sample value`
/// with 1-based indices. Lines starting with `%` or `#` are comments.
pub fn load_sparse(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%') && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| GmkcfError::parse(path, 1, "missing 'd n nnz' header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| GmkcfError::parse(path, hline, "header must be 'd n nnz'"))?;
    let [d, n, nnz] = dims[..] else {
        return Err(GmkcfError::parse(path, hline, "header must be 'd n nnz'"));
    };

    let mut data = Array2::<f64>::zeros((d, n));
    let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(nnz);
    let mut count = 0;
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [r, c, v] = fields[..] else {
            return Err(GmkcfError::parse(path, lineno, "expected 'row col value'"));
        };
        let index = |s: &str, bound: usize, what: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(i) if (1..=bound).contains(&i) => Ok(i - 1),
                _ => Err(GmkcfError::parse(
                    path,
                    lineno,
                    format!("{what} index '{s}' outside 1..={bound}"),
                )),
            }
        };
        let (r, c) = (index(r, d, "row")?, index(c, n, "column")?);
        let value = match parse_finite(v) {
            Some(Ok(v)) => v,
            Some(Err(())) => return Err(GmkcfError::parse(path, lineno, "non-finite value")),
            None => return Err(GmkcfError::parse(path, lineno, "non-numeric value")),
        };
        if let Some(prev) = seen.insert((r, c), lineno) {
            return Err(GmkcfError::parse(
                path,
                lineno,
                format!(
                    "duplicate coordinate ({}, {}) first seen on line {prev}",
                    r + 1,
                    c + 1
                ),
            ));
        }
        data[[r, c]] = value;
        count += 1;
    }
    if count != nnz {
        return Err(GmkcfError::parse(
            path,
            hline,
            format!("header declares {nnz} entries, found {count}"),
        ));
    }
    let x = FeatureMatrix::new(data).map_err(|e| GmkcfError::parse(path, hline, e.to_string()))?;
    Ok(Dataset::new(x, name_of(path)))
}

pub fn save_sparse(path: impl AsRef<Path>, x: &FeatureMatrix) -> Result<()> {
    let data = x.data();
    let entries: Vec<((usize, usize), f64)> = data
        .indexed_iter()
        .filter(|(_, &v)| v != 0.0)
        .map(|(ix, &v)| (ix, v))
        .collect();
    let mut out = format!("{} {} {}\n", data.nrows(), data.ncols(), entries.len());
    for ((r, c), v) in entries {
        writeln!(out, "{} {} {v:e}", r + 1, c + 1).unwrap();
    }
    write_text(path.as_ref(), &out)
}

/// One token per line, exactly `n` lines; tokens map to contiguous ids in
/// order of first appearance.
pub fn load_labels(path: impl AsRef<Path>, n: usize) -> Result<Labeling> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let toks: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if toks.len() != n {
        return Err(GmkcfError::parse(
            path,
            toks.len(),
            format!("expected {n} labels, found {}", toks.len()),
        ));
    }
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let raw: Vec<usize> = toks
        .iter()
        .map(|t| {
            let next = ids.len();
            *ids.entry(t).or_insert(next)
        })
        .collect();
    Labeling::new(raw, ids.len())
}

pub fn save_labels(path: impl AsRef<Path>, labels: &Labeling) -> Result<()> {
    let mut out = String::new();
    for l in labels.labels() {
        writeln!(out, "{l}").unwrap();
    }
    write_text(path.as_ref(), &out)
}

/// Centres at mutual distance of at least `separation`; samples are ordered
/// cluster by cluster.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.clusters < 2 || spec.per_cluster < 2 || spec.dim < 1 {
        return Err(GmkcfError::Input(format!(
            "invalid synthetic spec {spec:?}"
        )));
    }
    if !(spec.separation > 0.0 && spec.separation.is_finite()) {
        return Err(GmkcfError::Input("separation must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres = centres(spec, &mut rng);
    let n = spec.clusters * spec.per_cluster;
    let mut data = Array2::<f64>::zeros((spec.dim, n));
    let mut labels = Vec::with_capacity(n);
    for (c, centre) in centres.iter().enumerate() {
        for s in 0..spec.per_cluster {
            let j = c * spec.per_cluster + s;
            for (i, &mu) in centre.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                data[[i, j]] = mu + z;
            }
            labels.push(c);
        }
    }
    let x = FeatureMatrix::new(data)?;
    let name = format!(
        "synthetic-{}x{}-d{}-s{}",
        spec.clusters, spec.per_cluster, spec.dim, spec.separation
    );
    Dataset::new(x, name).with_truth(Labeling::new(labels, spec.clusters)?)
}

fn centres(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let k = spec.clusters;
    if k <= spec.dim {
        // scaled basis vectors are pairwise exactly `separation` apart
        let scale = spec.separation / std::f64::consts::SQRT_2;
        return (0..k)
            .map(|c| {
                (0..spec.dim)
                    .map(|i| if i == c { scale } else { 0.0 })
                    .collect()
            })
            .collect();
    }
    let mut side = spec.separation * (k as f64).powf(1.0 / spec.dim as f64) * 2.0;
    loop {
        let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
        for _ in 0..10_000 {
            let cand: Vec<f64> = (0..spec.dim).map(|_| rng.gen_range(0.0..side)).collect();
            let far = found.iter().all(|c| {
                c.iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    >= spec.separation * spec.separation
            });
            if far {
                found.push(cand);
                if found.len() == k {
                    return found;
                }
            }
        }
        side *= 1.5;
    }
}
