//! Candidate kernel construction and combination.
//!
//! Every kernel in a bank goes through the same pipeline: raw evaluation,
//! normalization to unit diagonal (`K_ij / sqrt(K_ii K_jj)`), and a shift to
//! the unit interval that keeps the matrix positive semidefinite. The combined
//! kernel for weights `w` is `Σ w_i² K^i`.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{GmkcfError, Result};

/// Norm and diagonal floor used by cosine evaluation and normalization.
pub const NORM_FLOOR: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;
const BANK_MAGIC: &[u8; 8] = b"GMKBANK1";

/// Column-sample feature matrix: `d` rows (features) by `n` columns (samples).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (d, n) = data.dim();
        if d < 1 {
            return Err(GmkcfError::Input(
                "feature matrix needs at least one feature".into(),
            ));
        }
        if n < 2 {
            return Err(GmkcfError::Input(format!(
                "feature matrix needs at least two samples, got {n}"
            )));
        }
        if let Some(((i, j), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GmkcfError::Input(format!(
                "non-finite value {v} at feature {i}, sample {j}"
            )));
        }
        Ok(Self { data })
    }

    /// Builds the matrix from row-major samples (one `Vec` per sample).
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        let d = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|s| s.len() != d) {
            return Err(GmkcfError::Dimension(
                "samples have differing lengths".into(),
            ));
        }
        let data = Array2::from_shape_fn((d, n), |(i, j)| samples[j][i]);
        Self::new(data)
    }

    pub fn features(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// `XᵀX`, the n×n matrix of sample inner products.
    fn inner_products(&self) -> Array2<f64> {
        let mut g = self.data.t().dot(&self.data);
        symmetrize(&mut g);
        g
    }
}

/// Kernel function family and its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(-‖x−y‖² / (2δ²))` with bandwidth `δ = t·D0`.
    Rbf { t: f64 },
    /// `(a + xᵀy)^b`.
    Polynomial { a: f64, b: u32 },
    /// `xᵀy / (‖x‖‖y‖)`.
    Cosine,
}

impl KernelSpec {
    /// The twelve-kernel recipe: seven RBF bandwidths (ascending), four
    /// polynomial kernels with `(a, b)` in lexicographic order, then cosine.
    pub fn paper12() -> Vec<KernelSpec> {
        let mut specs: Vec<KernelSpec> = [0.01, 0.05, 0.1, 1.0, 10.0, 50.0, 100.0]
            .into_iter()
            .map(|t| KernelSpec::Rbf { t })
            .collect();
        for (a, b) in [(0.0, 2), (0.0, 4), (1.0, 2), (1.0, 4)] {
            specs.push(KernelSpec::Polynomial { a, b });
        }
        specs.push(KernelSpec::Cosine);
        specs
    }

    /// Parses a recipe: either `paper12` or a comma separated list of
    /// kernel specs such as `rbf:0.1,poly:1:2,cosine`.
    pub fn parse_recipe(recipe: &str) -> Result<Vec<KernelSpec>> {
        let recipe = recipe.trim();
        if recipe.eq_ignore_ascii_case("paper12") {
            return Ok(Self::paper12());
        }
        let specs = recipe
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(KernelSpec::from_str)
            .collect::<Result<Vec<_>>>()?;
        if specs.is_empty() {
            return Err(GmkcfError::Input("empty kernel recipe".into()));
        }
        Ok(specs)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { t } if !(t.is_finite() && t > 0.0) => Err(GmkcfError::Input(
                format!("rbf bandwidth multiplier must be positive, got {t}"),
            )),
            KernelSpec::Polynomial { a, b } if !a.is_finite() || b == 0 => Err(GmkcfError::Input(
                format!("invalid polynomial kernel a={a}, b={b}"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Rbf { t } => write!(f, "rbf:{t}"),
            KernelSpec::Polynomial { a, b } => write!(f, "poly:{a}:{b}"),
            KernelSpec::Cosine => write!(f, "cosine"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = GmkcfError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GmkcfError::Input(format!("unrecognized kernel spec '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let spec = match parts.as_slice() {
            ["cosine"] => KernelSpec::Cosine,
            ["rbf", t] => KernelSpec::Rbf {
                t: t.parse().map_err(|_| bad())?,
            },
            ["poly", a, b] => KernelSpec::Polynomial {
                a: a.parse().map_err(|_| bad())?,
                b: b.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// An n×n Gram matrix and the spec that produced it (`None` when it was
/// supplied directly).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    gram: Array2<f64>,
    spec: Option<KernelSpec>,
}

impl KernelMatrix {
    /// Wraps an externally computed square matrix.
    pub fn precomputed(gram: Array2<f64>) -> Result<Self> {
        if gram.nrows() != gram.ncols() {
            return Err(GmkcfError::Dimension(format!(
                "kernel matrix must be square, got {:?}",
                gram.dim()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(GmkcfError::Input(
                "kernel matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { gram, spec: None })
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn spec(&self) -> Option<KernelSpec> {
        self.spec
    }

    pub fn size(&self) -> usize {
        self.gram.nrows()
    }

    pub fn label(&self) -> String {
        self.spec
            .map_or_else(|| "precomputed".to_string(), |s| s.to_string())
    }

    pub fn into_gram(self) -> Array2<f64> {
        self.gram
    }
}

/// Ordered list of kernels over the same n samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    kernels: Vec<KernelMatrix>,
}

impl KernelBank {
    pub fn new(kernels: Vec<KernelMatrix>) -> Result<Self> {
        let Some(first) = kernels.first() else {
            return Err(GmkcfError::Input(
                "kernel bank must hold at least one kernel".into(),
            ));
        };
        let n = first.size();
        if let Some((i, k)) = kernels.iter().enumerate().find(|(_, k)| k.size() != n) {
            return Err(GmkcfError::Dimension(format!(
                "kernel {i} is {}x{0}, expected {n}x{n}",
                k.size()
            )));
        }
        Ok(Self { kernels })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Sample count shared by all kernels.
    pub fn size(&self) -> usize {
        self.kernels[0].size()
    }

    pub fn kernels(&self) -> &[KernelMatrix] {
        &self.kernels
    }

    pub fn get(&self, i: usize) -> Option<&KernelMatrix> {
        self.kernels.get(i)
    }

    /// Writes the bank as a binary file: magic, `n`, `m`, then for each
    /// kernel a length-prefixed UTF-8 label and `n²` little-endian `f64`s.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| GmkcfError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| GmkcfError::io(path, e));
        write(BANK_MAGIC)?;
        write(&(self.size() as u64).to_le_bytes())?;
        write(&(self.len() as u64).to_le_bytes())?;
        for kernel in &self.kernels {
            let label = kernel.label();
            write(&(label.len() as u32).to_le_bytes())?;
            write(label.as_bytes())?;
            for v in kernel.gram.iter() {
                write(&v.to_le_bytes())?;
            }
        }
        out.flush().map_err(|e| GmkcfError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| GmkcfError::io(path, e))?;
        let mut input = BufReader::new(file);
        let mut read = |buf: &mut [u8]| input.read_exact(buf).map_err(|e| GmkcfError::io(path, e));

        let mut magic = [0u8; 8];
        read(&mut magic)?;
        if &magic != BANK_MAGIC {
            return Err(GmkcfError::parse(path, 0, "not a kernel bank file"));
        }
        let mut word = [0u8; 8];
        read(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        read(&mut word)?;
        let m = u64::from_le_bytes(word) as usize;

        let mut kernels = Vec::with_capacity(m);
        for i in 0..m {
            let mut len = [0u8; 4];
            read(&mut len)?;
            let mut label = vec![0u8; u32::from_le_bytes(len) as usize];
            read(&mut label)?;
            let label = String::from_utf8(label)
                .map_err(|_| GmkcfError::parse(path, i, "kernel label is not UTF-8"))?;
            let spec = match label.as_str() {
                "precomputed" => None,
                other => Some(other.parse::<KernelSpec>()?),
            };
            let mut values = vec![0.0; n * n];
            for v in values.iter_mut() {
                read(&mut word)?;
                *v = f64::from_le_bytes(word);
            }
            let gram = Array2::from_shape_vec((n, n), values)
                .map_err(|e| GmkcfError::parse(path, i, e.to_string()))?;
            kernels.push(KernelMatrix { gram, spec });
        }
        Self::new(kernels)
    }
}

/// Simplex-constrained kernel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights(Vec<f64>);

impl KernelWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(GmkcfError::Input("weights must be nonempty".into()));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(GmkcfError::Input(format!(
                "weights must be nonnegative: {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(GmkcfError::Input(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, j: usize) -> Self {
        let mut w = vec![0.0; m];
        w[j] = 1.0;
        Self(w)
    }

    /// Skips validation; callers guarantee the simplex constraint.
    pub(crate) fn from_normalized(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Mean Euclidean distance over all unordered pairs of distinct samples.
pub fn mean_pairwise_distance(x: &FeatureMatrix) -> f64 {
    let g = x.inner_products();
    mean_distance_from_gram(&g)
}

fn mean_distance_from_gram(g: &Array2<f64>) -> f64 {
    let n = g.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += (g[[i, i]] + g[[j, j]] - 2.0 * g[[i, j]]).max(0.0).sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Evaluates the raw (unnormalized) kernel on every sample pair. `d0` is the
/// mean pairwise distance and only matters for RBF kernels.
pub fn eval_kernel(spec: KernelSpec, x: &FeatureMatrix, d0: f64) -> Result<KernelMatrix> {
    let g = x.inner_products();
    eval_from_inner_products(spec, &g, d0)
}

fn eval_from_inner_products(spec: KernelSpec, g: &Array2<f64>, d0: f64) -> Result<KernelMatrix> {
    spec.validate()?;
    let n = g.nrows();
    let diag: Array1<f64> = g.diag().to_owned();
    let mut gram = Array2::<f64>::zeros((n, n));
    match spec {
        KernelSpec::Rbf { t } => {
            if !(d0 > 0.0 && d0.is_finite()) {
                return Err(GmkcfError::Construction(format!(
                    "rbf kernel needs a positive mean pairwise distance, got {d0}"
                )));
            }
            let delta = t * d0;
            let denom = 2.0 * delta * delta;
            fill_upper(&mut gram, |i, j| {
                let sq = (diag[i] + diag[j] - 2.0 * g[[i, j]]).max(0.0);
                if i == j {
                    1.0
                } else {
                    (-sq / denom).exp()
                }
            });
        }
        KernelSpec::Polynomial { a, b } => {
            fill_upper(&mut gram, |i, j| (a + g[[i, j]]).powi(b as i32));
        }
        KernelSpec::Cosine => {
            let norms = diag.mapv(|v| v.max(0.0).sqrt().max(NORM_FLOOR));
            fill_upper(&mut gram, |i, j| g[[i, j]] / (norms[i] * norms[j]));
        }
    }
    Ok(KernelMatrix {
        gram,
        spec: Some(spec),
    })
}

fn fill_upper(out: &mut Array2<f64>, f: impl Fn(usize, usize) -> f64) {
    let n = out.nrows();
    for i in 0..n {
        for j in i..n {
            let v = f(i, j);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// `K_ij / sqrt(K_ii K_jj)` with diagonal entries floored at [`NORM_FLOOR`].
pub fn normalize_kernel(k: &KernelMatrix) -> KernelMatrix {
    let scale: Array1<f64> = k.gram.diag().mapv(|v| 1.0 / v.max(NORM_FLOOR).sqrt());
    let n = k.size();
    let mut gram = Array2::zeros((n, n));
    fill_upper(&mut gram, |i, j| k.gram[[i, j]] * scale[i] * scale[j]);
    KernelMatrix { gram, spec: k.spec }
}

/// Shifts a unit-diagonal kernel into `[0, 1]` with `(K − cJ)/(1 − c)`,
/// `c = min(0, min K)`. Adding a nonnegative multiple of the all-ones matrix
/// keeps the matrix PSD.
pub fn rescale_unit(k: &KernelMatrix) -> KernelMatrix {
    let c = k.gram.iter().copied().fold(0.0_f64, f64::min);
    if c == 0.0 {
        return k.clone();
    }
    let gram = k.gram.mapv(|v| ((v - c) / (1.0 - c)).max(0.0));
    KernelMatrix { gram, spec: k.spec }
}

/// Builds one kernel per spec (evaluate, normalize, rescale).
pub fn build_bank(x: &FeatureMatrix, recipe: &[KernelSpec]) -> Result<KernelBank> {
    if recipe.is_empty() {
        return Err(GmkcfError::Input("empty kernel recipe".into()));
    }
    let g = x.inner_products();
    let needs_d0 = recipe.iter().any(|s| matches!(s, KernelSpec::Rbf { .. }));
    let d0 = if needs_d0 {
        let d0 = mean_distance_from_gram(&g);
        if d0 <= 0.0 {
            return Err(GmkcfError::Construction(format!(
                "degenerate dataset ({} samples are all identical): mean pairwise distance is 0",
                x.samples()
            )));
        }
        d0
    } else {
        0.0
    };
    let kernels = recipe
        .par_iter()
        .map(|&spec| {
            let raw = eval_from_inner_products(spec, &g, d0)?;
            Ok(rescale_unit(&normalize_kernel(&raw)))
        })
        .collect::<Result<Vec<_>>>()?;
    KernelBank::new(kernels)
}

/// `Σ coeffs_i² K^i` without any simplex check.
pub fn weighted_sum(bank: &KernelBank, coeffs: &[f64]) -> Result<Array2<f64>> {
    if coeffs.len() != bank.len() {
        return Err(GmkcfError::Dimension(format!(
            "{} weights for {} kernels",
            coeffs.len(),
            bank.len()
        )));
    }
    let n = bank.size();
    let mut out = Array2::<f64>::zeros((n, n));
    for (kernel, &c) in bank.kernels.iter().zip(coeffs) {
        let c2 = c * c;
        if c2 != 0.0 {
            out.scaled_add(c2, &kernel.gram);
        }
    }
    Ok(out)
}

/// The combined kernel `K_w = Σ w_i² K^i`.
pub fn combine(bank: &KernelBank, w: &KernelWeights) -> Result<KernelMatrix> {
    Ok(KernelMatrix {
        gram: weighted_sum(bank, w.as_slice())?,
        spec: None,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: ArrayView2<'_, f64>) -> f64 {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    SymmetricEigen::new(dm)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Summary statistics reported by the `kernels` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDiagnostics {
    pub label: String,
    pub min_entry: f64,
    pub max_entry: f64,
    pub symmetry_defect: f64,
    pub max_diag_defect: f64,
    pub min_eigenvalue: Option<f64>,
}

/// Eigenvalues are only computed when `n ≤ eigen_limit`.
pub fn diagnostics(k: &KernelMatrix, eigen_limit: usize) -> KernelDiagnostics {
    let g = &k.gram;
    let symmetry_defect = g
        .indexed_iter()
        .map(|((i, j), v)| (v - g[[j, i]]).abs())
        .fold(0.0, f64::max);
    KernelDiagnostics {
        label: k.label(),
        min_entry: g.iter().copied().fold(f64::INFINITY, f64::min),
        max_entry: g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        symmetry_defect,
        max_diag_defect: g.diag().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max),
        min_eigenvalue: (k.size() <= eigen_limit).then(|| min_eigenvalue(g.view())),
    }
}
