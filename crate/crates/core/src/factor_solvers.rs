//! Multiplicative-update solvers: NMF, single kernel concept factorization
//! (KCF) and the globally weighted multiple kernel variant (GMKCF).
//!
//! For a kernel `K` the concept factorization residual is
//!
//! ```text
//! e(K, U, V) = tr(K) − 2 tr(VᵀKU) + tr(UᵀKU VᵀV)
//! ```
//!
//! and the multiple kernel objective is `Σ_i w_i² e(K^i, U, V)`, which equals
//! `e(K_w, U, V)` for `K_w = Σ_i w_i² K^i`. `U` and `V` are updated with
//! multiplicative rules on `K_w`; when `K_w` has negative entries the rules
//! switch to the square-root form built on the split `K_w = K⁺ − K⁻`. The
//! weights have the closed form `w_i ∝ 1/e_i`.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmkcfError, Result};
use crate::kernel_bank::{combine, FeatureMatrix, KernelBank, KernelWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of concepts (clusters).
    pub k: usize,
    pub max_iter: usize,
    /// Stop once `(obj_old − obj_new)/obj_new ≤ rel_tol`.
    pub rel_tol: f64,
    pub seed: u64,
    /// Added to every multiplicative-update denominator.
    pub eps_div: f64,
    /// Floor applied to each `e_i` before inversion in the weight update.
    pub eps_e: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: 2,
            max_iter: 200,
            rel_tol: 1e-5,
            seed: 0,
            eps_div: 1e-12,
            eps_e: 1e-12,
        }
    }
}

impl SolverConfig {
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

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k < 1 || self.k > n {
            return Err(GmkcfError::Input(format!(
                "concept count k = {} must be in 1..={n}",
                self.k
            )));
        }
        if self.max_iter == 0 {
            return Err(GmkcfError::Input("max_iter must be positive".into()));
        }
        if !(self.rel_tol > 0.0) || !(self.eps_div > 0.0) || !(self.eps_e > 0.0) {
            return Err(GmkcfError::Input(
                "rel_tol, eps_div and eps_e must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Nonnegative factors and the kernel weights they were fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub w: KernelWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Objective before the first iteration followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_w: KernelWeights,
    pub elapsed_seconds: f64,
    pub seed: u64,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace holds the initial objective")
    }
}

/// Result of [`nmf_fit`]: `X ≈ U Vᵀ` with `U` d×k and `V` n×k.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfFit {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub report: FitReport,
}

/// Elementwise sign split `K = K⁺ − K⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSplit {
    pub k_plus: Array2<f64>,
    pub k_minus: Array2<f64>,
}

pub fn split_kernel(k: &Array2<f64>) -> KernelSplit {
    KernelSplit {
        k_plus: k.mapv(|v| v.max(0.0)),
        k_minus: k.mapv(|v| (-v).max(0.0)),
    }
}

/// A kernel plus its sign split when it has negative entries.
struct PreparedKernel<'a> {
    k: ArrayView2<'a, f64>,
    split: Option<KernelSplit>,
}

impl<'a> PreparedKernel<'a> {
    fn new(k: &'a Array2<f64>) -> Self {
        let split = k.iter().any(|&v| v < 0.0).then(|| split_kernel(k));
        Self { k: k.view(), split }
    }
}

/// `e(K, U, V)` before clamping. Can dip slightly below zero through rounding
/// (or substantially, when `K` is not PSD).
pub fn residual_e_unclamped(k: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> f64 {
    let ku = k.dot(u);
    let cross = (v * &ku).sum();
    let utku = u.t().dot(&ku);
    let vtv = v.t().dot(v);
    let quad = (&utku * &vtv).sum();
    k.diag().sum() - 2.0 * cross + quad
}

/// `tr(K) − 2tr(VᵀKU) + tr(UᵀKU VᵀV)`, clamped at zero. NaN passes through.
pub fn residual_e(k: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> f64 {
    let e = residual_e_unclamped(k, u, v);
    if e < 0.0 {
        0.0
    } else {
        e
    }
}

/// Per-kernel residuals `e_i`, in bank order.
pub fn residuals(bank: &KernelBank, u: &Array2<f64>, v: &Array2<f64>) -> Vec<f64> {
    bank.kernels()
        .par_iter()
        .map(|k| residual_e(k.gram(), u, v))
        .collect()
}

/// `Σ_i w_i² e(K^i, U, V)`.
pub fn objective(bank: &KernelBank, u: &Array2<f64>, v: &Array2<f64>, w: &KernelWeights) -> f64 {
    weighted_objective(&residuals(bank, u, v), w.as_slice())
}

fn weighted_objective(e: &[f64], w: &[f64]) -> f64 {
    e.iter().zip(w).map(|(e, w)| w * w * e).sum()
}

/// One multiplicative step on `U` with `V` fixed.
pub fn update_u(k_w: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>, eps_div: f64) -> Array2<f64> {
    update_u_prepared(&PreparedKernel::new(k_w), u, v, eps_div)
}

fn update_u_prepared(
    k: &PreparedKernel<'_>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    eps_div: f64,
) -> Array2<f64> {
    let kv = k.k.dot(v);
    let vtv = v.t().dot(v);
    let uvtv = u.dot(&vtv);
    match &k.split {
        None => {
            let denom = k.k.dot(&uvtv);
            Zip::from(u)
                .and(&kv)
                .and(&denom)
                .map_collect(|&x, &num, &den| ratio_step(x, num, den + eps_div))
        }
        Some(split) => {
            let p_plus = split.k_plus.dot(&uvtv);
            let p_minus = split.k_minus.dot(&uvtv);
            quadratic_root_step(u, &kv, &p_plus, &p_minus, eps_div)
        }
    }
}

/// One multiplicative step on `V` with `U` fixed.
pub fn update_v(k_w: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>, eps_div: f64) -> Array2<f64> {
    update_v_prepared(&PreparedKernel::new(k_w), u, v, eps_div)
}

fn update_v_prepared(
    k: &PreparedKernel<'_>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    eps_div: f64,
) -> Array2<f64> {
    let ku = k.k.dot(u);
    match &k.split {
        None => {
            let denom = v.dot(&u.t().dot(&ku));
            Zip::from(v)
                .and(&ku)
                .and(&denom)
                .map_collect(|&x, &num, &den| ratio_step(x, num, den + eps_div))
        }
        Some(split) => {
            let q_plus = v.dot(&u.t().dot(&split.k_plus.dot(u)));
            let q_minus = v.dot(&u.t().dot(&split.k_minus.dot(u)));
            quadratic_root_step(v, &ku, &q_plus, &q_minus, eps_div)
        }
    }
}

/// `x·num/den`, keeping exact zeros even when `den` vanishes.
fn ratio_step(x: f64, num: f64, den: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * num / den
    }
}

/// `x ← x·[b + √(b² + 4p⁺p⁻)] / (2p⁺)` elementwise.
fn quadratic_root_step(
    x: &Array2<f64>,
    b: &Array2<f64>,
    p_plus: &Array2<f64>,
    p_minus: &Array2<f64>,
    eps_div: f64,
) -> Array2<f64> {
    let mut out = x.clone();
    Zip::from(&mut out)
        .and(b)
        .and(p_plus)
        .and(p_minus)
        .for_each(|o, &b, &pp, &pm| {
            let num = b + (b * b + 4.0 * pp * pm).sqrt();
            *o = ratio_step(*o, num.max(0.0), 2.0 * pp + eps_div);
        });
    out
}

/// Closed-form minimizer of `Σ w_i² e_i` over the simplex: `w_i ∝ 1/e_i`.
pub fn update_w(e: &[f64], eps_e: f64) -> KernelWeights {
    let inv: Vec<f64> = e.iter().map(|&e| 1.0 / e.max(eps_e)).collect();
    let total: f64 = inv.iter().sum();
    KernelWeights::from_normalized(inv.into_iter().map(|x| x / total).collect())
}

/// Elementwise Uniform(0, 1) initial factors `(U, V)`, both n×k, drawn from
/// `seed` (U first, row-major).
pub fn random_factors(n: usize, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Array2::from_shape_simple_fn((n, k), || rng.gen::<f64>());
    let v = Array2::from_shape_simple_fn((n, k), || rng.gen::<f64>());
    (u, v)
}

/// Tracks the objective and applies the relative-decrease stopping rule.
struct Progress {
    trace: Vec<f64>,
    rel_tol: f64,
}

impl Progress {
    fn start(initial: f64, rel_tol: f64) -> Result<Self> {
        check_finite(initial, 0)?;
        Ok(Self {
            trace: vec![initial],
            rel_tol,
        })
    }

    /// Records `obj_new`; returns true when the stopping rule fires.
    fn record(&mut self, obj_new: f64, iteration: usize) -> Result<bool> {
        check_finite(obj_new, iteration)?;
        let obj_old = *self.trace.last().unwrap();
        self.trace.push(obj_new);
        Ok(obj_new <= 0.0 || (obj_old - obj_new) / obj_new <= self.rel_tol)
    }
}

fn check_finite(obj: f64, iteration: usize) -> Result<()> {
    if obj.is_finite() {
        Ok(())
    } else {
        Err(GmkcfError::Solver {
            iteration,
            message: format!("objective is {obj}"),
        })
    }
}

fn check_init(n_rows: usize, k: usize, u: &Array2<f64>, v: &Array2<f64>, n: usize) -> Result<()> {
    if u.dim() != (n_rows, k) || v.dim() != (n, k) {
        return Err(GmkcfError::Dimension(format!(
            "initial factors are {:?} and {:?}, expected ({n_rows}, {k}) and ({n}, {k})",
            u.dim(),
            v.dim()
        )));
    }
    if u.iter()
        .chain(v.iter())
        .any(|&x| !(x >= 0.0) || !x.is_finite())
    {
        return Err(GmkcfError::Input(
            "initial factors must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

/// Multiple kernel concept factorization from random initial factors.
pub fn gmkcf_fit(bank: &KernelBank, config: &SolverConfig) -> Result<(Factorization, FitReport)> {
    config.validate(bank.size())?;
    let (u, v) = random_factors(bank.size(), config.k, config.seed);
    gmkcf_fit_from(bank, config, u, v)
}

/// Multiple kernel concept factorization from the given `(U, V)`.
///
/// Each iteration combines the kernels with the current weights, updates `U`
/// then `V` on the combined kernel, recomputes every `e_i` with the new
/// factors, and refreshes the weights.
pub fn gmkcf_fit_from(
    bank: &KernelBank,
    config: &SolverConfig,
    mut u: Array2<f64>,
    mut v: Array2<f64>,
) -> Result<(Factorization, FitReport)> {
    let n = bank.size();
    config.validate(n)?;
    check_init(n, config.k, &u, &v, n)?;
    let start = Instant::now();

    let mut w = KernelWeights::uniform(bank.len());
    let mut progress = Progress::start(objective(bank, &u, &v, &w), config.rel_tol)?;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let k_w = combine(bank, &w)?.into_gram();
        let prepared = PreparedKernel::new(&k_w);
        u = update_u_prepared(&prepared, &u, &v, config.eps_div);
        v = update_v_prepared(&prepared, &u, &v, config.eps_div);
        let e = residuals(bank, &u, &v);
        w = update_w(&e, config.eps_e);
        if progress.record(weighted_objective(&e, w.as_slice()), iterations)? {
            converged = true;
            break;
        }
    }

    let report = FitReport {
        objective_trace: progress.trace,
        iterations,
        converged,
        final_w: w.clone(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        seed: config.seed,
    };
    Ok((Factorization { u, v, w }, report))
}

/// Single kernel concept factorization from random initial factors.
pub fn kcf_fit(k: &Array2<f64>, config: &SolverConfig) -> Result<(Factorization, FitReport)> {
    let n = square_size(k)?;
    config.validate(n)?;
    let (u, v) = random_factors(n, config.k, config.seed);
    kcf_fit_from(k, config, u, v)
}

pub fn kcf_fit_from(
    k: &Array2<f64>,
    config: &SolverConfig,
    mut u: Array2<f64>,
    mut v: Array2<f64>,
) -> Result<(Factorization, FitReport)> {
    let n = square_size(k)?;
    config.validate(n)?;
    check_init(n, config.k, &u, &v, n)?;
    let start = Instant::now();

    let prepared = PreparedKernel::new(k);
    let mut progress = Progress::start(residual_e(k, &u, &v), config.rel_tol)?;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        u = update_u_prepared(&prepared, &u, &v, config.eps_div);
        v = update_v_prepared(&prepared, &u, &v, config.eps_div);
        if progress.record(residual_e(k, &u, &v), iterations)? {
            converged = true;
            break;
        }
    }

    let w = KernelWeights::uniform(1);
    let report = FitReport {
        objective_trace: progress.trace,
        iterations,
        converged,
        final_w: w.clone(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        seed: config.seed,
    };
    Ok((Factorization { u, v, w }, report))
}

fn square_size(k: &Array2<f64>) -> Result<usize> {
    if k.nrows() != k.ncols() {
        return Err(GmkcfError::Dimension(format!(
            "kernel must be square, got {:?}",
            k.dim()
        )));
    }
    Ok(k.nrows())
}

/// `‖X − UVᵀ‖²_F`.
pub fn nmf_objective(x: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> f64 {
    let mut r = u.dot(&v.t());
    r -= x;
    r.iter().map(|v| v * v).sum()
}

/// Classic NMF `X ≈ UVᵀ` (U d×k, V n×k) from random initial factors.
pub fn nmf_fit(x: &FeatureMatrix, config: &SolverConfig) -> Result<NmfFit> {
    let (d, n) = x.data().dim();
    config.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let u = Array2::from_shape_simple_fn((d, config.k), || rng.gen::<f64>());
    let v = Array2::from_shape_simple_fn((n, config.k), || rng.gen::<f64>());
    nmf_fit_from(x, config, u, v)
}

pub fn nmf_fit_from(
    x: &FeatureMatrix,
    config: &SolverConfig,
    mut u: Array2<f64>,
    mut v: Array2<f64>,
) -> Result<NmfFit> {
    let x = x.data();
    let (d, n) = x.dim();
    config.validate(n)?;
    check_init(d, config.k, &u, &v, n)?;
    if let Some(((i, j), val)) = x.indexed_iter().find(|(_, &val)| val < 0.0) {
        return Err(GmkcfError::Input(format!(
            "nmf needs a nonnegative matrix, found {val} at feature {i}, sample {j}"
        )));
    }
    let start = Instant::now();
    let eps = config.eps_div;

    let mut progress = Progress::start(nmf_objective(x, &u, &v), config.rel_tol)?;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let xv = x.dot(&v);
        let denom = u.dot(&v.t().dot(&v));
        Zip::from(&mut u)
            .and(&xv)
            .and(&denom)
            .for_each(|u, &num, &den| *u = ratio_step(*u, num, den + eps));

        let xtu = x.t().dot(&u);
        let denom = v.dot(&u.t().dot(&u));
        Zip::from(&mut v)
            .and(&xtu)
            .and(&denom)
            .for_each(|v, &num, &den| *v = ratio_step(*v, num, den + eps));

        if progress.record(nmf_objective(x, &u, &v), iterations)? {
            converged = true;
            break;
        }
    }

    let report = FitReport {
        objective_trace: progress.trace,
        iterations,
        converged,
        final_w: KernelWeights::uniform(1),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        seed: config.seed,
    };
    Ok(NmfFit { u, v, report })
}

/// Largest relative imbalance of the `U` and `V` fixed-point conditions
/// `(KV)_ij = (KUVᵀV)_ij` and `(KU)_ij = (VUᵀKU)_ij`, over entries whose
/// factor value exceeds `active`. Returns `(u_residual, v_residual)`.
pub fn stationarity_residual(
    k: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    active: f64,
) -> (f64, f64) {
    let kv = k.dot(v);
    let ku = k.dot(u);
    let u_bal = k.dot(&u.dot(&v.t().dot(v)));
    let v_bal = v.dot(&u.t().dot(&ku));
    let worst = |x: &Array2<f64>, a: &Array2<f64>, b: &Array2<f64>| {
        let mut m = 0.0_f64;
        Zip::from(x).and(a).and(b).for_each(|&x, &a, &b| {
            if x > active {
                m = m.max((a - b).abs() / a.abs().max(1.0));
            }
        });
        m
    };
    (worst(u, &kv, &u_bal), worst(v, &ku, &v_bal))
}
