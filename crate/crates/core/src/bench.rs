//! Restart protocol and result tables.
//!
//! An experiment builds (or loads) a kernel bank, runs `restarts`
//! independent fits with seeds derived from a base seed, discretizes each
//! `V` with k-means and scores the labels when ground truth is available.
//! Every algorithm uses the same seed for a given restart index, so runs of
//! different algorithms on the same data share initial factors.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster_post::{kmeans_fit, KMeansConfig};
use crate::data_io::{self, Dataset, SyntheticSpec};
use crate::error::{GmkcfError, Result};
use crate::eval_metrics::{evaluate, MetricReport};
use crate::factor_solvers::{gmkcf_fit, kcf_fit, nmf_fit, FitReport, SolverConfig};
use crate::kernel_bank::{build_bank, diagnostics, KernelBank, KernelDiagnostics, KernelSpec};

/// Bank members up to this size get a min-eigenvalue diagnostic.
pub const EIGEN_DIAGNOSTIC_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gmkcf,
    Kcf,
    Nmf,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Gmkcf => "gmkcf",
            Algorithm::Kcf => "kcf",
            Algorithm::Nmf => "nmf",
        })
    }
}

impl FromStr for Algorithm {
    type Err = GmkcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmkcf" => Ok(Algorithm::Gmkcf),
            "kcf" => Ok(Algorithm::Kcf),
            "nmf" => Ok(Algorithm::Nmf),
            other => Err(GmkcfError::Input(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Dense {
        path: PathBuf,
        labels: Option<PathBuf>,
    },
    Sparse {
        path: PathBuf,
        labels: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        let (ds, labels) = match self {
            DataSource::Synthetic(spec) => return data_io::make_synthetic(spec),
            DataSource::Dense { path, labels } => (data_io::load_dense(path)?, labels),
            DataSource::Sparse { path, labels } => (data_io::load_sparse(path)?, labels),
        };
        match labels {
            Some(l) => {
                let truth = data_io::load_labels(l, ds.x.samples())?;
                ds.with_truth(truth)
            }
            None => Ok(ds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub algo: Algorithm,
    /// `paper12` or a comma separated list of kernel specs.
    pub recipe: String,
    /// Cached bank to use instead of building one from `recipe`.
    pub bank: Option<PathBuf>,
    /// Kernel used by `kcf` when the bank holds more than one.
    pub kernel_index: Option<usize>,
    /// Concept/cluster count; defaults to the number of true classes.
    pub k: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub kmeans: KMeansConfig,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, algo: Algorithm) -> Self {
        Self {
            data,
            algo,
            recipe: "paper12".into(),
            bank: None,
            kernel_index: None,
            k: None,
            restarts: 20,
            seed: 0,
            solver: SolverConfig::default(),
            kmeans: KMeansConfig::default(),
            workers: None,
        }
    }
}

/// Seed for restart `r`: an odd-stride walk from `base` pushed through the
/// SplitMix64 finalizer. Both steps are bijections, so distinct restarts get
/// distinct seeds.
pub fn restart_seed(base: u64, r: usize) -> u64 {
    splitmix64(
        base.wrapping_add(
            (r as u64)
                .wrapping_add(1)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ),
    )
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartResult {
    pub restart: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: Option<f64>,
    pub final_w: Vec<f64>,
    pub metrics: Option<MetricReport>,
    pub objective_trace: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub completed: usize,
    pub failed: usize,
    pub mean_iterations: f64,
    pub acc: Option<Stat>,
    pub nmi: Option<Stat>,
    pub purity: Option<Stat>,
    pub mean_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    /// Column heading used by result tables.
    pub label: String,
    pub algorithm: Algorithm,
    pub samples: usize,
    pub features: usize,
    pub k: usize,
    pub kernels: Vec<String>,
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub restarts: Vec<RestartResult>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| GmkcfError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GmkcfError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| GmkcfError::parse(path, e.line(), e.to_string()))
    }
}

fn bank_for(config: &ExperimentConfig, ds: &Dataset) -> Result<KernelBank> {
    let bank = match &config.bank {
        Some(path) => KernelBank::load(path)?,
        None => build_bank(&ds.x, &KernelSpec::parse_recipe(&config.recipe)?)?,
    };
    if bank.size() != ds.x.samples() {
        return Err(GmkcfError::Dimension(format!(
            "bank is over {} samples, dataset has {}",
            bank.size(),
            ds.x.samples()
        )));
    }
    Ok(bank)
}

/// Builds the kernel bank for `config` and writes it to `out`.
pub fn cmd_kernels(config: &ExperimentConfig, out: &Path) -> Result<Vec<KernelDiagnostics>> {
    let ds = config.data.load()?;
    let bank = build_bank(&ds.x, &KernelSpec::parse_recipe(&config.recipe)?)?;
    bank.save(out)?;
    Ok(bank
        .kernels()
        .iter()
        .map(|k| diagnostics(k, EIGEN_DIAGNOSTIC_LIMIT))
        .collect())
}

/// One restart: the representation to cluster and the solver report.
type FitOutcome = (Array2<f64>, FitReport);

/// Runs the full restart protocol.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let ds = config.data.load()?;
    run_on_dataset(config, &ds)
}

pub fn run_on_dataset(config: &ExperimentConfig, ds: &Dataset) -> Result<ExperimentReport> {
    if config.restarts == 0 {
        return Err(GmkcfError::Input("restarts must be at least 1".into()));
    }
    let k = config
        .k
        .or(ds.class_count)
        .ok_or_else(|| GmkcfError::Input("no k given and the dataset has no labels".into()))?;

    let (bank, label, kernels) = match config.algo {
        Algorithm::Nmf => (None, "NMF".to_string(), Vec::new()),
        Algorithm::Gmkcf => {
            let bank = bank_for(config, ds)?;
            let names = bank.kernels().iter().map(|k| k.label()).collect();
            (Some(bank), "GMKCF".to_string(), names)
        }
        Algorithm::Kcf => {
            let bank = bank_for(config, ds)?;
            let index = match (config.kernel_index, bank.len()) {
                (Some(i), m) if i < m => i,
                (Some(i), m) => {
                    return Err(GmkcfError::Input(format!(
                        "kernel index {i} out of range for {m} kernels"
                    )))
                }
                (None, 1) => 0,
                (None, m) => {
                    return Err(GmkcfError::Input(format!(
                        "kcf needs a kernel index for a bank of {m} kernels"
                    )))
                }
            };
            let kernel = bank.kernels()[index].clone();
            let name = kernel.label();
            let single = KernelBank::new(vec![kernel])?;
            (Some(single), format!("KCF({name})"), vec![name])
        }
    };

    let solver_base = SolverConfig { k, ..config.solver };
    let kmeans_base = KMeansConfig { k, ..config.kmeans };
    let truth = ds.truth.as_ref().map(|t| t.labels().to_vec());

    let run_one = |r: usize| -> RestartResult {
        let seed = restart_seed(config.seed, r);
        let solver = solver_base.with_seed(seed);
        let fitted: Result<FitOutcome> = match (config.algo, &bank) {
            (Algorithm::Nmf, _) => nmf_fit(&ds.x, &solver).map(|f| (f.v, f.report)),
            (Algorithm::Gmkcf, Some(bank)) => gmkcf_fit(bank, &solver).map(|(f, r)| (f.v, r)),
            (Algorithm::Kcf, Some(bank)) => {
                kcf_fit(bank.kernels()[0].gram(), &solver).map(|(f, r)| (f.v, r))
            }
            _ => unreachable!("kernel algorithms always carry a bank"),
        };
        let clustered = fitted.and_then(|(v, report)| {
            let km = kmeans_base.with_seed(splitmix64(seed ^ 0x6B6D_6561_6E73));
            let (labels, _) = kmeans_fit(v.view(), &km)?;
            let metrics = match &truth {
                Some(t) => Some(evaluate(t, labels.labels())?),
                None => None,
            };
            Ok((report, metrics))
        });
        match clustered {
            Ok((report, metrics)) => RestartResult {
                restart: r,
                seed,
                iterations: report.iterations,
                converged: report.converged,
                final_objective: Some(report.final_objective()),
                final_w: report.final_w.as_slice().to_vec(),
                metrics,
                objective_trace: report.objective_trace,
                error: None,
            },
            Err(e) => RestartResult {
                restart: r,
                seed,
                iterations: match e {
                    GmkcfError::Solver { iteration, .. } => iteration,
                    _ => 0,
                },
                converged: false,
                final_objective: None,
                final_w: Vec::new(),
                metrics: None,
                objective_trace: Vec::new(),
                error: Some(e.to_string()),
            },
        }
    };

    let restarts: Vec<RestartResult> = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| GmkcfError::Input(format!("cannot start worker pool: {e}")))?
            .install(|| (0..config.restarts).into_par_iter().map(run_one).collect()),
        None => (0..config.restarts).into_par_iter().map(run_one).collect(),
    };

    Ok(ExperimentReport {
        dataset: ds.name.clone(),
        label,
        algorithm: config.algo,
        samples: ds.x.samples(),
        features: ds.x.features(),
        k,
        kernels,
        config: config.clone(),
        summary: summarize(&restarts),
        restarts,
    })
}

fn summarize(restarts: &[RestartResult]) -> Summary {
    let ok: Vec<&RestartResult> = restarts.iter().filter(|r| r.error.is_none()).collect();
    let metric = |f: fn(&MetricReport) -> f64| {
        let values: Vec<f64> = ok
            .iter()
            .filter_map(|r| r.metrics.as_ref())
            .map(f)
            .collect();
        Stat::of(&values)
    };
    let mut mean_w = vec![0.0; ok.first().map_or(0, |r| r.final_w.len())];
    for r in &ok {
        for (acc, w) in mean_w.iter_mut().zip(&r.final_w) {
            *acc += w / ok.len() as f64;
        }
    }
    Summary {
        completed: ok.len(),
        failed: restarts.len() - ok.len(),
        mean_iterations: if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| r.iterations as f64).sum::<f64>() / ok.len() as f64
        },
        acc: metric(|m| m.acc),
        nmi: metric(|m| m.nmi),
        purity: metric(|m| m.purity),
        mean_w,
    }
}

/// Dataset × algorithm grids of mean ACC, NMI and purity.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub datasets: Vec<String>,
    pub algorithms: Vec<String>,
    /// metric name → (dataset, algorithm) → value
    pub cells: BTreeMap<&'static str, BTreeMap<(usize, usize), f64>>,
}

pub const METRICS: [&str; 3] = ["ACC", "NMI", "Purity"];

impl SummaryTable {
    /// Mean over the datasets that have a value for algorithm `a`.
    pub fn algorithm_mean(&self, metric: &str, a: usize) -> Option<f64> {
        let cells = self.cells.get(metric)?;
        let values: Vec<f64> = (0..self.datasets.len())
            .filter_map(|d| cells.get(&(d, a)).copied())
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn get(&self, metric: &str, dataset: usize, algorithm: usize) -> Option<f64> {
        self.cells.get(metric)?.get(&(dataset, algorithm)).copied()
    }

    fn rows(&self, metric: &str) -> Vec<(String, Vec<Option<f64>>)> {
        let mut rows: Vec<(String, Vec<Option<f64>>)> = self
            .datasets
            .iter()
            .enumerate()
            .map(|(d, name)| {
                let vals = (0..self.algorithms.len())
                    .map(|a| self.get(metric, d, a))
                    .collect();
                (name.clone(), vals)
            })
            .collect();
        let means = (0..self.algorithms.len())
            .map(|a| self.algorithm_mean(metric, a))
            .collect();
        rows.push(("Mean".to_string(), means));
        rows
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let first_width = self
            .datasets
            .iter()
            .map(String::len)
            .chain([7, 4])
            .max()
            .unwrap();
        let widths: Vec<usize> = self.algorithms.iter().map(|a| a.len().max(6)).collect();
        for metric in METRICS {
            writeln!(out, "{metric}").unwrap();
            write!(out, "{:<first_width$}", "Dataset").unwrap();
            for (a, w) in self.algorithms.iter().zip(&widths) {
                write!(out, "  {a:>w$}").unwrap();
            }
            out.push('\n');
            for (name, vals) in self.rows(metric) {
                write!(out, "{name:<first_width$}").unwrap();
                for (v, w) in vals.iter().zip(&widths) {
                    match v {
                        Some(v) => write!(out, "  {v:>w$.4}").unwrap(),
                        None => write!(out, "  {:>w$}", "-").unwrap(),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,dataset");
        for a in &self.algorithms {
            write!(out, ",{a}").unwrap();
        }
        out.push('\n');
        for metric in METRICS {
            for (name, vals) in self.rows(metric) {
                write!(out, "{metric},{name}").unwrap();
                for v in vals {
                    match v {
                        Some(v) => write!(out, ",{v:.6}").unwrap(),
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Collects report means into a table; datasets and algorithms keep their
/// order of first appearance.
pub fn cmd_table(reports: &[ExperimentReport]) -> Result<SummaryTable> {
    if reports.is_empty() {
        return Err(GmkcfError::Report("no reports given".into()));
    }
    let with_metrics = reports.iter().filter(|r| r.summary.acc.is_some()).count();
    if with_metrics != reports.len() {
        return Err(GmkcfError::Report(format!(
            "inconsistent metric sets: {with_metrics} of {} reports carry ACC/NMI/Purity",
            reports.len()
        )));
    }
    let mut table = SummaryTable {
        datasets: Vec::new(),
        algorithms: Vec::new(),
        cells: METRICS.iter().map(|m| (*m, BTreeMap::new())).collect(),
    };
    let index_of = |list: &mut Vec<String>, name: &str| {
        list.iter().position(|x| x == name).unwrap_or_else(|| {
            list.push(name.to_string());
            list.len() - 1
        })
    };
    for report in reports {
        let d = index_of(&mut table.datasets, &report.dataset);
        let a = index_of(&mut table.algorithms, &report.label);
        let s = &report.summary;
        let values = [s.acc, s.nmi, s.purity].map(|m| m.expect("checked above").mean);
        for (metric, value) in METRICS.iter().zip(values) {
            let grid = table.cells.get_mut(metric).unwrap();
            if grid.insert((d, a), value).is_some() {
                return Err(GmkcfError::Report(format!(
                    "two reports for dataset '{}' and algorithm '{}'",
                    report.dataset, report.label
                )));
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(seed: u64) -> DataSource {
        DataSource::Synthetic(SyntheticSpec {
            clusters: 3,
            per_cluster: 15,
            dim: 4,
            separation: 8.0,
            seed,
        })
    }

    #[test]
    fn restart_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> =
            (0..10_000).map(|r| restart_seed(42, r)).collect();
        assert_eq!(seeds.len(), 10_000);
    }

    #[test]
    fn algorithm_parsing() {
        assert_eq!("GMKCF".parse::<Algorithm>().unwrap(), Algorithm::Gmkcf);
        assert!("svm".parse::<Algorithm>().is_err());
    }

    #[test]
    fn report_has_one_entry_per_restart_and_is_deterministic() {
        let mut cfg = ExperimentConfig::new(synthetic(1), Algorithm::Gmkcf);
        cfg.recipe = "rbf:1,cosine,poly:1:2".into();
        cfg.restarts = 4;
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a.restarts.len(), 4);
        assert!(a.restarts.iter().all(|r| !r.objective_trace.is_empty()));
        assert_eq!(a.summary.mean_w.len(), 3);
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        a.save(&path).unwrap();
        assert_eq!(
            ExperimentReport::load(&path).unwrap().to_json(),
            a.to_json()
        );
    }

    #[test]
    fn single_kernel_gmkcf_matches_kcf_metrics() {
        let mut g = ExperimentConfig::new(synthetic(2), Algorithm::Gmkcf);
        g.recipe = "rbf:1".into();
        g.restarts = 3;
        let mut k = g.clone();
        k.algo = Algorithm::Kcf;
        let gr = run_experiment(&g).unwrap();
        let kr = run_experiment(&k).unwrap();
        assert_eq!(gr.summary.acc, kr.summary.acc);
        assert_eq!(gr.summary.nmi, kr.summary.nmi);
        for (a, b) in gr.restarts.iter().zip(&kr.restarts) {
            assert_eq!(a.objective_trace, b.objective_trace);
        }
    }

    #[test]
    fn kcf_needs_index_for_multi_kernel_bank() {
        let mut cfg = ExperimentConfig::new(synthetic(3), Algorithm::Kcf);
        cfg.recipe = "rbf:1,cosine".into();
        cfg.restarts = 1;
        assert!(run_experiment(&cfg).is_err());
        cfg.kernel_index = Some(1);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.label, "KCF(cosine)");
    }

    #[test]
    fn nmf_failures_are_recorded_per_restart() {
        // blobs have negative coordinates, so every nmf restart fails the same way
        let cfg = ExperimentConfig {
            restarts: 2,
            ..ExperimentConfig::new(synthetic(4), Algorithm::Nmf)
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.summary.failed, 2);
        assert!(r.restarts.iter().all(|r| r.error.is_some()));
    }

    fn fake_report(dataset: &str, label: &str, acc: Option<f64>) -> ExperimentReport {
        let stat = acc.map(|mean| Stat { mean, std: 0.0 });
        ExperimentReport {
            dataset: dataset.into(),
            label: label.into(),
            algorithm: Algorithm::Gmkcf,
            samples: 0,
            features: 0,
            k: 2,
            kernels: vec![],
            config: ExperimentConfig::new(synthetic(0), Algorithm::Gmkcf),
            summary: Summary {
                completed: 1,
                failed: 0,
                mean_iterations: 1.0,
                acc: stat,
                nmi: stat,
                purity: stat,
                mean_w: vec![],
            },
            restarts: vec![],
        }
    }

    #[test]
    fn table_single_report() {
        let t = cmd_table(&[fake_report("BBC", "GMKCF", Some(0.6))]).unwrap();
        assert_eq!(t.get("ACC", 0, 0), Some(0.6));
        assert_eq!(t.algorithm_mean("ACC", 0), Some(0.6));
        assert!(t.to_text().contains("Mean"));
    }

    #[test]
    fn table_mean_row_averages_datasets() {
        let t = cmd_table(&[
            fake_report("A", "GMKCF", Some(0.5)),
            fake_report("B", "GMKCF", Some(0.7)),
        ])
        .unwrap();
        assert!((t.algorithm_mean("NMI", 0).unwrap() - 0.6).abs() < 1e-15);
        let csv = t.to_csv();
        assert!(csv.starts_with("metric,dataset,GMKCF\n"));
        assert!(csv.contains("ACC,Mean,0.600000"));
    }

    #[test]
    fn table_rejects_inconsistent_metrics_and_duplicates() {
        assert!(cmd_table(&[]).is_err());
        assert!(cmd_table(&[
            fake_report("A", "GMKCF", Some(0.5)),
            fake_report("B", "GMKCF", None)
        ])
        .is_err());
        assert!(cmd_table(&[
            fake_report("A", "GMKCF", Some(0.5)),
            fake_report("A", "GMKCF", Some(0.6))
        ])
        .is_err());
    }
}
