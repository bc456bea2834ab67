use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use gmkcf::bench::{
    cmd_kernels, cmd_table, run_experiment, Algorithm, DataSource, ExperimentConfig,
    ExperimentReport,
};
use gmkcf::data_io::{make_synthetic, save_dense, save_labels};
use gmkcf::{GmkcfError, SyntheticSpec};

const EXIT_INPUT: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_IO: u8 = 5;
const EXIT_REPORT: u8 = 6;

#[derive(Parser)]
#[command(
    name = "gmkcf",
    version,
    about = "Multiple kernel concept factorization clustering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a kernel bank and write it to disk.
    Kernels(RunArgs),
    /// Run the restart protocol and write a report.
    Fit(RunArgs),
    /// Summarize reports as dataset × algorithm tables.
    Table(TableArgs),
    /// Generate a synthetic Gaussian blob dataset.
    Synth(SynthArgs),
}

/// Every field may also come from a TOML file given with `--config`;
/// command-line flags take precedence.
#[derive(Args, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct RunArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Feature file, one sample per row (or coordinate format with --sparse).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label file, one token per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    sparse: bool,
    /// `paper12` or a list such as `rbf:0.1,poly:1:2,cosine`.
    #[arg(long)]
    recipe: Option<String>,
    /// Cached kernel bank written by `kernels`.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    /// Kernel used by `kcf` when the bank holds several.
    #[arg(long)]
    kernel_index: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Synthetic data source (config file only).
    #[arg(skip)]
    synthetic: Option<SyntheticSpec>,
}

impl RunArgs {
    fn merged(self) -> Result<RunArgs, GmkcfError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let file: RunArgs = toml::from_str(&text).map_err(|e| GmkcfError::Parse {
            path: path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(RunArgs {
            config: self.config,
            data: self.data.or(file.data),
            labels: self.labels.or(file.labels),
            sparse: self.sparse || file.sparse,
            recipe: self.recipe.or(file.recipe),
            bank: self.bank.or(file.bank),
            algo: self.algo.or(file.algo),
            kernel_index: self.kernel_index.or(file.kernel_index),
            k: self.k.or(file.k),
            restarts: self.restarts.or(file.restarts),
            seed: self.seed.or(file.seed),
            max_iter: self.max_iter.or(file.max_iter),
            tol: self.tol.or(file.tol),
            kmeans_restarts: self.kmeans_restarts.or(file.kmeans_restarts),
            workers: self.workers.or(file.workers),
            out: self.out.or(file.out),
            synthetic: self.synthetic.or(file.synthetic),
        })
    }

    fn experiment(&self) -> Result<ExperimentConfig, GmkcfError> {
        let data = match (&self.data, self.synthetic) {
            (Some(path), _) if self.sparse => DataSource::Sparse {
                path: path.clone(),
                labels: self.labels.clone(),
            },
            (Some(path), _) => DataSource::Dense {
                path: path.clone(),
                labels: self.labels.clone(),
            },
            (None, Some(spec)) => DataSource::Synthetic(spec),
            (None, None) => {
                return Err(GmkcfError::Input(
                    "no dataset: pass --data or a config with [synthetic]".into(),
                ))
            }
        };
        let algo: Algorithm = self.algo.as_deref().unwrap_or("gmkcf").parse()?;
        let mut cfg = ExperimentConfig::new(data, algo);
        if let Some(r) = &self.recipe {
            cfg.recipe = r.clone();
        }
        cfg.bank = self.bank.clone();
        cfg.kernel_index = self.kernel_index;
        cfg.k = self.k;
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.max_iter {
            cfg.solver.max_iter = m;
        }
        if let Some(t) = self.tol {
            cfg.solver.rel_tol = t;
        }
        if let Some(r) = self.kmeans_restarts {
            cfg.kmeans.restarts = r;
        }
        cfg.workers = self.workers;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TableArgs {
    /// Report files written by `fit`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Output prefix; writes `<out>.txt` and `<out>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 100)]
    per_cluster: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature file to write.
    #[arg(long)]
    out: PathBuf,
    /// Label file to write (defaults to `<out>.labels`).
    #[arg(long)]
    labels: Option<PathBuf>,
}

fn io_error(path: &Path, source: std::io::Error) -> GmkcfError {
    GmkcfError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), GmkcfError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn exit_code(err: &GmkcfError) -> u8 {
    match err {
        GmkcfError::Solver { .. } => EXIT_SOLVER,
        GmkcfError::Io { .. } => EXIT_IO,
        GmkcfError::Report(_) => EXIT_REPORT,
        GmkcfError::Input(_)
        | GmkcfError::Dimension(_)
        | GmkcfError::Construction(_)
        | GmkcfError::Parse { .. } => EXIT_INPUT,
    }
}

fn kernels(args: RunArgs) -> Result<(), GmkcfError> {
    let args = args.merged()?;
    let cfg = args.experiment()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("bank.gmkb"));
    let diags = cmd_kernels(&cfg, &out)?;
    println!(
        "{:<14} {:>10} {:>10} {:>10} {:>10} {:>12}",
        "kernel", "min", "max", "asym", "diag", "min_eig"
    );
    for d in &diags {
        let eig = d
            .min_eigenvalue
            .map_or_else(|| "-".to_string(), |e| format!("{e:.3e}"));
        println!(
            "{:<14} {:>10.4} {:>10.4} {:>10.1e} {:>10.1e} {:>12}",
            d.label, d.min_entry, d.max_entry, d.symmetry_defect, d.max_diag_defect, eig
        );
    }
    eprintln!("wrote {} kernels to {}", diags.len(), out.display());
    Ok(())
}

fn fit(args: RunArgs) -> Result<(), GmkcfError> {
    let args = args.merged()?;
    let cfg = args.experiment()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("report.json"));
    let started = std::time::Instant::now();
    let report = run_experiment(&cfg)?;
    report.save(&out)?;

    let s = &report.summary;
    println!(
        "{} on {} (n = {}, k = {})",
        report.label, report.dataset, report.samples, report.k
    );
    if let (Some(acc), Some(nmi), Some(pur)) = (s.acc, s.nmi, s.purity) {
        println!(
            "ACC {:.4} ± {:.4}  NMI {:.4} ± {:.4}  Purity {:.4} ± {:.4}",
            acc.mean, acc.std, nmi.mean, nmi.std, pur.mean, pur.std
        );
    }
    println!(
        "restarts {} ok, {} failed; mean iterations {:.1}",
        s.completed, s.failed, s.mean_iterations
    );
    for r in report.restarts.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "restart {}: {}",
            r.restart,
            r.error.as_deref().unwrap_or_default()
        );
    }
    eprintln!(
        "wrote {} in {:.2}s",
        out.display(),
        started.elapsed().as_secs_f64()
    );
    if s.completed == 0 {
        return Err(GmkcfError::Solver {
            iteration: 0,
            message: "every restart failed".into(),
        });
    }
    Ok(())
}

fn table(args: TableArgs) -> Result<(), GmkcfError> {
    let reports = args
        .reports
        .iter()
        .map(ExperimentReport::load)
        .collect::<Result<Vec<_>, _>>()?;
    let table = cmd_table(&reports)?;
    let text = table.to_text();
    print!("{text}");
    if let Some(prefix) = args.out {
        write(&prefix.with_extension("txt"), &text)?;
        write(&prefix.with_extension("csv"), &table.to_csv())?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), GmkcfError> {
    let spec = SyntheticSpec {
        clusters: args.clusters,
        per_cluster: args.per_cluster,
        dim: args.dim,
        separation: args.separation,
        seed: args.seed,
    };
    let ds = make_synthetic(&spec)?;
    save_dense(&args.out, &ds.x)?;
    let labels = args
        .labels
        .unwrap_or_else(|| args.out.with_extension("labels"));
    save_labels(
        &labels,
        ds.truth.as_ref().expect("synthetic data is labelled"),
    )?;
    eprintln!("wrote {} and {}", args.out.display(), labels.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Kernels(a) => kernels(a),
        Command::Fit(a) => fit(a),
        Command::Table(a) => table(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
