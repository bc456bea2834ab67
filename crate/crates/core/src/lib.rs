//! Multiple kernel concept factorization.
//!
//! A set of candidate kernel matrices is combined with learned global simplex
//! weights while a nonnegative concept factorization `Φ ≈ Φ U Vᵀ` is fitted in
//! the combined feature space. The crate also carries the pieces needed to
//! turn the learned representation into a clustering and score it:
//!
//! * [`kernel_bank`]: Gram matrix construction, normalization and combination.
//! * [`factor_solvers`]: NMF, single kernel CF and the multiple kernel solver.
//! * [`cluster_post`]: k-means discretization of the learned `V`.
//! * [`eval_metrics`]: ACC (Kuhn–Munkres), NMI and purity.
//! * [`data_io`]: dense/sparse/label loaders and synthetic data.
//! * [`bench`]: the restart protocol and result tables used by the CLI.

pub mod bench;
pub mod cluster_post;
pub mod data_io;
pub mod error;
pub mod eval_metrics;
pub mod factor_solvers;
pub mod kernel_bank;

pub use cluster_post::{kmeans_fit, KMeansConfig, Labeling};
pub use data_io::{Dataset, SyntheticSpec};
pub use error::{GmkcfError, Result};
pub use eval_metrics::{accuracy, hungarian, nmi, purity, MetricReport};
pub use factor_solvers::{
    gmkcf_fit, kcf_fit, nmf_fit, Factorization, FitReport, NmfFit, SolverConfig,
};
pub use kernel_bank::{
    build_bank, combine, FeatureMatrix, KernelBank, KernelMatrix, KernelSpec, KernelWeights,
};
