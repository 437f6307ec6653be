//! Simulation and statistical verification laboratory for the dynamic
//! elephant random walk: a ±1-increment walk whose next step follows a
//! uniformly remembered past step with weight `alpha_n` (repeated with
//! probability `p`) and an external environment sequence `beta_n` with
//! weight `1 - alpha_n`.
//!
//! The crate computes the walk's characteristic sequences and exact moments
//! by forward recursion, samples paths at scale with reproducible parallel
//! streams, classifies parameter sets into their scaling regime
//! (diffusive sqrt(n), critical sqrt(n log n), or strong-memory a_n), and
//! verifies the corresponding distributional limits against
//! Gaussian-process oracles.

pub mod analysis;
pub mod error;
pub mod model;
pub mod rng;
pub mod sequences;
pub mod simulator;
pub mod stats;

pub use analysis::{
    dr_condition_a_check, empirical_covariance, fclt_verify, normalize_critical,
    normalize_diffusive, slln_check, strong_elephant_test, CovarianceEstimate,
    GaussianProcessOracle, NormalizedSamples, OracleMode, ReportRow, StrongTestOptions,
    TestReport, Tolerances, Verdict,
};
pub use error::{Error, Result};
pub use model::{classify, ModelParams, Normalization, Regime, SequenceSpec};
pub use rng::{path_rng, seed_sequence, PathSeed, RNG_ID};
pub use sequences::{
    a_asymptotic, a_sq_asymptotic, build_tables, c_critical, c_diffusive, c_strong, slln_limit,
    tail_a_sq, tail_asymptotic, SequenceRecursion, SequenceRow, SequenceTables, TailEstimate,
    DEFAULT_TAIL_N_MAX,
};
pub use simulator::{
    conditional_variance_profile, simulate_ensemble, simulate_path, step_probability,
    EnsembleOptions, EnsembleSample, PathDiagnostics, PathSample, MAX_STEPS,
};
pub use stats::{gamma_function, kolmogorov_survival, ks_normal_test, normal_cdf};
