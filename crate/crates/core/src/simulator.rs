//! Exact path sampling.
//!
//! The walk is determined by its conditional increment means, so a sampler
//! that draws `X_{n+1} = +1` with probability `(1 + E[X_{n+1} | F_n]) / 2`
//! realizes it from `(n, S_n)` alone: O(1) state per path, one uniform
//! variate per step, consumed in a fixed order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{path_rng, PathSeed};
use crate::sequences::SequenceTables;

/// Hard cap on path length (S_n is carried as i64 with lots of headroom).
pub const MAX_STEPS: u64 = 1 << 40;

/// Per-step diagnostics of one path: the scaled martingale increments
/// `Y_n = (X_n - E[X_n | F_{n-1}]) / a_n` and the conditional variances
/// `(1 - E[X_n | F_{n-1}]^2) / a_n^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDiagnostics {
    pub y: Vec<f64>,
    pub cond_var: Vec<f64>,
}

/// Walk values at the requested checkpoints, with optional per-step
/// diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub checkpoints: Vec<u64>,
    pub s_values: Vec<i64>,
    pub diagnostics: Option<PathDiagnostics>,
}

/// Probability that the next increment is +1 given `n` steps taken and
/// current position `s`. `n = 0` uses the first-step mean (the only place
/// `q` enters).
pub fn step_probability(params: &ModelParams, n: u64, s: i64) -> Result<f64> {
    if s.unsigned_abs() > n {
        return Err(Error::InvalidParameter(format!(
            "position |{s}| exceeds step count {n}"
        )));
    }
    Ok(step_probability_unchecked(params, n, s))
}

#[inline]
fn step_probability_unchecked(params: &ModelParams, n: u64, s: i64) -> f64 {
    let mean = conditional_mean(params, n, s);
    ((1.0 + mean) / 2.0).clamp(0.0, 1.0)
}

/// E[X_{n+1} | F_n] for the current state; `n = 0` yields E[X_1].
#[inline]
fn conditional_mean(params: &ModelParams, n: u64, s: i64) -> f64 {
    if n == 0 {
        let a1 = params.alpha.value(1);
        let b1 = params.beta.value(1);
        a1 * (2.0 * params.q - 1.0) + (1.0 - a1) * (2.0 * b1 - 1.0)
    } else {
        let an = params.alpha.value(n + 1);
        let bn = params.beta.value(n + 1);
        an * (2.0 * params.p - 1.0) * (s as f64) / (n as f64)
            + (1.0 - an) * (2.0 * bn - 1.0)
    }
}

fn validate_checkpoints(checkpoints: &[u64], n_steps: u64) -> Result<Vec<u64>> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidParameter(
            "checkpoint list must not be empty".into(),
        ));
    }
    let mut sorted = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &c in &sorted {
        if c == 0 || c > n_steps {
            return Err(Error::InvalidParameter(format!(
                "checkpoint {c} outside 1..={n_steps}"
            )));
        }
    }
    Ok(sorted)
}

enum DiagSink<'a> {
    Off,
    /// Full per-step vectors (single-path use).
    Full {
        y: &'a mut Vec<f64>,
        cond_var: &'a mut Vec<f64>,
        tables: &'a SequenceTables,
    },
    /// Running conditional-variance profile recorded at checkpoints, plus
    /// the worst per-path excess of |Y_n| over its 2/a_n bound.
    Profile {
        profile: &'a mut [f64],
        y_excess: &'a mut f64,
        tables: &'a SequenceTables,
        running: f64,
    },
}

fn run_path(
    params: &ModelParams,
    n_steps: u64,
    rng: &mut ChaCha8Rng,
    checkpoints: &[u64],
    s_out: &mut [i64],
    mut diag: DiagSink<'_>,
) {
    debug_assert_eq!(checkpoints.len(), s_out.len());
    let mut s: i64 = 0;
    let mut next_ck = 0usize;
    for n in 0..n_steps {
        let prob = step_probability_unchecked(params, n, s);
        let u: f64 = rng.random();
        let x: i64 = if u < prob { 1 } else { -1 };
        let step = n + 1;
        match &mut diag {
            DiagSink::Off => {}
            DiagSink::Full { y, cond_var, tables } => {
                let mean = 2.0 * prob - 1.0;
                let a = tables.a(step);
                y.push((x as f64 - mean) / a);
                cond_var.push((1.0 - mean * mean).max(0.0) / (a * a));
            }
            DiagSink::Profile {
                y_excess,
                tables,
                running,
                ..
            } => {
                let mean = 2.0 * prob - 1.0;
                let a = tables.a(step);
                let y_abs = (x as f64 - mean).abs() / a;
                let excess = y_abs - 2.0 / a;
                if excess > **y_excess {
                    **y_excess = excess;
                }
                *running += (1.0 - mean * mean).max(0.0) / (a * a);
            }
        }
        s += x;
        if next_ck < checkpoints.len() && checkpoints[next_ck] == step {
            s_out[next_ck] = s;
            if let DiagSink::Profile {
                profile, running, ..
            } = &mut diag
            {
                profile[next_ck] = *running;
            }
            next_ck += 1;
        }
    }
}

/// Sample one path, recording S at the checkpoints.
///
/// `tables` is required only when `diagnostics` is on (the increments are
/// scaled by `a_n`); its horizon must cover `n_steps`.
pub fn simulate_path(
    params: &ModelParams,
    tables: Option<&SequenceTables>,
    n_steps: u64,
    seed: PathSeed,
    checkpoints: &[u64],
    diagnostics: bool,
) -> Result<PathSample> {
    params.validate()?;
    if n_steps == 0 || n_steps > MAX_STEPS {
        return Err(Error::InvalidParameter(format!(
            "path length must be in 1..={MAX_STEPS}, got {n_steps}"
        )));
    }
    let checkpoints = validate_checkpoints(checkpoints, n_steps)?;
    let mut s_values = vec![0i64; checkpoints.len()];
    let mut rng = path_rng(seed);
    if diagnostics {
        let tables = diagnostics_tables(tables, n_steps)?;
        let mut y = Vec::with_capacity(n_steps as usize);
        let mut cond_var = Vec::with_capacity(n_steps as usize);
        run_path(
            params,
            n_steps,
            &mut rng,
            &checkpoints,
            &mut s_values,
            DiagSink::Full {
                y: &mut y,
                cond_var: &mut cond_var,
                tables,
            },
        );
        Ok(PathSample {
            checkpoints,
            s_values,
            diagnostics: Some(PathDiagnostics { y, cond_var }),
        })
    } else {
        run_path(
            params,
            n_steps,
            &mut rng,
            &checkpoints,
            &mut s_values,
            DiagSink::Off,
        );
        Ok(PathSample {
            checkpoints,
            s_values,
            diagnostics: None,
        })
    }
}

fn diagnostics_tables<'a>(
    tables: Option<&'a SequenceTables>,
    n_steps: u64,
) -> Result<&'a SequenceTables> {
    let tables = tables.ok_or_else(|| {
        Error::InvalidParameter("diagnostics need precomputed sequence tables".into())
    })?;
    if tables.horizon() < n_steps {
        return Err(Error::InvalidParameter(format!(
            "table horizon {} below path length {n_steps}",
            tables.horizon()
        )));
    }
    Ok(tables)
}

/// Cumulative conditional-variance profile of a diagnosed path, evaluated at
/// its checkpoints. Nondecreasing by construction.
pub fn conditional_variance_profile(path: &PathSample) -> Result<Vec<f64>> {
    let diag = path.diagnostics.as_ref().ok_or(Error::MissingDiagnostics)?;
    let mut out = Vec::with_capacity(path.checkpoints.len());
    let mut running = 0.0;
    let mut k = 0usize;
    for (&ck, _) in path.checkpoints.iter().zip(&path.s_values) {
        while (k as u64) < ck {
            running += diag.cond_var[k];
            k += 1;
        }
        out.push(running);
    }
    Ok(out)
}

/// Ensemble execution options.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleOptions {
    pub diagnostics: bool,
    /// Cap on stored values (paths x checkpoints, doubled with diagnostics).
    pub memory_cap_values: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            diagnostics: false,
            memory_cap_values: 1 << 28,
        }
    }
}

/// Cross-path sample: per-checkpoint walk values for every path, in path
/// index order, plus optional per-path conditional-variance profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSample {
    params: ModelParams,
    params_fingerprint: String,
    master_seed: u64,
    n_steps: u64,
    n_paths: usize,
    checkpoints: Vec<u64>,
    /// row-major: s[path * n_checkpoints + j]
    s: Vec<i64>,
    profiles: Option<Vec<f64>>,
    y_excess: Option<Vec<f64>>,
}

impl EnsembleSample {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn fingerprint(&self) -> &str {
        &self.params_fingerprint
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_steps(&self) -> u64 {
        self.n_steps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn checkpoints(&self) -> &[u64] {
        &self.checkpoints
    }

    pub fn checkpoint_index(&self, checkpoint: u64) -> Result<usize> {
        self.checkpoints
            .binary_search(&checkpoint)
            .map_err(|_| Error::MissingCheckpoint(checkpoint))
    }

    pub fn s_at(&self, path: usize, checkpoint_idx: usize) -> i64 {
        self.s[path * self.checkpoints.len() + checkpoint_idx]
    }

    /// Walk values of every path at one checkpoint, in path order.
    pub fn column(&self, checkpoint_idx: usize) -> Vec<i64> {
        let c = self.checkpoints.len();
        (0..self.n_paths)
            .map(|p| self.s[p * c + checkpoint_idx])
            .collect()
    }

    pub fn has_diagnostics(&self) -> bool {
        self.profiles.is_some()
    }

    /// Conditional-variance profile values of every path at one checkpoint.
    pub fn profile_column(&self, checkpoint_idx: usize) -> Result<Vec<f64>> {
        let profiles = self.profiles.as_ref().ok_or(Error::MissingDiagnostics)?;
        let c = self.checkpoints.len();
        Ok((0..self.n_paths)
            .map(|p| profiles[p * c + checkpoint_idx])
            .collect())
    }

    /// Largest per-path excess of |Y_n| over 2/a_n seen at any step
    /// (nonpositive when the bound holds).
    pub fn max_y_excess(&self) -> Result<f64> {
        let ex = self.y_excess.as_ref().ok_or(Error::MissingDiagnostics)?;
        Ok(ex.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Sample `n_paths` independent paths. Path `i` draws from the stream
/// derived from `(master_seed, i)`; results are identical for every thread
/// count, and aggregation is in path-index order.
pub fn simulate_ensemble(
    params: &ModelParams,
    tables: Option<&SequenceTables>,
    n_steps: u64,
    n_paths: usize,
    master_seed: u64,
    checkpoints: &[u64],
    options: &EnsembleOptions,
) -> Result<EnsembleSample> {
    params.validate()?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    if n_steps == 0 || n_steps > MAX_STEPS {
        return Err(Error::InvalidParameter(format!(
            "path length must be in 1..={MAX_STEPS}, got {n_steps}"
        )));
    }
    let checkpoints = validate_checkpoints(checkpoints, n_steps)?;
    let values = n_paths
        .checked_mul(checkpoints.len())
        .and_then(|v| v.checked_mul(if options.diagnostics { 2 } else { 1 }))
        .ok_or_else(|| Error::BudgetExceeded("ensemble size overflows".into()))?;
    if values > options.memory_cap_values {
        return Err(Error::BudgetExceeded(format!(
            "ensemble needs {values} stored values, cap is {}",
            options.memory_cap_values
        )));
    }
    let diag_tables = if options.diagnostics {
        Some(diagnostics_tables(tables, n_steps)?)
    } else {
        None
    };

    struct PathRow {
        s: Vec<i64>,
        profile: Option<Vec<f64>>,
        y_excess: Option<f64>,
    }

    let rows: Vec<PathRow> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(PathSeed::new(master_seed, i as u64));
            let mut s = vec![0i64; checkpoints.len()];
            match diag_tables {
                Some(tables) => {
                    let mut profile = vec![0f64; checkpoints.len()];
                    let mut y_excess = f64::NEG_INFINITY;
                    run_path(
                        params,
                        n_steps,
                        &mut rng,
                        &checkpoints,
                        &mut s,
                        DiagSink::Profile {
                            profile: &mut profile,
                            y_excess: &mut y_excess,
                            tables,
                            running: 0.0,
                        },
                    );
                    PathRow {
                        s,
                        profile: Some(profile),
                        y_excess: Some(y_excess),
                    }
                }
                None => {
                    run_path(params, n_steps, &mut rng, &checkpoints, &mut s, DiagSink::Off);
                    PathRow {
                        s,
                        profile: None,
                        y_excess: None,
                    }
                }
            }
        })
        .collect();

    let c = checkpoints.len();
    let mut s = Vec::with_capacity(n_paths * c);
    let mut profiles = options.diagnostics.then(|| Vec::with_capacity(n_paths * c));
    let mut y_excess = options.diagnostics.then(|| Vec::with_capacity(n_paths));
    for row in rows {
        s.extend_from_slice(&row.s);
        if let (Some(profiles), Some(p)) = (profiles.as_mut(), row.profile) {
            profiles.extend_from_slice(&p);
        }
        if let (Some(excess), Some(e)) = (y_excess.as_mut(), row.y_excess) {
            excess.push(e);
        }
    }

    Ok(EnsembleSample {
        params: params.clone(),
        params_fingerprint: params.fingerprint(),
        master_seed,
        n_steps,
        n_paths,
        checkpoints,
        s,
        profiles,
        y_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SequenceSpec;
    use crate::sequences::build_tables;

    fn params(p: f64, q: f64, alpha: SequenceSpec, beta: SequenceSpec) -> ModelParams {
        ModelParams::new(p, q, alpha, beta).unwrap()
    }

    #[test]
    fn step_probability_examples() {
        // First step with alpha_1 = 1, q = 1 is deterministic +1.
        let ps = params(
            0.5,
            1.0,
            SequenceSpec::constant(1.0),
            SequenceSpec::constant(0.5),
        );
        assert_eq!(step_probability(&ps, 0, 0).unwrap(), 1.0);

        // Pure dynamic walk: probability is beta at every later step.
        let ps = params(
            0.5,
            0.5,
            SequenceSpec::constant(0.0),
            SequenceSpec::constant(0.9),
        );
        assert!((step_probability(&ps, 5, 3).unwrap() - 0.9).abs() < 1e-15);
        assert!((step_probability(&ps, 1, -1).unwrap() - 0.9).abs() < 1e-15);

        // Memory-only walk: (1 + (2p-1) s / n) / 2.
        let ps = params(
            0.75,
            0.5,
            SequenceSpec::constant(1.0),
            SequenceSpec::constant(0.5),
        );
        assert!((step_probability(&ps, 4, 2).unwrap() - 0.625).abs() < 1e-15);

        assert!(step_probability(&ps, 3, 4).is_err());
    }

    #[test]
    fn deterministic_paths() {
        // alpha ≡ 0, beta ≡ 1: S_n = n for every seed.
        let ps = params(
            0.5,
            0.5,
            SequenceSpec::constant(0.0),
            SequenceSpec::constant(1.0),
        );
        for seed in [0u64, 1, 99] {
            let path = simulate_path(
                &ps,
                None,
                64,
                PathSeed::new(seed, 0),
                &[1, 2, 32, 64],
                false,
            )
            .unwrap();
            assert_eq!(path.s_values, vec![1, 2, 32, 64]);
        }

        // alpha ≡ 1, p = 1, q = 1: copies the first (deterministic) step.
        let ps = params(
            1.0,
            1.0,
            SequenceSpec::constant(1.0),
            SequenceSpec::constant(0.5),
        );
        let path = simulate_path(&ps, None, 64, PathSeed::new(5, 0), &[64], false).unwrap();
        assert_eq!(path.s_values, vec![64]);
    }

    #[test]
    fn path_reproducibility() {
        let ps = params(
            0.6,
            0.5,
            SequenceSpec::constant(1.0),
            SequenceSpec::constant(0.5),
        );
        let cks = [10, 100, 1000];
        let a = simulate_path(&ps, None, 1000, PathSeed::new(123, 4), &cks, false).unwrap();
        let b = simulate_path(&ps, None, 1000, PathSeed::new(123, 4), &cks, false).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&ps, None, 1000, PathSeed::new(123, 5), &cks, false).unwrap();
        assert_ne!(a.s_values, c.s_values);
    }

    #[test]
    fn diagnostics_do_not_change_sampled_path() {
        let ps = params(
            0.6,
            0.5,
            SequenceSpec::constant(1.0),
            SequenceSpec::constant(0.5),
        );
        let tables = build_tables(&ps, 500).unwrap();
        let cks = [250, 500];
        let plain = simulate_path(&ps, None, 500, PathSeed::new(9, 0), &cks, false).unwrap();
        let diag = simulate_path(&ps, Some(&tables), 500, PathSeed::new(9, 0), &cks, true)
            .unwrap();
        assert_eq!(plain.s_values, diag.s_values);
        let d = diag.diagnostics.unwrap();
        assert_eq!(d.y.len(), 500);
        assert_eq!(d.cond_var.len(), 500);
    }

    #[test]
    fn path_invariants_and_bound() {
        let ps = params(
            0.6,
            0.5,
            SequenceSpec::constant(1.0),
            SequenceSpec::constant(0.5),
        );
        let n = 300u64;
        let tables = build_tables(&ps, n).unwrap();
        let all: Vec<u64> = (1..=n).collect();
        let path = simulate_path(&ps, Some(&tables), n, PathSeed::new(3, 1), &all, true).unwrap();
        let mut prev = 0i64;
        for (i, &s) in path.s_values.iter().enumerate() {
            let step = (i + 1) as i64;
            assert!(s.abs() <= step);
            assert_eq!((s - step).rem_euclid(2), 0, "parity at {step}");
            assert_eq!((s - prev).abs(), 1);
            prev = s;
        }
        let d = path.diagnostics.as_ref().unwrap();
        for (k, &y) in d.y.iter().enumerate() {
            let bound = 2.0 / tables.a(k as u64 + 1);
            assert!(y.abs() <= bound + 1e-12, "step {}: |{y}| > {bound}", k + 1);
        }
    }

    #[test]
    fn profile_trivial_cases() {
        // Simple symmetric walk: profile at m is exactly m.
        let ps = params(
            0.5,
            0.5,
            SequenceSpec::constant(0.0),
            SequenceSpec::constant(0.5),
        );
        let tables = build_tables(&ps, 100).unwrap();
        let path = simulate_path(
            &ps,
            Some(&tables),
            100,
            PathSeed::new(1, 0),
            &[10, 50, 100],
            true,
        )
        .unwrap();
        let profile = conditional_variance_profile(&path).unwrap();
        assert_eq!(profile, vec![10.0, 50.0, 100.0]);

        // Deterministic copy walk: profile vanishes after step 1.
        let ps = params(
            1.0,
            1.0,
            SequenceSpec::constant(1.0),
            SequenceSpec::constant(0.5),
        );
        let tables = build_tables(&ps, 100).unwrap();
        let path = simulate_path(
            &ps,
            Some(&tables),
            100,
            PathSeed::new(1, 0),
            &[1, 100],
            true,
        )
        .unwrap();
        let profile = conditional_variance_profile(&path).unwrap();
        assert_eq!(profile, vec![0.0, 0.0]);

        let undiagnosed =
            simulate_path(&ps, None, 10, PathSeed::new(1, 0), &[10], false).unwrap();
        assert!(matches!(
            conditional_variance_profile(&undiagnosed),
            Err(Error::MissingDiagnostics)
        ));
    }

    #[test]
    fn checkpoint_validation() {
        let ps = params(
            0.5,
            0.5,
            SequenceSpec::constant(0.0),
            SequenceSpec::constant(0.5),
        );
        assert!(simulate_path(&ps, None, 10, PathSeed::new(0, 0), &[], false).is_err());
        assert!(simulate_path(&ps, None, 10, PathSeed::new(0, 0), &[11], false).is_err());
        assert!(simulate_path(&ps, None, 10, PathSeed::new(0, 0), &[0], false).is_err());
    }

    #[test]
    fn ensemble_single_path_matches_simulate_path() {
        let ps = params(
            0.6,
            0.5,
            SequenceSpec::constant(1.0),
            SequenceSpec::constant(0.5),
        );
        let cks = [100, 500];
        let ens = simulate_ensemble(
            &ps,
            None,
            500,
            1,
            77,
            &cks,
            &EnsembleOptions::default(),
        )
        .unwrap();
        let path = simulate_path(&ps, None, 500, PathSeed::new(77, 0), &cks, false).unwrap();
        assert_eq!(ens.column(0)[0], path.s_values[0]);
        assert_eq!(ens.column(1)[0], path.s_values[1]);
    }

    #[test]
    fn ensemble_deterministic_across_thread_counts() {
        let ps = params(
            0.75,
            0.5,
            SequenceSpec::constant(0.5),
            SequenceSpec::constant(0.3),
        );
        let cks = [50, 200];
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                simulate_ensemble(
                    &ps,
                    None,
                    200,
                    64,
                    2024,
                    &cks,
                    &EnsembleOptions::default(),
                )
                .unwrap()
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn ensemble_memory_cap() {
        let ps = params(
            0.5,
            0.5,
            SequenceSpec::constant(0.0),
            SequenceSpec::constant(0.5),
        );
        let opts = EnsembleOptions {
            diagnostics: false,
            memory_cap_values: 10,
        };
        let err = simulate_ensemble(&ps, None, 100, 11, 0, &[100], &opts);
        assert!(matches!(err, Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn ensemble_missing_checkpoint_lookup() {
        let ps = params(
            0.5,
            0.5,
            SequenceSpec::constant(0.0),
            SequenceSpec::constant(0.5),
        );
        let ens = simulate_ensemble(
            &ps,
            None,
            100,
            4,
            0,
            &[50, 100],
            &EnsembleOptions::default(),
        )
        .unwrap();
        assert_eq!(ens.checkpoint_index(50).unwrap(), 0);
        assert!(matches!(
            ens.checkpoint_index(75),
            Err(Error::MissingCheckpoint(75))
        ));
    }
}
