//! Exact forward recursions for the characteristic sequences of the walk
//! (the martingale normalizer `a_n`, its regular/slow factors `g_n`, `ell_n`,
//! `rho_n`, exact first and second moments of `S_n`, and the quadratic
//! variation sums `A_n^2`, `B_n^2`), the limit constants of the three
//! regimes, and the asymptotic oracle expressions used for ratio checks.
//!
//! All recursions run in 64-bit floats. Every product factor of `a_n` is at
//! most `1 + 1/k`, so `a_n <= n` and nothing here needs log-space handling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::stats::gamma_function;

/// Default truncation horizon for tail estimates.
pub const DEFAULT_TAIL_N_MAX: u64 = 10_000_000;

/// One row of the sequence tables: all characteristic values at index `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub n: u64,
    pub a: f64,
    pub g: f64,
    pub ell: f64,
    pub rho: f64,
    pub mean_x: f64,
    pub mean_s: f64,
    pub second_s: f64,
    pub a_sq: f64,
    pub b_sq: f64,
}

/// Streaming evaluator of the sequence recursions with O(1) state.
///
/// `advance` moves from index `n` to `n + 1`:
///   a_{n+1} = a_n * (1 + (2p-1) * alpha_{n+1} / n)
///   g_{n+1} = g_n * (1 + (2p-1) * alpha_lim / n)
///   ell_{n+1} = ell_n * (1 + (2p-1)(alpha_{n+1} - alpha_lim) / (n + (2p-1) alpha_lim))
///   rho_{n+1} = rho_n * exp((2p-1)(alpha_{n+1} - alpha_lim) / n)   for n >= 2
///   E[S_{n+1}]   = (1 + (2p-1) alpha_{n+1} / n) E[S_n] + (1 - alpha_{n+1})(2 beta_{n+1} - 1)
///   E[S_{n+1}^2] = (1 + 2 (2p-1) alpha_{n+1} / n) E[S_n^2]
///                  + 2 (1 - alpha_{n+1})(2 beta_{n+1} - 1) E[S_n] + 1
/// with A^2/B^2 accumulating (1 - E[X_k]^2)/a_k^2 and 1/a_k^2.
pub struct SequenceRecursion {
    params: ModelParams,
    alpha_lim: f64,
    row: SequenceRow,
}

impl SequenceRecursion {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let alpha_lim = params.alpha.limit();
        let a1 = params.alpha.value(1);
        let b1 = params.beta.value(1);
        let mean_x = a1 * (2.0 * params.q - 1.0) + (1.0 - a1) * (2.0 * b1 - 1.0);
        let row = SequenceRow {
            n: 1,
            a: 1.0,
            g: 1.0,
            ell: 1.0,
            rho: 1.0,
            mean_x,
            mean_s: mean_x,
            second_s: 1.0,
            a_sq: 1.0 - mean_x * mean_x,
            b_sq: 1.0,
        };
        Ok(SequenceRecursion {
            params: params.clone(),
            alpha_lim,
            row,
        })
    }

    pub fn row(&self) -> &SequenceRow {
        &self.row
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Step the recursion from `n` to `n + 1`.
    pub fn advance(&mut self) -> Result<()> {
        let row = &mut self.row;
        let n = row.n;
        let k = n as f64;
        let c = 2.0 * self.params.p - 1.0;
        let alpha_next = self.params.alpha.value(n + 1);
        let beta_next = self.params.beta.value(n + 1);

        let rate_a = c * alpha_next / k;
        let rate_g = c * self.alpha_lim / k;
        let ell_den = k + c * self.alpha_lim;
        if rate_a <= -1.0 || rate_g <= -1.0 || ell_den <= 0.0 {
            // Only reachable at n = 1 with (2p-1) * alpha = -1, where the
            // normalizer degenerates to zero.
            return Err(Error::Domain(format!(
                "characteristic product degenerates at n={} (p={}, alpha_{}={})",
                n + 1,
                self.params.p,
                n + 1,
                alpha_next
            )));
        }

        // Delta-form updates (x += x * rate) round better than (x *= 1 + rate)
        // and keep the telescoping cases exact.
        row.a += row.a * rate_a;
        row.g += row.g * rate_g;
        row.ell += row.ell * (c * (alpha_next - self.alpha_lim) / ell_den);
        if n >= 2 {
            row.rho *= (c * (alpha_next - self.alpha_lim) / k).exp();
        }

        let drift = (1.0 - alpha_next) * (2.0 * beta_next - 1.0);
        let mean_s_next = row.mean_s + row.mean_s * rate_a + drift;
        row.second_s += row.second_s * (2.0 * rate_a) + 2.0 * drift * row.mean_s + 1.0;
        row.mean_x = mean_s_next - row.mean_s;
        row.mean_s = mean_s_next;
        row.a_sq += (1.0 - row.mean_x * row.mean_x) / (row.a * row.a);
        row.b_sq += 1.0 / (row.a * row.a);
        row.n = n + 1;

        if !row.a.is_finite() || !row.second_s.is_finite() {
            return Err(Error::Domain(format!(
                "sequence recursion produced a nonfinite value at n={}",
                row.n
            )));
        }
        Ok(())
    }

    /// Advance until index `n` (which must not be behind the current index)
    /// and return the row there.
    pub fn advance_to(&mut self, n: u64) -> Result<&SequenceRow> {
        if n < self.row.n {
            return Err(Error::InvalidParameter(format!(
                "cannot rewind recursion from {} to {n}",
                self.row.n
            )));
        }
        while self.row.n < n {
            self.advance()?;
        }
        Ok(&self.row)
    }
}

/// Precomputed characteristic sequences up to a horizon, indexed 1..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTables {
    params: ModelParams,
    horizon: u64,
    a: Vec<f64>,
    g: Vec<f64>,
    ell: Vec<f64>,
    rho: Vec<f64>,
    mean_x: Vec<f64>,
    mean_s: Vec<f64>,
    second_s: Vec<f64>,
    a_sq: Vec<f64>,
    b_sq: Vec<f64>,
}

/// Fill all tables up to `horizon` by the exact recursions (O(N) time and
/// space).
pub fn build_tables(params: &ModelParams, horizon: u64) -> Result<SequenceTables> {
    if horizon == 0 {
        return Err(Error::InvalidParameter(
            "table horizon must be at least 1".into(),
        ));
    }
    let n = horizon as usize;
    let mut tables = SequenceTables {
        params: params.clone(),
        horizon,
        a: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        ell: Vec::with_capacity(n),
        rho: Vec::with_capacity(n),
        mean_x: Vec::with_capacity(n),
        mean_s: Vec::with_capacity(n),
        second_s: Vec::with_capacity(n),
        a_sq: Vec::with_capacity(n),
        b_sq: Vec::with_capacity(n),
    };
    let mut rec = SequenceRecursion::new(params)?;
    loop {
        let row = rec.row();
        tables.a.push(row.a);
        tables.g.push(row.g);
        tables.ell.push(row.ell);
        tables.rho.push(row.rho);
        tables.mean_x.push(row.mean_x);
        tables.mean_s.push(row.mean_s);
        tables.second_s.push(row.second_s);
        tables.a_sq.push(row.a_sq);
        tables.b_sq.push(row.b_sq);
        if row.n == horizon {
            break;
        }
        rec.advance()?;
    }
    Ok(tables)
}

macro_rules! table_accessor {
    ($name:ident, $doc:expr) => {
        #[doc = $doc]
        pub fn $name(&self, n: u64) -> f64 {
            assert!(
                n >= 1 && n <= self.horizon,
                "index {n} outside table range 1..={}",
                self.horizon
            );
            self.$name[n as usize - 1]
        }
    };
}

impl SequenceTables {
    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    table_accessor!(a, "Martingale normalizer a_n.");
    table_accessor!(g, "Limit-coefficient product g_n.");
    table_accessor!(ell, "Slowly varying correction ell_n.");
    table_accessor!(rho, "Exponential-sum comparison sequence rho_n.");
    table_accessor!(mean_x, "Exact E[X_n].");
    table_accessor!(mean_s, "Exact E[S_n].");
    table_accessor!(second_s, "Exact E[S_n^2].");
    table_accessor!(a_sq, "A_n^2 = sum_{k<=n} (1 - E[X_k]^2)/a_k^2.");
    table_accessor!(b_sq, "B_n^2 = sum_{k<=n} 1/a_k^2.");

    /// Exact Var(S_n) from the moment recursions.
    pub fn var_s(&self, n: u64) -> f64 {
        self.second_s(n) - self.mean_s(n) * self.mean_s(n)
    }

    pub fn row(&self, n: u64) -> SequenceRow {
        SequenceRow {
            n,
            a: self.a(n),
            g: self.g(n),
            ell: self.ell(n),
            rho: self.rho(n),
            mean_x: self.mean_x(n),
            mean_s: self.mean_s(n),
            second_s: self.second_s(n),
            a_sq: self.a_sq(n),
            b_sq: self.b_sq(n),
        }
    }
}

/// Limit of E[X_n]: `(1-alpha)(2 beta - 1) / (1 - (2p-1) alpha)`, with a
/// vanishing numerator taking precedence (the alpha = 1, p = 1 corner is
/// otherwise 0/0).
pub fn mean_x_limit(alpha_lim: f64, beta_lim: f64, p: f64) -> f64 {
    let num = (1.0 - alpha_lim) * (2.0 * beta_lim - 1.0);
    if num == 0.0 {
        return 0.0;
    }
    num / (1.0 - alpha_lim * (2.0 * p - 1.0))
}

/// Variance constant of the sqrt(n) Gaussian-process limit.
///
/// Requires `1 - 2 alpha (2p-1) > 0`.
pub fn c_diffusive(alpha_lim: f64, beta_lim: f64, p: f64) -> Result<f64> {
    let index_gap = 1.0 - 2.0 * alpha_lim * (2.0 * p - 1.0);
    if !(index_gap > 0.0) {
        return Err(Error::Domain(format!(
            "diffusive constant requires 1 - 2*alpha*(2p-1) > 0, got {index_gap}"
        )));
    }
    let r = mean_x_limit(alpha_lim, beta_lim, p);
    Ok((1.0 - r * r) / index_gap)
}

/// Variance constant of the sqrt(n log n) Brownian limit. Requires p >= 3/4.
pub fn c_critical(beta_lim: f64, p: f64) -> Result<f64> {
    if p < 0.75 - crate::model::BOUNDARY_TOL {
        return Err(Error::Domain(format!(
            "critical constant requires p >= 3/4, got {p}"
        )));
    }
    let gap = 1.0 - 1.0 / (4.0 * p - 2.0);
    Ok(1.0 - 4.0 * gap * gap * (2.0 * beta_lim - 1.0) * (2.0 * beta_lim - 1.0))
}

/// Variance constant of the strong-elephant fluctuation limit.
///
/// Requires `2 alpha (2p-1) - 1 > 0`.
pub fn c_strong(alpha_lim: f64, beta_lim: f64, p: f64) -> Result<f64> {
    let index_gap = 2.0 * alpha_lim * (2.0 * p - 1.0) - 1.0;
    if !(index_gap > 0.0) {
        return Err(Error::Domain(format!(
            "strong-elephant constant requires 2*alpha*(2p-1) > 1, got gap {index_gap}"
        )));
    }
    let r = mean_x_limit(alpha_lim, beta_lim, p);
    Ok((1.0 - r * r) / index_gap)
}

/// Almost-sure limit of S_n / n. Requires `p * alpha < 1`.
pub fn slln_limit(alpha_lim: f64, beta_lim: f64, p: f64) -> Result<f64> {
    if !(p * alpha_lim < 1.0) {
        return Err(Error::Domain(format!(
            "strong-law limit requires p*alpha < 1, got {}",
            p * alpha_lim
        )));
    }
    let num = (1.0 - alpha_lim) * (2.0 * beta_lim - 1.0);
    if num == 0.0 {
        return Ok(0.0);
    }
    Ok(num / (1.0 - (2.0 * p - 1.0) * alpha_lim))
}

fn regular_variation_index(params: &ModelParams) -> f64 {
    params.alpha.limit() * (2.0 * params.p - 1.0)
}

/// Asymptotic `a_n ~ n^idx * ell_n / Gamma(idx + 1)` with
/// `idx = alpha (2p-1)`; used only for ratio-convergence checks.
pub fn a_asymptotic(tables: &SequenceTables, n: u64) -> Result<f64> {
    let idx = regular_variation_index(tables.params());
    let gamma = gamma_function(idx + 1.0)?;
    Ok((n as f64).powf(idx) * tables.ell(n) / gamma)
}

/// Asymptotic `A_n^2 ~ C_diffusive * Gamma(idx+1)^2 * n^(1-2 idx) / ell_n^2`.
/// Requires the diffusive index condition `1 - 2 idx > 0`.
pub fn a_sq_asymptotic(tables: &SequenceTables, n: u64) -> Result<f64> {
    let params = tables.params();
    let idx = regular_variation_index(params);
    if !(1.0 - 2.0 * idx > 0.0) {
        return Err(Error::Domain(format!(
            "A^2 asymptotic requires 1 - 2*alpha*(2p-1) > 0, got {}",
            1.0 - 2.0 * idx
        )));
    }
    let c = c_diffusive(params.alpha.limit(), params.beta.limit(), params.p)?;
    let gamma = gamma_function(idx + 1.0)?;
    let ell = tables.ell(n);
    Ok(c * gamma * gamma * (n as f64).powf(1.0 - 2.0 * idx) / (ell * ell))
}

/// Asymptotic tail `A_inf^2 - A_n^2 ~ C_strong * Gamma(idx+1)^2 * n^(1-2 idx)
/// / ell_n^2` in the strong-elephant regime (`1 - 2 idx < 0`).
pub fn tail_asymptotic(tables: &SequenceTables, n: u64) -> Result<f64> {
    let params = tables.params();
    let idx = regular_variation_index(params);
    if !(1.0 - 2.0 * idx < 0.0) {
        return Err(Error::Domain(format!(
            "tail asymptotic requires 2*alpha*(2p-1) > 1, got {}",
            2.0 * idx
        )));
    }
    let c = c_strong(params.alpha.limit(), params.beta.limit(), params.p)?;
    let gamma = gamma_function(idx + 1.0)?;
    let ell = tables.ell(n);
    Ok(c * gamma * gamma * (n as f64).powf(1.0 - 2.0 * idx) / (ell * ell))
}

/// Estimate of the quadratic-variation tail `A_inf^2 - A_n^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    /// exact partial sum plus asymptotic remainder
    pub value: f64,
    /// sum of (1 - E[X_k]^2)/a_k^2 over n < k <= n_max
    pub exact_part: f64,
    /// Karamata remainder beyond n_max
    pub remainder: f64,
    /// remainder / value (0 when both vanish)
    pub remainder_fraction: f64,
    /// remainder fraction below 1%
    pub trusted: bool,
}

/// `A_inf^2 - A_n^2` as the exact sum up to `n_max` plus a Karamata
/// remainder beyond it.
///
/// The remainder scales the power tail by the local value
/// `1 - E[X_{n_max}]^2` rather than its limit, which agrees asymptotically
/// and vanishes exactly for degenerate walks whose conditional variances are
/// identically zero.
pub fn tail_a_sq(params: &ModelParams, n: u64, n_max: u64) -> Result<TailEstimate> {
    let idx = params.alpha.limit() * (2.0 * params.p - 1.0);
    if !(2.0 * idx > 1.0) {
        return Err(Error::Domain(format!(
            "tail estimate requires the strong-elephant index 2*alpha*(2p-1) > 1, got {}",
            2.0 * idx
        )));
    }
    if n_max < n || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "tail estimate requires 1 <= n <= n_max, got n={n}, n_max={n_max}"
        )));
    }
    let gamma = gamma_function(idx + 1.0)?;
    let mut rec = SequenceRecursion::new(params)?;
    rec.advance_to(n)?;
    let mut exact_part = 0.0f64;
    while rec.row().n < n_max {
        rec.advance()?;
        let row = rec.row();
        exact_part += (1.0 - row.mean_x * row.mean_x) / (row.a * row.a);
    }
    let row = rec.row();
    let local_var = (1.0 - row.mean_x * row.mean_x).max(0.0);
    let remainder = local_var * gamma * gamma * (n_max as f64).powf(1.0 - 2.0 * idx)
        / (row.ell * row.ell)
        / (2.0 * idx - 1.0);
    let value = exact_part + remainder;
    let remainder_fraction = if value > 0.0 { remainder / value } else { 0.0 };
    Ok(TailEstimate {
        value,
        exact_part,
        remainder,
        remainder_fraction,
        trusted: remainder_fraction < 0.01,
    })
}
