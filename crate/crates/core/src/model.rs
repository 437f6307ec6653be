//! Model parameters, the `[0,1]`-valued coefficient sequences, and the
//! classification of a parameter set into the regime whose limit theorem
//! applies.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::sequences::{c_critical, c_diffusive, c_strong};

/// Absolute tolerance for boundary comparisons on user-supplied reals
/// (e.g. `p == 3/4` or `alpha == 1/(4p-2)`).
pub const BOUNDARY_TOL: f64 = 1e-12;

pub(crate) fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= BOUNDARY_TOL
}

/// `a < b` with the boundary tolerance: values within `BOUNDARY_TOL` of each
/// other count as equal, not as strictly ordered.
pub(crate) fn strictly_less(a: f64, b: f64) -> bool {
    a < b && !approx_eq(a, b)
}

pub(crate) fn less_or_eq(a: f64, b: f64) -> bool {
    a < b || approx_eq(a, b)
}

/// A `[0,1]`-valued coefficient sequence with an explicit limit.
///
/// Every evaluated term is clamped to `[0,1]`, so `value` is total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceSpec {
    /// `value(n) = c` for all `n`.
    Constant { c: f64 },
    /// `value(n) = clamp(limit + coeff * n^(-exponent), 0, 1)`.
    #[serde(rename = "limit_power")]
    LimitPlusPower { limit: f64, coeff: f64, exponent: f64 },
    /// Explicit head values, constant `tail` afterwards.
    Table { values: Vec<f64>, tail: f64 },
}

impl SequenceSpec {
    pub fn constant(c: f64) -> Self {
        SequenceSpec::Constant { c }
    }

    /// The n-th term (n >= 1).
    pub fn value(&self, n: u64) -> f64 {
        assert!(n >= 1, "sequence index starts at 1");
        match self {
            SequenceSpec::Constant { c } => *c,
            SequenceSpec::LimitPlusPower {
                limit,
                coeff,
                exponent,
            } => (limit + coeff * (n as f64).powf(-exponent)).clamp(0.0, 1.0),
            SequenceSpec::Table { values, tail } => {
                values.get(n as usize - 1).copied().unwrap_or(*tail)
            }
        }
    }

    /// The limit of the sequence; exists for every representable spec.
    pub fn limit(&self) -> f64 {
        match self {
            SequenceSpec::Constant { c } => *c,
            SequenceSpec::LimitPlusPower { limit, .. } => *limit,
            SequenceSpec::Table { tail, .. } => *tail,
        }
    }

    /// `Some(c)` only for a spec that is exactly constant (not merely
    /// convergent).
    pub fn as_exact_constant(&self) -> Option<f64> {
        match self {
            SequenceSpec::Constant { c } => Some(*c),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64, what: &str| -> Result<()> {
            if !(0.0..=1.0).contains(&x) || !x.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{what} must lie in [0,1], got {x}"
                )));
            }
            Ok(())
        };
        match self {
            SequenceSpec::Constant { c } => unit(*c, "constant value"),
            SequenceSpec::LimitPlusPower {
                limit,
                coeff,
                exponent,
            } => {
                unit(*limit, "sequence limit")?;
                if !coeff.is_finite() {
                    return Err(Error::InvalidParameter("coeff must be finite".into()));
                }
                if !(*exponent > 0.0) || !exponent.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "exponent must be positive, got {exponent}"
                    )));
                }
                Ok(())
            }
            SequenceSpec::Table { values, tail } => {
                for (i, v) in values.iter().enumerate() {
                    unit(*v, &format!("table value #{}", i + 1))?;
                }
                unit(*tail, "table tail")
            }
        }
    }
}

/// The full parameter tuple of a walk instance. `q` only influences step 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p: f64,
    pub q: f64,
    pub alpha: SequenceSpec,
    pub beta: SequenceSpec,
}

impl ModelParams {
    pub fn new(p: f64, q: f64, alpha: SequenceSpec, beta: SequenceSpec) -> Result<Self> {
        let params = ModelParams { p, q, alpha, beta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (x, what) in [(self.p, "p"), (self.q, "q")] {
            if !(0.0..=1.0).contains(&x) || !x.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{what} must lie in [0,1], got {x}"
                )));
            }
        }
        self.alpha.validate()?;
        self.beta.validate()
    }

    /// Stable hex fingerprint of the parameter tuple (FNV-1a over the
    /// canonical JSON encoding).
    pub fn fingerprint(&self) -> String {
        let encoded = serde_json::to_string(self).expect("params serialize");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in encoded.as_bytes() {
            h ^= u64::from(*byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Normalization under which the classified limit theorem is stated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    SqrtN,
    SqrtNLogN,
    AnFluctuation,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Normalization::SqrtN => "sqrt_n",
            Normalization::SqrtNLogN => "sqrt_n_log_n",
            Normalization::AnFluctuation => "a_n_fluctuation",
        };
        f.write_str(s)
    }
}

/// Which limit theorem applies to a parameter set, together with the
/// applicable limit constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    /// sqrt(n) scaling, Gaussian-process limit. Cases i..v.
    DiffusiveGaussian { case: u8, constant: f64 },
    /// sqrt(n log n) scaling at `alpha ≡ 1/(4p-2)`. Cases i..ii.
    CriticalLog { case: u8, constant: f64 },
    /// a_n scaling to a nondegenerate limit, with sqrt(n) fluctuations
    /// around it. Cases i..ii.
    StrongElephant { case: u8, constant: f64 },
    Unclassified { reason: String },
}

fn roman(case: u8) -> &'static str {
    match case {
        1 => "i",
        2 => "ii",
        3 => "iii",
        4 => "iv",
        5 => "v",
        _ => "?",
    }
}

impl Regime {
    pub fn constant(&self) -> Option<f64> {
        match self {
            Regime::DiffusiveGaussian { constant, .. }
            | Regime::CriticalLog { constant, .. }
            | Regime::StrongElephant { constant, .. } => Some(*constant),
            Regime::Unclassified { .. } => None,
        }
    }

    pub fn normalization(&self) -> Option<Normalization> {
        match self {
            Regime::DiffusiveGaussian { .. } => Some(Normalization::SqrtN),
            Regime::CriticalLog { .. } => Some(Normalization::SqrtNLogN),
            Regime::StrongElephant { .. } => Some(Normalization::AnFluctuation),
            Regime::Unclassified { .. } => None,
        }
    }

    pub fn is_classified(&self) -> bool {
        !matches!(self, Regime::Unclassified { .. })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::DiffusiveGaussian { case, .. } => {
                write!(f, "DiffusiveGaussian({})", roman(*case))
            }
            Regime::CriticalLog { case, .. } => write!(f, "CriticalLog({})", roman(*case)),
            Regime::StrongElephant { case, .. } => write!(f, "StrongElephant({})", roman(*case)),
            Regime::Unclassified { reason } => write!(f, "Unclassified({reason})"),
        }
    }
}

/// First matching case of the sqrt(n) theorem, on the sequence limits.
pub fn diffusive_case(p: f64, alpha: f64, beta: f64) -> Option<u8> {
    let inv = if p > 0.5 { 1.0 / (4.0 * p - 2.0) } else { f64::INFINITY };
    if strictly_less(p, 0.75) && strictly_less(0.0, alpha) {
        Some(1)
    } else if approx_eq(p, 0.75) && strictly_less(0.0, alpha) && strictly_less(alpha, 1.0) {
        Some(2)
    } else if strictly_less(0.75, p)
        && strictly_less(p, 1.0)
        && strictly_less(0.0, alpha)
        && strictly_less(alpha, inv)
    {
        Some(3)
    } else if approx_eq(p, 1.0)
        && strictly_less(0.0, alpha)
        && strictly_less(alpha, inv)
        && strictly_less(0.0, beta)
        && strictly_less(beta, 1.0)
    {
        Some(4)
    } else if approx_eq(alpha, 0.0) && strictly_less(0.0, beta) && strictly_less(beta, 1.0) {
        Some(5)
    } else {
        None
    }
}

/// Case of the sqrt(n log n) theorem, assuming `alpha ≡ 1/(4p-2)` already
/// holds exactly.
pub fn critical_case(p: f64, beta: f64) -> Option<u8> {
    if less_or_eq(0.75, p) && strictly_less(p, 1.0) {
        Some(1)
    } else if approx_eq(p, 1.0) && strictly_less(0.0, beta) && strictly_less(beta, 1.0) {
        Some(2)
    } else {
        None
    }
}

/// Case of the strong-elephant fluctuation corollary, on the limits.
pub fn strong_case(p: f64, alpha: f64, beta: f64) -> Option<u8> {
    let inv = if p > 0.5 { 1.0 / (4.0 * p - 2.0) } else { f64::INFINITY };
    if strictly_less(0.75, p) && strictly_less(p, 1.0) && strictly_less(inv, alpha) {
        Some(1)
    } else if approx_eq(p, 1.0)
        && strictly_less(inv, alpha)
        && strictly_less(alpha, 1.0)
        && strictly_less(0.0, beta)
        && strictly_less(beta, 1.0)
    {
        Some(2)
    } else {
        None
    }
}

/// Map a parameter set to the applicable theorem.
///
/// Precedence: the critical sqrt(n log n) case requires `alpha` to be an
/// exactly constant spec at `1/(4p-2)` (a convergent non-constant spec at
/// that limit is not covered and classifies as `Unclassified`); otherwise the
/// sqrt(n) theorem conditions are tried in order i..v; otherwise the
/// strong-elephant conditions.
pub fn classify(params: &ModelParams) -> Regime {
    let p = params.p;
    let alpha = params.alpha.limit();
    let beta = params.beta.limit();

    if p > 0.5 + BOUNDARY_TOL {
        let inv = 1.0 / (4.0 * p - 2.0);
        if let Some(c) = params.alpha.as_exact_constant() {
            if approx_eq(c, inv) {
                if let Some(case) = critical_case(p, beta) {
                    let constant = c_critical(beta, p)
                        .expect("critical case guarantees p >= 3/4");
                    return Regime::CriticalLog { case, constant };
                }
            }
        }
    }

    if let Some(case) = diffusive_case(p, alpha, beta) {
        let constant = c_diffusive(alpha, beta, p)
            .expect("diffusive conditions guarantee 1 - 2*alpha*(2p-1) > 0");
        return Regime::DiffusiveGaussian { case, constant };
    }

    if let Some(case) = strong_case(p, alpha, beta) {
        let constant = c_strong(alpha, beta, p)
            .expect("strong-elephant conditions guarantee 2*alpha*(2p-1) > 1");
        return Regime::StrongElephant { case, constant };
    }

    Regime::Unclassified {
        reason: format!(
            "no theorem condition matches p={p}, alpha→{alpha}, beta→{beta}"
        ),
    }
}
