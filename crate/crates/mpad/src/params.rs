//! System parameters and their validity rules.
//!
//! A deployment is described by the matrix shape (`k` rows, `n` columns), the
//! message length `m` in bits, the per-key window budget `eta_max`, the
//! device count, and how many keys each device pair holds. The rules that
//! make the pad information-theoretically sound are:
//!
//! * `k < m`: the keystream must be longer than the key index vector, or
//!   exhaustive key search is cheaper than guessing the message.
//! * single message (`eta_max = 1`): `m < floor((n+1)/2)`, strictly.
//! * multi-window: `eta_max * m <= floor((n+1)/2)`, so every window of every
//!   key stays inside the half of the column group where sub-key components
//!   never collide.

use std::collections::BTreeMap;
use std::fmt;

/// `floor((n+1)/2)` without overflowing at `n = u64::MAX`.
pub const fn half_group(n: u64) -> u64 {
    n / 2 + (n & 1)
}

/// Highest window budget a key supports: `floor(half_group(n) / m)`.
pub fn max_eta(n: u64, m: u64) -> u64 {
    assert!(m >= 1, "message length must be positive");
    half_group(n) / m
}

/// An unordered device pair, stored with `q < l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    q: u32,
    l: u32,
}

impl Pair {
    pub fn new(a: u32, b: u32) -> Result<Self, ParamError> {
        if a == b {
            return Err(ParamError::SelfPair { device: a });
        }
        Ok(Pair {
            q: a.min(b),
            l: a.max(b),
        })
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn contains(&self, device: u32) -> bool {
        self.q == device || self.l == device
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.q, self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamError {
    #[error("a pair needs two distinct devices, got {device} twice")]
    SelfPair { device: u32 },
    #[error("fleet needs at least 2 devices, got {devices}")]
    TooFewDevices { devices: u32 },
    #[error("every pair needs at least one key, pair {pair} has zero")]
    ZeroKeys { pair: Pair },
    #[error("per-pair key counts must cover exactly the fleet's pairs")]
    BadLambdaMap,
    #[error("invalid parameters: {0}")]
    Invalid(ParamReport),
}

/// One violated validity rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamViolation {
    /// `n >= 2`, `k >= 1`, `m >= 1`, `eta_max >= 1`.
    FieldOutOfRange { field: &'static str, value: u64 },
    /// `k < m` fails.
    KeyNotShorterThanMessage { k: u64, m: u64 },
    /// Single-message rule `m < floor((n+1)/2)` fails.
    MessageFillsHalfGroup { m: u64, limit: u64 },
    /// Multi-window rule `eta_max * m <= floor((n+1)/2)` fails.
    WindowBudgetExceedsHalfGroup { eta_max: u64, m: u64, limit: u64 },
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamViolation::FieldOutOfRange { field, value } => {
                write!(f, "{field} = {value} is out of range")
            }
            ParamViolation::KeyNotShorterThanMessage { k, m } => {
                write!(f, "k = {k} must be strictly below m = {m}")
            }
            ParamViolation::MessageFillsHalfGroup { m, limit } => {
                write!(f, "m = {m} must be strictly below floor((n+1)/2) = {limit}")
            }
            ParamViolation::WindowBudgetExceedsHalfGroup { eta_max, m, limit } => {
                write!(f, "eta_max * m = {eta_max} * {m} exceeds floor((n+1)/2) = {limit}")
            }
        }
    }
}

/// Outcome of validity checking; `is_valid` iff no rule is violated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    pub n: u64,
    pub k: u64,
    pub m: u64,
    pub eta_max: u64,
    pub violations: Vec<ParamViolation>,
}

impl ParamReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} k={} m={} eta_max={}: ",
            self.n, self.k, self.m, self.eta_max
        )?;
        if self.is_valid() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_params(n: u64, k: u64, m: u64, eta_max: u64) -> ParamReport {
    let mut violations = Vec::new();
    for (field, value, min) in [("n", n, 2u64), ("k", k, 1), ("m", m, 1), ("eta_max", eta_max, 1)] {
        if value < min {
            violations.push(ParamViolation::FieldOutOfRange { field, value });
        }
    }
    if violations.is_empty() {
        let limit = half_group(n);
        if k >= m {
            violations.push(ParamViolation::KeyNotShorterThanMessage { k, m });
        }
        if eta_max == 1 {
            if m >= limit {
                violations.push(ParamViolation::MessageFillsHalfGroup { m, limit });
            }
        } else if u128::from(eta_max) * u128::from(m) > u128::from(limit) {
            violations.push(ParamViolation::WindowBudgetExceedsHalfGroup { eta_max, m, limit });
        }
    }
    ParamReport {
        n,
        k,
        m,
        eta_max,
        violations,
    }
}

/// How many keys each pair holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lambda {
    Uniform(u64),
    PerPair(BTreeMap<Pair, u64>),
}

/// A full deployment description. Constructing one re-checks every rule, so
/// holding a `SystemParams` is proof the parameters are sound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemParams {
    n: u64,
    k: u64,
    m: u64,
    eta_max: u64,
    devices: u32,
    lambda: Lambda,
}

impl SystemParams {
    pub fn new(
        n: u64,
        k: u64,
        m: u64,
        eta_max: u64,
        devices: u32,
        lambda: Lambda,
    ) -> Result<Self, ParamError> {
        let report = validate_params(n, k, m, eta_max);
        if !report.is_valid() {
            return Err(ParamError::Invalid(report));
        }
        if devices < 2 {
            return Err(ParamError::TooFewDevices { devices });
        }
        let params = SystemParams {
            n,
            k,
            m,
            eta_max,
            devices,
            lambda,
        };
        match &params.lambda {
            Lambda::Uniform(v) => {
                if *v == 0 {
                    return Err(ParamError::ZeroKeys {
                        pair: Pair::new(0, 1).unwrap(),
                    });
                }
            }
            Lambda::PerPair(map) => {
                let mut expected = 0u64;
                for pair in params.pairs() {
                    expected += 1;
                    match map.get(&pair) {
                        None => return Err(ParamError::BadLambdaMap),
                        Some(0) => return Err(ParamError::ZeroKeys { pair }),
                        Some(_) => {}
                    }
                }
                if map.len() as u64 != expected {
                    return Err(ParamError::BadLambdaMap);
                }
            }
        }
        Ok(params)
    }

    pub fn uniform(
        n: u64,
        k: u64,
        m: u64,
        eta_max: u64,
        devices: u32,
        lambda: u64,
    ) -> Result<Self, ParamError> {
        Self::new(n, k, m, eta_max, devices, Lambda::Uniform(lambda))
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn eta_max(&self) -> u64 {
        self.eta_max
    }

    pub fn devices(&self) -> u32 {
        self.devices
    }

    pub fn lambda(&self) -> &Lambda {
        &self.lambda
    }

    pub fn lambda_for(&self, pair: Pair) -> u64 {
        match &self.lambda {
            Lambda::Uniform(v) => *v,
            Lambda::PerPair(map) => *map.get(&pair).expect("pair covered at construction"),
        }
    }

    /// Number of device pairs, `(U^2 - U) / 2`.
    pub fn pair_count(&self) -> u64 {
        let u = u64::from(self.devices);
        u * (u - 1) / 2
    }

    /// Total key count across all pairs; the `W` that bounds take when pairs
    /// hold more than one key each.
    pub fn total_keys(&self) -> u128 {
        match &self.lambda {
            Lambda::Uniform(v) => u128::from(self.pair_count()) * u128::from(*v),
            Lambda::PerPair(map) => map.values().map(|&v| u128::from(v)).sum(),
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        (0..self.devices).flat_map(move |q| {
            (q + 1..self.devices).map(move |l| Pair::new(q, l).expect("distinct ids"))
        })
    }
}
