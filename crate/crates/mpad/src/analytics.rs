//! Closed-form security analytics.
//!
//! Everything here is evaluated in exact rational arithmetic; floating point
//! appears only in final log2 / display conversions. The distinguishing
//! advantage of an eavesdropper is bounded by
//!
//! ```text
//! 2 * W_eff * ((2*E*m - 1)^k / n^k  +  E / 2^m)
//! ```
//!
//! where `E` is the number of keystream windows an attacker may see per key
//! (1 in single-message mode, `eta_max` in multi-message mode) and `W_eff` is
//! the total number of pairwise keys in the system. The two summands are the
//! sub-key collision term and the keystream coincidence term; both are kept
//! separately in [`BoundReport`].
//!
//! Secrecy gain measures securely exchangeable plaintext bits per stored
//! secret bit. For one device (peer sums over its channels) or the whole
//! system (sums over every pair), with the shared matrix counted once:
//!
//! ```text
//! gain = (sum lambda * m * eta_max) / (sum lambda * k * log2(n) + k * n)
//! ```
//!
//! `log2(n)` is exact for powers of two and is otherwise evaluated in fixed
//! point with a configurable number of fractional bits.

use crate::params::{Pair, SystemParams};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, ToPrimitive, Zero};

/// Fractional bits used for irrational log2 values unless overridden.
pub const DEFAULT_PRECISION_BITS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("device {device} is not in a fleet of {fleet} devices")]
    UnknownDevice { device: u32, fleet: u32 },
    #[error("pair {pair} is not in a fleet of {fleet} devices")]
    UnknownPair { pair: Pair, fleet: u32 },
}

/// How many keystream windows per key the bound charges the adversary for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    /// One message per key.
    SingleWindow,
    /// Up to `eta_max` messages per key.
    MultiWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// Total pairwise keys charged against the adversary.
    pub effective_w: BigUint,
    /// (2*E*m - 1)^k / n^k, the sub-key collision term.
    pub term_collision: BigRational,
    /// E / 2^m, the keystream coincidence term.
    pub term_coincidence: BigRational,
    /// 2 * effective_w * (term_collision + term_coincidence), exact.
    pub bound: BigRational,
    /// log2 of the bound, accurate to well under 1e-6.
    pub log2_bound: f64,
    /// The bound is 1 or more, so it guarantees nothing.
    pub vacuous: bool,
}

pub fn advantage_bound(params: &SystemParams, mode: BoundMode) -> BoundReport {
    let windows = match mode {
        BoundMode::SingleWindow => 1,
        BoundMode::MultiWindow => params.eta_max(),
    };
    let effective_w = BigUint::from(params.total_keys());

    // (2*E*m - 1)^k over n^k; the validity envelope keeps 2*E*m - 1 <= n
    let reach = BigUint::from(2u8) * BigUint::from(windows) * BigUint::from(params.m())
        - BigUint::one();
    let term_collision = BigRational::new(
        BigInt::from(Pow::pow(&reach, params.k())),
        BigInt::from(Pow::pow(&BigUint::from(params.n()), params.k())),
    );
    let term_coincidence = BigRational::new(
        BigInt::from(windows),
        BigInt::from(BigUint::one() << params.m()),
    );

    let bound = BigRational::from_integer(BigInt::from(2u8))
        * BigRational::from_integer(BigInt::from(effective_w.clone()))
        * (&term_collision + &term_coincidence);
    let log2_bound = log2_rational(&bound);
    let vacuous = bound >= BigRational::one();
    BoundReport {
        effective_w,
        term_collision,
        term_coincidence,
        bound,
        log2_bound,
        vacuous,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    /// Plaintext bits the counted channels can exchange securely.
    pub numerator_bits: BigUint,
    /// Secret bits stored to support them. An exact integer when n is a
    /// power of two, otherwise a fixed-point approximation.
    pub denominator_bits: BigRational,
    /// numerator / denominator, rounded once at the end.
    pub gain: f64,
    /// log2(n) was an integer, so the ratio is exact.
    pub exact: bool,
}

fn gain_report(
    params: &SystemParams,
    key_count: BigUint,
    precision_bits: u32,
) -> GainReport {
    let numerator_bits =
        &key_count * BigUint::from(params.m()) * BigUint::from(params.eta_max());
    let (log2_n, exact) = log2_of(params.n(), precision_bits);
    let denominator_bits = BigRational::from_integer(BigInt::from(
        key_count * BigUint::from(params.k()),
    )) * &log2_n
        + BigRational::from_integer(BigInt::from(
            BigUint::from(params.k()) * BigUint::from(params.n()),
        ));
    let ratio = BigRational::from_integer(BigInt::from(numerator_bits.clone()))
        / &denominator_bits;
    let gain = ratio.to_f64().unwrap_or_else(|| log2_rational(&ratio).exp2());
    GainReport {
        numerator_bits,
        denominator_bits,
        gain,
        exact,
    }
}

/// Gain for one device: channels to each of its peers, plus its matrix copy.
pub fn device_secrecy_gain(
    params: &SystemParams,
    device: u32,
    precision_bits: u32,
) -> Result<GainReport, AnalyticsError> {
    if device >= params.devices() {
        return Err(AnalyticsError::UnknownDevice {
            device,
            fleet: params.devices(),
        });
    }
    let key_count: BigUint = (0..params.devices())
        .filter(|&peer| peer != device)
        .map(|peer| {
            let pair = Pair::new(device.min(peer), device.max(peer)).expect("distinct");
            BigUint::from(params.lambda_for(pair))
        })
        .sum();
    Ok(gain_report(params, key_count, precision_bits))
}

/// Gain for the whole fleet: every channel, the matrix counted once.
pub fn system_secrecy_gain(params: &SystemParams, precision_bits: u32) -> GainReport {
    gain_report(params, BigUint::from(params.total_keys()), precision_bits)
}

/// Plaintext bits one pair can exchange before its keys are spent:
/// lambda * m * eta_max.
pub fn pair_capacity_bits(
    params: &SystemParams,
    pair: Pair,
) -> Result<BigUint, AnalyticsError> {
    if pair.l() >= params.devices() {
        return Err(AnalyticsError::UnknownPair {
            pair,
            fleet: params.devices(),
        });
    }
    Ok(BigUint::from(params.lambda_for(pair))
        * BigUint::from(params.m())
        * BigUint::from(params.eta_max()))
}

/// Brute-force cost of recovering one pairwise key from a known window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryCost {
    /// k * log2(n), the size of the key space in bits.
    pub keyspace_log2: f64,
    /// keyspace_log2 - 1: keys tested on average before the first hit.
    pub expected_trials_log2: f64,
    /// 1 - 2^-m: chance the m observed bits pin the key (near-)uniquely.
    pub success_prob_lower: f64,
}

pub fn key_recovery_cost(n: u64, k: u64, m: u64) -> RecoveryCost {
    let keyspace_log2 = if n.is_power_of_two() {
        (u128::from(k) * u128::from(n.trailing_zeros())) as f64
    } else {
        k as f64 * (n as f64).log2()
    };
    RecoveryCost {
        keyspace_log2,
        expected_trials_log2: keyspace_log2 - 1.0,
        success_prob_lower: 1.0 - (-(m as f64)).exp2(),
    }
}

/// log2 of a positive rational as f64. Works at any magnitude: both parts
/// are reduced to bit length plus a 64-bit mantissa before any float math.
pub fn log2_rational(r: &BigRational) -> f64 {
    assert!(r.is_positive(), "log2 needs a positive value");
    log2_biguint(r.numer().magnitude()) - log2_biguint(r.denom().magnitude())
}

fn log2_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 53 {
        return x.to_f64().expect("fits f64").log2();
    }
    let top: u64 = ((x >> (bits - 64)) & BigUint::from(u64::MAX))
        .to_u64()
        .expect("64 bits");
    (bits - 64) as f64 + (top as f64).log2()
}

/// log2(n) as a rational with `frac_bits` fractional bits, exact when n is a
/// power of two (then `.1` is true).
pub fn log2_of(n: u64, frac_bits: u32) -> (BigRational, bool) {
    assert!(n >= 1);
    if n.is_power_of_two() {
        (
            BigRational::from_integer(BigInt::from(n.trailing_zeros())),
            true,
        )
    } else {
        (log2_fixed(&BigUint::from(n), frac_bits), false)
    }
}

/// Fixed-point log2 by digit extraction: normalize to [1, 2), then square
/// `frac_bits` times, emitting a bit whenever the square crosses 2. Work
/// carries 64 guard bits so truncation stays far below the last output bit.
pub fn log2_fixed(n: &BigUint, frac_bits: u32) -> BigRational {
    assert!(!n.is_zero());
    let int_part = n.bits() - 1;
    let guard = 64u32;
    let p = u64::from(frac_bits) + u64::from(guard);
    let mut y = (n << p) >> int_part;
    let mut frac = BigUint::zero();
    for _ in 0..frac_bits {
        y = (&y * &y) >> p;
        frac <<= 1;
        if y.bits() > p + 1 {
            y >>= 1;
            frac += 1u8;
        }
    }
    let scaled = (BigUint::from(int_part) << frac_bits) + frac;
    BigRational::new(
        BigInt::from(scaled),
        BigInt::from(BigUint::one() << frac_bits),
    )
}

/// Metric a parameter sweep evaluates per combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// log2 of the multi-window advantage bound.
    AdvantageLog2,
    /// Per-device secrecy gain (device 0; uniform sweeps make them all equal).
    DeviceGain,
    /// System-wide secrecy gain.
    SystemGain,
    /// Per-pair capacity in bits.
    CapacityBits,
    /// Window budget floor(half_group(n) / m).
    MaxEta,
}

impl Metric {
    pub fn column(self) -> &'static str {
        match self {
            Metric::AdvantageLog2 => "advantage_log2",
            Metric::DeviceGain => "device_gain",
            Metric::SystemGain => "system_gain",
            Metric::CapacityBits => "capacity_bits",
            Metric::MaxEta => "max_eta",
        }
    }
}

/// Axis values for a sweep; the cartesian product is evaluated in the order
/// n, k, m, eta_max, devices, lambda (rightmost fastest).
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub n: Vec<u64>,
    pub k: Vec<u64>,
    pub m: Vec<u64>,
    pub eta_max: Vec<u64>,
    pub devices: Vec<u32>,
    pub lambda: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: u64,
    pub k: u64,
    pub m: u64,
    pub eta_max: u64,
    pub devices: u32,
    pub lambda: u64,
    /// None when the combination is invalid.
    pub value: Option<f64>,
    /// "ok", or the reason the combination was rejected.
    pub status: String,
}

pub fn sweep(spec: &SweepSpec, metric: Metric, precision_bits: u32) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &n in &spec.n {
        for &k in &spec.k {
            for &m in &spec.m {
                for &eta_max in &spec.eta_max {
                    for &devices in &spec.devices {
                        for &lambda in &spec.lambda {
                            let (value, status) = match SystemParams::uniform(
                                n, k, m, eta_max, devices, lambda,
                            ) {
                                Ok(params) => {
                                    (Some(evaluate(&params, metric, precision_bits)), "ok".to_string())
                                }
                                Err(e) => (None, format!("invalid: {e}")),
                            };
                            rows.push(SweepRow {
                                n,
                                k,
                                m,
                                eta_max,
                                devices,
                                lambda,
                                value,
                                status,
                            });
                        }
                    }
                }
            }
        }
    }
    rows
}

fn evaluate(params: &SystemParams, metric: Metric, precision_bits: u32) -> f64 {
    match metric {
        Metric::AdvantageLog2 => {
            advantage_bound(params, BoundMode::MultiWindow).log2_bound
        }
        Metric::DeviceGain => {
            device_secrecy_gain(params, 0, precision_bits)
                .expect("device 0 exists")
                .gain
        }
        Metric::SystemGain => system_secrecy_gain(params, precision_bits).gain,
        Metric::CapacityBits => {
            let pair = Pair::new(0, 1).expect("distinct");
            let bits = pair_capacity_bits(params, pair).expect("pair 0,1 exists");
            bits.to_f64().unwrap_or(f64::INFINITY)
        }
        Metric::MaxEta => crate::params::max_eta(params.n(), params.m()) as f64,
    }
}

/// Renders sweep rows as CSV. Floats carry 10 significant digits; empty
/// metric cells mark invalid combinations, with the reason in `status`.
pub fn sweep_csv(metric: Metric, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str("n,k,m,eta_max,devices,lambda,");
    out.push_str(metric.column());
    out.push_str(",status\n");
    for row in rows {
        let value = row.value.map(|v| format_sig(v, 10)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.n,
            row.k,
            row.m,
            row.eta_max,
            row.devices,
            row.lambda,
            value,
            csv_field(&row.status),
        ));
    }
    out
}

/// Formats with `sig` significant digits, fixed or scientific like C's %g,
/// trailing zeros trimmed.
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if exp < -4 || exp >= sig as i32 {
        let s = format!("{:.*e}", sig.saturating_sub(1), v);
        match s.split_once('e') {
            Some((mantissa, exponent)) => {
                format!("{}e{}", trim_zeros(mantissa), exponent)
            }
            None => s,
        }
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, v))
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
