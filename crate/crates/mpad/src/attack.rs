//! Adversary-side estimators that stress the security model at desk scale.
//!
//! Four families:
//! - exhaustive key recovery from one known plaintext window,
//! - key collision probability (two keys landing within each other's window
//!   reach), Monte Carlo and exhaustive,
//! - pad failure for a whole provisioned system: the distinguished channel's
//!   window overlaps another channel's, or two derived keystreams coincide,
//! - exact Bayes-optimal distinguishing advantage at micro parameters, by
//!   full enumeration of matrices and key tuples.
//!
//! Monte Carlo loops run in parallel batches. Batch `b` draws from
//! `rng.fork(b)` (seed XOR batch index), so a seeded run is reproducible
//! regardless of worker count. Statistical verdicts: within 3 sigma passes,
//! beyond 4 sigma hard-fails, the band between is a warning.

use crate::analytics::{advantage_bound, format_sig, BoundMode};
use crate::bits::Bits;
use crate::otp::{derive_keystream, Ciphertext, MatrixSpec, OtpError, PairwiseKey, RandomMatrix};
use crate::params::{Pair, SystemParams};
use crate::rng::RandomSource;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Pow, ToPrimitive, Zero};
use rayon::prelude::*;

/// Keys examined per default before an exhaustive search refuses to run.
pub const DEFAULT_SEARCH_BUDGET: u64 = 1 << 26;
/// Enumeration cap for the exact micro-game: 2^(k*n) * n^(k*pairs).
pub const GAME_ENUMERATION_BUDGET: u128 = 1 << 30;
/// Fewest Monte Carlo trials that make a verdict meaningful.
pub const MIN_TRIALS: u64 = 10_000;
/// Fewest sample bits for the keystream frequency test.
pub const MIN_SAMPLE_BITS: u64 = 100_000;

const BATCH: u64 = 8192;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("search space of {needed} exceeds the budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("{trials} trials is below the statistical minimum of {min}")]
    TooFewTrials { trials: u64, min: u64 },
    #[error("analytic probability {analytic:e} yields ~{expected_hits:.2} expected hits over {trials} trials, too few to estimate")]
    RareEvent {
        analytic: f64,
        expected_hits: f64,
        trials: u64,
    },
    #[error("message is {message} bits but the ciphertext payload is {payload}")]
    EvidenceLengthMismatch { message: u64, payload: u64 },
    #[error("game layout: {0}")]
    BadLayout(String),
    #[error("{0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    Otp(#[from] OtpError),
}

/// Outcome of comparing an estimate against its analytic prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Within 3 sigma (or exact where variance is zero).
    Pass,
    /// Between 3 and 4 sigma: suspicious, not conclusive.
    Warn,
    /// Beyond 4 sigma: the estimate contradicts the prediction.
    HardFail,
}

impl Verdict {
    pub fn is_hard_fail(self) -> bool {
        matches!(self, Verdict::HardFail)
    }

    pub(crate) fn from_z(z: f64) -> Verdict {
        if z.abs() <= 3.0 {
            Verdict::Pass
        } else if z.abs() <= 4.0 {
            Verdict::Warn
        } else {
            Verdict::HardFail
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Warn => "warn",
            Verdict::HardFail => "hard-fail",
        })
    }
}

/// Header for the one-line-per-estimator CSV report.
pub const ESTIMATOR_CSV_HEADER: &str = "operation,params,trials,estimate,analytic,z_score,verdict";

fn csv_row(
    operation: &str,
    params: &str,
    trials: u128,
    estimate: f64,
    analytic: f64,
    z_score: Option<f64>,
    verdict: Verdict,
) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        operation,
        params,
        trials,
        format_sig(estimate, 10),
        format_sig(analytic, 10),
        z_score.map(|z| format_sig(z, 10)).unwrap_or_default(),
        verdict,
    )
}

/// A Monte Carlo estimate next to its analytic prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionEstimate {
    pub trials: u64,
    pub hits: u64,
    pub estimate: f64,
    /// Predicted probability, or an upper bound where noted by the producer.
    pub analytic: f64,
    /// (estimate - analytic) / sigma. None where the variance is zero.
    pub z_score: Option<f64>,
    pub verdict: Verdict,
}

impl CollisionEstimate {
    /// analytic is a point prediction: two-sided z against it.
    fn two_sided(trials: u64, hits: u64, analytic: f64) -> CollisionEstimate {
        let estimate = hits as f64 / trials as f64;
        let var = analytic * (1.0 - analytic) / trials as f64;
        let (z_score, verdict) = if var > 0.0 {
            let z = (estimate - analytic) / var.sqrt();
            (Some(z), Verdict::from_z(z))
        } else if estimate == analytic {
            (None, Verdict::Pass)
        } else {
            (None, Verdict::HardFail)
        };
        CollisionEstimate {
            trials,
            hits,
            estimate,
            analytic,
            z_score,
            verdict,
        }
    }

    /// analytic is only an upper bound: judge the one-sided excess with the
    /// plug-in deviation of the estimate itself.
    fn upper_bound(trials: u64, hits: u64, bound: f64) -> CollisionEstimate {
        let estimate = hits as f64 / trials as f64;
        let sigma = (estimate * (1.0 - estimate) / trials as f64).sqrt();
        let slack = estimate - bound;
        let (z_score, verdict) = if slack <= 0.0 {
            let z = (sigma > 0.0).then(|| slack / sigma);
            (z, Verdict::Pass)
        } else if sigma > 0.0 {
            let z = slack / sigma;
            (Some(z), Verdict::from_z(z))
        } else {
            (None, Verdict::HardFail)
        };
        CollisionEstimate {
            trials,
            hits,
            estimate,
            analytic: bound,
            z_score,
            verdict,
        }
    }

    pub fn csv_row(&self, operation: &str, params: &str) -> String {
        csv_row(
            operation,
            params,
            u128::from(self.trials),
            self.estimate,
            self.analytic,
            self.z_score,
            self.verdict,
        )
    }
}

fn checked_power(base: u64, exp: u64) -> Option<u128> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(u128::from(base))?;
    }
    Some(acc)
}

/// Lexicographic enumeration of all `len`-digit vectors in base `base`:
/// starts at all zeros, `step` advances (rightmost digit fastest) and
/// reports false once every vector has been visited.
struct Odometer {
    digits: Vec<u64>,
    base: u64,
}

impl Odometer {
    fn new(len: usize, base: u64) -> Odometer {
        assert!(base >= 1 && len >= 1);
        Odometer {
            digits: vec![0; len],
            base,
        }
    }

    fn digits(&self) -> &[u64] {
        &self.digits
    }

    fn step(&mut self) -> bool {
        for d in self.digits.iter_mut().rev() {
            *d += 1;
            if *d < self.base {
                return true;
            }
            *d = 0;
        }
        false
    }
}

/// One observed plaintext/ciphertext pair for the same window.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownPlaintextPair {
    message: Bits,
    ciphertext: Ciphertext,
}

impl KnownPlaintextPair {
    pub fn new(message: Bits, ciphertext: Ciphertext) -> Result<Self, AttackError> {
        if message.len() != ciphertext.payload.len() {
            return Err(AttackError::EvidenceLengthMismatch {
                message: message.len(),
                payload: ciphertext.payload.len(),
            });
        }
        Ok(KnownPlaintextPair {
            message,
            ciphertext,
        })
    }

    pub fn message(&self) -> &Bits {
        &self.message
    }

    pub fn ciphertext(&self) -> &Ciphertext {
        &self.ciphertext
    }

    /// The keystream the true key must reproduce: message XOR payload.
    pub fn target_keystream(&self) -> Bits {
        let mut ks = self.message.clone();
        ks.xor_assign(&self.ciphertext.payload);
        ks
    }
}

/// Every key consistent with one evidence window.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// All keys whose derived keystream matches the evidence, in search order.
    pub keys: Vec<PairwiseKey>,
    /// Keys examined up to and including the first match (all of them if
    /// nothing matched).
    pub trials_tested: u64,
}

/// Enumerates every key in lexicographic order and keeps those whose derived
/// keystream reproduces the evidence exactly.
pub fn brute_force_recover(
    matrix: &RandomMatrix,
    evidence: &KnownPlaintextPair,
    search_budget: u64,
) -> Result<CandidateSet, AttackError> {
    let n = matrix.spec().n();
    let k = matrix.spec().k();
    let keyspace = checked_power(n, k).ok_or(AttackError::BudgetExceeded {
        needed: u128::MAX,
        budget: u128::from(search_budget),
    })?;
    if keyspace > u128::from(search_budget) {
        return Err(AttackError::BudgetExceeded {
            needed: keyspace,
            budget: u128::from(search_budget),
        });
    }

    let target = evidence.target_keystream();
    let m = target.len();
    let header = evidence.ciphertext();
    let mut odo = Odometer::new(k as usize, n);
    let mut keys = Vec::new();
    let mut examined: u64 = 0;
    let mut trials_tested: u64 = 0;
    loop {
        examined += 1;
        let key = PairwiseKey::new(header.pair, header.slot, n, odo.digits().to_vec())?;
        let ks = derive_keystream(matrix, &key, m, header.eta)?;
        if ks.bits == target {
            if keys.is_empty() {
                trials_tested = examined;
            }
            keys.push(key);
        }
        if !odo.step() {
            break;
        }
    }
    if keys.is_empty() {
        trials_tested = examined;
    }
    Ok(CandidateSet {
        keys,
        trials_tested,
    })
}

/// Window geometry for collision events, decoupled from full system
/// validity so saturated and stress cases can be measured too.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowParams {
    pub n: u64,
    pub k: u64,
    pub m: u64,
    /// E: windows per key the adversary may observe (1 = single message).
    pub windows: u64,
}

impl WindowParams {
    pub fn new(n: u64, k: u64, m: u64, windows: u64) -> Result<Self, AttackError> {
        if n < 1 || k < 1 || m < 1 || windows < 1 {
            return Err(AttackError::BadLayout(
                "window params must all be at least 1".to_string(),
            ));
        }
        Ok(WindowParams { n, k, m, windows })
    }

    pub fn from_system(params: &SystemParams, mode: BoundMode) -> WindowParams {
        let windows = match mode {
            BoundMode::SingleWindow => 1,
            BoundMode::MultiWindow => params.eta_max(),
        };
        WindowParams {
            n: params.n(),
            k: params.k(),
            m: params.m(),
            windows,
        }
    }

    /// Components further apart than this cannot collide: E*m - 1.
    fn reach(&self) -> u128 {
        u128::from(self.windows) * u128::from(self.m) - 1
    }

    /// Residues within reach of a fixed component, capped at n.
    fn window_size(&self) -> u128 {
        (2 * self.reach() + 1).min(u128::from(self.n))
    }

    /// Exact collision probability (window_size / n)^k.
    pub fn analytic_collision(&self) -> BigRational {
        let num = Pow::pow(&BigUint::from(self.window_size()), self.k);
        let den = Pow::pow(&BigUint::from(self.n), self.k);
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    /// CSV-safe parameter label (no commas).
    pub fn label(&self) -> String {
        format!(
            "n={} k={} m={} windows={}",
            self.n, self.k, self.m, self.windows
        )
    }
}

fn within_reach(a: u64, b: u64, n: u64, reach: u128) -> bool {
    let d = u128::from(if b >= a { b - a } else { n - a + b });
    d <= reach || u128::from(n) - d <= reach
}

fn keys_collide(z: &[u64], z_other: &[u64], n: u64, reach: u128) -> bool {
    z.iter()
        .zip(z_other)
        .all(|(&a, &b)| within_reach(a, b, n, reach))
}

/// Draws independent key pairs and counts how often every component of the
/// difference lands within window reach.
pub fn collision_probability_mc(
    window: &WindowParams,
    trials: u64,
    rng: &RandomSource,
) -> Result<CollisionEstimate, AttackError> {
    if trials < MIN_TRIALS {
        return Err(AttackError::TooFewTrials {
            trials,
            min: MIN_TRIALS,
        });
    }
    let analytic = window
        .analytic_collision()
        .to_f64()
        .expect("probability fits f64");
    if analytic * (trials as f64) < 10.0 {
        return Err(AttackError::RareEvent {
            analytic,
            expected_hits: analytic * trials as f64,
            trials,
        });
    }

    let (n, k, reach) = (window.n, window.k, window.reach());
    let hits = parallel_hits(trials, rng, |r| {
        let mut collide = true;
        for _ in 0..k {
            let a = r.below(n);
            let b = r.below(n);
            collide &= within_reach(a, b, n, reach);
        }
        collide
    });
    Ok(CollisionEstimate::two_sided(trials, hits, analytic))
}

/// An exhaustively counted probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactProbability {
    pub hits: u128,
    pub total: u128,
    pub probability: BigRational,
}

/// Counts the collision event over every ordered key pair.
pub fn collision_probability_exhaustive(
    window: &WindowParams,
    search_budget: u64,
) -> Result<ExactProbability, AttackError> {
    let total = checked_power(window.n, 2 * window.k).ok_or(AttackError::BudgetExceeded {
        needed: u128::MAX,
        budget: u128::from(search_budget),
    })?;
    if total > u128::from(search_budget) {
        return Err(AttackError::BudgetExceeded {
            needed: total,
            budget: u128::from(search_budget),
        });
    }
    let k = window.k as usize;
    let reach = window.reach();
    let mut odo = Odometer::new(2 * k, window.n);
    let mut hits: u128 = 0;
    loop {
        let d = odo.digits();
        if keys_collide(&d[..k], &d[k..], window.n, reach) {
            hits += 1;
        }
        if !odo.step() {
            break;
        }
    }
    Ok(ExactProbability {
        hits,
        total,
        probability: BigRational::new(BigInt::from(hits), BigInt::from(total)),
    })
}

fn parallel_hits(
    trials: u64,
    rng: &RandomSource,
    per_trial: impl Fn(&mut RandomSource) -> bool + Sync,
) -> u64 {
    let batches = trials.div_ceil(BATCH);
    (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.fork(b);
            let count = BATCH.min(trials - b * BATCH);
            (0..count).filter(|_| per_trial(&mut r)).count() as u64
        })
        .sum()
}

/// Union bound on per-channel pad failure:
/// W_eff * ((2*E*m - 1)^k / n^k + E / 2^m). Can exceed 1.
pub fn pad_failure_bound(params: &SystemParams, mode: BoundMode) -> BigRational {
    advantage_bound(params, mode).bound / BigRational::from_integer(BigInt::from(2))
}

/// Pad-failure frequencies for the distinguished channel (lowest pair,
/// slot 0), with the contributing events counted separately.
#[derive(Debug, Clone, PartialEq)]
pub struct PadFailureReport {
    pub trials: u64,
    /// Some other channel's key sits within window reach.
    pub window_hits: u64,
    /// A derived keystream of another channel coincides with one of ours.
    pub cross_coincidence_hits: u64,
    /// Two different windows of the distinguished channel itself coincide
    /// (possible only with eta_max > 1; reported, not counted as failure).
    pub self_coincidence_hits: u64,
    /// window OR cross-channel coincidence, the bounded event.
    pub failure_hits: u64,
    /// The union bound, for reference (may exceed 1).
    pub union_bound: f64,
    /// failure_hits judged against the union bound.
    pub estimate: CollisionEstimate,
}

impl PadFailureReport {
    pub fn csv_row(&self, params: &SystemParams) -> String {
        let label = format!(
            "n={} k={} m={} eta_max={} devices={}",
            params.n(),
            params.k(),
            params.m(),
            params.eta_max(),
            params.devices(),
        );
        self.estimate.csv_row("otp-failure", &label)
    }
}

/// Per trial: provision every (pair, slot) channel with a fresh key under a
/// fresh matrix, then test the distinguished channel against all others.
pub fn one_time_pad_failure_mc(
    params: &SystemParams,
    trials: u64,
    rng: &RandomSource,
) -> Result<PadFailureReport, AttackError> {
    if trials < MIN_TRIALS {
        return Err(AttackError::TooFewTrials {
            trials,
            min: MIN_TRIALS,
        });
    }
    let channels: u128 = params.total_keys();
    let eta = u128::from(params.eta_max());
    let per_trial_work = u128::from(params.k()) * u128::from(params.n())
        + channels * eta * (eta + 1) * u128::from(params.m());
    if per_trial_work.saturating_mul(u128::from(trials)) > 1 << 40 {
        return Err(AttackError::BudgetExceeded {
            needed: per_trial_work.saturating_mul(u128::from(trials)),
            budget: 1 << 40,
        });
    }

    let (n, k, m) = (params.n(), params.k(), params.m());
    let eta_max = params.eta_max();
    let reach = u128::from(eta_max) * u128::from(m) - 1;
    let spec = MatrixSpec::new(k, n).expect("valid shape");
    let channel_pairs: Vec<Pair> = params
        .pairs()
        .flat_map(|p| (0..params.lambda_for(p)).map(move |_| p))
        .collect();

    let batches = trials.div_ceil(BATCH);
    let totals = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.fork(b);
            let count = BATCH.min(trials - b * BATCH);
            let mut acc = [0u64; 4];
            for _ in 0..count {
                let matrix = RandomMatrix::generate(spec, &mut r);
                let keys: Vec<PairwiseKey> = channel_pairs
                    .iter()
                    .map(|&p| PairwiseKey::generate(n, k, p, 0, &mut r))
                    .collect();

                let own: Vec<Bits> = (1..=eta_max)
                    .map(|w| derive_keystream(&matrix, &keys[0], m, w).unwrap().bits)
                    .collect();
                let window = keys[1..]
                    .iter()
                    .any(|key| keys_collide(keys[0].values(), key.values(), n, reach));
                let cross = keys[1..].iter().any(|key| {
                    (1..=eta_max).any(|w| {
                        let ks = derive_keystream(&matrix, key, m, w).unwrap().bits;
                        own.iter().any(|o| *o == ks)
                    })
                });
                let selfhit = (0..own.len())
                    .any(|i| (i + 1..own.len()).any(|j| own[i] == own[j]));

                acc[0] += u64::from(window);
                acc[1] += u64::from(cross);
                acc[2] += u64::from(selfhit);
                acc[3] += u64::from(window || cross);
            }
            acc
        })
        .reduce(
            || [0u64; 4],
            |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]],
        );

    let bound = pad_failure_bound(params, BoundMode::MultiWindow)
        .to_f64()
        .expect("bound fits f64");
    Ok(PadFailureReport {
        trials,
        window_hits: totals[0],
        cross_coincidence_hits: totals[1],
        self_coincidence_hits: totals[2],
        failure_hits: totals[3],
        union_bound: bound,
        estimate: CollisionEstimate::upper_bound(trials, totals[3], bound),
    })
}

/// Exact pad-failure probability by enumerating every key tuple; the
/// keystream coincidence part is resolved per tuple by GF(2) rank over the
/// matrix bits (each coincidence constraint is linear in the matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct PadFailureExact {
    pub channels: u64,
    pub tuples: u128,
    /// Probability of a window-reach overlap with some other channel.
    pub window_probability: BigRational,
    /// Window overlap OR keystream coincidence with some other channel.
    pub failure_probability: BigRational,
    pub union_bound: BigRational,
}

pub fn one_time_pad_failure_exhaustive(
    params: &SystemParams,
    search_budget: u64,
) -> Result<PadFailureExact, AttackError> {
    if params.eta_max() != 1 {
        return Err(AttackError::Unsupported(
            "exhaustive pad-failure enumeration handles single-window systems only",
        ));
    }
    let channels = u64::try_from(params.total_keys()).expect("desk scale");
    let (n, k, m) = (params.n(), params.k(), params.m());
    let digit_count = k
        .checked_mul(channels)
        .filter(|&d| d <= 64)
        .ok_or(AttackError::Unsupported("too many channels to enumerate"))?;
    let tuples = checked_power(n, digit_count).ok_or(AttackError::BudgetExceeded {
        needed: u128::MAX,
        budget: u128::from(search_budget),
    })?;
    if tuples > u128::from(search_budget) {
        return Err(AttackError::BudgetExceeded {
            needed: tuples,
            budget: u128::from(search_budget),
        });
    }
    let others = channels as usize - 1;
    let exponent = m.checked_mul(others as u64).filter(|&d| d <= 60).ok_or(
        AttackError::Unsupported("coincidence exponent too large to enumerate"),
    )?;
    if u128::from(k) * u128::from(n) > 1 << 12 {
        return Err(AttackError::Unsupported("matrix too large to rank per tuple"));
    }

    let reach = u128::from(m) - 1;
    let kus = k as usize;
    let words = ((k * n) as usize).div_ceil(64);
    let mut window_count: u128 = 0;
    // failure probability accumulates as <numerator> / (tuples * 2^exponent)
    let mut failure_num = BigInt::zero();
    let full = BigInt::one() << exponent;

    let mut odo = Odometer::new(digit_count as usize, n);
    let mut equations: Vec<Vec<u64>> = Vec::new();
    loop {
        let digits = odo.digits();
        let own = &digits[..kus];
        let window = (1..channels as usize)
            .any(|c| keys_collide(own, &digits[c * kus..(c + 1) * kus], n, reach));
        if window {
            window_count += 1;
            failure_num += &full;
        } else if others > 0 {
            // inclusion-exclusion over nonempty subsets of the other channels
            let mut tuple_num: i128 = 0;
            for subset in 1u32..(1 << others) {
                equations.clear();
                for c in 0..others {
                    if subset & (1 << c) == 0 {
                        continue;
                    }
                    let other = &digits[(c + 1) * kus..(c + 2) * kus];
                    for i in 0..m {
                        let mut eq = vec![0u64; words];
                        for (j, (&a, &b)) in own.iter().zip(other).enumerate() {
                            toggle(&mut eq, j as u64 * n + (a + i) % n);
                            toggle(&mut eq, j as u64 * n + (b + i) % n);
                        }
                        equations.push(eq);
                    }
                }
                let rank = gf2_rank(&mut equations);
                let term = 1i128 << (exponent - u64::from(rank));
                if subset.count_ones() % 2 == 1 {
                    tuple_num += term;
                } else {
                    tuple_num -= term;
                }
            }
            failure_num += BigInt::from(tuple_num);
        }
        if !odo.step() {
            break;
        }
    }

    let denom = BigInt::from(tuples) << exponent;
    Ok(PadFailureExact {
        channels,
        tuples,
        window_probability: BigRational::new(
            BigInt::from(window_count),
            BigInt::from(tuples),
        ),
        failure_probability: BigRational::new(failure_num, denom),
        union_bound: pad_failure_bound(params, BoundMode::SingleWindow),
    })
}

fn toggle(eq: &mut [u64], bit: u64) {
    eq[(bit / 64) as usize] ^= 1 << (bit % 64);
}

/// Rank of a GF(2) system; consumes the rows in place.
fn gf2_rank(rows: &mut [Vec<u64>]) -> u32 {
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    for row in rows.iter() {
        let mut r = row.clone();
        loop {
            let lead = match leading_bit(&r) {
                Some(l) => l,
                None => break,
            };
            match basis.iter().find(|(bl, _)| *bl == lead) {
                Some((_, b)) => {
                    for (w, bw) in r.iter_mut().zip(b) {
                        *w ^= bw;
                    }
                }
                None => {
                    basis.push((lead, r));
                    break;
                }
            }
        }
    }
    basis.len() as u32
}

fn leading_bit(r: &[u64]) -> Option<usize> {
    for (i, w) in r.iter().enumerate().rev() {
        if *w != 0 {
            return Some(i * 64 + 63 - w.leading_zeros() as usize);
        }
    }
    None
}

/// Bit balance of keystreams sampled through the real derivation path.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyReport {
    pub sample_bits: u64,
    pub ones: u64,
    pub frequency: f64,
    /// (1 - (1 - 2*bias)^k) / 2, the closed-form keystream bit probability.
    pub predicted: f64,
    pub z_score: Option<f64>,
    pub verdict: Verdict,
}

impl FrequencyReport {
    pub fn csv_row(&self, spec: MatrixSpec) -> String {
        let label = format!("n={} k={} bias={}", spec.n(), spec.k(), spec.bias());
        csv_row(
            "frequency",
            &label,
            u128::from(self.sample_bits),
            self.frequency,
            self.predicted,
            self.z_score,
            self.verdict,
        )
    }
}

/// Samples keystream bits in windows of at most min(n, 4096) bits, one
/// fresh matrix and key per window. Within one window every bit XORs a
/// disjoint set of matrix cells, so the sample is exactly independent
/// Bernoulli draws of the predicted probability.
pub fn keystream_frequency_test(
    spec: MatrixSpec,
    sample_bits: u64,
    rng: &RandomSource,
) -> Result<FrequencyReport, AttackError> {
    if sample_bits < MIN_SAMPLE_BITS {
        return Err(AttackError::TooFewTrials {
            trials: sample_bits,
            min: MIN_SAMPLE_BITS,
        });
    }
    let chunk = spec.n().min(4096);
    let chunks = sample_bits.div_ceil(chunk);
    let ones: u64 = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i);
            let matrix = RandomMatrix::generate(spec, &mut r);
            let key = PairwiseKey::generate(spec.n(), spec.k(), Pair::new(0, 1).unwrap(), 0, &mut r);
            let len = chunk.min(sample_bits - i * chunk);
            derive_keystream(&matrix, &key, len, 1)
                .expect("shape checked")
                .bits
                .count_ones()
        })
        .sum();

    let base = 1.0 - 2.0 * spec.bias();
    let parity = if base == 1.0 {
        1.0
    } else if base == -1.0 {
        if spec.k() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    } else {
        base.powi(i32::try_from(spec.k().min(1 << 30)).expect("capped"))
    };
    let predicted = (1.0 - parity) / 2.0;
    let frequency = ones as f64 / sample_bits as f64;
    let var = predicted * (1.0 - predicted) / sample_bits as f64;
    let (z_score, verdict) = if var > 0.0 {
        let z = (frequency - predicted) / var.sqrt();
        (Some(z), Verdict::from_z(z))
    } else if frequency == predicted {
        (None, Verdict::Pass)
    } else {
        (None, Verdict::HardFail)
    };
    Ok(FrequencyReport {
        sample_bits,
        ones,
        frequency,
        predicted,
        z_score,
        verdict,
    })
}

/// A two-message distinguishing game at micro scale: the target pair
/// transmits one of two candidate messages, every other pair transmits a
/// message the adversary knows, and the adversary sees all ciphertexts.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroGame {
    params: SystemParams,
    target: Pair,
    message_zero: Bits,
    message_one: Bits,
    /// Known plaintext per non-target pair, in `params.pairs()` order.
    bystanders: Vec<(Pair, Bits)>,
}

impl MicroGame {
    pub fn new(
        params: SystemParams,
        target: Pair,
        message_zero: Bits,
        message_one: Bits,
        bystanders: Vec<(Pair, Bits)>,
    ) -> Result<Self, AttackError> {
        if target.l() >= params.devices() {
            return Err(AttackError::BadLayout(format!(
                "target {target} is outside the fleet"
            )));
        }
        for (label, msg) in [("zero", &message_zero), ("one", &message_one)] {
            if msg.len() != params.m() {
                return Err(AttackError::BadLayout(format!(
                    "candidate message {label} is {} bits, need m={}",
                    msg.len(),
                    params.m()
                )));
            }
        }
        let mut expected: Vec<Pair> = params.pairs().filter(|&p| p != target).collect();
        let mut sorted = bystanders.clone();
        sorted.sort_by_key(|(p, _)| *p);
        if sorted.iter().map(|(p, _)| *p).collect::<Vec<_>>() != expected {
            expected.truncate(8);
            return Err(AttackError::BadLayout(format!(
                "bystanders must cover every non-target pair exactly once ({expected:?}...)"
            )));
        }
        for (pair, msg) in &sorted {
            if msg.len() != params.m() {
                return Err(AttackError::BadLayout(format!(
                    "bystander {pair} message is {} bits, need m={}",
                    msg.len(),
                    params.m()
                )));
            }
        }
        Ok(MicroGame {
            params,
            target,
            message_zero,
            message_one,
            bystanders: sorted,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }
}

/// The exact distinguishing advantage next to its analytic bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GameResult {
    /// Total variation distance between the two transcript distributions:
    /// the advantage of the best possible adversary, exactly.
    pub advantage: BigRational,
    pub advantage_f64: f64,
    /// The multi-window advantage bound for these parameters.
    pub bound: BigRational,
    pub bound_log2: f64,
    pub bound_vacuous: bool,
    /// advantage <= bound held on this instance.
    pub dominated: bool,
    /// Matrix/key combinations enumerated.
    pub enumerated: u128,
}

impl GameResult {
    pub fn csv_row(&self, params: &SystemParams) -> String {
        let label = format!(
            "n={} k={} m={} devices={}",
            params.n(),
            params.k(),
            params.m(),
            params.devices(),
        );
        let verdict = if self.dominated {
            Verdict::Pass
        } else {
            Verdict::HardFail
        };
        csv_row(
            "bayes-game",
            &label,
            self.enumerated,
            self.advantage_f64,
            self.bound.to_f64().unwrap_or(f64::INFINITY),
            None,
            verdict,
        )
    }
}

fn bits_index(bits: &Bits) -> u64 {
    bits.as_bytes()
        .iter()
        .rev()
        .fold(0u64, |acc, &b| (acc << 8) | u64::from(b))
}

/// Computes the exact optimal-distinguisher advantage by enumerating every
/// matrix and every joint key assignment, marginalizing both out of the
/// transcript distribution under each candidate message.
pub fn exact_bayes_advantage(game: &MicroGame) -> Result<GameResult, AttackError> {
    let params = &game.params;
    let (n, k, m) = (params.n(), params.k(), params.m());
    let pair_count = params.pair_count();
    let kn = k * n;
    let keyspace = checked_power(n, k)
        .filter(|&s| s <= 1 << 30)
        .ok_or(AttackError::BudgetExceeded {
            needed: u128::MAX,
            budget: GAME_ENUMERATION_BUDGET,
        })?;
    let need = (kn <= 100)
        .then(|| checked_power(2, kn))
        .flatten()
        .and_then(|a| {
            checked_power(keyspace as u64, pair_count).and_then(|kp| a.checked_mul(kp))
        })
        .ok_or(AttackError::BudgetExceeded {
            needed: u128::MAX,
            budget: GAME_ENUMERATION_BUDGET,
        })?;
    if need > GAME_ENUMERATION_BUDGET {
        return Err(AttackError::BudgetExceeded {
            needed: need,
            budget: GAME_ENUMERATION_BUDGET,
        });
    }
    if m * pair_count > 20 {
        return Err(AttackError::BudgetExceeded {
            needed: u128::from(m * pair_count),
            budget: 20,
        });
    }

    let spec = MatrixSpec::new(k, n)?;
    let t_count = 1u64 << (m * pair_count);
    let t_mask = (1u64 << m) - 1;
    let target_pos = params
        .pairs()
        .position(|p| p == game.target)
        .expect("target validated");
    // known-message index per pair position; the target slot gets swapped
    // between the two hypotheses
    let mut known: Vec<u64> = Vec::with_capacity(pair_count as usize);
    let mut by_iter = game.bystanders.iter();
    for (pos, _) in params.pairs().enumerate() {
        if pos == target_pos {
            known.push(0);
        } else {
            known.push(bits_index(&by_iter.next().expect("covered").1));
        }
    }
    let m0 = bits_index(&game.message_zero);
    let m1 = bits_index(&game.message_one);

    let mut sum0 = vec![0i128; t_count as usize];
    let mut sum1 = vec![0i128; t_count as usize];
    let mut table = vec![0u64; 1 << m];
    let matrix_bytes = ((kn + 7) / 8) as usize;
    for alpha in 0u64..(1 << kn) {
        let bits = Bits::from_bytes(alpha.to_le_bytes()[..matrix_bytes].to_vec(), kn)
            .expect("pad bits zero");
        let matrix = RandomMatrix::from_parts(spec, bits).expect("shape matches");
        table.iter_mut().for_each(|c| *c = 0);
        let mut odo = Odometer::new(k as usize, n);
        loop {
            let key = PairwiseKey::new(Pair::new(0, 1).unwrap(), 0, n, odo.digits().to_vec())?;
            let ks = derive_keystream(&matrix, &key, m, 1)?;
            table[bits_index(&ks.bits) as usize] += 1;
            if !odo.step() {
                break;
            }
        }
        for t in 0..t_count {
            let mut prod0: u64 = 1;
            let mut prod1: u64 = 1;
            for (pos, &msg) in known.iter().enumerate() {
                let c = (t >> (pos as u64 * m)) & t_mask;
                if pos == target_pos {
                    prod0 *= table[(c ^ m0) as usize];
                    prod1 *= table[(c ^ m1) as usize];
                } else {
                    let f = table[(c ^ msg) as usize];
                    prod0 *= f;
                    prod1 *= f;
                }
                if prod0 == 0 && prod1 == 0 {
                    break;
                }
            }
            sum0[t as usize] += i128::from(prod0);
            sum1[t as usize] += i128::from(prod1);
        }
    }

    let spread: u128 = sum0
        .iter()
        .zip(&sum1)
        .map(|(a, b)| a.abs_diff(*b))
        .sum();
    let norm = BigInt::from(2u8)
        * (BigInt::one() << kn)
        * BigInt::from(checked_power(keyspace as u64, pair_count).expect("budgeted"));
    let advantage = BigRational::new(BigInt::from(spread), norm);

    let report = advantage_bound(params, BoundMode::MultiWindow);
    let dominated = advantage <= report.bound;
    let advantage_f64 = if advantage.is_zero() {
        0.0
    } else {
        advantage.to_f64().unwrap_or(f64::NAN)
    };
    Ok(GameResult {
        advantage,
        advantage_f64,
        bound: report.bound.clone(),
        bound_log2: report.log2_bound,
        bound_vacuous: report.vacuous,
        dominated,
        enumerated: need,
    })
}
