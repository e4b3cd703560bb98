//! Benchmark harnesses: the avalanche measurement and runtime scaling.
//!
//! Avalanche comes in two variants because a pure XOR pad has no diffusion:
//! flipping one plaintext bit under the same key and window flips exactly
//! that ciphertext bit (fraction 1/m, by construction). The ~50% figure the
//! scheme is known for appears once the re-encryption uses a fresh keystream
//! window, so both numbers are reported side by side.
//!
//! Runtime rows are wall-clock medians with an auto-calibrated inner loop
//! (each sample batch runs at least ~2ms to sit above timer noise) and one
//! discarded warm-up batch. Absolute times are hardware-specific; the
//! interesting outputs are the scaling ratios and the linear fits.

use crate::analytics::format_sig;
use crate::attack::Verdict;
use crate::otp::{decrypt, encrypt, MatrixSpec, OtpError, PairwiseKey, RandomMatrix};
use crate::params::{validate_params, Pair, ParamError};
use crate::rng::RandomSource;
use std::time::{Duration, Instant};

/// Fewest message bits for a statistically stable avalanche figure.
pub const MIN_AVALANCHE_BITS: u64 = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("avalanche needs m >= {min} bits, got {m}")]
    MessageTooShort { m: u64, min: u64 },
    #[error("zero fraction {value} is outside [0, 1]")]
    BadFraction { value: f64 },
    #[error("need at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Otp(#[from] OtpError),
}

/// Avalanche figures for one plaintext pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternStats {
    /// Fraction of zero bits in the generated plaintexts.
    pub zero_fraction: f64,
    /// Mean flipped-ciphertext-bit fraction, same key and window: 1/m.
    pub same_window_fraction: f64,
    /// Mean flipped fraction when the re-encryption uses the next window.
    pub fresh_window_fraction: f64,
    /// Sample variance of the per-trial fresh-window flip counts.
    pub count_variance: f64,
    /// Distance of that variance from binomial m/4, in sigmas.
    pub variance_z: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvalancheReport {
    pub n: u64,
    pub k: u64,
    pub m: u64,
    pub trials: u64,
    /// Grand mean of the fresh-window flip fraction over all patterns.
    pub mean_flip_fraction: f64,
    pub patterns: Vec<PatternStats>,
}

impl AvalancheReport {
    pub const CSV_HEADER: &'static str =
        "zero_fraction,trials,same_window_fraction,fresh_window_fraction,variance_z,verdict";

    pub fn csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        for p in &self.patterns {
            out.push('\n');
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                format_sig(p.zero_fraction, 10),
                self.trials,
                format_sig(p.same_window_fraction, 10),
                format_sig(p.fresh_window_fraction, 10),
                p.variance_z.map(|z| format_sig(z, 10)).unwrap_or_default(),
                p.verdict,
            ));
        }
        out
    }
}

/// Encrypts each generated plaintext, flips its first bit, and re-encrypts
/// twice: once under the same key and window, once under the next window of
/// the same key. One fresh key per trial; one matrix for the whole run.
pub fn avalanche_bench(
    n: u64,
    k: u64,
    m: u64,
    zero_fractions: &[f64],
    trials: u64,
    rng: &mut RandomSource,
) -> Result<AvalancheReport, BenchError> {
    if m < MIN_AVALANCHE_BITS {
        return Err(BenchError::MessageTooShort {
            m,
            min: MIN_AVALANCHE_BITS,
        });
    }
    if zero_fractions.is_empty() {
        return Err(BenchError::Empty("zero-fraction pattern"));
    }
    if trials == 0 {
        return Err(BenchError::Empty("trial"));
    }
    for &zf in zero_fractions {
        if !(0.0..=1.0).contains(&zf) {
            return Err(BenchError::BadFraction { value: zf });
        }
    }
    // window 2 must be in budget, the fresh-window variant encrypts there
    let report = validate_params(n, k, m, 2);
    if !report.is_valid() {
        return Err(BenchError::Params(ParamError::Invalid(report)));
    }

    let matrix = RandomMatrix::generate(MatrixSpec::new(k, n)?, rng);
    let pair = Pair::new(0, 1).expect("fixed pair");
    let mut patterns = Vec::with_capacity(zero_fractions.len());
    let mut grand_sum = 0.0;
    for &zf in zero_fractions {
        let mut same_sum = 0.0;
        let mut fresh_counts = Vec::with_capacity(trials as usize);
        for _ in 0..trials {
            let key = PairwiseKey::generate(n, k, pair, 0, rng);
            let msg = rng.bits(m, 1.0 - zf);
            let baseline = encrypt(&matrix, &key, &msg, 1)?;
            let mut flipped = msg;
            flipped.set(0, !flipped.get(0));
            let same = encrypt(&matrix, &key, &flipped, 1)?;
            let fresh = encrypt(&matrix, &key, &flipped, 2)?;
            same_sum += baseline.payload.hamming(&same.payload) as f64 / m as f64;
            fresh_counts.push(baseline.payload.hamming(&fresh.payload) as f64);
        }
        let fresh_mean = fresh_counts.iter().sum::<f64>() / trials as f64;
        let count_variance = if trials > 1 {
            fresh_counts
                .iter()
                .map(|c| (c - fresh_mean).powi(2))
                .sum::<f64>()
                / (trials - 1) as f64
        } else {
            0.0
        };
        // binomial(m, 1/2) has count variance m/4; the sample variance of
        // normal-ish counts scatters with sd ~ true_var * sqrt(2/(T-1))
        let expected = m as f64 / 4.0;
        let (variance_z, verdict) = if trials > 1 {
            let sigma = expected * (2.0 / (trials - 1) as f64).sqrt();
            let z = (count_variance - expected) / sigma;
            (Some(z), Verdict::from_z(z))
        } else {
            (None, Verdict::Pass)
        };
        let fresh_fraction = fresh_mean / m as f64;
        grand_sum += fresh_fraction;
        patterns.push(PatternStats {
            zero_fraction: zf,
            same_window_fraction: same_sum / trials as f64,
            fresh_window_fraction: fresh_fraction,
            count_variance,
            variance_z,
            verdict,
        });
    }
    Ok(AvalancheReport {
        n,
        k,
        m,
        trials,
        mean_flip_fraction: grand_sum / zero_fractions.len() as f64,
        patterns,
    })
}

/// Timing for one (m, k) grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeRow {
    pub m: u64,
    pub k: u64,
    pub encrypt_seconds: f64,
    pub decrypt_seconds: f64,
    pub throughput_bits_per_sec: f64,
}

/// Ordinary least squares y = slope*x + intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeReport {
    pub n: u64,
    pub repetitions: u32,
    pub rows: Vec<RuntimeRow>,
    pub fit_vs_m: LinearFit,
    pub fit_vs_k: LinearFit,
    /// Fit against the model time = a*(m*k) + b.
    pub fit_vs_mk: LinearFit,
}

impl RuntimeReport {
    pub const ROWS_CSV_HEADER: &'static str =
        "m,k,encrypt_seconds,decrypt_seconds,throughput_bits_per_sec";
    pub const FITS_CSV_HEADER: &'static str = "fit,slope,intercept,r_squared";

    pub fn rows_csv(&self) -> String {
        let mut out = String::from(Self::ROWS_CSV_HEADER);
        for r in &self.rows {
            out.push('\n');
            out.push_str(&format!(
                "{},{},{},{},{}",
                r.m,
                r.k,
                format_sig(r.encrypt_seconds, 6),
                format_sig(r.decrypt_seconds, 6),
                format_sig(r.throughput_bits_per_sec, 6),
            ));
        }
        out
    }

    pub fn fits_csv(&self) -> String {
        let mut out = String::from(Self::FITS_CSV_HEADER);
        for (name, fit) in [
            ("vs_m", self.fit_vs_m),
            ("vs_k", self.fit_vs_k),
            ("vs_mk", self.fit_vs_mk),
        ] {
            out.push('\n');
            out.push_str(&format!(
                "{},{},{},{}",
                name,
                format_sig(fit.slope, 6),
                format_sig(fit.intercept, 6),
                format_sig(fit.r_squared, 6),
            ));
        }
        out
    }
}

/// Times encrypt and decrypt over the (m, k) grid at a fixed n. A warm-up
/// window per op is discarded; the reported figure is the median over
/// `repetitions` batches. Repetitions run sequentially.
pub fn runtime_bench(
    n: u64,
    grid: &[(u64, u64)],
    repetitions: u32,
    rng: &mut RandomSource,
) -> Result<RuntimeReport, BenchError> {
    if grid.is_empty() {
        return Err(BenchError::Empty("grid point"));
    }
    if repetitions == 0 {
        return Err(BenchError::Empty("repetition"));
    }
    for &(m, k) in grid {
        let report = validate_params(n, k, m, 1);
        if !report.is_valid() {
            return Err(BenchError::Params(ParamError::Invalid(report)));
        }
    }

    let pair = Pair::new(0, 1).expect("fixed pair");
    let mut rows = Vec::with_capacity(grid.len());
    for &(m, k) in grid {
        let matrix = RandomMatrix::generate(MatrixSpec::new(k, n)?, rng);
        let key = PairwiseKey::generate(n, k, pair, 0, rng);
        let msg = rng.bits(m, 0.5);
        let ct = encrypt(&matrix, &key, &msg, 1)?;

        let (encrypt_seconds, decrypt_seconds) = interleaved_medians(
            repetitions,
            &mut || {
                std::hint::black_box(encrypt(&matrix, &key, &msg, 1).expect("validated"));
            },
            &mut || {
                std::hint::black_box(decrypt(&matrix, &key, &ct).expect("validated"));
            },
        );
        rows.push(RuntimeRow {
            m,
            k,
            encrypt_seconds,
            decrypt_seconds,
            throughput_bits_per_sec: m as f64 / encrypt_seconds,
        });
    }

    let times: Vec<f64> = rows.iter().map(|r| r.encrypt_seconds).collect();
    let ms: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let mks: Vec<f64> = rows.iter().map(|r| (r.m * r.k) as f64).collect();
    Ok(RuntimeReport {
        n,
        repetitions,
        fit_vs_m: linear_fit(&ms, &times),
        fit_vs_k: linear_fit(&ks, &times),
        fit_vs_mk: linear_fit(&mks, &times),
        rows,
    })
}

/// Median per-op seconds for two same-cost operations. One batch size is
/// calibrated to >= ~2ms, a 50ms warm-up window absorbs cold caches and
/// clock ramp, then batches of `a` and `b` alternate so load drift lands on
/// both medians equally.
fn interleaved_medians(
    repetitions: u32,
    a: &mut dyn FnMut(),
    b: &mut dyn FnMut(),
) -> (f64, f64) {
    let floor = Duration::from_millis(2);
    let mut iters: u32 = 1;
    loop {
        let start = Instant::now();
        for _ in 0..iters {
            a();
        }
        if start.elapsed() >= floor || iters >= 1 << 22 {
            break;
        }
        iters *= 2;
    }
    let batch = |op: &mut dyn FnMut()| {
        let start = Instant::now();
        for _ in 0..iters {
            op();
        }
        start.elapsed().as_secs_f64() / f64::from(iters)
    };
    let warm_until = Instant::now() + Duration::from_millis(50);
    while Instant::now() < warm_until {
        batch(a);
        batch(b);
    }
    let mut samples_a = Vec::with_capacity(repetitions as usize);
    let mut samples_b = Vec::with_capacity(repetitions as usize);
    for _ in 0..repetitions {
        samples_a.push(batch(a));
        samples_b.push(batch(b));
    }
    (median(&mut samples_a), median(&mut samples_b))
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|x, y| x.total_cmp(y));
    samples[samples.len() / 2]
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let count = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / count;
    let my = ys.iter().sum::<f64>() / count;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        // a degenerate axis carries no slope information
        return LinearFit {
            slope: 0.0,
            intercept: my,
            r_squared: 1.0,
        };
    }
    let slope = sxy / sxx;
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared: if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_window_flip_touches_exactly_one_bit() {
        let mut rng = RandomSource::seeded(70);
        let report =
            avalanche_bench(1 << 17, 5, 10_000, &[0.5], 10, &mut rng).unwrap();
        let p = &report.patterns[0];
        assert!(
            (p.same_window_fraction - 1.0 / 10_000.0).abs() < 1e-12,
            "same-window fraction {}",
            p.same_window_fraction
        );
    }

    #[test]
    fn fresh_window_flip_fraction_is_near_half() {
        let mut rng = RandomSource::seeded(71);
        let report = avalanche_bench(
            1 << 17,
            5,
            10_000,
            &[0.01, 0.5, 0.99],
            30,
            &mut rng,
        )
        .unwrap();
        for p in &report.patterns {
            assert!(
                (p.fresh_window_fraction - 0.5).abs() < 0.01,
                "pattern {} fraction {}",
                p.zero_fraction,
                p.fresh_window_fraction
            );
            assert!(!p.verdict.is_hard_fail(), "variance z {:?}", p.variance_z);
        }
        assert!((report.mean_flip_fraction - 0.5).abs() < 0.005);
        assert_eq!(report.trials, 30);
    }

    #[test]
    fn avalanche_rejects_bad_requests() {
        let mut rng = RandomSource::seeded(72);
        assert!(matches!(
            avalanche_bench(1 << 17, 5, 100, &[0.5], 5, &mut rng),
            Err(BenchError::MessageTooShort { .. })
        ));
        assert!(matches!(
            avalanche_bench(1 << 17, 5, 10_000, &[1.5], 5, &mut rng),
            Err(BenchError::BadFraction { .. })
        ));
        assert!(matches!(
            avalanche_bench(1 << 17, 5, 10_000, &[], 5, &mut rng),
            Err(BenchError::Empty(_))
        ));
        assert!(matches!(
            avalanche_bench(1 << 17, 5, 10_000, &[0.5], 0, &mut rng),
            Err(BenchError::Empty(_))
        ));
        // window 2 must fit: 2m > half(n) here
        assert!(matches!(
            avalanche_bench(1 << 15, 5, 10_000, &[0.5], 5, &mut rng),
            Err(BenchError::Params(_))
        ));
    }

    #[test]
    fn avalanche_csv_has_a_row_per_pattern() {
        let mut rng = RandomSource::seeded(73);
        let report =
            avalanche_bench(1 << 17, 3, 10_000, &[0.25, 0.75], 5, &mut rng).unwrap();
        let csv = report.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], AvalancheReport::CSV_HEADER);
        assert!(lines[1].starts_with("0.25,5,"));
        assert!(lines[2].starts_with("0.75,5,"));
    }

    #[test]
    fn runtime_rows_scale_and_fit() {
        let mut rng = RandomSource::seeded(74);
        let grid = [(1_000, 10), (2_000, 10), (4_000, 10), (2_000, 13)];
        let report = runtime_bench(1 << 15, &grid, 3, &mut rng).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert!(row.encrypt_seconds > 0.0);
            assert!(row.decrypt_seconds > 0.0);
            let expected = row.m as f64 / row.encrypt_seconds;
            assert!((row.throughput_bits_per_sec - expected).abs() < 1e-6);
            // same code path both directions; generous slack for CI noise
            let ratio = row.encrypt_seconds / row.decrypt_seconds;
            assert!(ratio > 0.5 && ratio < 2.0, "encrypt/decrypt ratio {ratio}");
        }
        assert!(report.fit_vs_mk.slope > 0.0);
        assert!(report.fit_vs_mk.r_squared > 0.5);

        let rows_csv = report.rows_csv();
        assert_eq!(rows_csv.lines().count(), 5);
        assert!(rows_csv.starts_with(RuntimeReport::ROWS_CSV_HEADER));
        let fits_csv = report.fits_csv();
        assert_eq!(fits_csv.lines().count(), 4);
        assert!(fits_csv.lines().nth(3).unwrap().starts_with("vs_mk,"));
    }

    #[test]
    fn runtime_rejects_empty_and_invalid_grids() {
        let mut rng = RandomSource::seeded(75);
        assert!(matches!(
            runtime_bench(1 << 15, &[], 3, &mut rng),
            Err(BenchError::Empty(_))
        ));
        assert!(matches!(
            runtime_bench(1 << 15, &[(1_000, 10)], 0, &mut rng),
            Err(BenchError::Empty(_))
        ));
        // m beyond the single-window budget
        assert!(matches!(
            runtime_bench(64, &[(100, 10)], 3, &mut rng),
            Err(BenchError::Params(_))
        ));
    }

    #[test]
    fn linear_fit_recovers_exact_lines() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let flat = linear_fit(&[2.0, 2.0], &[1.0, 3.0]);
        assert_eq!(flat.slope, 0.0);
        assert_eq!(flat.r_squared, 1.0);
    }
}
