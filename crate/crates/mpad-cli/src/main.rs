//! The `mpad` command: key material and frame files, closed-form analytics,
//! fleet mission scripts, adversary-side estimators, and benchmarks.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error, 3 a
//! statistical check returned a hard-fail verdict. `--seed` makes every
//! on-disk artifact byte-reproducible; runtime benchmark timings are the one
//! output that stays machine-dependent. MPAD_PRECISION_BITS overrides the
//! fixed-point precision of the analytic reports.

use clap::{Args, Parser, Subcommand};
use mpad::analytics::{
    advantage_bound, device_secrecy_gain, format_sig, key_recovery_cost, log2_rational,
    pair_capacity_bits, system_secrecy_gain, BoundMode, DEFAULT_PRECISION_BITS,
};
use mpad::attack::{
    brute_force_recover, collision_probability_exhaustive, collision_probability_mc,
    exact_bayes_advantage, keystream_frequency_test, one_time_pad_failure_exhaustive,
    one_time_pad_failure_mc, pad_failure_bound, KnownPlaintextPair, MicroGame, WindowParams,
    DEFAULT_SEARCH_BUDGET, ESTIMATOR_CSV_HEADER,
};
use mpad::bench::{avalanche_bench, runtime_bench};
use mpad::bits::Bits;
use mpad::otp::{
    decrypt, derive_keystream, encrypt, Ciphertext, MatrixSpec, PairwiseKey, RandomMatrix,
};
use mpad::params::{Pair, SystemParams};
use mpad::rng::RandomSource;
use mpad::scenario::run_scenario;
use mpad::wire;
use num_traits::ToPrimitive;
use std::error::Error;
use std::fs;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const HARD_FAIL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mpad",
    version,
    about = "Matrix-pad encryption toolkit: keys, frames, analytics, attacks, benchmarks"
)]
struct Cli {
    /// Seed all randomness; artifacts become byte-reproducible.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a shared matrix and a pairwise key for devices 0 and 1.
    Keygen(KeygenArgs),
    /// Encrypt a byte file into a ciphertext frame.
    Encrypt(EncryptArgs),
    /// Decrypt a ciphertext frame back into bytes.
    Decrypt(DecryptArgs),
    /// Closed-form security bound, secrecy gains, capacity, recovery cost.
    Analyze(AnalyzeArgs),
    /// Run a fleet mission script and audit its transcript.
    Simulate(SimulateArgs),
    /// Adversary-side searches and estimators.
    Attack {
        #[command(subcommand)]
        op: AttackOp,
    },
    /// Avalanche and runtime measurements.
    Bench {
        #[command(subcommand)]
        op: BenchOp,
    },
}

#[derive(Args)]
struct KeygenArgs {
    /// Matrix columns (group order).
    #[arg(long)]
    n: u64,
    /// Matrix rows (key components).
    #[arg(long)]
    k: u64,
    /// Directory for matrix.mpad and key.mpad.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncryptArgs {
    /// Matrix file.
    #[arg(long)]
    matrix: PathBuf,
    /// Pairwise key file.
    #[arg(long)]
    key: PathBuf,
    /// Plaintext bytes.
    #[arg(long)]
    input: PathBuf,
    /// Frame file to write.
    #[arg(long)]
    out: PathBuf,
    /// Keystream window to consume.
    #[arg(long, default_value_t = 1)]
    eta: u64,
}

#[derive(Args)]
struct DecryptArgs {
    /// Matrix file.
    #[arg(long)]
    matrix: PathBuf,
    /// Pairwise key file; must match the frame header.
    #[arg(long)]
    key: PathBuf,
    /// Frame file.
    #[arg(long)]
    input: PathBuf,
    /// Plaintext bytes to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    k: u64,
    /// Message bits per window.
    #[arg(long)]
    m: u64,
    /// Windows each key may serve.
    #[arg(long, default_value_t = 1)]
    eta_max: u64,
    /// Fleet size.
    #[arg(long, default_value_t = 2)]
    devices: u32,
    /// Keys per device pair.
    #[arg(long, default_value_t = 1)]
    lambda: u64,
    /// CSV destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Mission script file.
    #[arg(long)]
    script: PathBuf,
    /// Step report destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AttackOp {
    /// Exhaustive key search over seeded known-plaintext instances.
    BruteForce {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        /// Evidence window length in bits.
        #[arg(long)]
        m: u64,
        /// Instances to attack.
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        /// Largest key space the search will enumerate.
        #[arg(long, default_value_t = DEFAULT_SEARCH_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Key-collision probability, Monte Carlo or exhaustive.
    Collision {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        m: u64,
        /// Windows per key the adversary observes.
        #[arg(long, default_value_t = 1)]
        windows: u64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Enumerate every key pair instead of sampling.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value_t = DEFAULT_SEARCH_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pad-failure probability across a provisioned fleet.
    OtpFailure {
        #[arg(long, default_value_t = 3)]
        devices: u32,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        m: u64,
        #[arg(long, default_value_t = 1)]
        eta_max: u64,
        #[arg(long, default_value_t = 1)]
        lambda: u64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Enumerate every joint key assignment instead of sampling.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value_t = DEFAULT_SEARCH_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keystream bit balance against the closed form.
    Frequency {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        /// Probability of a 1 in each matrix cell.
        #[arg(long, default_value_t = 0.5)]
        bias: f64,
        /// Keystream bits to sample.
        #[arg(long, default_value_t = 1_000_000)]
        bits: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact optimal-distinguisher advantage on seeded micro layouts.
    Game {
        #[arg(long, default_value_t = 3)]
        devices: u32,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        m: u64,
        /// Distinct target/message/bystander layouts to evaluate.
        #[arg(long, default_value_t = 20)]
        layouts: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchOp {
    /// Flip diffusion, same-window and fresh-window variants.
    Avalanche {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        m: u64,
        #[arg(long, default_value_t = 20)]
        trials: u64,
        /// Plaintext zero-bit fractions to test.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.5,0.99")]
        zero_fractions: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encrypt/decrypt wall-clock scaling over an m:k grid.
    Runtime {
        #[arg(long)]
        n: u64,
        /// Grid points as m:k pairs.
        #[arg(long, value_delimiter = ',', default_value = "5000:10,10000:10,20000:10,10000:13")]
        grid: Vec<String>,
        #[arg(long, default_value_t = 15)]
        repetitions: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Box<dyn Error>> {
    let mut rng = match cli.seed {
        Some(seed) => RandomSource::seeded(seed),
        None => RandomSource::from_os(),
    };
    match cli.command {
        Cmd::Keygen(args) => keygen(&args, &mut rng),
        Cmd::Encrypt(args) => run_encrypt(&args),
        Cmd::Decrypt(args) => run_decrypt(&args),
        Cmd::Analyze(args) => analyze(&args),
        Cmd::Simulate(args) => simulate(&args),
        Cmd::Attack { op } => attack(op, &mut rng),
        Cmd::Bench { op } => bench(op, &mut rng),
    }
}

fn precision_bits() -> Result<u32, Box<dyn Error>> {
    match std::env::var("MPAD_PRECISION_BITS") {
        Ok(raw) => raw
            .parse::<u32>()
            .map_err(|_| format!("MPAD_PRECISION_BITS must be a bit count, got {raw:?}").into()),
        Err(_) => Ok(DEFAULT_PRECISION_BITS),
    }
}

/// Writes `text` plus a trailing newline to `out`, or prints it.
fn emit(out: Option<&Path>, text: &str) -> Result<(), Box<dyn Error>> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn read_matrix_file(path: &Path) -> Result<RandomMatrix, Box<dyn Error>> {
    Ok(wire::read_matrix(&mut BufReader::new(File::open(path)?))?)
}

fn read_key_file(path: &Path) -> Result<PairwiseKey, Box<dyn Error>> {
    Ok(wire::read_key(&mut BufReader::new(File::open(path)?))?)
}

fn keygen(args: &KeygenArgs, rng: &mut RandomSource) -> Result<u8, Box<dyn Error>> {
    let spec = MatrixSpec::new(args.k, args.n)?;
    let matrix = RandomMatrix::generate(spec, rng);
    let pair = Pair::new(0, 1).expect("distinct");
    let key = PairwiseKey::generate(args.n, args.k, pair, 0, rng);
    fs::create_dir_all(&args.out)?;

    let matrix_path = args.out.join("matrix.mpad");
    wire::write_matrix(&mut BufWriter::new(File::create(&matrix_path)?), &matrix)?;
    let key_path = args.out.join("key.mpad");
    wire::write_key(&mut BufWriter::new(File::create(&key_path)?), &key)?;

    println!("matrix: {} ({} x {})", matrix_path.display(), args.k, args.n);
    println!("key:    {} (pair {} slot 0)", key_path.display(), pair);
    Ok(0)
}

fn run_encrypt(args: &EncryptArgs) -> Result<u8, Box<dyn Error>> {
    let matrix = read_matrix_file(&args.matrix)?;
    let key = read_key_file(&args.key)?;
    let bytes = fs::read(&args.input)?;
    let m = bytes.len() as u64 * 8;
    let message = Bits::from_bytes(bytes, m)?;
    let ct = encrypt(&matrix, &key, &message, args.eta)?;
    wire::write_frame(&mut BufWriter::new(File::create(&args.out)?), &ct)?;
    println!(
        "frame: pair {} slot {} window {} carrying {m} bits -> {}",
        ct.pair,
        ct.slot,
        ct.eta,
        args.out.display()
    );
    Ok(0)
}

fn run_decrypt(args: &DecryptArgs) -> Result<u8, Box<dyn Error>> {
    let matrix = read_matrix_file(&args.matrix)?;
    let key = read_key_file(&args.key)?;
    let ct = wire::read_frame(&mut BufReader::new(File::open(&args.input)?))?;
    let plaintext = decrypt(&matrix, &key, &ct)?;
    let m = plaintext.len();
    fs::write(&args.out, plaintext.into_bytes())?;
    if m % 8 != 0 {
        println!("note: {m} bits packed LSB-first, final byte zero-padded");
    }
    println!("plaintext: {m} bits -> {}", args.out.display());
    Ok(0)
}

const ANALYZE_CSV_HEADER: &str = "n,k,m,eta_max,devices,lambda,\
    advantage_log2_single,advantage_log2_multi,vacuous,pad_failure_log2,\
    device_gain,system_gain,capacity_bits,capacity_bytes,\
    keyspace_log2,expected_trials_log2";

fn analyze(args: &AnalyzeArgs) -> Result<u8, Box<dyn Error>> {
    let precision = precision_bits()?;
    let params = SystemParams::uniform(
        args.n, args.k, args.m, args.eta_max, args.devices, args.lambda,
    )?;
    let single = advantage_bound(&params, BoundMode::SingleWindow);
    let multi = advantage_bound(&params, BoundMode::MultiWindow);
    let pad_log2 = log2_rational(&pad_failure_bound(&params, BoundMode::MultiWindow));
    let device = device_secrecy_gain(&params, 0, precision)?;
    let system = system_secrecy_gain(&params, precision);
    let pair = Pair::new(0, 1).expect("distinct");
    let capacity_bits = pair_capacity_bits(&params, pair)?;
    let cost = key_recovery_cost(args.n, args.k, args.m);

    // capacity divides into whole bytes except for the 1/8 tail of an odd m
    let whole = &capacity_bits / 8u8;
    let rem = (&capacity_bits % 8u8).to_u64().expect("below 8");
    let capacity_bytes = if rem == 0 {
        whole.to_string()
    } else {
        format!("{whole}.{}", trim_end_zeros(&format!("{:03}", rem * 125)))
    };

    let row = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        args.n,
        args.k,
        args.m,
        args.eta_max,
        args.devices,
        args.lambda,
        format_sig(single.log2_bound, 10),
        format_sig(multi.log2_bound, 10),
        multi.vacuous,
        format_sig(pad_log2, 10),
        format_sig(device.gain, 10),
        format_sig(system.gain, 10),
        capacity_bits,
        capacity_bytes,
        format_sig(cost.keyspace_log2, 10),
        format_sig(cost.expected_trials_log2, 10),
    );
    emit(args.out.as_deref(), &format!("{ANALYZE_CSV_HEADER}\n{row}"))?;
    Ok(0)
}

fn trim_end_zeros(s: &str) -> &str {
    s.trim_end_matches('0')
}

fn simulate(args: &SimulateArgs) -> Result<u8, Box<dyn Error>> {
    let text = fs::read_to_string(&args.script)?;
    let report = run_scenario(&text)?;
    let mut lines: Vec<String> = report
        .steps
        .iter()
        .map(|s| format!("line {}: {}", s.line, s.outcome))
        .collect();

    if let Some(fleet) = &report.fleet {
        let duplicates = fleet.duplicate_triples()?;
        let findings = fleet.hygiene_findings()?;
        lines.push(format!(
            "transcript: {} frames, {} bytes, {} duplicate (pair, slot, window) triples, {} hygiene findings",
            fleet.eavesdrop().len(),
            fleet.transcript_bytes().len(),
            duplicates.len(),
            findings.len(),
        ));
        for f in &findings {
            eprintln!(
                "warning: {} bytes visible in transcript at offset {}",
                f.source, f.transcript_offset
            );
        }
        if !duplicates.is_empty() {
            emit(args.out.as_deref(), &lines.join("\n"))?;
            let (pair, slot, eta) = duplicates[0];
            return Err(format!(
                "pad reuse: {} duplicate triples in the transcript, first is pair {pair} slot {slot} window {eta}",
                duplicates.len()
            )
            .into());
        }
    }
    emit(args.out.as_deref(), &lines.join("\n"))?;
    Ok(0)
}

fn attack(op: AttackOp, rng: &mut RandomSource) -> Result<u8, Box<dyn Error>> {
    match op {
        AttackOp::BruteForce {
            n,
            k,
            m,
            trials,
            budget,
            out,
        } => attack_brute_force(n, k, m, trials, budget, out.as_deref(), rng),
        AttackOp::Collision {
            n,
            k,
            m,
            windows,
            trials,
            exhaustive,
            budget,
            out,
        } => {
            let window = WindowParams::new(n, k, m, windows)?;
            if exhaustive {
                let exact = collision_probability_exhaustive(&window, budget)?;
                let p = exact.probability.to_f64().expect("probability fits f64");
                let row = format!(
                    "collision-exhaustive,{},{},{},{},,pass",
                    window.label(),
                    exact.total,
                    format_sig(p, 10),
                    format_sig(p, 10),
                );
                emit(out.as_deref(), &format!("{ESTIMATOR_CSV_HEADER}\n{row}"))?;
                Ok(0)
            } else {
                let est = collision_probability_mc(&window, trials, rng)?;
                let row = est.csv_row("collision-mc", &window.label());
                emit(out.as_deref(), &format!("{ESTIMATOR_CSV_HEADER}\n{row}"))?;
                Ok(if est.verdict.is_hard_fail() { HARD_FAIL } else { 0 })
            }
        }
        AttackOp::OtpFailure {
            devices,
            n,
            k,
            m,
            eta_max,
            lambda,
            trials,
            exhaustive,
            budget,
            out,
        } => {
            let params = SystemParams::uniform(n, k, m, eta_max, devices, lambda)?;
            if exhaustive {
                let exact = one_time_pad_failure_exhaustive(&params, budget)?;
                let header = "channels,tuples,window_probability,failure_probability,union_bound";
                let row = format!(
                    "{},{},{},{},{}",
                    exact.channels,
                    exact.tuples,
                    format_sig(exact.window_probability.to_f64().expect("fits"), 10),
                    format_sig(exact.failure_probability.to_f64().expect("fits"), 10),
                    format_sig(exact.union_bound.to_f64().expect("fits"), 10),
                );
                emit(out.as_deref(), &format!("{header}\n{row}"))?;
                Ok(0)
            } else {
                let report = one_time_pad_failure_mc(&params, trials, rng)?;
                let row = report.csv_row(&params);
                emit(out.as_deref(), &format!("{ESTIMATOR_CSV_HEADER}\n{row}"))?;
                Ok(if report.estimate.verdict.is_hard_fail() { HARD_FAIL } else { 0 })
            }
        }
        AttackOp::Frequency { n, k, bias, bits, out } => {
            let spec = MatrixSpec::with_bias(k, n, bias)?;
            let report = keystream_frequency_test(spec, bits, rng)?;
            let row = report.csv_row(spec);
            emit(out.as_deref(), &format!("{ESTIMATOR_CSV_HEADER}\n{row}"))?;
            Ok(if report.verdict.is_hard_fail() { HARD_FAIL } else { 0 })
        }
        AttackOp::Game {
            devices,
            n,
            k,
            m,
            layouts,
            out,
        } => attack_game(devices, n, k, m, layouts, out.as_deref(), rng),
    }
}

const RECOVERY_CSV_HEADER: &str =
    "operation,params,instances,recovered,false_candidates,mean_trials_to_hit";

/// Attacks fresh seeded instances: generate matrix, key, and plaintext,
/// derive the evidence window, then search the whole key space.
fn attack_brute_force(
    n: u64,
    k: u64,
    m: u64,
    trials: u64,
    budget: u64,
    out: Option<&Path>,
    rng: &mut RandomSource,
) -> Result<u8, Box<dyn Error>> {
    if trials == 0 {
        return Err("need at least one instance".into());
    }
    let spec = MatrixSpec::new(k, n)?;
    let pair = Pair::new(0, 1).expect("distinct");
    let mut recovered: u64 = 0;
    let mut false_candidates: u64 = 0;
    let mut rank_sum: u128 = 0;
    for i in 0..trials {
        let mut inst = rng.fork(i);
        let matrix = RandomMatrix::generate(spec, &mut inst);
        let key = PairwiseKey::generate(n, k, pair, 0, &mut inst);
        let message = inst.bits(m, 0.5);
        let ks = derive_keystream(&matrix, &key, m, 1)?;
        let mut payload = message.clone();
        payload.xor_assign(&ks.bits);
        let evidence = KnownPlaintextPair::new(
            message,
            Ciphertext {
                pair,
                slot: 0,
                eta: 1,
                payload,
            },
        )?;
        let found = brute_force_recover(&matrix, &evidence, budget)?;
        let hit = found.keys.contains(&key);
        recovered += u64::from(hit);
        false_candidates += found.keys.len() as u64 - u64::from(hit);
        rank_sum += u128::from(found.trials_tested);
    }
    let row = format!(
        "brute-force,n={n} k={k} m={m},{trials},{recovered},{false_candidates},{}",
        format_sig(rank_sum as f64 / trials as f64, 10),
    );
    emit(out, &format!("{RECOVERY_CSV_HEADER}\n{row}"))?;
    Ok(0)
}

/// Evaluates the exact best-adversary advantage on seeded layouts: random
/// target pair, two distinct candidate messages, random bystander plaintexts.
fn attack_game(
    devices: u32,
    n: u64,
    k: u64,
    m: u64,
    layouts: u64,
    out: Option<&Path>,
    rng: &mut RandomSource,
) -> Result<u8, Box<dyn Error>> {
    if layouts == 0 {
        return Err("need at least one layout".into());
    }
    let params = SystemParams::uniform(n, k, m, 1, devices, 1)?;
    let pairs: Vec<Pair> = params.pairs().collect();
    let mut lines = vec![ESTIMATOR_CSV_HEADER.to_string()];
    let mut all_dominated = true;
    for i in 0..layouts {
        let mut layout_rng = rng.fork(i);
        let target = pairs[layout_rng.below(pairs.len() as u64) as usize];
        let message_zero = layout_rng.bits(m, 0.5);
        let message_one = loop {
            let candidate = layout_rng.bits(m, 0.5);
            if candidate != message_zero {
                break candidate;
            }
        };
        let bystanders = pairs
            .iter()
            .filter(|&&p| p != target)
            .map(|&p| (p, layout_rng.bits(m, 0.5)))
            .collect();
        let game = MicroGame::new(params.clone(), target, message_zero, message_one, bystanders)?;
        let result = exact_bayes_advantage(&game)?;
        all_dominated &= result.dominated;
        lines.push(result.csv_row(&params));
    }
    emit(out, &lines.join("\n"))?;
    Ok(if all_dominated { 0 } else { HARD_FAIL })
}

fn bench(op: BenchOp, rng: &mut RandomSource) -> Result<u8, Box<dyn Error>> {
    match op {
        BenchOp::Avalanche {
            n,
            k,
            m,
            trials,
            zero_fractions,
            out,
        } => {
            let report = avalanche_bench(n, k, m, &zero_fractions, trials, rng)?;
            emit(out.as_deref(), &report.csv())?;
            let failed = report.patterns.iter().any(|p| p.verdict.is_hard_fail());
            Ok(if failed { HARD_FAIL } else { 0 })
        }
        BenchOp::Runtime {
            n,
            grid,
            repetitions,
            out,
        } => {
            let points = grid
                .iter()
                .map(|entry| parse_grid_point(entry))
                .collect::<Result<Vec<_>, _>>()?;
            let report = runtime_bench(n, &points, repetitions, rng)?;
            let text = format!("{}\n\n{}", report.rows_csv(), report.fits_csv());
            emit(out.as_deref(), &text)?;
            Ok(0)
        }
    }
}

fn parse_grid_point(entry: &str) -> Result<(u64, u64), Box<dyn Error>> {
    let (m, k) = entry
        .split_once(':')
        .ok_or_else(|| format!("grid point {entry:?} is not m:k"))?;
    Ok((m.trim().parse()?, k.trim().parse()?))
}
