//! The acceptance gate: one test per shipping criterion, in fixed order.
//! Each test line in the runner's report is the pass/fail verdict for that
//! criterion. Tolerances and time budgets are asserted, not just eyeballed.

use mpad::analytics::{
    advantage_bound, device_secrecy_gain, key_recovery_cost, pair_capacity_bits,
    system_secrecy_gain, BoundMode, DEFAULT_PRECISION_BITS,
};
use mpad::attack::{
    brute_force_recover, collision_probability_exhaustive, collision_probability_mc,
    exact_bayes_advantage, keystream_frequency_test, one_time_pad_failure_exhaustive,
    one_time_pad_failure_mc, KnownPlaintextPair, MicroGame, Verdict, WindowParams,
    DEFAULT_SEARCH_BUDGET,
};
use mpad::bench::{avalanche_bench, runtime_bench};
use mpad::otp::{derive_keystream, Ciphertext, MatrixSpec, PairwiseKey, RandomMatrix};
use mpad::params::{Pair, SystemParams};
use mpad::rng::RandomSource;
use mpad::scenario::{run_scenario, Outcome};
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use std::collections::HashSet;
use std::sync::{Mutex, MutexGuard, PoisonError};
use std::time::{Duration, Instant};

/// One criterion at a time: the runtime and time-budget assertions must not
/// share this box's single core with the other tests.
static GATE: Mutex<()> = Mutex::new(());

fn solo() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(PoisonError::into_inner)
}

/// Reference deployment: n=2^33, k=46, m=2^10, 256 devices, eta_max=2^20,
/// 128 keys per pair.
fn reference_params() -> SystemParams {
    SystemParams::uniform(1 << 33, 46, 1 << 10, 1 << 20, 256, 128).expect("valid")
}

#[test]
fn a01_reference_deployment_analytics() {
    let _solo = solo();
    let started = Instant::now();
    let params = reference_params();

    let bound = advantage_bound(&params, BoundMode::MultiWindow);
    assert!(
        (-69.5..=-69.0).contains(&bound.log2_bound),
        "log2 advantage bound {} outside [-69.5, -69]",
        bound.log2_bound
    );

    let device = device_secrecy_gain(&params, 0, DEFAULT_PRECISION_BITS).unwrap();
    let device_err = (device.gain - 88.6845).abs() / 88.6845;
    assert!(device_err < 0.005, "device gain {} strays {device_err}", device.gain);

    let system = system_secrecy_gain(&params, DEFAULT_PRECISION_BITS);
    let system_err = (system.gain - 1.1174e4).abs() / 1.1174e4;
    assert!(system_err < 0.005, "system gain {} strays {system_err}", system.gain);

    let bits = pair_capacity_bits(&params, Pair::new(0, 1).unwrap()).unwrap();
    assert_eq!(
        bits / 8u8,
        BigUint::from(17_179_869_184u64),
        "per-pair capacity in bytes"
    );

    assert!(
        started.elapsed() < Duration::from_secs(1),
        "took {:?}",
        started.elapsed()
    );
}

#[test]
fn a02_key_recovery_cost_log2() {
    let _solo = solo();
    let cost = key_recovery_cost(1 << 33, 46, 1 << 10);
    assert_eq!(cost.expected_trials_log2, 1517.0);
    assert_eq!(cost.keyspace_log2, 1518.0);
}

#[test]
fn a03_brute_force_desk_scale() {
    let _solo = solo();
    let started = Instant::now();
    let pair = Pair::new(0, 1).unwrap();

    let attack_instances = |n: u64, k: u64, m: u64, count: u64, seed: u64| {
        let spec = MatrixSpec::new(k, n).unwrap();
        let master = RandomSource::seeded(seed);
        let mut recovered = 0u64;
        let mut false_candidates = 0u64;
        let mut rank_sum = 0u64;
        for i in 0..count {
            let mut rng = master.fork(i);
            let matrix = RandomMatrix::generate(spec, &mut rng);
            let key = PairwiseKey::generate(n, k, pair, 0, &mut rng);
            let message = rng.bits(m, 0.5);
            let ks = derive_keystream(&matrix, &key, m, 1).unwrap();
            let mut payload = message.clone();
            payload.xor_assign(&ks.bits);
            let evidence = KnownPlaintextPair::new(
                message,
                Ciphertext { pair, slot: 0, eta: 1, payload },
            )
            .unwrap();
            let found = brute_force_recover(&matrix, &evidence, DEFAULT_SEARCH_BUDGET).unwrap();
            let hit = found.keys.contains(&key);
            recovered += u64::from(hit);
            false_candidates += found.keys.len() as u64 - u64::from(hit);
            rank_sum += found.trials_tested;
        }
        (recovered, false_candidates, rank_sum as f64 / count as f64)
    };

    // control at a comfortably valid point: m well inside one window
    let (hits, strays, _) = attack_instances(256, 1, 24, 1000, 301);
    assert_eq!(hits, 1000, "control: true key must always be recovered");
    assert_eq!(strays, 0, "control: valid-regime search must be exact");

    let instances = 1000u64;
    let (recovered, false_candidates, mean_rank) = attack_instances(16, 2, 24, instances, 300);
    assert_eq!(recovered, instances, "true key must always be recovered");
    assert!(
        (mean_rank - 128.0).abs() <= 12.8,
        "mean trials-to-hit {mean_rank} outside 128 +- 10%"
    );
    assert!(
        started.elapsed() < Duration::from_secs(60),
        "took {:?}",
        started.elapsed()
    );
    assert_eq!(
        false_candidates, 0,
        "{false_candidates} false candidates over {instances} instances"
    );
}

#[test]
fn a04_collision_event_exactness() {
    let _solo = solo();
    let started = Instant::now();

    let single = WindowParams::new(8, 1, 2, 1).unwrap();
    let exact1 = collision_probability_exhaustive(&single, 1 << 20).unwrap();
    assert_eq!(exact1.probability, big_ratio(24, 64));

    let double = WindowParams::new(8, 2, 2, 1).unwrap();
    let exact2 = collision_probability_exhaustive(&double, 1 << 24).unwrap();
    assert_eq!(exact2.probability, big_ratio(576, 4096));

    for (window, seed) in [(&single, 401u64), (&double, 402u64)] {
        let est =
            collision_probability_mc(window, 100_000, &RandomSource::seeded(seed)).unwrap();
        assert_eq!(
            est.verdict,
            Verdict::Pass,
            "{} estimate {} vs analytic {} (z {:?})",
            window.label(),
            est.estimate,
            est.analytic,
            est.z_score
        );
    }
    assert!(
        started.elapsed() < Duration::from_secs(60),
        "took {:?}",
        started.elapsed()
    );
}

#[test]
fn a05_pad_failure_stays_under_union_bound() {
    let _solo = solo();
    let params = SystemParams::uniform(16, 1, 2, 1, 3, 1).unwrap();

    let exact = one_time_pad_failure_exhaustive(&params, 1 << 26).unwrap();
    assert!(
        exact.failure_probability <= exact.union_bound,
        "exact failure {} exceeds union bound {}",
        exact.failure_probability,
        exact.union_bound
    );

    let trials = 100_000u64;
    let mc = one_time_pad_failure_mc(&params, trials, &RandomSource::seeded(500)).unwrap();
    let p = exact.failure_probability.to_f64().unwrap();
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    let z = (mc.failure_hits as f64 / trials as f64 - p) / sigma;
    assert!(z.abs() <= 3.0, "MC failure rate strays z = {z} from exact {p}");
}

#[test]
fn a06_micro_game_advantage_dominated() {
    let _solo = solo();
    let started = Instant::now();
    let params = SystemParams::uniform(8, 1, 2, 1, 3, 1).unwrap();
    let pairs: Vec<Pair> = params.pairs().collect();
    let master = RandomSource::seeded(600);

    let layouts = 20u64;
    for i in 0..layouts {
        let mut rng = master.fork(i);
        let target = pairs[rng.below(pairs.len() as u64) as usize];
        let message_zero = rng.bits(params.m(), 0.5);
        let message_one = loop {
            let candidate = rng.bits(params.m(), 0.5);
            if candidate != message_zero {
                break candidate;
            }
        };
        let bystanders = pairs
            .iter()
            .filter(|&&p| p != target)
            .map(|&p| (p, rng.bits(params.m(), 0.5)))
            .collect();
        let game =
            MicroGame::new(params.clone(), target, message_zero, message_one, bystanders)
                .unwrap();
        let result = exact_bayes_advantage(&game).unwrap();
        assert!(
            result.dominated,
            "layout {i}: advantage {} exceeds bound {}",
            result.advantage_f64,
            result.bound.to_f64().unwrap()
        );
    }
    assert!(
        started.elapsed() < Duration::from_secs(300),
        "took {:?}",
        started.elapsed()
    );
}

#[test]
fn a07_keystream_frequency_statistics() {
    let _solo = solo();
    for (k, seed) in [(1u64, 700u64), (8, 701), (46, 702)] {
        let spec = MatrixSpec::new(k, 4096).unwrap();
        let report =
            keystream_frequency_test(spec, 1_000_000, &RandomSource::seeded(seed)).unwrap();
        assert_eq!(
            report.verdict,
            Verdict::Pass,
            "k={k}: frequency {} vs 0.5 (z {:?})",
            report.frequency,
            report.z_score
        );
    }

    for (bias, seed) in [(0.1f64, 703u64), (0.3, 704)] {
        let spec = MatrixSpec::with_bias(3, 4096, bias).unwrap();
        let report =
            keystream_frequency_test(spec, 1_000_000, &RandomSource::seeded(seed)).unwrap();
        assert_eq!(
            report.verdict,
            Verdict::Pass,
            "bias={bias}: frequency {} vs predicted {} (z {:?})",
            report.frequency,
            report.predicted,
            report.z_score
        );
    }
}

#[test]
fn a08_window_positions_disjoint_per_row() {
    let _solo = solo();
    let (n, k, m, eta_max) = (64u64, 3u64, 5u64, 6u64);
    let mut rng = RandomSource::seeded(800);
    let pair = Pair::new(0, 1).unwrap();
    for _ in 0..100 {
        let key = PairwiseKey::generate(n, k, pair, 0, &mut rng);
        for row in 0..k as usize {
            let mut positions = HashSet::new();
            for eta in 1..=eta_max {
                for i in 1..=m {
                    positions.insert(key.subkey(m, eta, i)[row]);
                }
            }
            assert_eq!(
                positions.len(),
                (m * eta_max) as usize,
                "row {row} of key {:?} reuses a column",
                key.values()
            );
        }
    }
}

#[test]
fn a09_avalanche_reproduction() {
    let _solo = solo();
    let started = Instant::now();
    let mut rng = RandomSource::seeded(900);
    let m = 1_000_000u64;
    let report =
        avalanche_bench(1 << 25, 30, m, &[0.01, 0.5, 0.99], 10, &mut rng).unwrap();

    for pattern in &report.patterns {
        assert!(
            (pattern.same_window_fraction - 1.0 / m as f64).abs() < 1e-12,
            "same-window fraction {} at zero-fraction {}",
            pattern.same_window_fraction,
            pattern.zero_fraction
        );
        assert!(
            (pattern.fresh_window_fraction - 0.5).abs() <= 0.003,
            "fresh-window fraction {} at zero-fraction {} outside 0.500 +- 0.003",
            pattern.fresh_window_fraction,
            pattern.zero_fraction
        );
    }
    assert!((report.mean_flip_fraction - 0.5).abs() <= 0.003);
    assert!(
        started.elapsed() < Duration::from_secs(120),
        "took {:?}",
        started.elapsed()
    );
}

#[test]
fn a10_runtime_scaling() {
    let _solo = solo();
    let mut rng = RandomSource::seeded(1000);
    let grid = [(10_000u64, 10u64), (20_000, 10), (10_000, 13)];
    let report = runtime_bench(1 << 16, &grid, 31, &mut rng).unwrap();

    let time_at = |m: u64, k: u64| {
        report
            .rows
            .iter()
            .find(|r| r.m == m && r.k == k)
            .expect("grid row")
            .encrypt_seconds
    };
    let m_ratio = time_at(20_000, 10) / time_at(10_000, 10);
    assert!(
        (1.8..=2.2).contains(&m_ratio),
        "doubling m scaled time by {m_ratio}, want [1.8, 2.2]"
    );
    let k_ratio = time_at(10_000, 13) / time_at(10_000, 10);
    assert!(
        (1.15..=1.45).contains(&k_ratio),
        "k 10 -> 13 scaled time by {k_ratio}, want [1.15, 1.45]"
    );
    for row in &report.rows {
        let gap = (row.encrypt_seconds - row.decrypt_seconds).abs() / row.encrypt_seconds;
        assert!(
            gap < 0.05,
            "m={} k={}: encrypt {} vs decrypt {} differ by {:.1}%",
            row.m,
            row.k,
            row.encrypt_seconds,
            row.decrypt_seconds,
            gap * 100.0
        );
    }
}

#[test]
fn a11_fleet_mission_end_to_end() {
    let _solo = solo();
    let dump = std::env::temp_dir().join(format!("mpad-accept-{}.bin", std::process::id()));
    let payloads = [
        "00112233445566778899aabbccddeeff",
        "5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a",
        "fedcba9876543210fedcba9876543210",
        "0123456789abcdef0123456789abcdef",
        "c3c3c3c3c3c3c3c3c3c3c3c3c3c3c3c3",
        "111122223333444455556666777788aa",
    ];
    let script = format!(
        "provision U=4 n=512 k=2 m=128 eta_max=2 lambda=1 seed=33 reserve=1\n\
         send 0 1 {}\n\
         send 2 3 {}\n\
         send 2 3 {}\n\
         send 2 3 {}\n\
         dynkey 2 3\n\
         send 2 3 {}\n\
         admit\n\
         send 0 4 {}\n\
         eavesdrop-dump {}\n",
        payloads[0],
        payloads[1],
        payloads[2],
        payloads[3],
        payloads[4],
        payloads[5],
        dump.display()
    );

    let report = run_scenario(&script).unwrap();
    let mut delivered = Vec::new();
    let mut refusals = Vec::new();
    for step in &report.steps {
        match &step.outcome {
            Outcome::Delivered(record) => delivered.push(record.clone()),
            Outcome::Refused(reason) => refusals.push(reason.clone()),
            Outcome::KeyEstablished { pair, slot } => {
                assert_eq!((*pair, *slot), (Pair::new(2, 3).unwrap(), 1));
            }
            Outcome::Admitted { device } => assert_eq!(*device, 4),
            Outcome::Dumped { frames, .. } => assert_eq!(*frames, 7),
            Outcome::Provisioned { devices, .. } => assert_eq!(*devices, 4),
        }
    }

    // the fourth send finds both windows of (2,3) slot 0 spent
    assert_eq!(refusals.len(), 1, "refusals: {refusals:?}");
    assert!(refusals[0].contains("budget"), "refusal: {}", refusals[0]);

    let expected: Vec<Vec<u8>> = [payloads[0], payloads[1], payloads[2], payloads[4], payloads[5]]
        .iter()
        .map(|h| hex::decode(h).unwrap())
        .collect();
    let mission_payloads: Vec<Vec<u8>> = delivered
        .iter()
        .map(|r| r.plaintext.as_bytes().to_vec())
        .collect();
    assert_eq!(mission_payloads, expected, "delivery records must match payloads");

    let fleet = report.fleet.expect("provisioned");
    assert_eq!(fleet.duplicate_triples().unwrap(), vec![]);
    std::fs::remove_file(&dump).ok();
}

fn big_ratio(num: u64, den: u64) -> BigRational {
    BigRational::new(num.into(), den.into())
}
