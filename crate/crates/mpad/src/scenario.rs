//! Line-oriented mission scripts for the fleet simulator.
//!
//! Grammar, one command per line (`#`-prefixed lines and blank lines are
//! skipped):
//!
//! ```text
//! provision U=4 n=512 k=2 m=128 eta_max=2 lambda=1 seed=7 [reserve=4]
//! send <q> <l> <hex-payload>
//! dynkey <q> <l>
//! admit
//! eavesdrop-dump <path>
//! ```
//!
//! The hex payload must decode to exactly ceil(m/8) bytes with zero pad
//! bits. The dump is the raw transcript: concatenated ciphertext frames
//! exactly as wired, parseable by the frame reader.
//!
//! Malformed lines and structural mistakes (unknown devices, a send before
//! `provision`) abort the run with the offending line number. Running out
//! of window budget or reserve keys does not: those are mission outcomes,
//! recorded as refusals so a script can demonstrate exhaustion and keep
//! going.

use crate::bits::Bits;
use crate::fleet::{provision_fleet, DeliveryRecord, Fleet, FleetError};
use crate::params::{Pair, SystemParams};
use crate::rng::RandomSource;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

pub const DEFAULT_RESERVE: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    State { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Fleet {
        line: usize,
        #[source]
        source: FleetError,
    },
    #[error("line {line}: writing {path}: {source}")]
    Io {
        line: usize,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Provision {
        devices: u32,
        n: u64,
        k: u64,
        m: u64,
        eta_max: u64,
        lambda: u64,
        seed: u64,
        reserve: u32,
    },
    Send {
        q: u32,
        l: u32,
        payload: Vec<u8>,
    },
    DynKey {
        q: u32,
        l: u32,
    },
    Admit,
    EavesdropDump {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioStep {
    pub line: usize,
    pub command: Command,
}

/// What one executed step did.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Provisioned {
        devices: u32,
        keys: u128,
        reserve: u32,
    },
    Delivered(DeliveryRecord),
    /// A budget or reserve refusal: the mission hit a resource limit.
    Refused(String),
    KeyEstablished {
        pair: Pair,
        slot: u16,
    },
    Admitted {
        device: u32,
    },
    Dumped {
        path: PathBuf,
        frames: u64,
        bytes: u64,
    },
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Provisioned {
                devices,
                keys,
                reserve,
            } => write!(
                f,
                "provisioned {devices} devices, {keys} pairwise keys, {reserve} in reserve"
            ),
            Outcome::Delivered(r) => write!(
                f,
                "delivered {}->{} over pair {} slot {} window {}",
                r.sender, r.receiver, r.pair, r.slot, r.eta
            ),
            Outcome::Refused(reason) => write!(f, "refused: {reason}"),
            Outcome::KeyEstablished { pair, slot } => {
                write!(f, "dynamic key for pair {pair} installed at slot {slot}")
            }
            Outcome::Admitted { device } => write!(f, "admitted device {device}"),
            Outcome::Dumped {
                path,
                frames,
                bytes,
            } => write!(f, "dumped {frames} frames ({bytes} bytes) to {}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub line: usize,
    pub outcome: Outcome,
}

#[derive(Debug)]
pub struct ScenarioReport {
    pub steps: Vec<StepReport>,
    /// Final state, present once `provision` ran; lets callers audit the
    /// transcript (duplicate triples, hygiene) after the script.
    pub fleet: Option<Fleet>,
}

pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioStep>, ScenarioError> {
    let mut steps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let verb = tokens.next().expect("nonempty line");
        let command = match verb {
            "provision" => parse_provision(line, tokens)?,
            "send" => {
                let q = parse_int::<u32>(line, tokens.next(), "sender")?;
                let l = parse_int::<u32>(line, tokens.next(), "receiver")?;
                let hex_payload = tokens.next().ok_or_else(|| ScenarioError::Parse {
                    line,
                    msg: "send needs <q> <l> <hex-payload>".to_string(),
                })?;
                let payload = hex::decode(hex_payload).map_err(|e| ScenarioError::Parse {
                    line,
                    msg: format!("bad hex payload: {e}"),
                })?;
                reject_extra(line, tokens)?;
                Command::Send { q, l, payload }
            }
            "dynkey" => {
                let q = parse_int::<u32>(line, tokens.next(), "first endpoint")?;
                let l = parse_int::<u32>(line, tokens.next(), "second endpoint")?;
                reject_extra(line, tokens)?;
                Command::DynKey { q, l }
            }
            "admit" => {
                reject_extra(line, tokens)?;
                Command::Admit
            }
            "eavesdrop-dump" => {
                let rest = trimmed["eavesdrop-dump".len()..].trim();
                if rest.is_empty() {
                    return Err(ScenarioError::Parse {
                        line,
                        msg: "eavesdrop-dump needs a path".to_string(),
                    });
                }
                Command::EavesdropDump {
                    path: PathBuf::from(rest),
                }
            }
            other => {
                return Err(ScenarioError::Parse {
                    line,
                    msg: format!("unknown command `{other}`"),
                })
            }
        };
        steps.push(ScenarioStep { line, command });
    }
    Ok(steps)
}

fn parse_provision<'a>(
    line: usize,
    tokens: impl Iterator<Item = &'a str>,
) -> Result<Command, ScenarioError> {
    let mut fields: BTreeMap<&str, u64> = BTreeMap::new();
    for token in tokens {
        let (key, value) = token.split_once('=').ok_or_else(|| ScenarioError::Parse {
            line,
            msg: format!("expected key=value, got `{token}`"),
        })?;
        if !matches!(key, "U" | "n" | "k" | "m" | "eta_max" | "lambda" | "seed" | "reserve") {
            return Err(ScenarioError::Parse {
                line,
                msg: format!("unknown provision field `{key}`"),
            });
        }
        let value: u64 = value.parse().map_err(|_| ScenarioError::Parse {
            line,
            msg: format!("`{key}` needs an unsigned integer, got `{value}`"),
        })?;
        if fields.insert(key, value).is_some() {
            return Err(ScenarioError::Parse {
                line,
                msg: format!("duplicate field `{key}`"),
            });
        }
    }
    let mut take = |key: &str| {
        fields.remove(key).ok_or_else(|| ScenarioError::Parse {
            line,
            msg: format!("provision is missing `{key}=`"),
        })
    };
    let devices = u32::try_from(take("U")?).map_err(|_| ScenarioError::Parse {
        line,
        msg: "`U` does not fit a device id".to_string(),
    })?;
    let (n, k, m) = (take("n")?, take("k")?, take("m")?);
    let (eta_max, lambda, seed) = (take("eta_max")?, take("lambda")?, take("seed")?);
    let reserve = match fields.remove("reserve") {
        None => DEFAULT_RESERVE,
        Some(r) => u32::try_from(r).map_err(|_| ScenarioError::Parse {
            line,
            msg: "`reserve` does not fit a device count".to_string(),
        })?,
    };
    Ok(Command::Provision {
        devices,
        n,
        k,
        m,
        eta_max,
        lambda,
        seed,
        reserve,
    })
}

fn parse_int<T: std::str::FromStr>(
    line: usize,
    token: Option<&str>,
    what: &str,
) -> Result<T, ScenarioError> {
    let token = token.ok_or_else(|| ScenarioError::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    token.parse().map_err(|_| ScenarioError::Parse {
        line,
        msg: format!("{what} must be an unsigned integer, got `{token}`"),
    })
}

fn reject_extra<'a>(
    line: usize,
    mut tokens: impl Iterator<Item = &'a str>,
) -> Result<(), ScenarioError> {
    match tokens.next() {
        None => Ok(()),
        Some(extra) => Err(ScenarioError::Parse {
            line,
            msg: format!("unexpected trailing token `{extra}`"),
        }),
    }
}

/// Wraps a fleet refusal: budget and reserve exhaustion become recorded
/// outcomes, everything else aborts the scenario.
fn absorb_refusal(
    line: usize,
    err: FleetError,
) -> Result<Outcome, ScenarioError> {
    match err {
        FleetError::BudgetExhausted { .. } | FleetError::ReserveExhausted => {
            Ok(Outcome::Refused(err.to_string()))
        }
        other => Err(ScenarioError::Fleet { line, source: other }),
    }
}

pub fn run_scenario(text: &str) -> Result<ScenarioReport, ScenarioError> {
    let steps = parse_scenario(text)?;
    let mut fleet: Option<Fleet> = None;
    let mut reports = Vec::with_capacity(steps.len());
    for step in steps {
        let line = step.line;
        let outcome = match step.command {
            Command::Provision {
                devices,
                n,
                k,
                m,
                eta_max,
                lambda,
                seed,
                reserve,
            } => {
                if fleet.is_some() {
                    return Err(ScenarioError::State {
                        line,
                        msg: "fleet already provisioned".to_string(),
                    });
                }
                let params = SystemParams::uniform(n, k, m, eta_max, devices, lambda)
                    .map_err(|e| ScenarioError::Fleet {
                        line,
                        source: FleetError::Params(e),
                    })?;
                let built = provision_fleet(params, reserve, RandomSource::seeded(seed))
                    .map_err(|e| ScenarioError::Fleet { line, source: e })?;
                let keys = built.effective_total_keys();
                fleet = Some(built);
                Outcome::Provisioned {
                    devices,
                    keys,
                    reserve,
                }
            }
            Command::Send { q, l, payload } => {
                let fleet = provisioned(&mut fleet, line)?;
                let m = fleet.params().m();
                if payload.len() as u64 != m.div_ceil(8) {
                    return Err(ScenarioError::Parse {
                        line,
                        msg: format!(
                            "payload is {} bytes, m={m} needs exactly {}",
                            payload.len(),
                            m.div_ceil(8)
                        ),
                    });
                }
                let bits = Bits::from_bytes(payload, m).map_err(|e| ScenarioError::Parse {
                    line,
                    msg: format!("bad payload: {e}"),
                })?;
                match fleet.send_message(q, l, &bits) {
                    Ok(record) => Outcome::Delivered(record),
                    Err(e) => absorb_refusal(line, e)?,
                }
            }
            Command::DynKey { q, l } => {
                let fleet = provisioned(&mut fleet, line)?;
                match fleet.request_dynamic_key(q, l) {
                    Ok(slot) => Outcome::KeyEstablished {
                        pair: Pair::new(q, l).expect("endpoints validated"),
                        slot,
                    },
                    Err(e) => absorb_refusal(line, e)?,
                }
            }
            Command::Admit => {
                let fleet = provisioned(&mut fleet, line)?;
                match fleet.admit_device() {
                    Ok(device) => Outcome::Admitted { device },
                    Err(e) => absorb_refusal(line, e)?,
                }
            }
            Command::EavesdropDump { path } => {
                let fleet = provisioned(&mut fleet, line)?;
                let bytes = fleet.transcript_bytes();
                std::fs::write(&path, &bytes).map_err(|source| ScenarioError::Io {
                    line,
                    path: path.clone(),
                    source,
                })?;
                Outcome::Dumped {
                    frames: fleet.eavesdrop().len() as u64,
                    bytes: bytes.len() as u64,
                    path,
                }
            }
        };
        reports.push(StepReport { line, outcome });
    }
    Ok(ScenarioReport {
        steps: reports,
        fleet,
    })
}

fn provisioned<'a>(
    fleet: &'a mut Option<Fleet>,
    line: usize,
) -> Result<&'a mut Fleet, ScenarioError> {
    fleet.as_mut().ok_or_else(|| ScenarioError::State {
        line,
        msg: "no fleet provisioned yet".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::read_frames;

    fn temp_path(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!(
            "mpad-scenario-{}-{tag}.bin",
            std::process::id()
        ))
    }

    #[test]
    fn parses_a_full_script() {
        let text = "\
# mission script
provision U=3 n=512 k=2 m=16 eta_max=2 lambda=1 seed=7

send 0 1 aa03
dynkey 1 2
admit
eavesdrop-dump /tmp/dump one.bin
";
        let steps = parse_scenario(text).unwrap();
        assert_eq!(steps.len(), 5);
        assert_eq!(
            steps[0].command,
            Command::Provision {
                devices: 3,
                n: 512,
                k: 2,
                m: 16,
                eta_max: 2,
                lambda: 1,
                seed: 7,
                reserve: DEFAULT_RESERVE,
            }
        );
        assert_eq!(steps[0].line, 2);
        assert_eq!(
            steps[1].command,
            Command::Send {
                q: 0,
                l: 1,
                payload: vec![0xaa, 0x03]
            }
        );
        assert_eq!(steps[1].line, 4);
        // dump paths may contain spaces
        assert_eq!(
            steps[4].command,
            Command::EavesdropDump {
                path: PathBuf::from("/tmp/dump one.bin")
            }
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("warp 0 1", 1, "unknown command"),
            ("provision U=2 n=64", 1, "missing `k"),
            ("provision U=2 n=64 k=2 m=5 eta_max=1 lambda=1 seed=1 seed=2", 1, "duplicate field"),
            ("provision U=2 bogus", 1, "expected key=value"),
            ("provision U=2 warp=1", 1, "unknown provision field"),
            ("\nsend 0 1", 2, "needs <q> <l> <hex-payload>"),
            ("send 0 1 zz", 1, "bad hex"),
            ("send x 1 aa", 1, "sender must be an unsigned integer"),
            ("dynkey 1 2 3", 1, "unexpected trailing token"),
            ("eavesdrop-dump", 1, "needs a path"),
        ];
        for (text, want_line, want_msg) in cases {
            match parse_scenario(text) {
                Err(ScenarioError::Parse { line, msg }) => {
                    assert_eq!(line, want_line, "line for {text:?}");
                    assert!(
                        msg.contains(want_msg) || msg.contains(&want_msg.replace('`', "")),
                        "{text:?} gave {msg:?}, wanted {want_msg:?}"
                    );
                }
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn commands_before_provision_are_structural_errors() {
        assert!(matches!(
            run_scenario("send 0 1 aa"),
            Err(ScenarioError::State { line: 1, .. })
        ));
        let double = "provision U=2 n=64 k=2 m=8 eta_max=1 lambda=1 seed=1\nprovision U=2 n=64 k=2 m=8 eta_max=1 lambda=1 seed=1";
        assert!(matches!(
            run_scenario(double),
            Err(ScenarioError::State { line: 2, .. })
        ));
    }

    #[test]
    fn runs_a_mission_and_dumps_a_reparsable_transcript() {
        let dump = temp_path("mission");
        // lambda=5 x eta_max=2 gives each distributor channel 10 windows,
        // enough for the 8 grant chunks a dynkey needs at m=16
        let text = format!(
            "provision U=3 n=512 k=2 m=16 eta_max=2 lambda=5 seed=9 reserve=1
send 0 1 1234
send 1 2 ffff
dynkey 1 2
admit
eavesdrop-dump {}",
            dump.display()
        );
        let report = run_scenario(&text).unwrap();
        assert_eq!(report.steps.len(), 6);
        assert!(matches!(
            report.steps[0].outcome,
            Outcome::Provisioned { devices: 3, keys: 15, reserve: 1 }
        ));
        match (&report.steps[1].outcome, &report.steps[2].outcome) {
            (Outcome::Delivered(a), Outcome::Delivered(b)) => {
                assert_eq!(a.plaintext.as_bytes(), &[0x12, 0x34]);
                assert_eq!(b.plaintext.as_bytes(), &[0xff, 0xff]);
            }
            other => panic!("unexpected outcomes {other:?}"),
        }
        // dynkey at m=16 moves k*64=128 bits in 8 chunks per endpoint;
        // slots 0..4 are provisioned, the dynamic key lands at 5
        assert!(matches!(
            report.steps[3].outcome,
            Outcome::KeyEstablished { slot: 5, .. }
        ));
        assert!(matches!(report.steps[4].outcome, Outcome::Admitted { device: 3 }));

        let fleet = report.fleet.unwrap();
        let bytes = std::fs::read(&dump).unwrap();
        std::fs::remove_file(&dump).unwrap();
        assert_eq!(bytes, fleet.transcript_bytes());
        let frames = read_frames(&mut bytes.as_slice()).unwrap();
        assert_eq!(frames.len(), 2 + 16, "2 sends + 8 grant chunks x 2 endpoints");
        assert!(fleet.duplicate_triples().unwrap().is_empty());
        match &report.steps[5].outcome {
            Outcome::Dumped { frames: f, bytes: b, .. } => {
                assert_eq!(*f, 18);
                assert_eq!(*b, bytes.len() as u64);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn exhaustion_is_recorded_not_fatal() {
        // lambda=1, eta_max=1: the second send on a pair must be refused,
        // and an admit with reserve=0 as well; the script still finishes
        let text = "provision U=2 n=64 k=2 m=8 eta_max=1 lambda=1 seed=3 reserve=0
send 0 1 aa
send 0 1 bb
admit";
        let report = run_scenario(text).unwrap();
        assert!(matches!(report.steps[1].outcome, Outcome::Delivered(_)));
        match &report.steps[2].outcome {
            Outcome::Refused(reason) => assert!(reason.contains("budget")),
            other => panic!("wanted refusal, got {other:?}"),
        }
        match &report.steps[3].outcome {
            Outcome::Refused(reason) => assert!(reason.contains("reserve")),
            other => panic!("wanted refusal, got {other:?}"),
        }
    }

    #[test]
    fn structural_fleet_errors_abort_with_line() {
        let text = "provision U=2 n=64 k=2 m=8 eta_max=1 lambda=1 seed=3
send 0 7 aa";
        match run_scenario(text) {
            Err(ScenarioError::Fleet { line: 2, source }) => {
                assert!(matches!(source, FleetError::UnknownDevice { device: 7, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
        // payload length must match m exactly
        let text = "provision U=2 n=64 k=2 m=8 eta_max=1 lambda=1 seed=3
send 0 1 aabb";
        assert!(matches!(
            run_scenario(text),
            Err(ScenarioError::Parse { line: 2, .. })
        ));
        // nonzero pad bits beyond m are rejected
        let text = "provision U=2 n=64 k=2 m=7 eta_max=1 lambda=1 seed=3
send 0 1 ff";
        assert!(matches!(
            run_scenario(text),
            Err(ScenarioError::Parse { line: 2, .. })
        ));
        // invalid provision parameters are fatal
        let text = "provision U=2 n=64 k=9 m=8 eta_max=1 lambda=1 seed=3";
        assert!(matches!(
            run_scenario(text),
            Err(ScenarioError::Fleet { line: 1, .. })
        ));
    }

    #[test]
    fn seeded_scenarios_reproduce_bit_identical_dumps() {
        let run = |tag: &str| {
            let dump = temp_path(tag);
            let text = format!(
                "provision U=3 n=512 k=2 m=128 eta_max=2 lambda=1 seed=11
send 0 1 {}
dynkey 1 2
eavesdrop-dump {}",
                "ab".repeat(16),
                dump.display()
            );
            run_scenario(&text).unwrap();
            let bytes = std::fs::read(&dump).unwrap();
            std::fs::remove_file(&dump).unwrap();
            bytes
        };
        assert_eq!(run("det-a"), run("det-b"));
    }
}
