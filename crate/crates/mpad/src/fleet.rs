//! A simulated device fleet: one shared matrix, budgeted pairwise channels,
//! an append-only transcript of every frame ever sent, and a distributor
//! (device 0) that grants dynamic keys and admits late devices.
//!
//! The fleet is a single state machine owning its RandomSource, so a run
//! under a fixed seed is bit-reproducible. Mutating calls are serialized
//! through `&mut self`; transcript views borrow between mutations.

use crate::bits::Bits;
use crate::otp::{decrypt, encrypt, MatrixSpec, OtpError, PairwiseKey, RandomMatrix};
use crate::params::{Pair, ParamError, SystemParams};
use crate::rng::RandomSource;
use crate::wire::{frame_bytes, read_frame, write_key, WireError};
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

/// The designated key distributor.
pub const DISTRIBUTOR: u32 = 0;

#[derive(Debug, thiserror::Error)]
pub enum FleetError {
    #[error("device {device} is not one of the {fleet} fleet devices")]
    UnknownDevice { device: u32, fleet: u32 },
    #[error("pair {pair} holds no keys")]
    UnkeyedPair { pair: Pair },
    #[error("every window budget for pair {pair} is spent")]
    BudgetExhausted { pair: Pair },
    #[error("payload is {got} bits, this fleet sends {want}-bit messages")]
    WrongMessageLength { got: u64, want: u64 },
    #[error("the distributor cannot be an endpoint of a dynamic key")]
    DistributorEndpoint,
    #[error("no reserve keys left for admission")]
    ReserveExhausted,
    #[error("pair {pair} has no slot ids left")]
    SlotSpaceExhausted { pair: Pair },
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Otp(#[from] OtpError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// One fleet member and the keys it shares with its peers, indexed by
/// (peer id, slot). Every stored key's pair names this device.
#[derive(Debug, Clone)]
pub struct Device {
    id: u32,
    keyring: BTreeMap<(u32, u16), Arc<PairwiseKey>>,
}

impl Device {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn key(&self, peer: u32, slot: u16) -> Option<&PairwiseKey> {
        self.keyring.get(&(peer, slot)).map(Arc::as_ref)
    }

    pub fn key_count(&self) -> usize {
        self.keyring.len()
    }
}

/// One eavesdropper-visible event: who talked to whom, when (monotonic
/// event counter), and the frame exactly as wired. No key or matrix
/// material, only ciphertext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub sender: u32,
    pub receiver: u32,
    pub timestamp: u64,
    pub frame: Vec<u8>,
}

/// Proof of one delivered message: what was sent, over which channel, and
/// the plaintext the receiver recovered from the wire bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub sender: u32,
    pub receiver: u32,
    pub pair: Pair,
    pub slot: u16,
    pub eta: u64,
    pub timestamp: u64,
    pub plaintext: Bits,
}

/// A possible key-material leak spotted in the transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HygieneFinding {
    pub source: String,
    pub transcript_offset: usize,
}

#[derive(Debug)]
pub struct Fleet {
    params: SystemParams,
    matrix: Arc<RandomMatrix>,
    devices: Vec<Device>,
    /// next_eta per (pair, slot); a slot exists iff it has an entry here.
    budgets: BTreeMap<(Pair, u16), u64>,
    transcript: Vec<TranscriptEntry>,
    /// Key values minted at provisioning for future admissions, assigned
    /// in order and never reused.
    reserve: VecDeque<Vec<u64>>,
    rng: RandomSource,
    events: u64,
}

/// Builds the whole mission state: one matrix, lambda keys per pair with
/// both endpoints installed, all budgets fresh, plus `reserve_keys` spare
/// distributor keys for devices admitted later. Draw order is fixed:
/// matrix, then keys pair-major slot-minor, then the reserve.
pub fn provision_fleet(
    params: SystemParams,
    reserve_keys: u32,
    mut rng: RandomSource,
) -> Result<Fleet, FleetError> {
    let (n, k) = (params.n(), params.k());
    let spec = MatrixSpec::new(k, n)?;
    let matrix = Arc::new(RandomMatrix::generate(spec, &mut rng));
    let mut devices: Vec<Device> = (0..params.devices())
        .map(|id| Device {
            id,
            keyring: BTreeMap::new(),
        })
        .collect();
    let mut budgets = BTreeMap::new();
    for pair in params.pairs() {
        let lambda = params.lambda_for(pair);
        let slots =
            u16::try_from(lambda).map_err(|_| FleetError::SlotSpaceExhausted { pair })?;
        for slot in 0..slots {
            let key = Arc::new(PairwiseKey::generate(n, k, pair, slot, &mut rng));
            devices[pair.q() as usize]
                .keyring
                .insert((pair.l(), slot), key.clone());
            devices[pair.l() as usize]
                .keyring
                .insert((pair.q(), slot), key);
            budgets.insert((pair, slot), 1);
        }
    }
    let reserve = (0..reserve_keys)
        .map(|_| (0..k).map(|_| rng.below(n)).collect())
        .collect();
    Ok(Fleet {
        params,
        matrix,
        devices,
        budgets,
        transcript: Vec::new(),
        reserve,
        rng,
        events: 0,
    })
}

impl Fleet {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn matrix(&self) -> &RandomMatrix {
        &self.matrix
    }

    pub fn device_count(&self) -> u32 {
        self.devices.len() as u32
    }

    pub fn device(&self, id: u32) -> Option<&Device> {
        self.devices.get(id as usize)
    }

    pub fn reserve_remaining(&self) -> u32 {
        self.reserve.len() as u32
    }

    /// The adversary's view: the full append-only transcript.
    pub fn eavesdrop(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// All transcript frames concatenated exactly as wired.
    pub fn transcript_bytes(&self) -> Vec<u8> {
        self.transcript
            .iter()
            .flat_map(|e| e.frame.iter().copied())
            .collect()
    }

    /// Installed keys per pair, dynamic grants included.
    pub fn effective_lambda(&self) -> BTreeMap<Pair, u64> {
        let mut map = BTreeMap::new();
        for (pair, _) in self.budgets.keys() {
            *map.entry(*pair).or_insert(0) += 1;
        }
        map
    }

    /// Every key any pair ever installed; the conservative W for bound
    /// bookkeeping after dynamic grants.
    pub fn effective_total_keys(&self) -> u128 {
        self.budgets.len() as u128
    }

    fn check_device(&self, device: u32) -> Result<(), FleetError> {
        if (device as usize) < self.devices.len() {
            Ok(())
        } else {
            Err(FleetError::UnknownDevice {
                device,
                fleet: self.device_count(),
            })
        }
    }

    fn slot_count(&self, pair: Pair) -> usize {
        self.budgets
            .range((pair, 0)..=(pair, u16::MAX))
            .count()
    }

    /// Encrypts `payload` on the lowest slot of (sender, receiver) that
    /// still has window budget, appends the frame to the transcript, and
    /// delivers: the receiver re-parses the wire bytes, looks its key up by
    /// the frame header, and decrypts.
    pub fn send_message(
        &mut self,
        sender: u32,
        receiver: u32,
        payload: &Bits,
    ) -> Result<DeliveryRecord, FleetError> {
        self.check_device(sender)?;
        self.check_device(receiver)?;
        let pair = Pair::new(sender, receiver)?;
        if payload.len() != self.params.m() {
            return Err(FleetError::WrongMessageLength {
                got: payload.len(),
                want: self.params.m(),
            });
        }
        let eta_max = self.params.eta_max();
        let chosen = self
            .budgets
            .range((pair, 0)..=(pair, u16::MAX))
            .find(|(_, next)| **next <= eta_max)
            .map(|((_, slot), next)| (*slot, *next));
        let (slot, eta) = match chosen {
            Some(c) => c,
            None if self.slot_count(pair) == 0 => {
                return Err(FleetError::UnkeyedPair { pair })
            }
            None => return Err(FleetError::BudgetExhausted { pair }),
        };

        let key = self.devices[sender as usize].keyring[&(receiver, slot)].clone();
        let ct = encrypt(&self.matrix, &key, payload, eta)?;
        let frame = frame_bytes(&ct);
        *self.budgets.get_mut(&(pair, slot)).expect("slot exists") += 1;
        let timestamp = self.events;
        self.events += 1;
        self.transcript.push(TranscriptEntry {
            sender,
            receiver,
            timestamp,
            frame: frame.clone(),
        });

        let parsed = read_frame(&mut frame.as_slice())?;
        let peer = if parsed.pair.q() == receiver {
            parsed.pair.l()
        } else {
            parsed.pair.q()
        };
        let receiver_key = self.devices[receiver as usize]
            .keyring
            .get(&(peer, parsed.slot))
            .expect("installs are symmetric")
            .clone();
        let plaintext = decrypt(&self.matrix, &receiver_key, &parsed)?;
        Ok(DeliveryRecord {
            sender,
            receiver,
            pair,
            slot,
            eta,
            timestamp,
            plaintext,
        })
    }

    /// Distributor protocol: mint a fresh key for (q, l), wire it to each
    /// endpoint in m-bit chunks over their distributor channels, and
    /// install it at the pair's next free slot on both ends. Any failed
    /// chunk aborts installation; budget spent on already-sent chunks stays
    /// spent (the transcript is append-only).
    pub fn request_dynamic_key(&mut self, q: u32, l: u32) -> Result<u16, FleetError> {
        self.check_device(q)?;
        self.check_device(l)?;
        if q == DISTRIBUTOR || l == DISTRIBUTOR {
            return Err(FleetError::DistributorEndpoint);
        }
        let pair = Pair::new(q, l)?;
        let new_slot = u16::try_from(self.slot_count(pair))
            .map_err(|_| FleetError::SlotSpaceExhausted { pair })?;
        let (n, k, m) = (self.params.n(), self.params.k(), self.params.m());
        let values: Vec<u64> = (0..k).map(|_| self.rng.below(n)).collect();

        let stream = transport_bits(&values);
        let chunks = stream.len().div_ceil(m);
        let mut grants: Vec<Vec<DeliveryRecord>> = Vec::new();
        for dest in [q, l] {
            let mut records = Vec::with_capacity(chunks as usize);
            for c in 0..chunks {
                records.push(self.send_message(DISTRIBUTOR, dest, &chunk_of(&stream, c, m))?);
            }
            grants.push(records);
        }
        for records in &grants {
            let decoded = decode_transport(records, k);
            assert_eq!(decoded, values, "transported key bits survive chunking");
        }

        let key = Arc::new(PairwiseKey::new(pair, new_slot, n, values)?);
        self.devices[q as usize]
            .keyring
            .insert((l, new_slot), key.clone());
        self.devices[l as usize].keyring.insert((q, new_slot), key);
        self.budgets.insert((pair, new_slot), 1);
        Ok(new_slot)
    }

    /// Brings one pre-provisioned spare online: the new device arrives
    /// holding the matrix and the next reserve key, shared with the
    /// distributor at slot 0.
    pub fn admit_device(&mut self) -> Result<u32, FleetError> {
        let values = self.reserve.pop_front().ok_or(FleetError::ReserveExhausted)?;
        let id = self.devices.len() as u32;
        let pair = Pair::new(DISTRIBUTOR, id)?;
        let key = Arc::new(PairwiseKey::new(pair, 0, self.params.n(), values)?);
        self.devices[DISTRIBUTOR as usize]
            .keyring
            .insert((id, 0), key.clone());
        let mut keyring = BTreeMap::new();
        keyring.insert((DISTRIBUTOR, 0), key);
        self.devices.push(Device { id, keyring });
        self.budgets.insert((pair, 0), 1);
        Ok(id)
    }

    /// Scans transcript headers for any (pair, slot, eta) encrypted twice.
    pub fn duplicate_triples(&self) -> Result<Vec<(Pair, u16, u64)>, WireError> {
        let mut seen: BTreeMap<(Pair, u16, u64), u64> = BTreeMap::new();
        for entry in &self.transcript {
            let ct = read_frame(&mut entry.frame.as_slice())?;
            *seen.entry((ct.pair, ct.slot, ct.eta)).or_insert(0) += 1;
        }
        Ok(seen
            .into_iter()
            .filter(|(_, count)| *count > 1)
            .map(|(triple, _)| triple)
            .collect())
    }

    /// Looks for raw key material in the transcript: any contiguous 16-byte
    /// run of a key's serialized form (or of a reserve key's packed values)
    /// appearing in the wire bytes. Findings are diagnostics, not proof;
    /// a 16-byte coincidence in encrypted payloads is possible, just
    /// negligible at realistic sizes. Desk-scale audits only, the scan is
    /// quadratic.
    pub fn hygiene_findings(&self) -> Result<Vec<HygieneFinding>, WireError> {
        let haystack = self.transcript_bytes();
        let mut findings = Vec::new();
        let mut keys: BTreeMap<(Pair, u16), Arc<PairwiseKey>> = BTreeMap::new();
        for device in &self.devices {
            for ((_, slot), key) in &device.keyring {
                keys.entry((key.pair(), *slot)).or_insert_with(|| key.clone());
            }
        }
        for ((pair, slot), key) in &keys {
            let mut record = Vec::new();
            write_key(&mut record, key)?;
            scan_windows(
                &haystack,
                &record,
                &format!("key {pair} slot {slot}"),
                &mut findings,
            );
        }
        for (i, values) in self.reserve.iter().enumerate() {
            let packed: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            scan_windows(&haystack, &packed, &format!("reserve key {i}"), &mut findings);
        }
        Ok(findings)
    }
}

fn scan_windows(haystack: &[u8], needle: &[u8], source: &str, out: &mut Vec<HygieneFinding>) {
    if needle.len() < 16 || haystack.len() < 16 {
        return;
    }
    for window in needle.windows(16) {
        if let Some(offset) = haystack.windows(16).position(|h| h == window) {
            out.push(HygieneFinding {
                source: source.to_string(),
                transcript_offset: offset,
            });
            return;
        }
    }
}

/// Key values as a transport bit stream: 64 bits per component, LSB first.
fn transport_bits(values: &[u64]) -> Bits {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let len = values.len() as u64 * 64;
    Bits::from_bytes(bytes, len).expect("whole bytes")
}

/// Chunk `index` of the stream, zero-padded to exactly m bits.
fn chunk_of(stream: &Bits, index: u64, m: u64) -> Bits {
    let mut chunk = Bits::zeros(m);
    for i in 0..m {
        let src = index * m + i;
        if src < stream.len() && stream.get(src) {
            chunk.set(i, true);
        }
    }
    chunk
}

/// Reassembles the k components from delivered chunk plaintexts.
fn decode_transport(records: &[DeliveryRecord], k: u64) -> Vec<u64> {
    let mut values = vec![0u64; k as usize];
    let m = records[0].plaintext.len();
    for (w, value) in values.iter_mut().enumerate() {
        for b in 0..64u64 {
            let t = w as u64 * 64 + b;
            if records[(t / m) as usize].plaintext.get(t % m) {
                *value |= 1 << b;
            }
        }
    }
    values
}
