//! The matrix pad itself: shared matrix, pairwise keys, keystream
//! derivation, and the XOR cipher on top.
//!
//! A deployment shares one secret `k x n` bit matrix. Each device pair holds
//! keys `Z` in `{0..n-1}^k`; component `j` of a key points into row `j` of
//! the matrix. Bit `i` (1-based) of the keystream for window `eta` is
//!
//! ```text
//! X[i] = XOR over rows j of  matrix[j][ (Z[j] + m*(eta-1) + i - 1) mod n ]
//! ```
//!
//! so a key yields `eta_max` disjoint m-bit pads, one per window. Encryption
//! is the plain XOR of message and keystream; decryption is the same
//! operation, so both share one code path.
//!
//! `derive_keystream` only checks shape, not parameter validity: attack
//! experiments deliberately drive it outside the sound region (message
//! longer than a row, bias 0 or 1, single-column groups). `encrypt` and
//! `decrypt` do enforce validity for the window they are asked to use;
//! budget bookkeeping beyond that lives in the fleet simulator.

use crate::bits::{Bits, MAX_BITS};
use crate::params::{validate_params, Pair, ParamReport};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OtpError {
    #[error("matrix must have k >= 1 rows, n >= 1 columns, bias in [0,1]; got k={k} n={n} bias={bias}")]
    BadMatrixShape { k: u64, n: u64, bias: f64 },
    #[error("matrix of {bits} bits exceeds the {MAX_BITS} bit cap")]
    MatrixTooLarge { bits: u128 },
    #[error("key needs k >= 1 components, got none")]
    EmptyKey,
    #[error("key component {index} is {value}, outside 0..{n}")]
    KeyComponentOutOfRange { index: usize, value: u64, n: u64 },
    #[error("matrix is {matrix_k} x {matrix_n} but key expects {key_k} x {key_n}")]
    DimensionMismatch {
        matrix_k: u64,
        matrix_n: u64,
        key_k: u64,
        key_n: u64,
    },
    #[error("window index eta must be at least 1")]
    ZeroEta,
    #[error("{0}")]
    InvalidParams(ParamReport),
    #[error("ciphertext header {got_pair} slot {got_slot} does not match key {key_pair} slot {key_slot}")]
    HeaderMismatch {
        key_pair: Pair,
        key_slot: u16,
        got_pair: Pair,
        got_slot: u16,
    },
}

/// Shape and fill law of a shared matrix: `k` rows, `n` columns, each bit
/// one with probability `bias`. Production deployments use `bias = 0.5`;
/// other values exist for attack experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixSpec {
    k: u64,
    n: u64,
    bias: f64,
}

impl MatrixSpec {
    pub fn new(k: u64, n: u64) -> Result<Self, OtpError> {
        Self::with_bias(k, n, 0.5)
    }

    // n = 1 is a degenerate single-column shape, usable for keystream
    // derivation corner cases though never for valid encryption parameters
    pub fn with_bias(k: u64, n: u64, bias: f64) -> Result<Self, OtpError> {
        if k < 1 || n < 1 || !(0.0..=1.0).contains(&bias) {
            return Err(OtpError::BadMatrixShape { k, n, bias });
        }
        if u128::from(k) * u128::from(n) > u128::from(MAX_BITS) {
            return Err(OtpError::MatrixTooLarge {
                bits: u128::from(k) * u128::from(n),
            });
        }
        Ok(MatrixSpec { k, n, bias })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }
}

/// The shared secret matrix, bit-packed row-major: row `j` occupies bits
/// `j*n .. (j+1)*n` of the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMatrix {
    spec: MatrixSpec,
    bits: Bits,
}

impl RandomMatrix {
    pub fn generate(spec: MatrixSpec, rng: &mut RandomSource) -> Self {
        let bits = rng.bits(spec.k * spec.n, spec.bias);
        RandomMatrix { spec, bits }
    }

    /// Rebuilds a matrix from its packed bits; used by the wire format.
    pub fn from_parts(spec: MatrixSpec, bits: Bits) -> Result<Self, OtpError> {
        if bits.len() != spec.k * spec.n {
            return Err(OtpError::DimensionMismatch {
                matrix_k: spec.k,
                matrix_n: spec.n,
                key_k: 0,
                key_n: bits.len(),
            });
        }
        Ok(RandomMatrix { spec, bits })
    }

    pub fn spec(&self) -> MatrixSpec {
        self.spec
    }

    pub fn bit(&self, row: u64, col: u64) -> bool {
        assert!(row < self.spec.k && col < self.spec.n);
        self.bits.get(row * self.spec.n + col)
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.count_ones()
    }

    pub fn packed(&self) -> &Bits {
        &self.bits
    }
}

/// One pairwise key: `k` indices into the matrix columns, each below `n`.
/// `slot` distinguishes the keys a pair holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseKey {
    pair: Pair,
    slot: u16,
    n: u64,
    values: Vec<u64>,
}

impl PairwiseKey {
    pub fn new(pair: Pair, slot: u16, n: u64, values: Vec<u64>) -> Result<Self, OtpError> {
        if values.is_empty() {
            return Err(OtpError::EmptyKey);
        }
        for (index, &value) in values.iter().enumerate() {
            if value >= n {
                return Err(OtpError::KeyComponentOutOfRange { index, value, n });
            }
        }
        Ok(PairwiseKey {
            pair,
            slot,
            n,
            values,
        })
    }

    /// Draws a fresh uniform key. `n = 1` is degenerate (the all-zero key)
    /// but allowed so attack tooling can build single-column corner cases.
    pub fn generate(n: u64, k: u64, pair: Pair, slot: u16, rng: &mut RandomSource) -> Self {
        assert!(n >= 1 && k >= 1);
        let values = (0..k).map(|_| rng.below(n)).collect();
        PairwiseKey {
            pair,
            slot,
            n,
            values,
        }
    }

    pub fn pair(&self) -> Pair {
        self.pair
    }

    pub fn slot(&self) -> u16 {
        self.slot
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> u64 {
        self.values.len() as u64
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    /// The sub-key selecting keystream bit `i` of window `eta` (both
    /// 1-based): every component shifted by `m*(eta-1) + i - 1` mod n.
    pub fn subkey(&self, m: u64, eta: u64, i: u64) -> Vec<u64> {
        assert!(eta >= 1, "windows are 1-based");
        assert!(i >= 1 && i <= m, "bit position {i} outside 1..={m}");
        let offset = add_mod(window_offset(self.n, m, eta), (i - 1) % self.n, self.n);
        self.values
            .iter()
            .map(|&z| add_mod(z, offset, self.n))
            .collect()
    }
}

fn add_mod(a: u64, b: u64, n: u64) -> u64 {
    ((u128::from(a) + u128::from(b)) % u128::from(n)) as u64
}

/// `m * (eta - 1) mod n` without overflow.
fn window_offset(n: u64, m: u64, eta: u64) -> u64 {
    ((u128::from(m) * u128::from(eta - 1)) % u128::from(n)) as u64
}

/// An m-bit pad tied to (pair, slot, window).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keystream {
    pub pair: Pair,
    pub slot: u16,
    pub eta: u64,
    pub bits: Bits,
}

/// An encrypted frame body: header fields plus the XORed payload. The wire
/// format adds magic, version, and checksum around this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub pair: Pair,
    pub slot: u16,
    pub eta: u64,
    pub payload: Bits,
}

fn check_dims(matrix: &RandomMatrix, key: &PairwiseKey) -> Result<(), OtpError> {
    if matrix.spec.k != key.k() || matrix.spec.n != key.n {
        return Err(OtpError::DimensionMismatch {
            matrix_k: matrix.spec.k,
            matrix_n: matrix.spec.n,
            key_k: key.k(),
            key_n: key.n,
        });
    }
    Ok(())
}

/// Derives the m-bit keystream for `(key, eta)`. Shape checks only; callers
/// wanting the sound parameter region go through `encrypt`.
///
/// Row `j` contributes a contiguous (mod n) run of `m` bits starting at
/// column `Z[j] + m*(eta-1)`; the runs are XOR-folded word-wise.
pub fn derive_keystream(
    matrix: &RandomMatrix,
    key: &PairwiseKey,
    m: u64,
    eta: u64,
) -> Result<Keystream, OtpError> {
    check_dims(matrix, key)?;
    if eta == 0 {
        return Err(OtpError::ZeroEta);
    }
    assert!(m >= 1, "empty keystream");
    let n = matrix.spec.n;
    let offset = window_offset(n, m, eta);
    let mut acc = Bits::zeros(m);
    for (j, &z) in key.values.iter().enumerate() {
        let row_base = j as u64 * n;
        let mut col = add_mod(z, offset, n);
        let mut written = 0u64;
        // When m > n (attack corner cases) the run laps the row repeatedly.
        while written < m {
            let seg = (m - written).min(n - col);
            acc.xor_range_from(written, matrix.packed(), row_base + col, seg);
            written += seg;
            col = 0;
        }
    }
    Ok(Keystream {
        pair: key.pair,
        slot: key.slot,
        eta,
        bits: acc,
    })
}

/// Encrypts one message in window `eta`. The window must sit inside the
/// sound parameter region: `k < m` and `eta * m <= floor((n+1)/2)` (strictly
/// below for `eta = 1`).
pub fn encrypt(
    matrix: &RandomMatrix,
    key: &PairwiseKey,
    message: &Bits,
    eta: u64,
) -> Result<Ciphertext, OtpError> {
    check_dims(matrix, key)?;
    if eta == 0 {
        return Err(OtpError::ZeroEta);
    }
    let report = validate_params(matrix.spec.n, matrix.spec.k, message.len(), eta);
    if !report.is_valid() {
        return Err(OtpError::InvalidParams(report));
    }
    let ks = derive_keystream(matrix, key, message.len(), eta)?;
    let mut payload = message.clone();
    payload.xor_assign(&ks.bits);
    Ok(Ciphertext {
        pair: key.pair,
        slot: key.slot,
        eta,
        payload,
    })
}

/// Inverts `encrypt`. The ciphertext header must name exactly this key.
pub fn decrypt(
    matrix: &RandomMatrix,
    key: &PairwiseKey,
    ciphertext: &Ciphertext,
) -> Result<Bits, OtpError> {
    if ciphertext.pair != key.pair || ciphertext.slot != key.slot {
        return Err(OtpError::HeaderMismatch {
            key_pair: key.pair,
            key_slot: key.slot,
            got_pair: ciphertext.pair,
            got_slot: ciphertext.slot,
        });
    }
    check_dims(matrix, key)?;
    if ciphertext.eta == 0 {
        return Err(OtpError::ZeroEta);
    }
    let report = validate_params(
        matrix.spec.n,
        matrix.spec.k,
        ciphertext.payload.len(),
        ciphertext.eta,
    );
    if !report.is_valid() {
        return Err(OtpError::InvalidParams(report));
    }
    let ks = derive_keystream(matrix, key, ciphertext.payload.len(), ciphertext.eta)?;
    let mut plain = ciphertext.payload.clone();
    plain.xor_assign(&ks.bits);
    Ok(plain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair01() -> Pair {
        Pair::new(0, 1).unwrap()
    }

    fn key(n: u64, values: &[u64]) -> PairwiseKey {
        PairwiseKey::new(pair01(), 0, n, values.to_vec()).unwrap()
    }

    /// Reference keystream: indexes the matrix one bit at a time, straight
    /// from the defining formula. The production path must match this on
    /// every input, including m > n wraparound.
    fn naive_keystream(matrix: &RandomMatrix, key: &PairwiseKey, m: u64, eta: u64) -> Bits {
        let n = matrix.spec().n();
        let mut out = Bits::zeros(m);
        for i in 1..=m {
            let mut bit = false;
            for (j, &z) in key.values().iter().enumerate() {
                let col = (u128::from(z) + u128::from(m) * u128::from(eta - 1) + u128::from(i)
                    - 1)
                    % u128::from(n);
                bit ^= matrix.bit(j as u64, col as u64);
            }
            out.set(i - 1, bit);
        }
        out
    }

    // ---- frozen sub-key vectors, worked by hand from the shift rule ----

    #[test]
    fn subkey_shifts_every_component() {
        // Z = (6,1), n = 8, m = 3: window 2 bit 2 sits at offset 3*1 + 1 = 4
        let k = key(8, &[6, 1]);
        assert_eq!(k.subkey(3, 2, 2), vec![2, 5]);
        // Z = (5), n = 8, m = 3: window 1 bit 3 sits at offset 2
        let k = key(8, &[5]);
        assert_eq!(k.subkey(3, 1, 3), vec![7]);
        // offset wraps: window 3 of m = 3 starts at 6, bit 3 lands on (5+8)%8
        assert_eq!(k.subkey(3, 3, 3), vec![5]);
    }

    #[test]
    fn subkey_offset_survives_huge_windows() {
        let k = key(1 << 33, &[1, (1 << 33) - 1]);
        // eta near u64::MAX: offset arithmetic must stay exact mod n
        let eta = u64::MAX;
        let m = 1 << 10;
        let expect_shift = ((u128::from(m) * u128::from(eta - 1)) % (1u128 << 33)) as u64;
        let sk = k.subkey(m, eta, 1);
        assert_eq!(sk[0], (1 + u128::from(expect_shift)) as u64 % (1 << 33));
    }

    #[test]
    fn keystream_matches_naive_oracle_on_fixed_cases() {
        let mut rng = RandomSource::seeded(11);
        for (n, k_rows, m, eta) in [
            (8u64, 1u64, 3u64, 1u64),
            (8, 2, 3, 1),
            (16, 2, 7, 2),
            (16, 2, 24, 1), // m > n: run laps the row
            (64, 3, 5, 6),
            (257, 4, 100, 1), // odd group order
        ] {
            let matrix =
                RandomMatrix::generate(MatrixSpec::new(k_rows, n).unwrap(), &mut rng);
            let key = PairwiseKey::generate(n, k_rows, pair01(), 0, &mut rng);
            let fast = derive_keystream(&matrix, &key, m, eta).unwrap();
            let slow = naive_keystream(&matrix, &key, m, eta);
            assert_eq!(fast.bits, slow, "n={n} k={k_rows} m={m} eta={eta}");
        }
    }

    proptest! {
        #[test]
        fn keystream_matches_naive_oracle(
            n in 2u64..120,
            k_rows in 1u64..6,
            m in 1u64..200,
            eta in 1u64..10,
            seed: u64,
        ) {
            let mut rng = RandomSource::seeded(seed);
            let matrix = RandomMatrix::generate(MatrixSpec::new(k_rows, n).unwrap(), &mut rng);
            let key = PairwiseKey::generate(n, k_rows, pair01(), 0, &mut rng);
            let fast = derive_keystream(&matrix, &key, m, eta).unwrap();
            prop_assert_eq!(fast.bits, naive_keystream(&matrix, &key, m, eta));
        }

        #[test]
        fn decrypt_inverts_encrypt(
            n in 16u64..200,
            k_rows in 1u64..4,
            seed: u64,
        ) {
            let mut rng = RandomSource::seeded(seed);
            let limit = crate::params::half_group(n);
            let m = (k_rows + 1).max(limit.saturating_sub(1).min(40));
            prop_assume!(m > k_rows && m < limit);
            let matrix = RandomMatrix::generate(MatrixSpec::new(k_rows, n).unwrap(), &mut rng);
            let key = PairwiseKey::generate(n, k_rows, pair01(), 3, &mut rng);
            let msg = rng.bits(m, 0.5);
            let ct = encrypt(&matrix, &key, &msg, 1).unwrap();
            prop_assert_eq!(decrypt(&matrix, &key, &ct).unwrap(), msg);
        }
    }

    #[test]
    fn ciphertext_is_message_xor_keystream() {
        let mut rng = RandomSource::seeded(21);
        let matrix = RandomMatrix::generate(MatrixSpec::new(2, 64).unwrap(), &mut rng);
        let key = PairwiseKey::generate(64, 2, pair01(), 0, &mut rng);
        let msg = rng.bits(20, 0.5);
        let ct = encrypt(&matrix, &key, &msg, 1).unwrap();
        let ks = derive_keystream(&matrix, &key, 20, 1).unwrap();
        let mut expect = msg.clone();
        expect.xor_assign(&ks.bits);
        assert_eq!(ct.payload, expect);
        assert_eq!((ct.pair, ct.slot, ct.eta), (pair01(), 0, 1));
    }

    #[test]
    fn zero_matrix_passes_message_through() {
        let mut rng = RandomSource::seeded(22);
        let matrix =
            RandomMatrix::generate(MatrixSpec::with_bias(2, 64, 0.0).unwrap(), &mut rng);
        assert_eq!(matrix.count_ones(), 0);
        let key = PairwiseKey::generate(64, 2, pair01(), 0, &mut rng);
        let msg = rng.bits(10, 0.5);
        let ct = encrypt(&matrix, &key, &msg, 1).unwrap();
        assert_eq!(ct.payload, msg);
    }

    #[test]
    fn all_ones_matrix_with_even_k_cancels() {
        let mut rng = RandomSource::seeded(23);
        let matrix =
            RandomMatrix::generate(MatrixSpec::with_bias(2, 64, 1.0).unwrap(), &mut rng);
        let key = PairwiseKey::generate(64, 2, pair01(), 0, &mut rng);
        // two all-one rows XOR to zero
        let ks = derive_keystream(&matrix, &key, 12, 1).unwrap();
        assert_eq!(ks.bits.count_ones(), 0);
    }

    #[test]
    fn windows_use_disjoint_positions_per_row() {
        let mut rng = RandomSource::seeded(24);
        let (n, k_rows, m, eta_max) = (64u64, 3u64, 5u64, 6u64);
        assert!(validate_params(n, k_rows, m, eta_max).is_valid());
        for _ in 0..100 {
            let key = PairwiseKey::generate(n, k_rows, pair01(), 0, &mut rng);
            for j in 0..k_rows as usize {
                let mut seen = std::collections::BTreeSet::new();
                for eta in 1..=eta_max {
                    for i in 1..=m {
                        seen.insert(key.subkey(m, eta, i)[j]);
                    }
                }
                assert_eq!(seen.len() as u64, m * eta_max, "row {j} reused a column");
            }
        }
    }

    #[test]
    fn generated_fair_matrix_is_balanced() {
        let mut rng = RandomSource::seeded(25);
        let spec = MatrixSpec::new(46, 1 << 20).unwrap();
        let matrix = RandomMatrix::generate(spec, &mut rng);
        let frac = matrix.count_ones() as f64 / (46.0 * (1u64 << 20) as f64);
        assert!((0.499..=0.501).contains(&frac), "ones fraction {frac}");
    }

    #[test]
    fn generated_key_components_are_uniformish() {
        // per-component mean over many draws approaches (n-1)/2
        let mut rng = RandomSource::seeded(26);
        let n = 1u64 << 33;
        let draws = 100_000u64;
        let mut sum = 0u128;
        for _ in 0..draws {
            let k = PairwiseKey::generate(n, 46, pair01(), 0, &mut rng);
            sum += k.values().iter().map(|&v| u128::from(v)).sum::<u128>();
        }
        let mean = sum as f64 / (draws as f64 * 46.0);
        let expect = (n - 1) as f64 / 2.0;
        assert!((mean - expect).abs() / expect < 0.01, "mean {mean} vs {expect}");
    }

    #[test]
    fn degenerate_single_column_key_is_all_zero() {
        let mut rng = RandomSource::seeded(27);
        let k = PairwiseKey::generate(1, 4, pair01(), 0, &mut rng);
        assert_eq!(k.values(), &[0, 0, 0, 0]);
    }

    #[test]
    fn encrypt_rejects_unsound_windows() {
        let mut rng = RandomSource::seeded(28);
        let matrix = RandomMatrix::generate(MatrixSpec::new(3, 16).unwrap(), &mut rng);
        let key = PairwiseKey::generate(16, 3, pair01(), 0, &mut rng);
        // k = 3 >= m = 2
        assert!(matches!(
            encrypt(&matrix, &key, &Bits::zeros(2), 1),
            Err(OtpError::InvalidParams(_))
        ));
        // m = 8 = half_group(16): single-message rule is strict
        assert!(matches!(
            encrypt(&matrix, &key, &Bits::zeros(8), 1),
            Err(OtpError::InvalidParams(_))
        ));
        // window 2 of m = 5 overruns half_group(16) = 8
        assert!(matches!(
            encrypt(&matrix, &key, &Bits::zeros(5), 2),
            Err(OtpError::InvalidParams(_))
        ));
        assert!(encrypt(&matrix, &key, &Bits::zeros(4), 2).is_ok());
        assert!(matches!(
            encrypt(&matrix, &key, &Bits::zeros(5), 0),
            Err(OtpError::ZeroEta)
        ));
    }

    #[test]
    fn decrypt_rejects_foreign_headers() {
        let mut rng = RandomSource::seeded(29);
        let matrix = RandomMatrix::generate(MatrixSpec::new(2, 64).unwrap(), &mut rng);
        let key = PairwiseKey::generate(64, 2, pair01(), 0, &mut rng);
        let msg = rng.bits(10, 0.5);
        let mut ct = encrypt(&matrix, &key, &msg, 1).unwrap();
        ct.slot = 1;
        assert!(matches!(
            decrypt(&matrix, &key, &ct),
            Err(OtpError::HeaderMismatch { .. })
        ));
        ct.slot = 0;
        ct.pair = Pair::new(0, 2).unwrap();
        assert!(matches!(
            decrypt(&matrix, &key, &ct),
            Err(OtpError::HeaderMismatch { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = RandomSource::seeded(30);
        let matrix = RandomMatrix::generate(MatrixSpec::new(2, 64).unwrap(), &mut rng);
        let key = PairwiseKey::generate(32, 2, pair01(), 0, &mut rng);
        assert!(matches!(
            derive_keystream(&matrix, &key, 10, 1),
            Err(OtpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let run = || {
            let mut rng = RandomSource::seeded(31);
            let matrix = RandomMatrix::generate(MatrixSpec::new(4, 128).unwrap(), &mut rng);
            let key = PairwiseKey::generate(128, 4, pair01(), 0, &mut rng);
            let ct = encrypt(&matrix, &key, &rng.bits(30, 0.5), 2).unwrap();
            (
                matrix.packed().as_bytes().to_vec(),
                key.values().to_vec(),
                ct.payload.into_bytes(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn key_constructor_validates_components() {
        assert!(matches!(
            PairwiseKey::new(pair01(), 0, 8, vec![]),
            Err(OtpError::EmptyKey)
        ));
        assert!(matches!(
            PairwiseKey::new(pair01(), 0, 8, vec![3, 8]),
            Err(OtpError::KeyComponentOutOfRange { index: 1, value: 8, n: 8 })
        ));
    }
}
