//! On-disk record formats.
//!
//! Three record types share a 6-byte prelude: the magic `MPAD`, a format
//! version byte (currently 0x01), and a record type byte. All integers are
//! little-endian; bit payloads use the crate-wide packing (8 bits per byte,
//! LSB first, zero pad bits).
//!
//! ```text
//! matrix (0x01): MPAD 01 01 | k u64 | n u64 | bias f64 | ceil(k*n/8) bytes
//! key    (0x02): MPAD 01 02 | q u32 | l u32 (q < l) | slot u16 | n u64 | k u64 | k values u64
//! frame  (0x03): MPAD 01 03 | q u32 | l u32 | slot u16 | eta u64 | m u64 |
//!                ceil(m/8) payload bytes | CRC-32 u32 over every preceding frame byte
//! ```
//!
//! The frame checksum is plain CRC-32 (the reflected 0xEDB88320 polynomial);
//! it flags corruption, it does not authenticate. Frames concatenate back to
//! back in transcript dumps, so `read_frames` keeps parsing until EOF.

use crate::bits::{byte_len, Bits, MAX_BITS};
use crate::otp::{Ciphertext, MatrixSpec, OtpError, PairwiseKey, RandomMatrix};
use crate::params::Pair;
use std::io::{self, Read, Write};

pub const MAGIC: [u8; 4] = *b"MPAD";
pub const VERSION: u8 = 0x01;
pub const RECORD_MATRIX: u8 = 0x01;
pub const RECORD_KEY: u8 = 0x02;
pub const RECORD_FRAME: u8 = 0x03;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("record is truncated")]
    Truncated,
    #[error("bad magic {0:02x?}, expected \"MPAD\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("record type {got:#04x} where {expected:#04x} was expected")]
    WrongRecordType { expected: u8, got: u8 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("key record must order the pair q < l, got q={q} l={l}")]
    UnorderedPair { q: u32, l: u32 },
    #[error("payload of {bits} bits exceeds the {MAX_BITS} bit cap")]
    OversizedPayload { bits: u64 },
    #[error("payload pad bits are not zero")]
    NonzeroPadBits,
    #[error("field {field} holds invalid value")]
    BadField { field: &'static str },
    #[error(transparent)]
    Otp(#[from] OtpError),
}

/// CRC-32, reflected form, polynomial 0xEDB88320, init and xorout all-ones.
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in data {
        crc ^= u32::from(byte);
        for _ in 0..8 {
            let low = crc & 1;
            crc >>= 1;
            if low != 0 {
                crc ^= 0xEDB8_8320;
            }
        }
    }
    !crc
}

fn prelude(record: u8) -> [u8; 6] {
    [MAGIC[0], MAGIC[1], MAGIC[2], MAGIC[3], VERSION, record]
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), WireError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::Truncated
        } else {
            WireError::Io(e)
        }
    })
}

fn read_prelude(r: &mut impl Read, expected: u8) -> Result<(), WireError> {
    let mut head = [0u8; 6];
    read_exact(r, &mut head)?;
    check_prelude(&head, expected)
}

fn check_prelude(head: &[u8; 6], expected: u8) -> Result<(), WireError> {
    let magic: [u8; 4] = head[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if head[4] != VERSION {
        return Err(WireError::UnsupportedVersion(head[4]));
    }
    if head[5] != expected {
        return Err(WireError::WrongRecordType {
            expected,
            got: head[5],
        });
    }
    Ok(())
}

fn read_u16(r: &mut impl Read) -> Result<u16, WireError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, WireError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, WireError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_matrix(w: &mut impl Write, matrix: &RandomMatrix) -> Result<(), WireError> {
    let spec = matrix.spec();
    w.write_all(&prelude(RECORD_MATRIX))?;
    w.write_all(&spec.k().to_le_bytes())?;
    w.write_all(&spec.n().to_le_bytes())?;
    w.write_all(&spec.bias().to_le_bytes())?;
    w.write_all(matrix.packed().as_bytes())?;
    Ok(())
}

pub fn read_matrix(r: &mut impl Read) -> Result<RandomMatrix, WireError> {
    read_prelude(r, RECORD_MATRIX)?;
    let k = read_u64(r)?;
    let n = read_u64(r)?;
    let mut bias_bytes = [0u8; 8];
    read_exact(r, &mut bias_bytes)?;
    let bias = f64::from_le_bytes(bias_bytes);
    if !bias.is_finite() {
        return Err(WireError::BadField { field: "bias" });
    }
    let spec = MatrixSpec::with_bias(k, n, bias)?;
    let mut packed = vec![0u8; byte_len(k * n)];
    read_exact(r, &mut packed)?;
    let bits = Bits::from_bytes(packed, k * n).map_err(|_| WireError::NonzeroPadBits)?;
    Ok(RandomMatrix::from_parts(spec, bits)?)
}

pub fn write_key(w: &mut impl Write, key: &PairwiseKey) -> Result<(), WireError> {
    w.write_all(&prelude(RECORD_KEY))?;
    w.write_all(&key.pair().q().to_le_bytes())?;
    w.write_all(&key.pair().l().to_le_bytes())?;
    w.write_all(&key.slot().to_le_bytes())?;
    w.write_all(&key.n().to_le_bytes())?;
    w.write_all(&key.k().to_le_bytes())?;
    for &v in key.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_key(r: &mut impl Read) -> Result<PairwiseKey, WireError> {
    read_prelude(r, RECORD_KEY)?;
    let q = read_u32(r)?;
    let l = read_u32(r)?;
    if q >= l {
        return Err(WireError::UnorderedPair { q, l });
    }
    let slot = read_u16(r)?;
    let n = read_u64(r)?;
    let k = read_u64(r)?;
    if k == 0 || k > MAX_BITS / 64 {
        return Err(WireError::BadField { field: "k" });
    }
    let mut values = Vec::with_capacity(k as usize);
    for _ in 0..k {
        values.push(read_u64(r)?);
    }
    let pair = Pair::new(q, l).expect("q < l checked");
    Ok(PairwiseKey::new(pair, slot, n, values)?)
}

/// Serializes one ciphertext frame, checksum included.
pub fn frame_bytes(ct: &Ciphertext) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + ct.payload.as_bytes().len());
    out.extend_from_slice(&prelude(RECORD_FRAME));
    out.extend_from_slice(&ct.pair.q().to_le_bytes());
    out.extend_from_slice(&ct.pair.l().to_le_bytes());
    out.extend_from_slice(&ct.slot.to_le_bytes());
    out.extend_from_slice(&ct.eta.to_le_bytes());
    out.extend_from_slice(&ct.payload.len().to_le_bytes());
    out.extend_from_slice(ct.payload.as_bytes());
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn write_frame(w: &mut impl Write, ct: &Ciphertext) -> Result<(), WireError> {
    w.write_all(&frame_bytes(ct))?;
    Ok(())
}

/// Parses one frame. The checksum must match; a nonzero pad bit with a valid
/// checksum means a malformed writer and is rejected too.
pub fn read_frame(r: &mut impl Read) -> Result<Ciphertext, WireError> {
    let mut head = [0u8; 32];
    read_exact(r, &mut head)?;
    parse_frame_after_header(r, head)
}

fn parse_frame_after_header(r: &mut impl Read, head: [u8; 32]) -> Result<Ciphertext, WireError> {
    check_prelude(&head[..6].try_into().unwrap(), RECORD_FRAME)?;
    let q = u32::from_le_bytes(head[6..10].try_into().unwrap());
    let l = u32::from_le_bytes(head[10..14].try_into().unwrap());
    if q >= l {
        return Err(WireError::UnorderedPair { q, l });
    }
    let slot = u16::from_le_bytes(head[14..16].try_into().unwrap());
    let eta = u64::from_le_bytes(head[16..24].try_into().unwrap());
    let m = u64::from_le_bytes(head[24..32].try_into().unwrap());
    if m == 0 || m > MAX_BITS {
        return Err(WireError::OversizedPayload { bits: m });
    }
    let mut payload = vec![0u8; byte_len(m)];
    read_exact(r, &mut payload)?;
    let mut crc_bytes = [0u8; 4];
    read_exact(r, &mut crc_bytes)?;
    let stored = u32::from_le_bytes(crc_bytes);

    let mut crc = crc32(&head);
    crc = crc32_continue(crc, &payload);
    if stored != crc {
        return Err(WireError::CrcMismatch {
            stored,
            computed: crc,
        });
    }
    let payload = Bits::from_bytes(payload, m).map_err(|_| WireError::NonzeroPadBits)?;
    Ok(Ciphertext {
        pair: Pair::new(q, l).expect("q < l checked"),
        slot,
        eta,
        payload,
    })
}

/// Resumes a CRC whose running value over the previous bytes is `crc`.
fn crc32_continue(crc: u32, data: &[u8]) -> u32 {
    let mut c = !crc;
    for &byte in data {
        c ^= u32::from(byte);
        for _ in 0..8 {
            let low = c & 1;
            c >>= 1;
            if low != 0 {
                c ^= 0xEDB8_8320;
            }
        }
    }
    !c
}

/// Parses concatenated frames until EOF. A clean boundary at EOF ends the
/// stream; anything partial is `Truncated`.
pub fn read_frames(r: &mut impl Read) -> Result<Vec<Ciphertext>, WireError> {
    let mut frames = Vec::new();
    loop {
        let mut head = [0u8; 32];
        let mut filled = 0;
        while filled < head.len() {
            let got = r.read(&mut head[filled..])?;
            if got == 0 {
                break;
            }
            filled += got;
        }
        if filled == 0 {
            return Ok(frames);
        }
        if filled < head.len() {
            return Err(WireError::Truncated);
        }
        frames.push(parse_frame_after_header(r, head)?);
    }
}
