//! Packed bit buffers.
//!
//! Every bit string in this crate (matrix rows, keystreams, message and
//! ciphertext payloads) shares one layout: bits are packed eight per byte,
//! least-significant bit first, and buffers that are not a whole number of
//! bytes keep their trailing pad bits at zero. Wire records store payloads in
//! exactly this layout, so serialization is a length check plus a byte copy.
//!
//! The XOR primitives work a word at a time. `xor_range_from` is the hot path
//! of keystream derivation: it folds an arbitrary bit-aligned slice of a
//! matrix row into an accumulator roughly 64 bits per step instead of one.

use std::fmt;

/// Bit count above which buffers refuse to allocate. Keeps accidental
/// `k * n` blowups from taking the process down.
pub const MAX_BITS: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BitsError {
    /// Byte buffer length does not match the claimed bit length.
    LengthMismatch { bits: u64, bytes: usize },
    /// Pad bits past the end of the payload must be zero.
    NonzeroPadBits,
    /// Requested length exceeds [`MAX_BITS`].
    TooLong { bits: u64 },
}

impl fmt::Display for BitsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BitsError::LengthMismatch { bits, bytes } => {
                write!(f, "{bytes} bytes cannot hold exactly {bits} bits")
            }
            BitsError::NonzeroPadBits => write!(f, "trailing pad bits are not zero"),
            BitsError::TooLong { bits } => write!(f, "{bits} bits exceeds the {MAX_BITS} bit cap"),
        }
    }
}

impl std::error::Error for BitsError {}

/// Number of bytes needed to hold `bits` bits.
pub const fn byte_len(bits: u64) -> usize {
    ((bits + 7) / 8) as usize
}

/// A fixed-length bit string, LSB-first within each byte, pad bits zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bits {
    len: u64,
    bytes: Vec<u8>,
}

impl Bits {
    pub fn zeros(len: u64) -> Self {
        assert!(len <= MAX_BITS, "bit buffer of {len} bits exceeds cap");
        Bits {
            len,
            bytes: vec![0u8; byte_len(len)],
        }
    }

    /// Wraps an already packed buffer. The byte count must match `len`
    /// exactly and pad bits must be zero.
    pub fn from_bytes(bytes: Vec<u8>, len: u64) -> Result<Self, BitsError> {
        if len > MAX_BITS {
            return Err(BitsError::TooLong { bits: len });
        }
        if bytes.len() != byte_len(len) {
            return Err(BitsError::LengthMismatch {
                bits: len,
                bytes: bytes.len(),
            });
        }
        let pad = (len % 8) as u32;
        if pad != 0 {
            let last = bytes[bytes.len() - 1];
            if last >> pad != 0 {
                return Err(BitsError::NonzeroPadBits);
            }
        }
        Ok(Bits { len, bytes })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn get(&self, i: u64) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.bytes[(i / 8) as usize] >> (i % 8)) & 1 == 1
    }

    pub fn set(&mut self, i: u64, v: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let byte = (i / 8) as usize;
        let mask = 1u8 << (i % 8);
        if v {
            self.bytes[byte] |= mask;
        } else {
            self.bytes[byte] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.bytes.iter().map(|b| b.count_ones() as u64).sum()
    }

    /// XOR of two equal-length buffers, in place.
    pub fn xor_assign(&mut self, other: &Bits) {
        assert_eq!(self.len, other.len, "xor of unequal bit lengths");
        for (a, b) in self.bytes.iter_mut().zip(&other.bytes) {
            *a ^= b;
        }
    }

    pub fn hamming(&self, other: &Bits) -> u64 {
        assert_eq!(self.len, other.len, "hamming of unequal bit lengths");
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as u64)
            .sum()
    }

    /// XORs `len` bits of `src` starting at `src_start` into `self` starting
    /// at `dst_start`. Ranges must lie inside both buffers.
    pub fn xor_range_from(&mut self, dst_start: u64, src: &Bits, src_start: u64, len: u64) {
        assert!(src_start + len <= src.len, "source range out of bounds");
        assert!(dst_start + len <= self.len, "destination range out of bounds");
        let mut done = 0u64;
        while done < len {
            let chunk = (len - done).min(64) as u32;
            let w = read_word(&src.bytes, src_start + done, chunk);
            xor_word(&mut self.bytes, dst_start + done, w, chunk);
            done += u64::from(chunk);
        }
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits[{}; ", self.len)?;
        for i in 0..self.len.min(64) {
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        if self.len > 64 {
            write!(f, "..")?;
        }
        write!(f, "]")
    }
}

/// Loads up to 8 bytes at `byte_idx` as a little-endian word, zero-padded
/// past the end of the buffer.
fn load_word(bytes: &[u8], byte_idx: usize) -> u64 {
    let mut buf = [0u8; 8];
    if byte_idx < bytes.len() {
        let end = (byte_idx + 8).min(bytes.len());
        buf[..end - byte_idx].copy_from_slice(&bytes[byte_idx..end]);
    }
    u64::from_le_bytes(buf)
}

/// Reads `count <= 64` bits starting at bit offset `bit`.
pub(crate) fn read_word(bytes: &[u8], bit: u64, count: u32) -> u64 {
    debug_assert!(count <= 64);
    let byte = (bit / 8) as usize;
    let shift = (bit % 8) as u32;
    let mut w = load_word(bytes, byte) >> shift;
    if shift != 0 {
        w |= load_word(bytes, byte + 8) << (64 - shift);
    }
    if count == 64 {
        w
    } else {
        w & ((1u64 << count) - 1)
    }
}

/// XORs the low `count` bits of `w` into the buffer at bit offset `bit`.
/// Bits of `w` at `count` and above must be zero.
pub(crate) fn xor_word(bytes: &mut [u8], bit: u64, w: u64, count: u32) {
    debug_assert!(count <= 64);
    debug_assert!(count == 64 || w >> count == 0);
    let byte = (bit / 8) as usize;
    let shift = (bit % 8) as u32;
    let v = u128::from(w) << shift;
    let touched = ((u64::from(shift) + u64::from(count)) + 7) / 8;
    for i in 0..touched as usize {
        bytes[byte + i] ^= (v >> (8 * i)) as u8;
    }
}
