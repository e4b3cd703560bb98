//! Matrix-pad encryption for device fleets.
//!
//! A fleet shares one secret random bit matrix; every device pair holds a
//! handful of short keys that index into it. Each key unlocks a budget of
//! disjoint one-time-pad windows, so a few kilobytes of key material carry
//! gigabytes of traffic with information-theoretic secrecy against outside
//! observers and quantifiable leakage toward insiders.
//!
//! The crate is organized around that life cycle:
//!
//! * [`bits`], [`rng`]: packed bit buffers and reproducible randomness.
//! * [`params`]: validity rules tying together matrix shape, message
//!   length, and per-key window budgets.
//! * [`otp`]: the pad itself. Matrix and key generation, keystream
//!   derivation, encrypt, decrypt.
//! * [`wire`]: the on-disk record formats for matrices, keys, and
//!   ciphertext frames.
//! * [`analytics`]: closed-form security and capacity numbers at deployment
//!   scale, evaluated exactly or to configurable precision.
//! * [`attack`]: the adversary's side. Exhaustive key search, collision and
//!   pad-failure estimators, an exact Bayes-optimal distinguisher at micro
//!   scale.
//! * [`fleet`]: a multi-device simulator with budget bookkeeping, an
//!   eavesdropper transcript, dynamic key distribution, and admission.
//! * [`scenario`]: a line-oriented mission script format driving [`fleet`].
//! * [`bench`]: avalanche and runtime measurements.

pub mod analytics;
pub mod attack;
pub mod bench;
pub mod bits;
pub mod fleet;
pub mod otp;
pub mod params;
pub mod rng;
pub mod scenario;
pub mod wire;

pub use bits::Bits;
pub use otp::{decrypt, derive_keystream, encrypt, Ciphertext, Keystream, MatrixSpec, PairwiseKey, RandomMatrix};
pub use params::{max_eta, validate_params, Pair, SystemParams};
pub use rng::RandomSource;
