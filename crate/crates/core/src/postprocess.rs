//! Key post-processing after the error test passes: parity-bisection
//! reconciliation over shuffled blocks, then privacy amplification with a
//! seed-derived Toeplitz hash over GF(2).
//!
//! Both stages are intentionally plain. Reconciliation is one pass of block
//! parity comparison per round with a fresh shared permutation; it does not
//! revisit earlier rounds the way Cascade does.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Bits removed on top of the disclosed parities during privacy amplification.
pub const DEFAULT_SAFETY_MARGIN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Alice,
    Bob,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Alice => "alice",
            Party::Bob => "bob",
        })
    }
}

/// A party's key bits (each 0 or 1) after sifting and test-sample removal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftedKey {
    pub bits: Vec<u8>,
    pub origin: Party,
}

impl SiftedKey {
    pub fn new(bits: Vec<u8>, origin: Party) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Self { bits, origin }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn hamming_distance(&self, other: &SiftedKey) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconciliation {
    pub key_a: SiftedKey,
    pub key_b: SiftedKey,
    /// Parity bits disclosed on the public channel.
    pub leaked: usize,
    /// Positions where `key_b` was flipped, in the order they were found.
    pub corrected: Vec<usize>,
}

fn parity(bits: &[u8], positions: &[usize]) -> u8 {
    positions.iter().fold(0, |acc, &p| acc ^ bits[p])
}

/// Makes `key_b` agree with `key_a`.
///
/// Each round applies a shared random permutation, compares the parity of
/// every block of `block_size` positions and, for each mismatched block,
/// bisects on half-block parities until the single differing position is
/// found and flipped in `key_b`. Every compared parity counts toward `leaked`.
pub fn reconcile<R: Rng + ?Sized>(
    key_a: &SiftedKey,
    key_b: &SiftedKey,
    rounds: usize,
    block_size: usize,
    rng: &mut R,
) -> Result<Reconciliation> {
    if key_a.len() != key_b.len() {
        return Err(Error::LengthMismatch {
            left: key_a.len(),
            right: key_b.len(),
        });
    }
    assert!(block_size >= 1, "block_size must be positive");
    let a = &key_a.bits;
    let mut b = key_b.bits.clone();
    let mut leaked = 0;
    let mut corrected = Vec::new();
    let mut order: Vec<usize> = (0..a.len()).collect();

    for _ in 0..rounds {
        order.shuffle(rng);
        for block in order.chunks(block_size) {
            leaked += 1;
            if parity(a, block) == parity(&b, block) {
                continue;
            }
            let mut span = block;
            while span.len() > 1 {
                let (left, right) = span.split_at(span.len() / 2);
                leaked += 1;
                span = if parity(a, left) != parity(&b, left) {
                    left
                } else {
                    right
                };
            }
            b[span[0]] ^= 1;
            corrected.push(span[0]);
        }
    }

    Ok(Reconciliation {
        key_a: key_a.clone(),
        key_b: SiftedKey::new(b, key_b.origin),
        leaked,
        corrected,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalKey {
    pub bits: Vec<u8>,
    pub leaked_bits: usize,
}

/// The `rows + cols − 1` diagonal constants of the Toeplitz hash matrix.
fn toeplitz_diagonals(hash_seed: u64, rows: usize, cols: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed);
    (0..rows + cols - 1)
        .map(|_| rng.random::<bool>() as u8)
        .collect()
}

/// Compresses `key` to `len − leaked − safety_margin` bits with the Toeplitz
/// matrix `T[i][j] = d[i − j + len − 1]`, where `d` is drawn from `hash_seed`.
/// The product over GF(2) is evaluated as an integer convolution via FFT and
/// reduced mod 2.
pub fn privacy_amplify(
    key: &SiftedKey,
    leaked: usize,
    safety_margin: usize,
    hash_seed: u64,
) -> Result<FinalKey> {
    let n = key.len();
    if n <= leaked.saturating_add(safety_margin) {
        return Err(Error::KeyTooShort {
            length: n,
            leaked,
            margin: safety_margin,
        });
    }
    let out_len = n - leaked - safety_margin;
    let diagonals = toeplitz_diagonals(hash_seed, out_len, n);

    let size = (diagonals.len() + n - 1).next_power_of_two();
    let lift = |bits: &[u8]| {
        let mut v: Vec<Complex<f64>> = bits
            .iter()
            .map(|&b| Complex::new(f64::from(b), 0.0))
            .collect();
        v.resize(size, Complex::new(0.0, 0.0));
        v
    };
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut x = lift(&diagonals);
    let mut y = lift(&key.bits);
    forward.process(&mut x);
    forward.process(&mut y);
    for (xi, yi) in x.iter_mut().zip(&y) {
        *xi *= yi;
    }
    inverse.process(&mut x);

    let scale = size as f64;
    let bits = x[n - 1..n - 1 + out_len]
        .iter()
        .map(|c| {
            let v = c.re / scale;
            let r = v.round();
            assert!(
                (v - r).abs() < 0.25,
                "FFT convolution lost integer precision"
            );
            (r as u64 & 1) as u8
        })
        .collect();
    Ok(FinalKey {
        bits,
        leaked_bits: leaked,
    })
}

/// Lowercase hex, most-significant bit first, zero-padded to a whole byte.
pub fn bits_to_hex(bits: &[u8]) -> String {
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i)))
        })
        .collect();
    hex::encode(bytes)
}

/// Inverse of [`bits_to_hex`] for a key of `len` bits.
pub fn bits_from_hex(s: &str, len: usize) -> Result<Vec<u8>> {
    let bytes = hex::decode(s.trim()).map_err(|e| Error::KeyEncoding(e.to_string()))?;
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::KeyEncoding(format!(
            "{} bytes cannot hold exactly {len} bits",
            bytes.len()
        )));
    }
    Ok((0..len)
        .map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1)
        .collect())
}
