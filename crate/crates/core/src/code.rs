//! Binary hash codes and the primitives that operate on them.
//!
//! A [`HashCode`] is a fixed-length string of `k` bits, packed eight to a byte
//! with bit 0 stored in the most significant bit of byte 0. This is the same
//! layout the index file uses on disk, so codes are written out verbatim.

use std::fmt;

use crate::error::{Error, Result};

/// Output nonlinearity of the encoder head, together with its binarization rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Relu];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Sigmoid => 1,
            Activation::Relu => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    /// The relu derivative at exactly 0 is taken as 0.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Maps an activation output onto `[0, 1]`, the scale the loss compares
    /// against binary centers.
    #[inline]
    pub fn to_unit(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => (y + 1.0) * 0.5,
            Activation::Sigmoid => y,
            Activation::Relu => y.clamp(0.0, 1.0),
        }
    }

    /// Derivative of [`Activation::to_unit`].
    #[inline]
    pub fn to_unit_derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 0.5,
            Activation::Sigmoid => 1.0,
            Activation::Relu => {
                if y > 0.0 && y < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub fn bit(self, y: f64) -> bool {
        match self {
            Activation::Tanh => y >= 0.0,
            Activation::Sigmoid => y >= 0.5,
            Activation::Relu => y > 0.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!(
                "unknown activation {other:?} (expected tanh, sigmoid or relu)"
            ))),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Packed binary code of `k` bits.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    bytes: Vec<u8>,
    bits: usize,
}

impl HashCode {
    pub fn zeros(bits: usize) -> Result<Self> {
        check_bits(bits)?;
        Ok(HashCode {
            bytes: vec![0; bits / 8],
            bits,
        })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mut code = HashCode::zeros(bits.len())?;
        for (i, &b) in bits.iter().enumerate() {
            code.set(i, b);
        }
        Ok(code)
    }

    /// Builds a code from `0`/`1` integers; anything non-zero counts as 1.
    pub fn from_bit_values(values: &[u8]) -> Result<Self> {
        let bools: Vec<bool> = values.iter().map(|&v| v != 0).collect();
        HashCode::from_bits(&bools)
    }

    /// Wraps packed bytes (bit 0 = MSB of byte 0).
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let bits = bytes.len() * 8;
        check_bits(bits)?;
        Ok(HashCode { bytes, bits })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    #[inline]
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.bits, "bit {i} out of range for {}-bit code", self.bits);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.bits, "bit {i} out of range for {}-bit code", self.bits);
        let mask = 0x80 >> (i % 8);
        if value {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.bits).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }

    pub fn complement(&self) -> HashCode {
        HashCode {
            bytes: self.bytes.iter().map(|b| !b).collect(),
            bits: self.bits,
        }
    }

    /// Bits as `0.0` / `1.0`.
    pub fn to_unit_vec(&self) -> Vec<f64> {
        self.iter().map(|b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl fmt::Debug for HashCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashCode({}b ", self.bits)?;
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

fn check_bits(bits: usize) -> Result<()> {
    if bits == 0 || bits % 8 != 0 {
        return Err(Error::InvalidBits(bits));
    }
    Ok(())
}

/// Real-valued encoder output before binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedCode {
    pub values: Vec<f64>,
    pub activation: Activation,
}

impl RelaxedCode {
    pub fn new(values: Vec<f64>, activation: Activation) -> Self {
        RelaxedCode { values, activation }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The code mapped onto `[0, 1]^k`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&y| self.activation.to_unit(y))
            .collect()
    }
}

/// Thresholds a relaxed code: `tanh` at 0 (inclusive), `sigmoid` at 0.5
/// (inclusive), `relu` on strict positivity.
pub fn binarize(code: &RelaxedCode) -> Result<HashCode> {
    let mut out = HashCode::zeros(code.len())?;
    for (i, &y) in code.values.iter().enumerate() {
        if code.activation.bit(y) {
            out.set(i, true);
        }
    }
    Ok(out)
}

/// Number of differing bit positions.
pub fn hamming(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::LengthMismatch {
            left: a.bits,
            right: b.bits,
        });
    }
    Ok(hamming_bytes(&a.bytes, &b.bytes))
}

/// Hamming distance over equal-length packed byte slices.
#[inline]
pub fn hamming_bytes(x: &[u8], y: &[u8]) -> u32 {
    debug_assert_eq!(x.len(), y.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { hamming_popcnt(x, y) };
        }
    }
    hamming_words(x, y)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn hamming_popcnt(x: &[u8], y: &[u8]) -> u32 {
    hamming_words(x, y)
}

#[inline(always)]
fn hamming_words(x: &[u8], y: &[u8]) -> u32 {
    let xs = x.chunks_exact(8);
    let ys = y.chunks_exact(8);
    let tail: u32 = xs
        .remainder()
        .iter()
        .zip(ys.remainder())
        .map(|(a, b)| (a ^ b).count_ones())
        .sum();
    xs.zip(ys)
        .map(|(a, b)| {
            let a = u64::from_ne_bytes(a.try_into().unwrap());
            let b = u64::from_ne_bytes(b.try_into().unwrap());
            (a ^ b).count_ones()
        })
        .sum::<u32>()
        + tail
}

/// Per-bit majority vote over `codes`; exact ties take the anchor's bit.
pub fn vote_center(codes: &[HashCode], anchor: &HashCode) -> Result<HashCode> {
    let first = codes
        .first()
        .ok_or(Error::Empty("vote_center: no codes to vote over"))?;
    let bits = first.len();
    for c in codes.iter().chain(std::iter::once(anchor)) {
        if c.len() != bits {
            return Err(Error::LengthMismatch {
                left: bits,
                right: c.len(),
            });
        }
    }
    let mut ones = vec![0usize; bits];
    for c in codes {
        for (i, count) in ones.iter_mut().enumerate() {
            if c.get(i) {
                *count += 1;
            }
        }
    }
    let n = codes.len();
    let mut out = HashCode::zeros(bits)?;
    for (i, &count) in ones.iter().enumerate() {
        let bit = match (2 * count).cmp(&n) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => anchor.get(i),
        };
        out.set(i, bit);
    }
    Ok(out)
}

/// Mean Hamming distance over all unordered pairs.
pub fn mean_pairwise_hamming(centers: &[HashCode]) -> Result<f64> {
    if centers.len() < 2 {
        return Err(Error::Empty(
            "mean_pairwise_hamming: need at least two centers",
        ));
    }
    let mut total = 0u64;
    let mut pairs = 0u64;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            total += u64::from(hamming(a, b)?);
            pairs += 1;
        }
    }
    Ok(total as f64 / pairs as f64)
}
