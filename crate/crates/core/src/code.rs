//! Human-transcribable codes with a trailing weighted checksum.
//!
//! A code is `payload_length` characters drawn uniformly from the policy
//! alphabet followed by one checksum character. The checksum is
//! `sum(w_i * v_i) mod n` where `v_i` is the alphabet index of payload
//! character `i`, `n` is the alphabet size and every weight `w_i` is coprime
//! to `n`, so any single-character substitution changes the checksum.
//!
//! Voucher and confirmation codes share one policy but live in disjoint
//! namespaces: the first payload character of a voucher code comes from the
//! lower half of the alphabet, that of a confirmation code from the upper
//! half.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Crockford base-32: digits plus uppercase letters without I, L, O, U.
pub const CROCKFORD_ALPHABET: &str = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";

/// Minimum payload entropy a policy must provide.
pub const MIN_ENTROPY_BITS: f64 = 40.0;

const GROUP_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodeError {
    #[error("code policy provides {bits:.1} bits of entropy, need at least {MIN_ENTROPY_BITS}")]
    PolicyTooWeak { bits: f64 },
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("malformed code")]
    MalformedCode,
    #[error("checksum mismatch")]
    ChecksumMismatch,
}

/// Which family of codes a code belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Namespace {
    /// No restriction on the first character.
    Any,
    Voucher,
    Confirmation,
}

impl Namespace {
    fn first_char_range(self, alphabet_len: usize) -> std::ops::Range<usize> {
        let half = alphabet_len / 2;
        match self {
            Namespace::Any => 0..alphabet_len,
            Namespace::Voucher => 0..half,
            Namespace::Confirmation => half..alphabet_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodePolicy {
    alphabet: Vec<char>,
    payload_length: usize,
    checksum_enabled: bool,
    weights: Vec<u64>,
}

impl Default for CodePolicy {
    fn default() -> Self {
        CodePolicy::new(CROCKFORD_ALPHABET, 9, true).expect("default policy is valid")
    }
}

impl CodePolicy {
    /// Builds a policy. The alphabet must be distinct uppercase ASCII
    /// alphanumerics; entropy is checked at generation time, not here, so
    /// weak policies can still validate existing codes.
    pub fn new(
        alphabet: &str,
        payload_length: usize,
        checksum_enabled: bool,
    ) -> Result<Self, CodeError> {
        let chars: Vec<char> = alphabet.chars().collect();
        if chars.len() < 2 {
            return Err(CodeError::InvalidAlphabet(
                "need at least two characters".into(),
            ));
        }
        if let Some(c) = chars
            .iter()
            .find(|c| !(c.is_ascii_digit() || c.is_ascii_uppercase()))
        {
            return Err(CodeError::InvalidAlphabet(format!(
                "unsupported character {c:?}"
            )));
        }
        let mut sorted = chars.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != chars.len() {
            return Err(CodeError::InvalidAlphabet("duplicate characters".into()));
        }
        if payload_length == 0 {
            return Err(CodeError::InvalidAlphabet(
                "payload length must be positive".into(),
            ));
        }
        let weights = coprime_weights(chars.len() as u64, payload_length);
        Ok(CodePolicy {
            alphabet: chars,
            payload_length,
            checksum_enabled,
            weights,
        })
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn payload_length(&self) -> usize {
        self.payload_length
    }

    pub fn checksum_enabled(&self) -> bool {
        self.checksum_enabled
    }

    /// Total characters in a canonical code.
    pub fn code_length(&self) -> usize {
        self.payload_length + usize::from(self.checksum_enabled)
    }

    /// Entropy in bits of a payload drawn from `namespace`.
    pub fn entropy_bits(&self, namespace: Namespace) -> f64 {
        let n = self.alphabet.len();
        let first = namespace.first_char_range(n).len() as f64;
        first.log2() + (self.payload_length - 1) as f64 * (n as f64).log2()
    }

    fn index_of(&self, c: char) -> Option<usize> {
        self.alphabet.iter().position(|&a| a == c)
    }

    /// Checksum character for `payload` (alphabet indices).
    fn checksum_of(&self, payload: &[usize]) -> char {
        let n = self.alphabet.len() as u64;
        let sum = payload
            .iter()
            .zip(&self.weights)
            .fold(0u64, |acc, (&v, &w)| (acc + w * v as u64) % n);
        self.alphabet[sum as usize]
    }
}

/// The first `count` positive integers coprime to `modulus`, reduced mod
/// `modulus`. For base 32 these are 1, 3, 5, ...
fn coprime_weights(modulus: u64, count: usize) -> Vec<u64> {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    (1..)
        .filter(|&w| gcd(w, modulus) == 1)
        .take(count)
        .map(|w| w % modulus)
        .collect()
}

/// A canonical code: uppercase, no separators, checksum verified.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoucherCode(String);

impl VoucherCode {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Grouped rendering, e.g. `XXXXX-XXXXX`.
    pub fn render(&self) -> String {
        let chars: Vec<char> = self.0.chars().collect();
        chars
            .chunks(GROUP_LEN)
            .map(|g| g.iter().collect::<String>())
            .collect::<Vec<_>>()
            .join("-")
    }
}

impl fmt::Display for VoucherCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Draws a fresh code from `rng`.
pub fn generate_code<R: Rng + ?Sized>(
    policy: &CodePolicy,
    namespace: Namespace,
    rng: &mut R,
) -> Result<VoucherCode, CodeError> {
    let bits = policy.entropy_bits(namespace);
    if bits < MIN_ENTROPY_BITS {
        return Err(CodeError::PolicyTooWeak { bits });
    }
    let n = policy.alphabet.len();
    let mut payload = Vec::with_capacity(policy.payload_length);
    payload.push(rng.random_range(namespace.first_char_range(n)));
    for _ in 1..policy.payload_length {
        payload.push(rng.random_range(0..n));
    }
    let mut text: String = payload.iter().map(|&i| policy.alphabet[i]).collect();
    if policy.checksum_enabled {
        text.push(policy.checksum_of(&payload));
    }
    Ok(VoucherCode(text))
}

fn fold_glyph(c: char) -> char {
    match c {
        'O' => '0',
        'I' | 'L' => '1',
        other => other,
    }
}

/// Canonicalizes user input and verifies it.
///
/// Case-folds, strips separators and whitespace, maps look-alike letters
/// (O to 0, I and L to 1) that are not themselves in the alphabet, then checks
/// length, alphabet, namespace, and checksum.
pub fn normalize_and_check(
    raw: &str,
    policy: &CodePolicy,
    namespace: Namespace,
) -> Result<VoucherCode, CodeError> {
    let mut indices = Vec::with_capacity(policy.code_length());
    for c in raw.chars() {
        if c.is_whitespace() || matches!(c, '-' | '_' | '.') {
            continue;
        }
        let upper = c.to_ascii_uppercase();
        let idx = policy
            .index_of(upper)
            .or_else(|| policy.index_of(fold_glyph(upper)))
            .ok_or(CodeError::MalformedCode)?;
        indices.push(idx);
        if indices.len() > policy.code_length() {
            return Err(CodeError::MalformedCode);
        }
    }
    if indices.len() != policy.code_length() {
        return Err(CodeError::MalformedCode);
    }
    if !namespace
        .first_char_range(policy.alphabet.len())
        .contains(&indices[0])
    {
        return Err(CodeError::MalformedCode);
    }
    let payload = &indices[..policy.payload_length];
    if policy.checksum_enabled {
        let expected = policy.checksum_of(payload);
        if policy.alphabet[indices[policy.payload_length]] != expected {
            return Err(CodeError::ChecksumMismatch);
        }
    }
    Ok(VoucherCode(
        indices.iter().map(|&i| policy.alphabet[i]).collect(),
    ))
}
