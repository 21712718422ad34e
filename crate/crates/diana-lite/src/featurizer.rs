//! Frozen feature encoder mapping (context, question) to a fixed-length
//! unit vector.
//!
//! Signed feature hashing over unigrams and adjacent bigrams: each n-gram is
//! FNV-1a-64 hashed, the hash picks a bucket (`hash % dim`) and a sign (top
//! bit), and the final vector is L2-normalized. The encoder is never trained;
//! every key-matching decision in the system runs on its output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier recorded in checkpoints so vectors are reproducible.
pub const FEATURIZER_ID: &str = "fnv1a64-sgn/v1";

/// Separator token inserted between a non-empty context and a non-empty
/// question before n-gram collection.
pub const SEPARATOR: &str = "[SEP]";

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a 64-bit hash of a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// A unit-norm feature vector of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn accumulate(ngram: &str, dim: usize, out: &mut [f64]) {
    let hash = fnv1a64(ngram.as_bytes());
    let bucket = (hash % dim as u64) as usize;
    let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
    out[bucket] += sign;
}

/// Encode a (context, question) pair into a `dim`-dimensional unit vector.
///
/// The hashed sequence is `context ++ [SEP] ++ question`, with the separator
/// present only when both sides are non-empty. Bigrams are hashed as the two
/// tokens joined by a single space.
pub fn encode(context: &[String], question: &[String], dim: usize) -> Result<FeatureVector> {
    if dim < 2 {
        return Err(Error::Config(format!(
            "feature dimension must be at least 2, got {dim}"
        )));
    }
    if context.is_empty() && question.is_empty() {
        return Err(Error::Encoding(
            "cannot encode an empty context and question".to_string(),
        ));
    }

    let mut sequence: Vec<&str> = Vec::with_capacity(context.len() + question.len() + 1);
    sequence.extend(context.iter().map(String::as_str));
    if !context.is_empty() && !question.is_empty() {
        sequence.push(SEPARATOR);
    }
    sequence.extend(question.iter().map(String::as_str));

    let mut values = vec![0.0; dim];
    for token in &sequence {
        accumulate(token, dim, &mut values);
    }
    for pair in sequence.windows(2) {
        let bigram = format!("{} {}", pair[0], pair[1]);
        accumulate(&bigram, dim, &mut values);
    }

    let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // All signed counts cancelled; nothing to normalize.
        return Err(Error::Encoding(
            "input hashed to the zero vector".to_string(),
        ));
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(FeatureVector { values })
}
