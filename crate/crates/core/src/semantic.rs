//! Deterministic stand-ins for the text-to-semantic language model and the
//! speaker encoder.
//!
//! Every UTF-8 byte `b` of the input text becomes the two-token motif
//! `(2b, 2b + 1)`, so the mapping is injective and fits the 512-entry toy
//! semantic vocabulary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::constants::TOY_SEMANTIC_VOCAB;

pub const MOTIF_LEN: usize = 2;

pub fn motif(byte: u8) -> [u32; MOTIF_LEN] {
    let b = byte as u32;
    [2 * b, 2 * b + 1]
}

pub fn text_to_semantic(text: &str) -> Vec<u32> {
    text.bytes().flat_map(motif).collect()
}

/// Inverse of [`text_to_semantic`] for well-formed motif sequences.
pub fn semantic_to_bytes(tokens: &[u32]) -> Option<Vec<u8>> {
    if tokens.len() % MOTIF_LEN != 0 {
        return None;
    }
    tokens
        .chunks_exact(MOTIF_LEN)
        .map(|m| (m[0] % 2 == 0 && m[1] == m[0] + 1 && m[0] < TOY_SEMANTIC_VOCAB).then_some((m[0] / 2) as u8))
        .collect()
}

/// Oracle semantic LM: yields the motif sequence one token at a time.
#[derive(Debug, Clone)]
pub struct OracleSemanticLm {
    tokens: Vec<u32>,
    next: usize,
}

impl OracleSemanticLm {
    pub fn new(text: &str) -> Self {
        Self { tokens: text_to_semantic(text), next: 0 }
    }

    pub fn total(&self) -> usize {
        self.tokens.len()
    }
}

impl Iterator for OracleSemanticLm {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        let t = self.tokens.get(self.next).copied();
        self.next += 1;
        t
    }
}

fn unit_gaussian(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

/// Stub speaker encoder: SHA-256 of the prompt audio bytes seeds a unit
/// vector of the embedding dimension.
pub fn speaker_embedding_from_bytes(bytes: &[u8], dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(bytes);
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    unit_gaussian(seed, dim)
}

/// Embedding of a synthetic corpus speaker.
pub fn speaker_embedding_for_id(speaker_id: u64, dim: usize) -> Vec<f64> {
    unit_gaussian(0x5eed_5ea7_0000_0000 ^ speaker_id, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_chars_make_four_tokens() {
        assert_eq!(text_to_semantic("ab"), vec![194, 195, 196, 197]);
        assert!(text_to_semantic("").is_empty());
    }

    #[test]
    fn mapping_is_injective_and_invertible() {
        let all: Vec<u32> = (0..=255u8).flat_map(motif).collect();
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 512);
        assert!(all.iter().all(|&t| t < TOY_SEMANTIC_VOCAB));
        assert_eq!(semantic_to_bytes(&text_to_semantic("héllo")).unwrap(), "héllo".as_bytes());
        assert!(semantic_to_bytes(&[3, 4]).is_none());
    }

    #[test]
    fn oracle_lm_streams_tokens() {
        let lm = OracleSemanticLm::new("hi");
        assert_eq!(lm.total(), 4);
        assert_eq!(lm.collect::<Vec<_>>(), text_to_semantic("hi"));
    }

    #[test]
    fn speaker_stub_is_deterministic_unit_norm() {
        let a = speaker_embedding_from_bytes(b"prompt", 4);
        assert_eq!(a, speaker_embedding_from_bytes(b"prompt", 4));
        assert_ne!(a, speaker_embedding_from_bytes(b"prompT", 4));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
