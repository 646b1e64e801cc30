use rand::Rng;

use super::OpqError;
use crate::frames::Frames;
use crate::nn::Param;
use crate::scalar::Scalar;

/// Product quantizer over `n_streams` disjoint groups of `group_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpqQuantizer<T> {
    /// One `[codebook_size, group_dim]` tensor per stream.
    pub codebooks: Vec<Param<T>>,
    n_streams: usize,
    group_dim: usize,
    codebook_size: u32,
}

impl<T: Scalar> OpqQuantizer<T> {
    pub fn new(n_streams: usize, group_dim: usize, codebook_size: u32, std: f64, rng: &mut impl Rng) -> Self {
        let codebooks = (0..n_streams)
            .map(|g| Param::normal(format!("opq.codebook{g}"), &[codebook_size as usize, group_dim], std, rng))
            .collect();
        Self { codebooks, n_streams, group_dim, codebook_size }
    }

    /// Builds from explicit codebooks, each `codebook_size × group_dim` row-major.
    pub fn from_codebooks(group_dim: usize, books: Vec<Vec<T>>) -> Self {
        assert!(!books.is_empty() && group_dim > 0);
        let k = books[0].len() / group_dim;
        let codebooks = books
            .into_iter()
            .enumerate()
            .map(|(g, data)| {
                assert_eq!(data.len(), k * group_dim, "ragged codebooks");
                Param { name: format!("opq.codebook{g}"), shape: vec![k, group_dim], data }
            })
            .collect::<Vec<_>>();
        Self { n_streams: codebooks.len(), codebooks, group_dim, codebook_size: k as u32 }
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }

    pub fn group_dim(&self) -> usize {
        self.group_dim
    }

    pub fn dim(&self) -> usize {
        self.n_streams * self.group_dim
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    pub fn codeword(&self, stream: usize, id: u32) -> &[T] {
        let d = self.group_dim;
        &self.codebooks[stream].data[id as usize * d..(id as usize + 1) * d]
    }

    pub fn codeword_mut(&mut self, stream: usize, id: u32) -> &mut [T] {
        let d = self.group_dim;
        &mut self.codebooks[stream].data[id as usize * d..(id as usize + 1) * d]
    }

    /// Nearest codeword in one group; ties go to the lowest id.
    pub fn nearest(&self, stream: usize, sub: &[T]) -> u32 {
        let mut best = 0u32;
        let mut best_d = T::infinity();
        for id in 0..self.codebook_size {
            let d: T = self.codeword(stream, id).iter().zip(sub).map(|(&c, &v)| (c - v) * (c - v)).sum();
            if d < best_d {
                best_d = d;
                best = id;
            }
        }
        best
    }

    pub fn encode(&self, vec: &[T]) -> Result<Vec<u32>, OpqError> {
        if vec.len() != self.dim() {
            return Err(OpqError::DimMismatch { expected: self.dim(), got: vec.len() });
        }
        Ok(vec.chunks(self.group_dim).enumerate().map(|(g, sub)| self.nearest(g, sub)).collect())
    }

    /// Concatenates the codewords of streams `0..keep_k`; later groups are zero.
    pub fn decode(&self, ids: &[u32], keep_k: usize) -> Result<Vec<T>, OpqError> {
        if keep_k == 0 || keep_k > self.n_streams {
            return Err(OpqError::KeepOutOfRange(keep_k));
        }
        if ids.len() != self.n_streams {
            return Err(OpqError::StreamCount { expected: self.n_streams, got: ids.len() });
        }
        let mut out = vec![T::zero(); self.dim()];
        for (g, &id) in ids.iter().enumerate() {
            if id >= self.codebook_size {
                return Err(OpqError::IdOutOfRange { stream: g, id, size: self.codebook_size });
            }
            if g < keep_k {
                out[g * self.group_dim..(g + 1) * self.group_dim].copy_from_slice(self.codeword(g, id));
            }
        }
        Ok(out)
    }

    /// Encodes every frame; returns per-frame id columns.
    pub fn encode_frames(&self, x: &Frames<T>) -> Result<Vec<Vec<u32>>, OpqError> {
        x.rows().map(|r| self.encode(r)).collect()
    }

    pub fn decode_columns(&self, cols: &[Vec<u32>], keep_k: usize) -> Result<Frames<T>, OpqError> {
        let mut out = Frames::new(self.dim());
        for c in cols {
            out.push(&self.decode(c, keep_k)?);
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.codebooks.iter().all(|c| c.data.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn quantizer(seed: u64) -> OpqQuantizer<f64> {
        OpqQuantizer::new(8, 8, 64, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Exhaustive search over every (stream, id), written independently.
    fn brute_force(q: &OpqQuantizer<f64>, v: &[f64]) -> Vec<u32> {
        (0..8)
            .map(|g| {
                let sub = &v[g * 8..g * 8 + 8];
                let dists: Vec<f64> = (0..64)
                    .map(|id| {
                        let cw = &q.codebooks[g].data[id * 8..id * 8 + 8];
                        cw.iter().zip(sub).map(|(a, b)| (a - b).powi(2)).sum()
                    })
                    .collect();
                let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
                dists.iter().position(|&d| d == min).unwrap() as u32
            })
            .collect()
    }

    #[test]
    fn exact_codewords_are_retrieved() {
        let q = quantizer(1);
        let ids = [3u32, 7, 0, 63, 12, 5, 40, 1];
        let v: Vec<f64> = ids.iter().enumerate().flat_map(|(g, &id)| q.codeword(g, id).to_vec()).collect();
        assert_eq!(q.encode(&v).unwrap(), ids);
        assert_eq!(q.decode(&ids, 8).unwrap(), v);
    }

    #[test]
    fn zero_vector_hits_zero_codeword() {
        let mut q = quantizer(2);
        for g in 0..8 {
            q.codeword_mut(g, 0).fill(0.0);
        }
        assert_eq!(q.encode(&[0.0; 64]).unwrap(), vec![0; 8]);
    }

    #[test]
    fn ties_break_to_lowest_id() {
        let q = OpqQuantizer::<f64>::from_codebooks(1, vec![vec![1.0, -1.0, 1.0]]);
        assert_eq!(q.encode(&[0.0]).unwrap(), vec![0]);
        assert_eq!(q.encode(&[2.0]).unwrap(), vec![0]);
        assert_eq!(q.encode(&[-2.0]).unwrap(), vec![1]);
    }

    #[test]
    fn matches_brute_force_on_1000_vectors() {
        let q = quantizer(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
            assert_eq!(q.encode(&v).unwrap(), brute_force(&q, &v));
        }
    }

    #[test]
    fn decode_zeroes_dropped_streams() {
        let q = quantizer(5);
        let ids = vec![1u32; 8];
        let one = q.decode(&ids, 1).unwrap();
        assert_eq!(&one[..8], q.codeword(0, 1));
        assert!(one[8..].iter().all(|&v| v == 0.0));
        let full = q.decode(&ids, 8).unwrap();
        assert!(full.chunks(8).enumerate().all(|(g, c)| c == q.codeword(g, 1)));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let q = quantizer(6);
        assert!(matches!(q.encode(&[0.0; 63]), Err(OpqError::DimMismatch { expected: 64, got: 63 })));
        assert!(matches!(q.decode(&[0; 8], 0), Err(OpqError::KeepOutOfRange(0))));
        assert!(matches!(q.decode(&[0; 8], 9), Err(OpqError::KeepOutOfRange(9))));
        assert!(matches!(q.decode(&[0, 0, 64, 0, 0, 0, 0, 0], 8), Err(OpqError::IdOutOfRange { stream: 2, id: 64, .. })));
        assert!(matches!(q.decode(&[0; 7], 8), Err(OpqError::StreamCount { .. })));
    }

    proptest! {
        #[test]
        fn prop_decoded_prefix_is_stable(ids in proptest::collection::vec(0u32..64, 8), k in 1usize..=8) {
            let q = quantizer(7);
            let part = q.decode(&ids, k).unwrap();
            let full = q.decode(&ids, 8).unwrap();
            prop_assert_eq!(&part[..k * 8], &full[..k * 8]);
            prop_assert!(part[k * 8..].iter().all(|&v| v == 0.0));
        }

        #[test]
        fn prop_encode_is_deterministic(seed in any::<u64>()) {
            let q = quantizer(8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
            prop_assert_eq!(q.encode(&v).unwrap(), q.encode(&v).unwrap());
        }
    }
}
