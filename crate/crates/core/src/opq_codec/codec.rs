use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{OpqError, OpqQuantizer};
use crate::checkpoint::Checkpoint;
use crate::constants::{ACOUSTIC_STREAMS, ANALYSIS_SAMPLES_PER_FRAME, SYNTHESIS_SAMPLES_PER_FRAME, TOY_ACOUSTIC_CODEBOOK_SIZE};
use crate::frames::Frames;
use crate::nn::{Dense, Param, Parameterized};
use crate::scalar::Scalar;
use crate::streaming_kernels::{CausalConv1d, ConvState};
use crate::token_streams::MultiStreamGrid;

pub const CODEC_CHECKPOINT_KIND: &str = "opq-codec-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    pub analysis_samples: usize,
    pub synthesis_samples: usize,
    pub embed_dim: usize,
    pub n_streams: usize,
    pub codebook_size: u32,
    pub conv_kernel: usize,
}

impl CodecConfig {
    pub fn toy() -> Self {
        Self {
            analysis_samples: ANALYSIS_SAMPLES_PER_FRAME,
            synthesis_samples: SYNTHESIS_SAMPLES_PER_FRAME,
            embed_dim: 64,
            n_streams: ACOUSTIC_STREAMS,
            codebook_size: TOY_ACOUSTIC_CODEBOOK_SIZE,
            conv_kernel: 2,
        }
    }

    pub fn group_dim(&self) -> usize {
        self.embed_dim / self.n_streams
    }

    /// Output length for `n` input samples: the 1.5× rate ratio, rounded up.
    pub fn output_len(&self, n: usize) -> usize {
        (n * self.synthesis_samples).div_ceil(self.analysis_samples)
    }
}

/// Analysis/synthesis codec: `tanh(conv(W_in · frame))` → OPQ →
/// `W_out · tanh(conv(q))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCodec<T> {
    pub cfg: CodecConfig,
    pub enc_in: Dense<T>,
    pub enc_conv: CausalConv1d<T>,
    pub quantizer: OpqQuantizer<T>,
    pub dec_conv: CausalConv1d<T>,
    pub dec_out: Dense<T>,
}

/// Streaming encoder state: partial frame samples plus conv history.
#[derive(Debug, Clone)]
pub struct EncodeState<T> {
    pending: Vec<T>,
    conv: ConvState<T>,
    finished: bool,
}

impl<T: Scalar> EncodeState<T> {
    pub fn pending_samples(&self) -> usize {
        self.pending.len()
    }
}

#[derive(Debug, Clone)]
pub struct DecodeState<T> {
    conv: ConvState<T>,
    keep_k: usize,
}

impl<T: Scalar> DecodeState<T> {
    pub fn frames_decoded(&self) -> usize {
        self.conv.frames_consumed()
    }
}

impl<T: Scalar> ToyCodec<T> {
    pub fn new(cfg: CodecConfig, seed: u64) -> Self {
        assert_eq!(cfg.embed_dim % cfg.n_streams, 0, "groups must partition the embedding");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.embed_dim;
        Self {
            enc_in: Dense::new("enc.in", cfg.analysis_samples, d, true, &mut rng),
            enc_conv: CausalConv1d::new("enc.conv", d, d, cfg.conv_kernel, &mut rng),
            quantizer: OpqQuantizer::new(cfg.n_streams, cfg.group_dim(), cfg.codebook_size, 0.3, &mut rng),
            dec_conv: CausalConv1d::new("dec.conv", d, d, cfg.conv_kernel, &mut rng),
            dec_out: Dense::new("dec.out", d, cfg.synthesis_samples, true, &mut rng),
            cfg,
        }
    }

    pub fn toy(seed: u64) -> Self {
        Self::new(CodecConfig::toy(), seed)
    }

    /// Splits a waveform into analysis frames, zero-padding the last one.
    pub fn frame_wave(&self, wave: &[T]) -> Frames<T> {
        let n = self.cfg.analysis_samples;
        let mut f = Frames::new(n);
        for c in wave.chunks(n) {
            let mut row = c.to_vec();
            row.resize(n, T::zero());
            f.push(&row);
        }
        f
    }

    fn embed_frames(&self, frames: &Frames<T>) -> Result<Frames<T>, OpqError> {
        Ok(self.enc_conv.forward_full(&self.enc_in.forward(frames))?.map(|v| v.tanh()))
    }

    /// Pre-quantization embeddings, one per analysis frame.
    pub fn embed(&self, wave16k: &[T]) -> Result<Frames<T>, OpqError> {
        self.embed_frames(&self.frame_wave(wave16k))
    }

    fn to_grid(&self, cols: Vec<Vec<u32>>) -> Result<MultiStreamGrid, OpqError> {
        let mut g = MultiStreamGrid::empty(self.cfg.n_streams, self.cfg.codebook_size);
        for c in cols {
            g.push_column(&c)?;
        }
        Ok(g)
    }

    pub fn encode(&self, wave16k: &[T]) -> Result<MultiStreamGrid, OpqError> {
        let e = self.embed(wave16k)?;
        self.to_grid(self.quantizer.encode_frames(&e)?)
    }

    pub fn init_encoder(&self) -> EncodeState<T> {
        EncodeState { pending: Vec::new(), conv: self.enc_conv.init_state(), finished: false }
    }

    /// Embeds every analysis frame completed by `samples`. With `flush` the
    /// trailing partial frame is zero-padded and emitted too.
    pub fn embed_chunk(&self, st: &mut EncodeState<T>, samples: &[T], flush: bool) -> Result<Frames<T>, OpqError> {
        if st.finished {
            return Err(OpqError::Finished);
        }
        st.pending.extend_from_slice(samples);
        let n = self.cfg.analysis_samples;
        let whole = if flush { st.pending.len().div_ceil(n) * n } else { st.pending.len() / n * n };
        let take: Vec<T> = st.pending.drain(..whole.min(st.pending.len())).collect();
        st.finished = flush;
        let frames = self.frame_wave(&take);
        Ok(self.enc_conv.step(&mut st.conv, &self.enc_in.forward(&frames))?.map(|v| v.tanh()))
    }

    pub fn encode_chunk(&self, st: &mut EncodeState<T>, samples: &[T], flush: bool) -> Result<MultiStreamGrid, OpqError> {
        let e = self.embed_chunk(st, samples, flush)?;
        self.to_grid(self.quantizer.encode_frames(&e)?)
    }

    fn check_grid(&self, grid: &MultiStreamGrid) -> Result<(), OpqError> {
        if grid.streams() != self.cfg.n_streams {
            return Err(OpqError::StreamCount { expected: self.cfg.n_streams, got: grid.streams() });
        }
        Ok(())
    }

    /// Synthesis from (possibly truncated) quantized embeddings.
    pub fn synthesize(&self, q: &Frames<T>) -> Result<Frames<T>, OpqError> {
        Ok(self.dec_out.forward(&self.dec_conv.forward_full(q)?.map(|v| v.tanh())))
    }

    /// Full-pass decode: 960 samples at 24 kHz per grid column.
    pub fn decode(&self, grid: &MultiStreamGrid, keep_k: usize) -> Result<Vec<T>, OpqError> {
        self.check_grid(grid)?;
        let cols: Vec<Vec<u32>> = (0..grid.frames()).map(|c| grid.column(c)).collect();
        Ok(self.synthesize(&self.quantizer.decode_columns(&cols, keep_k)?)?.into_vec())
    }

    pub fn init_decoder(&self, keep_k: usize) -> Result<DecodeState<T>, OpqError> {
        if keep_k == 0 || keep_k > self.cfg.n_streams {
            return Err(OpqError::KeepOutOfRange(keep_k));
        }
        Ok(DecodeState { conv: self.dec_conv.init_state(), keep_k })
    }

    pub fn decode_chunk(&self, st: &mut DecodeState<T>, grid: &MultiStreamGrid) -> Result<Vec<T>, OpqError> {
        self.check_grid(grid)?;
        let cols: Vec<Vec<u32>> = (0..grid.frames()).map(|c| grid.column(c)).collect();
        let q = self.quantizer.decode_columns(&cols, st.keep_k)?;
        let h = self.dec_conv.step(&mut st.conv, &q)?.map(|v| v.tanh());
        Ok(self.dec_out.forward(&h).into_vec())
    }

    /// 16 kHz in, 24 kHz out, truncated to 1.5× the input length.
    pub fn roundtrip(&self, wave16k: &[T]) -> Result<Vec<T>, OpqError> {
        let mut out = self.decode(&self.encode(wave16k)?, self.cfg.n_streams)?;
        out.truncate(self.cfg.output_len(wave16k.len()));
        Ok(out)
    }

    pub fn encoder_params(&self) -> Vec<&Param<T>> {
        let mut v = self.enc_in.params();
        v.extend(self.enc_conv.params());
        v
    }

    pub fn decoder_params(&self) -> Vec<&Param<T>> {
        let mut v = self.dec_conv.params();
        v.extend(self.dec_out.params());
        v
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.cfg;
        let meta = BTreeMap::from([
            ("analysis_samples".to_string(), c.analysis_samples as u64),
            ("synthesis_samples".to_string(), c.synthesis_samples as u64),
            ("embed_dim".to_string(), c.embed_dim as u64),
            ("n_streams".to_string(), c.n_streams as u64),
            ("codebook_size".to_string(), c.codebook_size as u64),
            ("conv_kernel".to_string(), c.conv_kernel as u64),
        ]);
        Checkpoint::from_params(CODEC_CHECKPOINT_KIND, meta, &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, OpqError> {
        let m = |k: &str| ck.meta_value(k).map(|v| v as usize);
        let cfg = CodecConfig {
            analysis_samples: m("analysis_samples")?,
            synthesis_samples: m("synthesis_samples")?,
            embed_dim: m("embed_dim")?,
            n_streams: m("n_streams")?,
            codebook_size: m("codebook_size")? as u32,
            conv_kernel: m("conv_kernel")?,
        };
        let mut codec = Self::new(cfg, 0);
        ck.apply_to(CODEC_CHECKPOINT_KIND, &mut codec.params_mut())?;
        Ok(codec)
    }
}

impl<T: Scalar> Parameterized<T> for ToyCodec<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder_params();
        v.extend(self.quantizer.codebooks.iter());
        v.extend(self.decoder_params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.enc_in.params_mut();
        v.extend(self.enc_conv.params_mut());
        v.extend(self.quantizer.codebooks.iter_mut());
        v.extend(self.dec_conv.params_mut());
        v.extend(self.dec_out.params_mut());
        v
    }
}
