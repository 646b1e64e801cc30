use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::{check_shape, FlowCondition, FlowError, VelocityField};
use crate::attention_masks::{AttentionMask, MaskSpec, MaskVariant};
use crate::checkpoint::Checkpoint;
use crate::constants::{
    LOOKAHEAD_TOKENS, MEL_FRAMES_PER_TOKEN, MEL_RATE_HZ, TOKEN_RATE_HZ, TOY_MEL_BINS, TOY_SEMANTIC_VOCAB, TOY_SPEAKER_DIM,
};
use crate::frames::Frames;
use crate::nn::{Param, Parameterized};
use crate::scalar::Scalar;
use crate::streaming_kernels::{
    upsample_step, AttentionState, CausalConv1d, ConvState, LookaheadConv, LookaheadState, WindowedAttention,
};

pub const FLOW_CHECKPOINT_KIND: &str = "flow-toy-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub vocab: usize,
    pub token_dim: usize,
    pub feature_dim: usize,
    pub speaker_dim: usize,
    pub mel_bins: usize,
    pub head_dim: usize,
    pub hidden: Vec<usize>,
    pub mlp_bias: bool,
    pub lookahead_past: usize,
    pub lookahead_future: usize,
    pub upsample: usize,
    pub conv_kernel: usize,
    pub token_rate_hz: f64,
    pub mel_rate_hz: f64,
}

impl FlowConfig {
    pub fn toy() -> Self {
        Self {
            vocab: TOY_SEMANTIC_VOCAB as usize,
            token_dim: 16,
            feature_dim: 16,
            speaker_dim: TOY_SPEAKER_DIM,
            mel_bins: TOY_MEL_BINS,
            head_dim: 8,
            hidden: vec![32, 32],
            mlp_bias: true,
            lookahead_past: 1,
            lookahead_future: LOOKAHEAD_TOKENS,
            upsample: MEL_FRAMES_PER_TOKEN,
            conv_kernel: 3,
            token_rate_hz: TOKEN_RATE_HZ as f64,
            mel_rate_hz: MEL_RATE_HZ as f64,
        }
    }

    /// Width of `[features, speaker, context mel, context flag]`.
    pub fn cond_dim(&self) -> usize {
        self.feature_dim + self.speaker_dim + self.mel_bins + 1
    }

    /// Estimator input width: condition, noisy mel and `[t, sin πt, cos πt]`.
    pub fn input_dim(&self) -> usize {
        self.cond_dim() + self.mel_bins + 3
    }

    pub fn mlp_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim() + self.head_dim];
        s.extend(&self.hidden);
        s.push(self.mel_bins);
        s
    }

    pub fn token_spec(&self, variant: MaskVariant, cap_s: Option<f64>) -> MaskSpec {
        MaskSpec::new(variant, self.token_rate_hz).with_cap_seconds(cap_s)
    }

    pub fn mel_spec(&self, variant: MaskVariant, cap_s: Option<f64>) -> MaskSpec {
        MaskSpec::new(variant, self.mel_rate_hz).with_cap_seconds(cap_s)
    }
}

/// Fixed random encoder from semantic tokens to mel-rate features.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEncoder<T> {
    pub embedding: Param<T>,
    pub lookahead: LookaheadConv<T>,
    pub attention: WindowedAttention<T>,
    pub mel_conv: CausalConv1d<T>,
    vocab: usize,
    token_dim: usize,
    upsample: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderState<T> {
    lookahead: LookaheadState<T>,
    /// Look-ahead outputs waiting for a complete attention chunk.
    pending: Frames<T>,
    attention: AttentionState<T>,
    conv: ConvState<T>,
}

impl<T: Scalar> EncoderState<T> {
    pub fn attention(&self) -> &AttentionState<T> {
        &self.attention
    }

    pub fn pending_tokens(&self) -> usize {
        self.pending.len()
    }
}

impl<T: Scalar> TokenEncoder<T> {
    fn new(cfg: &FlowConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.token_dim;
        Self {
            embedding: Param::normal("enc.embedding", &[cfg.vocab, d], 1.0, rng),
            lookahead: LookaheadConv::new("enc.lookahead", d, d, cfg.lookahead_past, cfg.lookahead_future, rng),
            attention: WindowedAttention::new("enc.attention", d, cfg.head_dim, d, rng),
            mel_conv: CausalConv1d::new("enc.mel_conv", d, cfg.feature_dim, cfg.conv_kernel, rng),
            vocab: cfg.vocab,
            token_dim: d,
            upsample: cfg.upsample,
        }
    }

    pub fn embed(&self, tokens: &[u32]) -> Result<Frames<T>, FlowError> {
        let mut out = Frames::new(self.token_dim);
        for &t in tokens {
            let i = t as usize;
            if i >= self.vocab {
                return Err(FlowError::TokenOutOfRange { token: t, vocab: self.vocab });
            }
            out.push(&self.embedding.data[i * self.token_dim..(i + 1) * self.token_dim]);
        }
        Ok(out)
    }

    fn finish_chunk(&self, h1: &Frames<T>, attended: &Frames<T>) -> Result<Frames<T>, FlowError> {
        let h2 = Frames::from_vec(h1.dim(), h1.as_slice().iter().zip(attended.as_slice()).map(|(&a, &b)| a + b).collect());
        Ok(upsample_step(&h2, self.upsample)?)
    }

    /// Whole-sequence encoding under a token-rate mask.
    pub fn encode_full(&self, tokens: &[u32], token_mask: &AttentionMask) -> Result<Frames<T>, FlowError> {
        let emb = self.embed(tokens)?;
        let h1 = self.lookahead.forward_full(&emb)?.map(|v| v.tanh());
        let a = self.attention.forward_masked(&h1, token_mask)?;
        let up = self.finish_chunk(&h1, &a)?;
        Ok(self.mel_conv.forward_full(&up)?.map(|v| v.tanh()))
    }

    pub fn init_state(&self) -> EncoderState<T> {
        EncoderState {
            lookahead: self.lookahead.init_state(),
            pending: Frames::new(self.token_dim),
            attention: self.attention.init_state(),
            conv: self.mel_conv.init_state(),
        }
    }

    /// Feeds tokens and returns mel-rate features for every attention chunk
    /// that became complete. `flush` ends the stream and drains the look-ahead.
    pub fn push(&self, st: &mut EncoderState<T>, tokens: &[u32], spec: &MaskSpec, flush: bool) -> Result<Frames<T>, FlowError> {
        let chunk = spec.chunk_frames()?.ok_or(crate::streaming_kernels::KernelError::NotChunked)?;
        let emb = self.embed(tokens)?;
        let h1 = self.lookahead.step(&mut st.lookahead, &emb, flush)?.map(|v| v.tanh());
        st.pending.extend(&h1);
        let mut out = Frames::new(self.mel_conv.out_dim());
        while st.pending.len() >= chunk || (flush && !st.pending.is_empty()) {
            let take = chunk.min(st.pending.len());
            let part = st.pending.take_front(take);
            let a = self.attention.step(&mut st.attention, &part, spec)?;
            let up = self.finish_chunk(&part, &a)?;
            out.extend(&self.mel_conv.step(&mut st.conv, &up)?.map(|v| v.tanh()));
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let a = &self.attention;
        vec![
            &self.embedding,
            &self.lookahead.weight,
            &self.lookahead.bias,
            &a.wq,
            &a.wk,
            &a.wv,
            &a.wo,
            &self.mel_conv.weight,
            &self.mel_conv.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let a = &mut self.attention;
        vec![
            &mut self.embedding,
            &mut self.lookahead.weight,
            &mut self.lookahead.bias,
            &mut a.wq,
            &mut a.wk,
            &mut a.wv,
            &mut a.wo,
            &mut self.mel_conv.weight,
            &mut self.mel_conv.bias,
        ]
    }
}

/// Velocity estimator: fixed attention + two causal convs feeding a
/// trainable MLP head together with the raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator<T> {
    pub attention: WindowedAttention<T>,
    pub conv1: CausalConv1d<T>,
    pub conv2: CausalConv1d<T>,
    pub mlp: Mlp<T>,
    cond_dim: usize,
    mel_bins: usize,
}

#[derive(Debug, Clone)]
pub struct EstimatorState<T> {
    attention: AttentionState<T>,
    conv1: ConvState<T>,
    conv2: ConvState<T>,
}

impl<T: Scalar> EstimatorState<T> {
    pub fn attention(&self) -> &AttentionState<T> {
        &self.attention
    }
}

impl<T: Scalar> Estimator<T> {
    fn new(cfg: &FlowConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.head_dim;
        Self {
            attention: WindowedAttention::new("est.attention", cfg.input_dim(), h, h, rng),
            conv1: CausalConv1d::new("est.conv1", h, h, cfg.conv_kernel, rng),
            conv2: CausalConv1d::new("est.conv2", h, h, cfg.conv_kernel, rng),
            mlp: Mlp::new("est.mlp", &cfg.mlp_sizes(), cfg.mlp_bias, rng),
            cond_dim: cfg.cond_dim(),
            mel_bins: cfg.mel_bins,
        }
    }

    /// Replaces the trainable head (used by tests to plug in a linear head).
    pub fn with_mlp(mut self, mlp: Mlp<T>) -> Self {
        assert_eq!(mlp.in_dim(), self.mlp.in_dim());
        assert_eq!(mlp.out_dim(), self.mel_bins);
        self.mlp = mlp;
        self
    }

    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    /// Per-frame estimator input `[cond, x, t, sin πt, cos πt]`.
    pub fn inputs(&self, cond_rows: &Frames<T>, x: &Frames<T>, t: T) -> Result<Frames<T>, FlowError> {
        check_shape("condition width", self.cond_dim, cond_rows.dim())?;
        check_shape("mel bins", self.mel_bins, x.dim())?;
        check_shape("condition frames", x.len(), cond_rows.len())?;
        let pt = T::PI() * t;
        let time = [t, pt.sin(), pt.cos()];
        let mut out = Frames::new(self.cond_dim + self.mel_bins + 3);
        let mut row = Vec::with_capacity(out.dim());
        for i in 0..x.len() {
            row.clear();
            row.extend_from_slice(cond_rows.row(i));
            row.extend_from_slice(x.row(i));
            row.extend_from_slice(&time);
            out.push(&row);
        }
        Ok(out)
    }

    /// Fixed front end over a whole sequence.
    pub fn front_full(&self, h: &Frames<T>, mask: &AttentionMask) -> Result<Frames<T>, FlowError> {
        let a = self.attention.forward_masked(h, mask)?;
        let c1 = self.conv1.forward_full(&a)?.map(|v| v.tanh());
        Ok(self.conv2.forward_full(&c1)?.map(|v| v.tanh()))
    }

    /// MLP input for a whole sequence: `[h, front(h)]`.
    pub fn head_input(&self, cond_rows: &Frames<T>, x: &Frames<T>, t: T, mask: &AttentionMask) -> Result<Frames<T>, FlowError> {
        let h = self.inputs(cond_rows, x, t)?;
        let c = self.front_full(&h, mask)?;
        Ok(Frames::concat_features(&[&h, &c]))
    }

    pub fn velocity_rows(&self, cond_rows: &Frames<T>, x: &Frames<T>, t: T, mask: &AttentionMask) -> Result<Frames<T>, FlowError> {
        Ok(self.mlp.forward(&self.head_input(cond_rows, x, t, mask)?))
    }

    pub fn init_state(&self) -> EstimatorState<T> {
        EstimatorState {
            attention: self.attention.init_state(),
            conv1: self.conv1.init_state(),
            conv2: self.conv2.init_state(),
        }
    }

    /// One mel-rate attention chunk of one Euler step.
    pub fn velocity_step(
        &self,
        st: &mut EstimatorState<T>,
        cond_rows: &Frames<T>,
        x: &Frames<T>,
        t: T,
        spec: &MaskSpec,
    ) -> Result<Frames<T>, FlowError> {
        let h = self.inputs(cond_rows, x, t)?;
        let a = self.attention.step(&mut st.attention, &h, spec)?;
        let c1 = self.conv1.step(&mut st.conv1, &a)?.map(|v| v.tanh());
        let c2 = self.conv2.step(&mut st.conv2, &c1)?.map(|v| v.tanh());
        Ok(self.mlp.forward(&Frames::concat_features(&[&h, &c2])))
    }

    pub fn fixed_params(&self) -> Vec<&Param<T>> {
        let a = &self.attention;
        vec![&a.wq, &a.wk, &a.wv, &a.wo, &self.conv1.weight, &self.conv1.bias, &self.conv2.weight, &self.conv2.bias]
    }

    /// Fixed front-end parameters followed by the head.
    fn all_params_mut(&mut self) -> Vec<&mut Param<T>> {
        let a = &mut self.attention;
        let mut v = vec![
            &mut a.wq,
            &mut a.wk,
            &mut a.wv,
            &mut a.wo,
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ];
        v.extend(self.mlp.params_mut());
        v
    }
}

impl<T: Scalar> VelocityField<T> for Estimator<T> {
    fn velocity(&self, x: &Frames<T>, t: T, cond: &FlowCondition<T>, mask: &AttentionMask) -> Result<Frames<T>, FlowError> {
        self.velocity_rows(&cond.rows(0, cond.frames()), x, t, mask)
    }
}

/// Token encoder plus estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<T> {
    pub cfg: FlowConfig,
    pub encoder: TokenEncoder<T>,
    pub estimator: Estimator<T>,
}

impl<T: Scalar> FlowModel<T> {
    /// Seeded initialization. The same seed always yields the same fixed
    /// layers, so a trained and an untrained model differ only in the head.
    pub fn new(cfg: FlowConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = TokenEncoder::new(&cfg, &mut rng);
        let estimator = Estimator::new(&cfg, &mut rng);
        Self { cfg, encoder, estimator }
    }

    pub fn toy(seed: u64) -> Self {
        Self::new(FlowConfig::toy(), seed)
    }

    pub fn trainable_params(&self) -> Vec<&Param<T>> {
        self.estimator.mlp.params()
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.estimator.mlp.params_mut()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.cfg;
        let mut meta = BTreeMap::from([
            ("vocab".to_string(), c.vocab as u64),
            ("token_dim".to_string(), c.token_dim as u64),
            ("feature_dim".to_string(), c.feature_dim as u64),
            ("speaker_dim".to_string(), c.speaker_dim as u64),
            ("mel_bins".to_string(), c.mel_bins as u64),
            ("head_dim".to_string(), c.head_dim as u64),
            ("mlp_bias".to_string(), c.mlp_bias as u64),
            ("lookahead_past".to_string(), c.lookahead_past as u64),
            ("lookahead_future".to_string(), c.lookahead_future as u64),
            ("upsample".to_string(), c.upsample as u64),
            ("conv_kernel".to_string(), c.conv_kernel as u64),
            ("hidden_layers".to_string(), c.hidden.len() as u64),
        ]);
        for (i, h) in c.hidden.iter().enumerate() {
            meta.insert(format!("hidden.{i}"), *h as u64);
        }
        Checkpoint::from_params(FLOW_CHECKPOINT_KIND, meta, &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, FlowError> {
        let m = |k: &str| ck.meta_value(k).map(|v| v as usize);
        let hidden = (0..m("hidden_layers")?).map(|i| m(&format!("hidden.{i}"))).collect::<Result<Vec<_>, _>>()?;
        let cfg = FlowConfig {
            vocab: m("vocab")?,
            token_dim: m("token_dim")?,
            feature_dim: m("feature_dim")?,
            speaker_dim: m("speaker_dim")?,
            mel_bins: m("mel_bins")?,
            head_dim: m("head_dim")?,
            hidden,
            mlp_bias: m("mlp_bias")? != 0,
            lookahead_past: m("lookahead_past")?,
            lookahead_future: m("lookahead_future")?,
            upsample: m("upsample")?,
            conv_kernel: m("conv_kernel")?,
            ..FlowConfig::toy()
        };
        let mut model = Self::new(cfg, 0);
        ck.apply_to(FLOW_CHECKPOINT_KIND, &mut model.params_mut())?;
        Ok(model)
    }
}

impl<T: Scalar> Parameterized<T> for FlowModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend(self.estimator.fixed_params());
        v.extend(self.estimator.mlp.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.estimator.all_params_mut());
        v
    }
}
