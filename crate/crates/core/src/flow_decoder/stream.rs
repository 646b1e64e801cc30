use std::sync::Arc;

use super::model::{EncoderState, EstimatorState, FlowConfig, FlowModel};
use super::{condition_rows, euler_sample, FlowCondition, FlowError, NoiseStream};
use crate::attention_masks::{build_mask, MaskSpec, MaskVariant};
use crate::constants::{CHUNK_TOKENS, FRAMESHIFT_MS, LEFT_CONTEXT_CAP_S};
use crate::frames::Frames;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStreamConfig {
    /// Tokens per attention chunk (`l`).
    pub chunk_tokens: usize,
    pub euler_steps: usize,
    pub noise_seed: u64,
    pub left_context_s: Option<f64>,
}

impl Default for FlowStreamConfig {
    fn default() -> Self {
        Self { chunk_tokens: CHUNK_TOKENS, euler_steps: 8, noise_seed: 0, left_context_s: Some(LEFT_CONTEXT_CAP_S) }
    }
}

impl FlowStreamConfig {
    pub fn variant(&self) -> MaskVariant {
        MaskVariant::ChunkCausal { chunk_ms: self.chunk_tokens as u32 * FRAMESHIFT_MS }
    }

    pub fn specs(&self, cfg: &FlowConfig) -> Result<(MaskSpec, MaskSpec), FlowError> {
        let tok = cfg.token_spec(self.variant(), self.left_context_s);
        let mel = cfg.mel_spec(self.variant(), self.left_context_s);
        tok.validate()?;
        mel.validate()?;
        Ok((tok, mel))
    }
}

/// In-context prompt: tokens and the mel they correspond to. The tokens are
/// streamed ahead of the target text and their output frames discarded; the
/// mel enters as context features for the prompt frames.
#[derive(Debug, Clone, PartialEq)]
pub struct IclPrompt<T> {
    pub tokens: Vec<u32>,
    pub mel: Frames<T>,
}

impl<T: Scalar> IclPrompt<T> {
    fn context(&self, frames_per_token: usize) -> Frames<T> {
        let n = (self.tokens.len() * frames_per_token).min(self.mel.len());
        self.mel.slice(0, n)
    }
}

/// Chunk-wise sampler: one encoder state plus attention/conv state for every
/// Euler step.
#[derive(Debug, Clone)]
pub struct FlowStreamer<T> {
    model: Arc<FlowModel<T>>,
    cfg: FlowStreamConfig,
    token_spec: MaskSpec,
    mel_spec: MaskSpec,
    encoder: EncoderState<T>,
    steps: Vec<EstimatorState<T>>,
    noise: NoiseStream,
    speaker: Vec<T>,
    context: Frames<T>,
    frames_done: usize,
    drop_frames: usize,
    finished: bool,
}

impl<T: Scalar> FlowStreamer<T> {
    pub fn new(
        model: Arc<FlowModel<T>>,
        cfg: FlowStreamConfig,
        speaker: Vec<T>,
        prompt: Option<&IclPrompt<T>>,
    ) -> Result<Self, FlowError> {
        if cfg.euler_steps == 0 {
            return Err(FlowError::NoSteps);
        }
        if speaker.len() != model.cfg.speaker_dim {
            return Err(FlowError::Shape { what: "speaker embedding", expected: model.cfg.speaker_dim, got: speaker.len() });
        }
        let (token_spec, mel_spec) = cfg.specs(&model.cfg)?;
        let encoder = model.encoder.init_state();
        let steps = (0..cfg.euler_steps).map(|_| model.estimator.init_state()).collect();
        let up = model.cfg.upsample;
        let bins = model.cfg.mel_bins;
        let mut s = Self {
            token_spec,
            mel_spec,
            encoder,
            steps,
            noise: NoiseStream::new(cfg.noise_seed),
            speaker,
            context: prompt.map_or_else(|| Frames::new(bins), |p| p.context(up)),
            frames_done: 0,
            drop_frames: prompt.map_or(0, |p| p.tokens.len() * up),
            finished: false,
            model,
            cfg,
        };
        if let Some(p) = prompt {
            let out = s.push_tokens(&p.tokens)?;
            debug_assert!(out.iter().all(|c| c.is_empty()));
        }
        Ok(s)
    }

    pub fn config(&self) -> &FlowStreamConfig {
        &self.cfg
    }

    pub fn mel_frames_emitted(&self) -> usize {
        self.frames_done.saturating_sub(self.drop_frames)
    }

    /// Estimator KV-cache states, one per Euler step.
    pub fn estimator_states(&self) -> &[EstimatorState<T>] {
        &self.steps
    }

    pub fn encoder_state(&self) -> &EncoderState<T> {
        &self.encoder
    }

    /// Feeds semantic tokens; returns one mel chunk per attention chunk that
    /// became complete (prompt frames removed, possibly leaving empties).
    pub fn push_tokens(&mut self, tokens: &[u32]) -> Result<Vec<Frames<T>>, FlowError> {
        if self.finished {
            return Err(FlowError::Finished);
        }
        let feats = self.model.encoder.push(&mut self.encoder, tokens, &self.token_spec, false)?;
        self.sample(feats)
    }

    /// Ends the stream: drains the look-ahead holdback and samples the rest.
    pub fn finish(&mut self) -> Result<Vec<Frames<T>>, FlowError> {
        if self.finished {
            return Err(FlowError::Finished);
        }
        let feats = self.model.encoder.push(&mut self.encoder, &[], &self.token_spec, true)?;
        self.finished = true;
        self.sample(feats)
    }

    /// Chunk-at-a-time interface: at most `l` tokens per call.
    pub fn stream_sample_chunk(&mut self, token_chunk: &[u32], is_last: bool) -> Result<Frames<T>, FlowError> {
        if token_chunk.len() > self.cfg.chunk_tokens {
            return Err(FlowError::ChunkTooLarge { got: token_chunk.len(), max: self.cfg.chunk_tokens });
        }
        let mut out = Frames::new(self.model.cfg.mel_bins);
        for c in self.push_tokens(token_chunk)? {
            out.extend(&c);
        }
        if is_last {
            for c in self.finish()? {
                out.extend(&c);
            }
        }
        Ok(out)
    }

    fn sample(&mut self, feats: Frames<T>) -> Result<Vec<Frames<T>>, FlowError> {
        let chunk = self.mel_spec.chunk_frames()?.expect("chunk-causal spec");
        let bins = self.model.cfg.mel_bins;
        let n = self.cfg.euler_steps;
        let est = &self.model.estimator;
        let mut outs = Vec::new();
        let mut start = 0;
        while start < feats.len() {
            let end = (start + chunk).min(feats.len());
            let part = feats.slice(start, end);
            let rows = condition_rows(&part, &self.speaker, &self.context, self.frames_done);
            let mut x: Frames<T> = self.noise.next_frames(part.len(), bins);
            let dt = T::one() / T::from_count(n);
            for k in 0..n {
                let t = T::from_count(k) / T::from_count(n);
                let v = est.velocity_step(&mut self.steps[k], &rows, &x, t, &self.mel_spec)?;
                for (xi, &vi) in x.as_mut_slice().iter_mut().zip(v.as_slice()) {
                    *xi += dt * vi;
                }
                if !x.is_finite() {
                    return Err(FlowError::NonFinite { step: k });
                }
            }
            let before = self.frames_done;
            self.frames_done += part.len();
            let skip = self.drop_frames.saturating_sub(before).min(part.len());
            outs.push(x.slice(skip, part.len()));
            start = end;
        }
        Ok(outs)
    }
}

/// Full-pass sampling of `prompt ++ tokens` under the given token/mel masks,
/// with the prompt frames removed. With the streamer's chunk-causal specs
/// this is the reference the streamer must reproduce.
pub fn sample_reference<T: Scalar>(
    model: &FlowModel<T>,
    tokens: &[u32],
    speaker: &[T],
    prompt: Option<&IclPrompt<T>>,
    token_spec: &MaskSpec,
    mel_spec: &MaskSpec,
    euler_steps: usize,
    noise_seed: u64,
) -> Result<Frames<T>, FlowError> {
    let mut all = prompt.map_or_else(Vec::new, |p| p.tokens.clone());
    all.extend_from_slice(tokens);
    let up = model.cfg.upsample;
    let feats = model.encoder.encode_full(&all, &build_mask(token_spec, all.len())?)?;
    let context = prompt.map_or_else(|| Frames::new(model.cfg.mel_bins), |p| p.context(up));
    let cond = FlowCondition::new(feats, speaker.to_vec(), context);
    let mask = build_mask(mel_spec, cond.frames())?;
    let x = euler_sample(&model.estimator, &cond, &mask, model.cfg.mel_bins, euler_steps, noise_seed)?;
    let skip = prompt.map_or(0, |p| p.tokens.len() * up).min(x.len());
    Ok(x.slice(skip, x.len()))
}
