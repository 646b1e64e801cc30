use std::collections::VecDeque;
use std::sync::Arc;

use super::{Packet, PipelineError, Stage, Unit};
use crate::acoustic_lm::{AcousticLoop, AcousticModel};
use crate::flow_decoder::FlowStreamer;
use crate::frames::Frames;
use crate::opq_codec::{DecodeState, ToyCodec};
use crate::token_streams::{MultiStreamGrid, Undelayer};
use crate::vocoder_stream::VocoderStream;

fn unexpected(stage: &str, p: &Packet) -> PipelineError {
    PipelineError::Protocol { stage: stage.to_string(), reason: format!("unexpected {} packet", p.kind()) }
}

/// Emits semantic tokens one at a time, `t_s` each.
pub struct SemanticSource {
    tokens: VecDeque<u32>,
    t_s_ms: f64,
}

impl SemanticSource {
    pub fn new(tokens: Vec<u32>, t_s_ms: f64) -> Self {
        Self { tokens: tokens.into(), t_s_ms }
    }
}

impl Stage for SemanticSource {
    fn name(&self) -> &str {
        "semantic"
    }

    fn accept(&mut self, p: Packet) -> Result<(), PipelineError> {
        Err(unexpected(self.name(), &p))
    }

    fn close(&mut self) -> Result<(), PipelineError> {
        Ok(())
    }

    fn work(&mut self) -> Result<Option<Unit>, PipelineError> {
        Ok(self.tokens.pop_front().map(|t| Unit { cost_ms: self.t_s_ms, outputs: vec![Packet::Tokens(vec![t])] }))
    }
}

/// Flow-decoder backend: feeds tokens one by one into the chunked sampler;
/// each mel chunk costs `t_a`.
pub struct FlowStage {
    streamer: FlowStreamer<f64>,
    pending: VecDeque<u32>,
    ready: VecDeque<Frames<f64>>,
    closed: bool,
    finished: bool,
    t_a_ms: f64,
}

impl FlowStage {
    pub fn new(streamer: FlowStreamer<f64>, t_a_ms: f64) -> Self {
        Self { streamer, pending: VecDeque::new(), ready: VecDeque::new(), closed: false, finished: false, t_a_ms }
    }

    fn queue(&mut self, chunks: Vec<Frames<f64>>) {
        self.ready.extend(chunks.into_iter().filter(|c| !c.is_empty()));
    }
}

impl Stage for FlowStage {
    fn name(&self) -> &str {
        "flow"
    }

    fn accept(&mut self, p: Packet) -> Result<(), PipelineError> {
        match p {
            Packet::Tokens(t) => {
                self.pending.extend(t);
                Ok(())
            }
            other => Err(unexpected(self.name(), &other)),
        }
    }

    fn close(&mut self) -> Result<(), PipelineError> {
        self.closed = true;
        Ok(())
    }

    fn work(&mut self) -> Result<Option<Unit>, PipelineError> {
        if self.ready.is_empty() {
            if let Some(tok) = self.pending.pop_front() {
                let chunks = self.streamer.push_tokens(&[tok])?;
                self.queue(chunks);
                if self.ready.is_empty() {
                    return Ok(Some(Unit { cost_ms: 0.0, outputs: Vec::new() }));
                }
            } else if self.closed && !self.finished {
                self.finished = true;
                let chunks = self.streamer.finish()?;
                self.queue(chunks);
            }
        }
        Ok(self.ready.pop_front().map(|m| Unit { cost_ms: self.t_a_ms, outputs: vec![Packet::Mel(m)] }))
    }
}

/// Pseudo-streaming vocoder; each chunk (and the final flush) costs `t_c`.
pub struct VocoderStage {
    stream: VocoderStream<f64>,
    pending: VecDeque<Frames<f64>>,
    closed: bool,
    flushed: bool,
    t_c_ms: f64,
}

impl VocoderStage {
    pub fn new(stream: VocoderStream<f64>, t_c_ms: f64) -> Self {
        Self { stream, pending: VecDeque::new(), closed: false, flushed: false, t_c_ms }
    }
}

impl Stage for VocoderStage {
    fn name(&self) -> &str {
        "vocoder"
    }

    fn accept(&mut self, p: Packet) -> Result<(), PipelineError> {
        match p {
            Packet::Mel(m) => {
                self.pending.push_back(m);
                Ok(())
            }
            other => Err(unexpected(self.name(), &other)),
        }
    }

    fn close(&mut self) -> Result<(), PipelineError> {
        self.closed = true;
        Ok(())
    }

    fn work(&mut self) -> Result<Option<Unit>, PipelineError> {
        if let Some(m) = self.pending.pop_front() {
            let a = self.stream.vocode_chunk(&m)?;
            return Ok(Some(Unit { cost_ms: self.t_c_ms, outputs: vec![Packet::Audio(a.samples)] }));
        }
        if self.closed && !self.flushed {
            self.flushed = true;
            let a = self.stream.flush();
            return Ok(Some(Unit { cost_ms: self.t_c_ms, outputs: vec![Packet::Audio(a.samples)] }));
        }
        Ok(None)
    }
}

/// Acoustic-LM backend: one delayed column per step, `t_a` each.
pub struct AcousticStage<M> {
    lp: AcousticLoop<M>,
    t_a_ms: f64,
}

impl<M: AcousticModel> AcousticStage<M> {
    pub fn new(lp: AcousticLoop<M>, t_a_ms: f64) -> Self {
        Self { lp, t_a_ms }
    }
}

impl<M: AcousticModel + Send> Stage for AcousticStage<M> {
    fn name(&self) -> &str {
        "acoustic"
    }

    fn accept(&mut self, p: Packet) -> Result<(), PipelineError> {
        match p {
            Packet::Tokens(t) => Ok(self.lp.push_semantic(&t)?),
            other => Err(unexpected(self.name(), &other)),
        }
    }

    fn close(&mut self) -> Result<(), PipelineError> {
        self.lp.end_semantic();
        Ok(())
    }

    fn work(&mut self) -> Result<Option<Unit>, PipelineError> {
        Ok(self.lp.step()?.map(|c| Unit { cost_ms: self.t_a_ms, outputs: vec![Packet::Columns(vec![c])] }))
    }
}

/// Undoes the delay pattern and decodes each completed frame (`t_c` each).
pub struct CodecStage {
    codec: Arc<ToyCodec<f64>>,
    undelayer: Undelayer,
    state: DecodeState<f64>,
    pending: VecDeque<Vec<u32>>,
    t_c_ms: f64,
}

impl CodecStage {
    pub fn new(codec: Arc<ToyCodec<f64>>, undelayer: Undelayer, t_c_ms: f64) -> Result<Self, PipelineError> {
        let state = codec.init_decoder(codec.cfg.n_streams)?;
        Ok(Self { codec, undelayer, state, pending: VecDeque::new(), t_c_ms })
    }
}

impl Stage for CodecStage {
    fn name(&self) -> &str {
        "codec"
    }

    fn accept(&mut self, p: Packet) -> Result<(), PipelineError> {
        match p {
            Packet::Columns(cols) => {
                for c in cols {
                    self.pending.extend(self.undelayer.push(&c)?);
                }
                Ok(())
            }
            other => Err(unexpected(self.name(), &other)),
        }
    }

    fn close(&mut self) -> Result<(), PipelineError> {
        if !self.undelayer.is_drained() {
            return Err(PipelineError::Protocol { stage: "codec".into(), reason: "delayed stream ended mid-frame".into() });
        }
        Ok(())
    }

    fn work(&mut self) -> Result<Option<Unit>, PipelineError> {
        let Some(frame) = self.pending.pop_front() else { return Ok(None) };
        let rows = frame.iter().map(|&id| vec![id]).collect();
        let grid = MultiStreamGrid::from_rows(self.codec.cfg.codebook_size, rows)?;
        let audio = self.codec.decode_chunk(&mut self.state, &grid)?;
        Ok(Some(Unit { cost_ms: self.t_c_ms, outputs: vec![Packet::Audio(audio)] }))
    }
}
