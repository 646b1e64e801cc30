//! Streaming orchestration for both backends, latency bounds and metrics.
//!
//! A session is a chain of stages: semantic source, backend (flow decoder or
//! acoustic LM), waveform stage (vocoder or codec decoder). Stages exchange
//! [`Packet`]s over bounded queues. Every unit of work carries a simulated
//! cost; a worker sleeps until `max(previous deadline, input ready) + cost`,
//! so measured latencies follow the configured step times on any host.
//! The sequential mode runs the same stages one after another on a virtual
//! clock and yields the same audio bytes.

mod runner;
mod session;
mod stages;

pub use runner::{run_stages, ExecMode, StageFailure, StageRun, SINK};
pub use session::{
    run_streaming, sweep_chunk_size, Backend, Models, RunResult, SessionConfig, SimTiming, SweepRow, SCHEDULING_SLACK_MS,
};
pub use stages::{AcousticStage, CodecStage, FlowStage, SemanticSource, VocoderStage};

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::acoustic_lm::AcousticError;
use crate::flow_decoder::FlowError;
use crate::frames::Frames;
use crate::opq_codec::OpqError;
use crate::token_streams::TokenError;
use crate::vocoder_stream::VocoderError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("stage {stage} rejected packet: {reason}")]
    Protocol { stage: String, reason: String },
    #[error("stage {stage} failed: {reason}")]
    StageFailed { stage: String, reason: String, partial: Box<RunMetrics> },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Vocoder(#[from] VocoderError),
    #[error(transparent)]
    Acoustic(#[from] AcousticError),
    #[error(transparent)]
    Codec(#[from] OpqError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("prompt audio: {0}")]
    Prompt(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Mean per-step times and the structural parameters both bounds use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyBudget {
    pub t_s_ms: f64,
    pub t_a_ms: f64,
    pub t_c_ms: f64,
    /// Tokens per flow-decoder chunk.
    pub l: usize,
    pub d: usize,
    pub m: usize,
    /// Look-ahead tokens the flow decoder waits for past each chunk.
    pub holdback_frames: usize,
}

impl LatencyBudget {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [("t_s", self.t_s_ms), ("t_a", self.t_a_ms), ("t_c", self.t_c_ms)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PipelineError::Budget(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.l == 0 {
            return Err(PipelineError::Budget("l must be >= 1".into()));
        }
        Ok(())
    }
}

/// `(l + 3) * t_s + t_a + t_c`.
pub fn theoretical_latency_fm(b: &LatencyBudget) -> f64 {
    (b.l + b.holdback_frames) as f64 * b.t_s_ms + b.t_a_ms + b.t_c_ms
}

/// `(d - 1) * t_s + m * (t_s + t_a) + t_c`.
pub fn theoretical_latency_lm(b: &LatencyBudget) -> f64 {
    b.d.saturating_sub(1) as f64 * b.t_s_ms + b.m as f64 * (b.t_s_ms + b.t_a_ms) + b.t_c_ms
}

/// Data moving between stages.
#[derive(Debug, Clone, PartialEq)]
pub enum Packet {
    Tokens(Vec<u32>),
    Mel(Frames<f64>),
    Columns(Vec<Vec<u32>>),
    Audio(Vec<f64>),
}

impl Packet {
    pub fn size(&self) -> u64 {
        (match self {
            Packet::Tokens(t) => t.len(),
            Packet::Mel(m) => m.len(),
            Packet::Columns(c) => c.len(),
            Packet::Audio(a) => a.len(),
        }) as u64
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Packet::Tokens(_) => "tokens",
            Packet::Mel(_) => "mel",
            Packet::Columns(_) => "columns",
            Packet::Audio(_) => "audio",
        }
    }
}

/// One unit of stage work: its simulated cost and what it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub cost_ms: f64,
    pub outputs: Vec<Packet>,
}

/// A pipeline stage. Inputs are only accepted while `work` has nothing to
/// do; after `close` the stage drains and then returns `None` for good.
pub trait Stage: Send {
    fn name(&self) -> &str;
    fn accept(&mut self, packet: Packet) -> Result<(), PipelineError>;
    fn close(&mut self) -> Result<(), PipelineError>;
    fn work(&mut self) -> Result<Option<Unit>, PipelineError>;
}

/// One row of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub timestamp_us: u64,
    pub stage: String,
    pub event: &'static str,
    pub payload: u64,
}

pub fn events_to_csv(events: &[Event]) -> Result<String, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in events {
        w.serialize(e).map_err(|e| PipelineError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Metrics report. Everything timing-related is derived from the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub backend: String,
    pub mode: String,
    pub seed: u64,
    pub l: usize,
    pub d: usize,
    pub m: usize,
    pub t_s: f64,
    pub t_a: f64,
    pub t_c: f64,
    pub bound_ms: f64,
    /// Bound evaluated on the mean step times measured in this run.
    pub measured_bound_ms: f64,
    /// Audio the vocoder withholds for crossfading (zero for the codec path).
    pub holdback_ms: f64,
    pub bound_plus_holdback_ms: f64,
    pub slack_ms: f64,
    pub measured_latency_ms: Option<f64>,
    pub measured_t_s: Option<f64>,
    pub measured_t_a: Option<f64>,
    pub measured_t_c: Option<f64>,
    pub rtf: Option<f64>,
    pub wall_ms: f64,
    pub audio_samples: usize,
    pub sample_rate_hz: u32,
    pub audio_duration_s: f64,
    pub expected_duration_s: f64,
    pub stall_ms_per_stage: BTreeMap<String, f64>,
    pub blocked_ms_per_stage: BTreeMap<String, f64>,
    pub max_queue_depth: BTreeMap<String, u64>,
    pub queue_capacity: usize,
}
