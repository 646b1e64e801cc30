use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use super::runner::{StageFailure, SINK};
use super::stages::{AcousticStage, CodecStage, FlowStage, SemanticSource, VocoderStage};
use super::{
    run_stages, theoretical_latency_fm, theoretical_latency_lm, Event, ExecMode, LatencyBudget, PipelineError,
    RunMetrics, Stage,
};
use crate::acoustic_lm::{AcousticLoop, MergeConfig, OracleAcousticModel};
use crate::audio_io::{read_wav_bytes, wav_bytes};
use crate::constants::{
    ANALYSIS_RATE_HZ,     CHUNK_TOKENS, FRAMESHIFT_MS, LEFT_CONTEXT_CAP_S, LOOKAHEAD_TOKENS, TOY_SPEAKER_DIM, VOCODER_CONTEXT_FRAMES,
};
use crate::flow_decoder::{FlowModel, FlowStreamConfig, FlowStreamer, IclPrompt};
use crate::opq_codec::ToyCodec;
use crate::semantic::{speaker_embedding_for_id, speaker_embedding_from_bytes, text_to_semantic};
use crate::token_streams::{DelayConfig, Undelayer};
use crate::vocoder_stream::{AudioChunk, ToyVocoder, VocoderStream};

/// Allowance for timer and queue jitter when comparing against a bound.
pub const SCHEDULING_SLACK_MS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Fm,
    Lm,
}

impl Backend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::Fm => "fm",
            Backend::Lm => "lm",
        }
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fm" => Ok(Backend::Fm),
            "lm" => Ok(Backend::Lm),
            other => Err(format!("unknown backend '{other}' (expected fm or lm)")),
        }
    }
}

/// Simulated per-unit costs in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimTiming {
    /// Per semantic token.
    pub t_s_ms: f64,
    /// Per flow-decoder chunk or per acoustic-LM step.
    pub t_a_ms: f64,
    /// Per vocoder chunk or per codec frame.
    pub t_c_ms: f64,
    /// Per packet at the sink (slow consumer).
    pub sink_ms: f64,
}

impl Default for SimTiming {
    fn default() -> Self {
        Self { t_s_ms: 9.0, t_a_ms: 30.0, t_c_ms: 18.0, sink_ms: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub backend: Backend,
    pub text: String,
    pub seed: u64,
    pub chunk_tokens: usize,
    pub merge: MergeConfig,
    pub timing: SimTiming,
    pub euler_steps: usize,
    pub queue_capacity: usize,
    pub mode: ExecMode,
    pub left_context_s: Option<f64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Fm,
            text: String::new(),
            seed: 0,
            chunk_tokens: CHUNK_TOKENS,
            merge: MergeConfig::default(),
            timing: SimTiming::default(),
            euler_steps: 8,
            queue_capacity: 4,
            mode: ExecMode::Concurrent,
            left_context_s: Some(LEFT_CONTEXT_CAP_S),
        }
    }
}

impl SessionConfig {
    pub fn budget(&self) -> LatencyBudget {
        LatencyBudget {
            t_s_ms: self.timing.t_s_ms,
            t_a_ms: self.timing.t_a_ms,
            t_c_ms: self.timing.t_c_ms,
            l: self.chunk_tokens,
            d: self.merge.d,
            m: self.merge.m,
            holdback_frames: LOOKAHEAD_TOKENS,
        }
    }

    pub fn bound_ms(&self) -> f64 {
        match self.backend {
            Backend::Fm => theoretical_latency_fm(&self.budget()),
            Backend::Lm => theoretical_latency_lm(&self.budget()),
        }
    }
}

/// Everything a session needs besides its config.
#[derive(Debug, Clone)]
pub struct Models {
    pub flow: Arc<FlowModel<f64>>,
    pub codec: Arc<ToyCodec<f64>>,
    pub vocoder: ToyVocoder,
    pub speaker: Vec<f64>,
    pub prompt: Option<IclPrompt<f64>>,
}

impl Models {
    /// Untrained seeded models and the speaker embedding of speaker 0.
    pub fn toy(seed: u64) -> Self {
        Self {
            flow: Arc::new(FlowModel::toy(seed)),
            codec: Arc::new(ToyCodec::toy(seed)),
            vocoder: ToyVocoder::synthesis(),
            speaker: speaker_embedding_for_id(0, TOY_SPEAKER_DIM),
            prompt: None,
        }
    }

    /// Stub prompt front end. Codec stream 0 of the 16 kHz prompt becomes the
    /// prompt token sequence, its 100 Hz analysis the prompt mel, and a hash
    /// of the file bytes the speaker embedding.
    pub fn with_prompt_audio(mut self, wav_file: &[u8]) -> Result<Self, PipelineError> {
        let (wave, rate) = read_wav_bytes(wav_file).map_err(|e| PipelineError::Prompt(e.to_string()))?;
        if rate != ANALYSIS_RATE_HZ {
            return Err(PipelineError::Prompt(format!("expected {ANALYSIS_RATE_HZ} Hz, got {rate} Hz")));
        }
        let grid = self.codec.encode(&wave)?;
        let tokens = if grid.streams() > 0 { grid.row(0).to_vec() } else { Vec::new() };
        let mel = ToyVocoder::analysis_rate().analyze(&wave);
        self.speaker = speaker_embedding_from_bytes(wav_file, TOY_SPEAKER_DIM);
        self.prompt = Some(IclPrompt { tokens, mel });
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub audio: AudioChunk<f64>,
    pub metrics: RunMetrics,
    pub events: Vec<Event>,
}

impl RunResult {
    pub fn wav_bytes(&self) -> Vec<u8> {
        wav_bytes(&self.audio.samples, self.audio.sample_rate_hz)
    }
}

fn build_stages(cfg: &SessionConfig, models: &Models, tokens: Vec<u32>) -> Result<Vec<Box<dyn Stage>>, PipelineError> {
    let t = cfg.timing;
    let source: Box<dyn Stage> = Box::new(SemanticSource::new(tokens, t.t_s_ms));
    Ok(match cfg.backend {
        Backend::Fm => {
            let scfg = FlowStreamConfig {
                chunk_tokens: cfg.chunk_tokens,
                euler_steps: cfg.euler_steps,
                noise_seed: cfg.seed,
                left_context_s: cfg.left_context_s,
            };
            let streamer = FlowStreamer::new(models.flow.clone(), scfg, models.speaker.clone(), models.prompt.as_ref())?;
            vec![
                source,
                Box::new(FlowStage::new(streamer, t.t_a_ms)),
                Box::new(VocoderStage::new(VocoderStream::new(models.vocoder.clone()), t.t_c_ms)),
            ]
        }
        Backend::Lm => {
            let c = &models.codec.cfg;
            let lp = AcousticLoop::new(
                cfg.merge,
                c.n_streams,
                c.codebook_size,
                OracleAcousticModel { streams: c.n_streams, codebook_size: c.codebook_size },
                cfg.seed,
            )?;
            let undelayer = Undelayer::new(c.n_streams, &DelayConfig::for_codebook(c.codebook_size));
            vec![
                source,
                Box::new(AcousticStage::new(lp, t.t_a_ms)),
                Box::new(CodecStage::new(models.codec.clone(), undelayer, t.t_c_ms)?),
            ]
        }
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Derives the report from the event log.
pub fn compute_metrics(cfg: &SessionConfig, events: &[Event], audio_samples: usize, sample_rate_hz: u32, tokens: usize) -> RunMetrics {
    let names: [&str; 3] = match cfg.backend {
        Backend::Fm => ["semantic", "flow", "vocoder"],
        Backend::Lm => ["semantic", "acoustic", "codec"],
    };
    let ms = |e: &Event| e.timestamp_us as f64 / 1000.0;
    let unit_means: Vec<Option<f64>> = names
        .iter()
        .map(|stage| {
            let mut starts = BTreeMap::new();
            let mut durs = Vec::new();
            for e in events.iter().filter(|e| e.stage == *stage) {
                match e.event {
                    "unit_start" => {
                        starts.insert(e.payload, ms(e));
                    }
                    "unit_end" => {
                        if let Some(s) = starts.get(&e.payload) {
                            durs.push(ms(e) - s);
                        }
                    }
                    _ => {}
                }
            }
            mean(&durs)
        })
        .collect();
    let measured_latency_ms =
        events.iter().find(|e| e.stage == names[2] && e.event == "audio" && e.payload > 0).map(ms);
    let wall_ms = events.iter().map(ms).fold(0.0, f64::max);
    let mut stall = BTreeMap::new();
    let mut blocked = BTreeMap::new();
    let mut depth = BTreeMap::new();
    for stage in names.iter().chain(std::iter::once(&SINK)) {
        let of = |kind: &'static str| -> Vec<u64> {
            events.iter().filter(|e| e.stage == *stage && e.event == kind).map(|e| e.payload).collect()
        };
        stall.insert(stage.to_string(), of("wait").iter().sum::<u64>() as f64 / 1000.0);
        blocked.insert(stage.to_string(), of("blocked").iter().sum::<u64>() as f64 / 1000.0);
        if *stage != SINK {
            depth.insert(stage.to_string(), of("queue").into_iter().max().unwrap_or(0));
        }
    }
    let budget = cfg.budget();
    let measured_budget = LatencyBudget {
        t_s_ms: unit_means[0].unwrap_or(budget.t_s_ms),
        t_a_ms: unit_means[1].unwrap_or(budget.t_a_ms),
        t_c_ms: unit_means[2].unwrap_or(budget.t_c_ms),
        ..budget
    };
    let (bound, measured_bound, holdback_ms, frames) = match cfg.backend {
        Backend::Fm => (
            theoretical_latency_fm(&budget),
            theoretical_latency_fm(&measured_budget),
            VOCODER_CONTEXT_FRAMES as f64 * 1000.0 / crate::constants::MEL_RATE_HZ as f64,
            tokens,
        ),
        Backend::Lm => (
            theoretical_latency_lm(&budget),
            theoretical_latency_lm(&measured_budget),
            0.0,
            cfg.merge.aligned_frames(tokens),
        ),
    };
    let audio_duration_s = audio_samples as f64 / sample_rate_hz as f64;
    RunMetrics {
        backend: cfg.backend.as_str().to_string(),
        mode: cfg.mode.as_str().to_string(),
        seed: cfg.seed,
        l: cfg.chunk_tokens,
        d: cfg.merge.d,
        m: cfg.merge.m,
        t_s: cfg.timing.t_s_ms,
        t_a: cfg.timing.t_a_ms,
        t_c: cfg.timing.t_c_ms,
        bound_ms: bound,
        measured_bound_ms: measured_bound,
        holdback_ms,
        bound_plus_holdback_ms: bound + holdback_ms,
        slack_ms: SCHEDULING_SLACK_MS,
        measured_latency_ms,
        measured_t_s: unit_means[0],
        measured_t_a: unit_means[1],
        measured_t_c: unit_means[2],
        rtf: (audio_duration_s > 0.0).then(|| wall_ms / 1000.0 / audio_duration_s),
        wall_ms,
        audio_samples,
        sample_rate_hz,
        audio_duration_s,
        expected_duration_s: frames as f64 * FRAMESHIFT_MS as f64 / 1000.0,
        stall_ms_per_stage: stall,
        blocked_ms_per_stage: blocked,
        max_queue_depth: depth,
        queue_capacity: cfg.queue_capacity,
    }
}

/// Runs one streaming session: oracle semantic source at `t_s` per token,
/// the chosen backend, and its waveform stage.
pub fn run_streaming(cfg: &SessionConfig, models: &Models) -> Result<RunResult, PipelineError> {
    cfg.budget().validate()?;
    cfg.merge.validate()?;
    let tokens = text_to_semantic(&cfg.text);
    let n = tokens.len();
    let rate = match cfg.backend {
        Backend::Fm => models.vocoder.sample_rate_hz(),
        Backend::Lm => (models.codec.cfg.synthesis_samples as u32) * 1000 / FRAMESHIFT_MS,
    };
    let stages = build_stages(cfg, models, tokens)?;
    match run_stages(stages, cfg.mode, cfg.queue_capacity, cfg.timing.sink_ms) {
        Ok(run) => {
            let metrics = compute_metrics(cfg, &run.events, run.audio.len(), rate, n);
            Ok(RunResult { audio: AudioChunk { samples: run.audio, sample_rate_hz: rate }, metrics, events: run.events })
        }
        Err(StageFailure { stage, reason, events, audio }) => {
            let partial = compute_metrics(cfg, &events, audio.len(), rate, n);
            Err(PipelineError::StageFailed { stage, reason, partial: Box::new(partial) })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub l: usize,
    pub bound_ms: f64,
    /// Mean over seeds.
    pub measured_latency_ms: f64,
    pub latencies_ms: Vec<f64>,
    pub rtf: f64,
}

/// One row per chunk size, each averaged over `seeds`.
pub fn sweep_chunk_size(ls: &[usize], base: &SessionConfig, models: &Models, seeds: &[u64]) -> Result<Vec<SweepRow>, PipelineError> {
    if ls.is_empty() || seeds.is_empty() {
        return Err(PipelineError::Budget("sweep needs at least one l and one seed".into()));
    }
    let mut rows = Vec::with_capacity(ls.len());
    for &l in ls {
        let mut lat = Vec::new();
        let mut rtf = Vec::new();
        let mut bound = 0.0;
        for &seed in seeds {
            let cfg = SessionConfig { chunk_tokens: l, seed, ..base.clone() };
            let r = run_streaming(&cfg, models)?;
            bound = r.metrics.bound_ms;
            lat.push(r.metrics.measured_latency_ms.unwrap_or(f64::NAN));
            rtf.push(r.metrics.rtf.unwrap_or(f64::NAN));
        }
        rows.push(SweepRow {
            l,
            bound_ms: bound,
            measured_latency_ms: mean(&lat).unwrap_or(f64::NAN),
            latencies_ms: lat,
            rtf: mean(&rtf).unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}
