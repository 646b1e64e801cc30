//! Reference-scale constants of the modeled system next to the toy-scale
//! defaults actually used at desk scale.

/// Token frameshift shared by semantic and acoustic tokens.
pub const FRAMESHIFT_MS: u32 = 40;
/// Token rate implied by the 40 ms frameshift.
pub const TOKEN_RATE_HZ: u32 = 25;
/// Semantic tokenizer codebook size at reference scale.
pub const SEMANTIC_CODEBOOK_SIZE: u32 = 16_384;
/// Semantic vocabulary used by the toy pipeline (2 tokens per byte).
pub const TOY_SEMANTIC_VOCAB: u32 = 512;

/// Acoustic codec streams (codebooks) per frame.
pub const ACOUSTIC_STREAMS: usize = 8;
/// Codewords per acoustic stream at reference scale.
pub const ACOUSTIC_CODEBOOK_SIZE: u32 = 16_384;
/// Codewords per acoustic stream in the toy codec.
pub const TOY_ACOUSTIC_CODEBOOK_SIZE: u32 = 64;
/// Codec analysis rate.
pub const ANALYSIS_RATE_HZ: u32 = 16_000;
/// Codec and vocoder synthesis rate.
pub const SYNTHESIS_RATE_HZ: u32 = 24_000;
/// 40 ms at 16 kHz.
pub const ANALYSIS_SAMPLES_PER_FRAME: usize = 640;
/// 40 ms at 24 kHz.
pub const SYNTHESIS_SAMPLES_PER_FRAME: usize = 960;

/// Mel frame rate (10 ms hop).
pub const MEL_RATE_HZ: u32 = 100;
/// Mel frames per semantic token.
pub const MEL_FRAMES_PER_TOKEN: usize = 4;
/// Vocoder hop at 24 kHz for a 100 Hz mel.
pub const VOCODER_HOP: usize = 240;
/// Toy mel bins.
pub const TOY_MEL_BINS: usize = 8;
/// Speaker embedding width in the toy models.
pub const TOY_SPEAKER_DIM: usize = 4;
/// Upper edge of the mel band.
pub const MEL_BAND_MAX_HZ: f64 = 8_000.0;

/// Future tokens seen by the token encoder's look-ahead convolution.
pub const LOOKAHEAD_TOKENS: usize = 3;
/// Tokens per flow-matching chunk (1 s).
pub const CHUNK_TOKENS: usize = 25;
/// Left-context cap for chunk-causal attention.
pub const LEFT_CONTEXT_CAP_S: f64 = 2.0;
/// Upper bound of the in-context mel prefix fraction.
pub const ICL_MAX_FRACTION: f64 = 0.3;
/// Mel frames of context prepended for each vocoder chunk.
pub const VOCODER_CONTEXT_FRAMES: usize = 8;

/// Semantic-to-acoustic merge delay.
pub const MERGE_DELAY: usize = 8;
/// Semantic tokens required before the first acoustic step.
pub const START_GATE: usize = 8;

/// Reference training schedule of the flow-matching model.
pub const FM_STAGE1_UPDATES: u64 = 800_000;
pub const FM_STAGE2_UPDATES: u64 = 100_000;
/// Reference training schedule of the acoustic codec.
pub const CODEC_STAGE1_ITERS: u64 = 1_000_000;
pub const CODEC_STAGE2_ITERS: u64 = 300_000;
pub const CODEC_LEARNING_RATE: f64 = 1e-4;
pub const CODEC_BATCH_SECONDS: u32 = 192;

/// Reference model scales (recorded, not reproduced).
pub const SEMANTIC_LM_LAYERS: usize = 30;
pub const SEMANTIC_LM_PARAMS: u64 = 400_000_000;
pub const FLOW_MODEL_PARAMS: u64 = 150_000_000;
pub const ACOUSTIC_LM_LAYERS: usize = 24;
pub const ACOUSTIC_LM_WIDTH: usize = 1536;
