//! Streaming two-stage text-to-speech mechanics at desk scale.

pub mod acoustic_lm;
pub mod attention_masks;
pub mod audio_io;
pub mod checkpoint;
pub mod constants;
pub mod corpus;
pub mod flow_decoder;
pub mod frames;
pub mod nn;
pub mod opq_codec;
pub mod pipeline;
pub mod scalar;
pub mod selftest;
pub mod semantic;
pub mod stats;
pub mod streaming_kernels;
pub mod token_streams;
pub mod vocoder_stream;

pub use frames::Frames;
pub use scalar::Scalar;

pub type FramesF32 = Frames<f32>;
pub type FramesF64 = Frames<f64>;
pub type FlowModelF32 = flow_decoder::FlowModel<f32>;
pub type FlowModelF64 = flow_decoder::FlowModel<f64>;
pub type ToyCodecF32 = opq_codec::ToyCodec<f32>;
pub type ToyCodecF64 = opq_codec::ToyCodec<f64>;
pub type VocoderStreamF32 = vocoder_stream::VocoderStream<f32>;
pub type VocoderStreamF64 = vocoder_stream::VocoderStream<f64>;
