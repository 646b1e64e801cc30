//! Toy conditional flow-matching decoder from semantic tokens to mel.
//!
//! A fixed random token encoder (embedding, look-ahead conv, windowed
//! attention, 4× upsampling, causal conv) produces per-frame features. The
//! velocity estimator sees those features concatenated with the speaker
//! embedding, an optional in-context mel prefix, the noisy mel and the flow
//! time. Its fixed attention/conv front end runs under the same mask family
//! as the encoder; only the MLP head on top is trained.
//!
//! Sampling integrates `dx/dt = v(x, t)` from Gaussian noise with Euler
//! steps. The streaming sampler runs every Euler step chunk by chunk with its
//! own attention and conv state and reproduces the full pass under the same
//! chunk-causal mask.

mod mlp;
mod model;
mod stream;
mod train;

pub use mlp::{Mlp, MlpCache};
pub use model::{Estimator, EstimatorState, FlowConfig, FlowModel, TokenEncoder, FLOW_CHECKPOINT_KIND};
pub use stream::{sample_reference, FlowStreamConfig, FlowStreamer, IclPrompt};
pub use train::{
    grad_check, relative_error, sample_batch, sample_l2, train_toy_estimator, FlowExample, FlowTrainConfig, GradCheckEntry,
    GradCheckReport, TrainReport,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::attention_masks::{AttentionMask, MaskError};
use crate::checkpoint::CheckpointError;
use crate::frames::Frames;
use crate::scalar::Scalar;
use crate::streaming_kernels::KernelError;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("non-finite state after Euler step {step}")]
    NonFinite { step: usize },
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },
    #[error("n_steps must be >= 1")]
    NoSteps,
    #[error("token chunk of {got} exceeds the {max}-token chunk")]
    ChunkTooLarge { got: usize, max: usize },
    #[error("semantic token {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("stream already finished")]
    Finished,
    #[error("empty training set")]
    NoData,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn check_shape(what: &'static str, expected: usize, got: usize) -> Result<(), FlowError> {
    if expected == got {
        Ok(())
    } else {
        Err(FlowError::Shape { what, expected, got })
    }
}

/// Everything the estimator is conditioned on besides `x_t` and `t`.
/// `context_mel` holds the in-context prefix; frames past its end carry
/// zeros and a cleared presence flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCondition<T> {
    pub token_features: Frames<T>,
    pub speaker_embedding: Vec<T>,
    pub context_mel: Frames<T>,
}

impl<T: Scalar> FlowCondition<T> {
    pub fn new(token_features: Frames<T>, speaker_embedding: Vec<T>, context_mel: Frames<T>) -> Self {
        Self { token_features, speaker_embedding, context_mel }
    }

    pub fn frames(&self) -> usize {
        self.token_features.len()
    }

    /// Per-frame rows `[features, speaker, context, flag]` for frames `start..end`.
    pub fn rows(&self, start: usize, end: usize) -> Frames<T> {
        condition_rows(&self.token_features.slice(start, end), &self.speaker_embedding, &self.context_mel, start)
    }
}

/// Assembles condition rows for a run of features starting at absolute frame `start`.
pub(crate) fn condition_rows<T: Scalar>(features: &Frames<T>, speaker: &[T], context: &Frames<T>, start: usize) -> Frames<T> {
    let bins = context.dim();
    let dim = features.dim() + speaker.len() + bins + 1;
    let mut out = Frames::new(dim);
    let mut row = Vec::with_capacity(dim);
    for (k, f) in features.rows().enumerate() {
        row.clear();
        row.extend_from_slice(f);
        row.extend_from_slice(speaker);
        let abs = start + k;
        if abs < context.len() {
            row.extend_from_slice(context.row(abs));
            row.push(T::one());
        } else {
            row.extend(std::iter::repeat(T::zero()).take(bins + 1));
        }
        out.push(&row);
    }
    out
}

/// Anything that maps `(x_t, t, condition)` to a velocity of `x_t`'s shape.
pub trait VelocityField<T: Scalar> {
    fn velocity(&self, x: &Frames<T>, t: T, cond: &FlowCondition<T>, mask: &AttentionMask) -> Result<Frames<T>, FlowError>;
}

/// Seeded standard-normal noise drawn frame by frame, so any chunking of the
/// draws yields the same sequence.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_frames<T: Scalar>(&mut self, frames: usize, dim: usize) -> Frames<T> {
        Frames::from_vec(dim, (0..frames * dim).map(|_| T::lit(StandardNormal.sample(&mut self.rng))).collect())
    }
}

/// Straight-path training pair: `x_t = (1−t)·x0 + t·x1`, target `x1 − x0`.
pub fn cfm_training_pair<T: Scalar>(x1: &Frames<T>, noise_seed: u64, t: T) -> Result<(Frames<T>, Frames<T>), FlowError> {
    let x0 = NoiseStream::new(noise_seed).next_frames(x1.len(), x1.dim());
    cfm_pair_with_noise(x1, &x0, t)
}

pub fn cfm_pair_with_noise<T: Scalar>(x1: &Frames<T>, x0: &Frames<T>, t: T) -> Result<(Frames<T>, Frames<T>), FlowError> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(FlowError::TimeOutOfRange(t.as_f64()));
    }
    check_shape("noise frames", x1.len(), x0.len())?;
    check_shape("noise width", x1.dim(), x0.dim())?;
    let one_minus = T::one() - t;
    let xt = x0.as_slice().iter().zip(x1.as_slice()).map(|(&a, &b)| one_minus * a + t * b).collect();
    let v = x0.as_slice().iter().zip(x1.as_slice()).map(|(&a, &b)| b - a).collect();
    Ok((Frames::from_vec(x1.dim(), xt), Frames::from_vec(x1.dim(), v)))
}

/// One supervised flow-matching example.
#[derive(Debug, Clone)]
pub struct CfmExample<T> {
    pub x_t: Frames<T>,
    pub t: T,
    pub cond: FlowCondition<T>,
    pub mask: AttentionMask,
    pub target: Frames<T>,
}

/// Mean squared error of the field's velocity against the targets, averaged
/// over every element of every example.
pub fn cfm_loss<T: Scalar>(field: &impl VelocityField<T>, batch: &[CfmExample<T>]) -> Result<T, FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for ex in batch {
        let v = field.velocity(&ex.x_t, ex.t, &ex.cond, &ex.mask)?;
        check_shape("velocity frames", ex.target.len(), v.len())?;
        check_shape("velocity width", ex.target.dim(), v.dim())?;
        for (&a, &b) in v.as_slice().iter().zip(ex.target.as_slice()) {
            sum += (a - b) * (a - b);
        }
        count += v.as_slice().len();
    }
    Ok(sum / T::from_count(count.max(1)))
}

/// Euler integration from seeded noise over a uniform grid of `n_steps`.
pub fn euler_sample<T: Scalar>(
    field: &impl VelocityField<T>,
    cond: &FlowCondition<T>,
    mask: &AttentionMask,
    mel_bins: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Frames<T>, FlowError> {
    let x0 = NoiseStream::new(seed).next_frames(cond.frames(), mel_bins);
    euler_from(field, cond, mask, x0, n_steps)
}

pub fn euler_from<T: Scalar>(
    field: &impl VelocityField<T>,
    cond: &FlowCondition<T>,
    mask: &AttentionMask,
    mut x: Frames<T>,
    n_steps: usize,
) -> Result<Frames<T>, FlowError> {
    if n_steps == 0 {
        return Err(FlowError::NoSteps);
    }
    let dt = T::one() / T::from_count(n_steps);
    for k in 0..n_steps {
        let t = T::from_count(k) / T::from_count(n_steps);
        let v = field.velocity(&x, t, cond, mask)?;
        check_shape("velocity frames", x.len(), v.len())?;
        for (xi, &vi) in x.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *xi += dt * vi;
        }
        if !x.is_finite() {
            return Err(FlowError::NonFinite { step: k });
        }
    }
    Ok(x)
}
