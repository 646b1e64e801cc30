//! Toy mel-to-waveform synthesizer and the pseudo-streaming wrapper around it.
//!
//! The vocoder is a bank of sinusoids, one per mel bin, whose amplitudes
//! follow the bin values through a one-pole smoother. Every bin frequency is
//! a multiple of 100 Hz, so each oscillator completes a whole number of
//! cycles per 10 ms frame and phase is continuous without carrying state.
//!
//! The streaming wrapper re-renders each chunk with the previous eight mel
//! frames prepended, crossfades the overlap against the samples it held back
//! last time, and only ever appends to its output.

use thiserror::Error;

use crate::constants::{MEL_RATE_HZ, SYNTHESIS_RATE_HZ, VOCODER_CONTEXT_FRAMES};
use crate::frames::Frames;
use crate::scalar::Scalar;

/// Oscillator frequencies of the toy bank, all below the 8 kHz mel band edge.
pub const BIN_FREQUENCIES_HZ: [f64; 8] = [200.0, 400.0, 700.0, 1100.0, 1700.0, 2600.0, 4000.0, 6000.0];

#[derive(Debug, Error, PartialEq)]
pub enum VocoderError {
    #[error("mel width mismatch: vocoder has {expected} bins, got {got}")]
    BinMismatch { expected: usize, got: usize },
    #[error("crossfade inputs differ in length ({tail} vs {head})")]
    LengthMismatch { tail: usize, head: usize },
    #[error("mel chunk is empty")]
    EmptyChunk,
    #[error("mel contains non-finite values")]
    NonFinite,
    #[error("{freq} Hz does not complete a whole number of cycles per {hop}-sample hop at {rate} Hz")]
    PhaseDrift { freq: f64, hop: usize, rate: u32 },
    #[error("stream already flushed")]
    Flushed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioChunk<T> {
    pub samples: Vec<T>,
    pub sample_rate_hz: u32,
}

impl<T: Scalar> AudioChunk<T> {
    pub fn empty(sample_rate_hz: u32) -> Self {
        Self { samples: Vec::new(), sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn clamp_unit<T: Scalar>(v: T) -> T {
    v.max(-T::one()).min(T::one())
}

/// Sinusoidal-bank vocoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVocoder {
    sample_rate_hz: u32,
    hop: usize,
    freqs: Vec<f64>,
    /// Per-sample smoothing coefficient of the amplitude envelope.
    alpha: f64,
    gain: f64,
    /// `sin` table per bin over one hop; whole cycles make it repeat exactly.
    table: Vec<Vec<f64>>,
}

impl ToyVocoder {
    pub fn new(sample_rate_hz: u32, hop: usize, freqs: &[f64]) -> Result<Self, VocoderError> {
        for &f in freqs {
            let cycles = f * hop as f64 / sample_rate_hz as f64;
            if (cycles - cycles.round()).abs() > 1e-9 {
                return Err(VocoderError::PhaseDrift { freq: f, hop, rate: sample_rate_hz });
            }
        }
        // Envelope time constant of a quarter hop keeps frame edges soft while
        // letting the state forget its start well within eight frames.
        let tau = hop as f64 / 4.0;
        let table = freqs
            .iter()
            .map(|&f| {
                (0..hop)
                    .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / sample_rate_hz as f64).sin())
                    .collect()
            })
            .collect();
        Ok(Self {
            sample_rate_hz,
            hop,
            freqs: freqs.to_vec(),
            alpha: 1.0 - (-1.0 / tau).exp(),
            gain: 1.0 / (2.0 * freqs.len().max(1) as f64),
            table,
        })
    }

    /// 24 kHz output, 240 samples per 10 ms mel frame.
    pub fn synthesis() -> Self {
        Self::new(SYNTHESIS_RATE_HZ, (SYNTHESIS_RATE_HZ / MEL_RATE_HZ) as usize, &BIN_FREQUENCIES_HZ)
            .expect("default bank is phase continuous")
    }

    /// 16 kHz rendering used for codec training material.
    pub fn analysis_rate() -> Self {
        Self::new(16_000, 160, &BIN_FREQUENCIES_HZ).expect("default bank is phase continuous")
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    /// Renders `mel` from a silent envelope, without clamping.
    pub fn render<T: Scalar>(&self, mel: &Frames<T>) -> Result<Vec<T>, VocoderError> {
        if mel.dim() != self.bins() {
            return Err(VocoderError::BinMismatch { expected: self.bins(), got: mel.dim() });
        }
        if !mel.is_finite() {
            return Err(VocoderError::NonFinite);
        }
        let alpha = T::lit(self.alpha);
        let gain = T::lit(self.gain);
        let tables: Vec<Vec<T>> = self.table.iter().map(|t| t.iter().map(|&v| T::lit(v)).collect()).collect();
        let mut env = vec![T::zero(); self.bins()];
        let mut out = Vec::with_capacity(mel.len() * self.hop);
        for frame in mel.rows() {
            for n in 0..self.hop {
                let mut acc = T::zero();
                for b in 0..self.bins() {
                    let e = env[b];
                    env[b] = e + alpha * (frame[b] - e);
                    acc += env[b] * tables[b][n];
                }
                out.push(acc * gain);
            }
        }
        Ok(out)
    }

    /// Estimates per-frame bin amplitudes from a waveform by correlating each
    /// hop with the bank's oscillators. Inverse of `render` for slowly
    /// varying mel up to envelope smoothing.
    pub fn analyze<T: Scalar>(&self, wave: &[T]) -> Frames<T> {
        let frames = wave.len() / self.hop;
        let mut out = Frames::zeros(frames, self.bins());
        for f in 0..frames {
            let seg = &wave[f * self.hop..(f + 1) * self.hop];
            for b in 0..self.bins() {
                let w = 2.0 * std::f64::consts::PI * self.freqs[b] / self.sample_rate_hz as f64;
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in seg.iter().enumerate() {
                    re += x.as_f64() * (w * n as f64).sin();
                    im += x.as_f64() * (w * n as f64).cos();
                }
                let amp = 2.0 * (re * re + im * im).sqrt() / self.hop as f64;
                out.row_mut(f)[b] = T::lit(amp / self.gain);
            }
        }
        out
    }
}

/// Whole-sequence render, clamped to [-1, 1].
pub fn toy_vocode_full<T: Scalar>(vocoder: &ToyVocoder, mel: &Frames<T>) -> Result<AudioChunk<T>, VocoderError> {
    let samples = vocoder.render(mel)?.into_iter().map(clamp_unit).collect();
    Ok(AudioChunk { samples, sample_rate_hz: vocoder.sample_rate_hz() })
}

/// Linear fade from `tail` into `head`: `out[k] = tail[k] + w[k]·(head[k] − tail[k])`
/// with `w[k] = k/(L−1)`. Written as an interpolation so equal inputs come
/// back bit for bit.
pub fn crossfade<T: Scalar>(tail: &[T], head: &[T]) -> Result<Vec<T>, VocoderError> {
    if tail.len() != head.len() {
        return Err(VocoderError::LengthMismatch { tail: tail.len(), head: head.len() });
    }
    let w = linear_window::<T>(tail.len());
    Ok(tail.iter().zip(head).zip(w).map(|((&t, &h), w)| t + w * (h - t)).collect())
}

/// Monotone 0→1 ramp of length `len`; a single sample takes the head.
pub fn linear_window<T: Scalar>(len: usize) -> Vec<T> {
    match len {
        0 => Vec::new(),
        1 => vec![T::one()],
        _ => (0..len).map(|k| T::from_count(k) / T::from_count(len - 1)).collect(),
    }
}

/// Pseudo-streaming vocoder state.
#[derive(Debug, Clone)]
pub struct VocoderStream<T> {
    vocoder: ToyVocoder,
    context_frames: usize,
    mel_tail: Frames<T>,
    /// Un-finalized samples covering the last `mel_tail.len()` frames.
    held: Vec<T>,
    emitted_samples: usize,
    flushed: bool,
}

impl<T: Scalar> VocoderStream<T> {
    pub fn new(vocoder: ToyVocoder) -> Self {
        Self::with_context(vocoder, VOCODER_CONTEXT_FRAMES)
    }

    pub fn with_context(vocoder: ToyVocoder, context_frames: usize) -> Self {
        let bins = vocoder.bins();
        Self { vocoder, context_frames, mel_tail: Frames::new(bins), held: Vec::new(), emitted_samples: 0, flushed: false }
    }

    pub fn emitted_samples(&self) -> usize {
        self.emitted_samples
    }

    pub fn held_samples(&self) -> usize {
        self.held.len()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.vocoder.sample_rate_hz()
    }

    /// Renders one mel chunk and returns the samples that became final.
    pub fn vocode_chunk(&mut self, mel_chunk: &Frames<T>) -> Result<AudioChunk<T>, VocoderError> {
        if self.flushed {
            return Err(VocoderError::Flushed);
        }
        if mel_chunk.is_empty() {
            return Err(VocoderError::EmptyChunk);
        }
        if mel_chunk.dim() != self.vocoder.bins() {
            return Err(VocoderError::BinMismatch { expected: self.vocoder.bins(), got: mel_chunk.dim() });
        }
        let hop = self.vocoder.hop();
        let ctx = self.mel_tail.len();
        let mut input = self.mel_tail.clone();
        input.extend(mel_chunk);
        let wave = self.vocoder.render(&input)?;
        let overlap = ctx * hop;
        debug_assert_eq!(self.held.len(), overlap);
        let mut region = crossfade(&self.held, &wave[..overlap])?;
        region.extend_from_slice(&wave[overlap..]);

        let keep = input.len().min(self.context_frames) * hop;
        let held = region.split_off(region.len() - keep);
        self.held = held;
        input.keep_last(self.context_frames);
        self.mel_tail = input;
        self.emitted_samples += region.len();
        Ok(AudioChunk { samples: region.into_iter().map(clamp_unit).collect(), sample_rate_hz: self.sample_rate_hz() })
    }

    /// Finalizes the held-back region as is. Further chunks are rejected.
    pub fn flush(&mut self) -> AudioChunk<T> {
        self.flushed = true;
        let out: Vec<T> = std::mem::take(&mut self.held).into_iter().map(clamp_unit).collect();
        self.emitted_samples += out.len();
        AudioChunk { samples: out, sample_rate_hz: self.sample_rate_hz() }
    }
}

/// Signal-to-noise ratio of `test` against `reference` in dB.
pub fn snr_db<T: Scalar>(reference: &[T], test: &[T]) -> f64 {
    let mut sig = 0.0;
    let mut err = 0.0;
    for (&r, &t) in reference.iter().zip(test) {
        sig += r.as_f64() * r.as_f64();
        err += (r.as_f64() - t.as_f64()).powi(2);
    }
    if err == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (sig / err).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn random_mel(rng: &mut ChaCha8Rng, frames: usize) -> Frames<f64> {
        // piecewise smooth amplitudes, like the corpus renderer
        let mut out = Frames::new(8);
        let mut cur: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.5)).collect();
        for f in 0..frames {
            if f % 4 == 0 {
                cur = (0..8).map(|_| rng.gen_range(0.0..1.5)).collect();
            }
            out.push(&cur);
        }
        out
    }

    fn stream(v: &ToyVocoder, mel: &Frames<f64>, chunks: &[usize]) -> Vec<f64> {
        let mut s = VocoderStream::new(v.clone());
        let mut out = Vec::new();
        let mut start = 0;
        let mut k = 0;
        while start < mel.len() {
            let end = (start + chunks[k % chunks.len()]).min(mel.len());
            let before = out.len();
            out.extend(s.vocode_chunk(&mel.slice(start, end)).unwrap().samples);
            assert!(out.len() >= before);
            start = end;
            k += 1;
        }
        out.extend(s.flush().samples);
        out
    }

    #[test]
    fn silence_renders_silence() {
        let v = ToyVocoder::synthesis();
        let out = toy_vocode_full(&v, &Frames::<f64>::zeros(5, 8)).unwrap();
        assert!(out.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn one_frame_is_240_samples() {
        let v = ToyVocoder::synthesis();
        assert_eq!(toy_vocode_full(&v, &Frames::<f64>::zeros(1, 8)).unwrap().len(), 240);
        assert_eq!(ToyVocoder::analysis_rate().render(&Frames::<f64>::zeros(1, 8)).unwrap().len(), 160);
    }

    #[test]
    fn single_bin_is_a_pure_tone() {
        let v = ToyVocoder::synthesis();
        for bin in 0..8 {
            let mut mel = Frames::<f64>::zeros(100, 8);
            for f in 0..100 {
                mel.row_mut(f)[bin] = 1.0;
            }
            let wave = toy_vocode_full(&v, &mel).unwrap().samples;
            let n = wave.len();
            let mut buf: Vec<Complex<f64>> = wave.iter().map(|&x| Complex::new(x, 0.0)).collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut buf);
            let peak = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
            let hz = peak as f64 * 24_000.0 / n as f64;
            assert!((hz - BIN_FREQUENCIES_HZ[bin]).abs() <= 24_000.0 / n as f64, "bin {bin}: {hz}");
        }
    }

    #[test]
    fn rejects_frequencies_that_drift() {
        assert!(matches!(ToyVocoder::new(24_000, 240, &[150.0]), Err(VocoderError::PhaseDrift { .. })));
    }

    #[test]
    fn crossfade_arithmetic() {
        let out = crossfade(&[1.0f64; 4], &[0.0; 4]).unwrap();
        assert_eq!(out, vec![1.0, 1.0 - 1.0 / 3.0, 1.0 - 2.0 / 3.0, 0.0]);
        let x = [0.3f64, -0.7, 0.11, 0.9, 0.5];
        assert_eq!(crossfade(&x, &x).unwrap(), x.to_vec());
        assert_eq!(crossfade(&[1.0f64], &[1.0, 2.0]), Err(VocoderError::LengthMismatch { tail: 1, head: 2 }));
    }

    #[test]
    fn window_weights_sum_to_one() {
        for len in 0..50 {
            let w = linear_window::<f64>(len);
            for k in 0..len {
                assert_eq!((1.0 - w[k]) + w[k], 1.0);
                if k > 0 {
                    assert!(w[k] >= w[k - 1]);
                }
            }
        }
    }

    #[test]
    fn crossfaded_noise_does_not_gain_energy() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..1920).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..1920).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
            let out = crossfade(&a, &b).unwrap();
            assert!(e(&out) <= e(&a).max(e(&b)) * 1.05, "seed {seed}");
        }
    }

    #[test]
    fn first_chunk_holds_back_eight_frames() {
        let v = ToyVocoder::synthesis();
        let mut s = VocoderStream::<f64>::new(v);
        let out = s.vocode_chunk(&Frames::zeros(20, 8)).unwrap();
        assert_eq!(out.len(), 12 * 240);
        assert_eq!(s.held_samples(), 8 * 240);
        let out = s.vocode_chunk(&Frames::zeros(3, 8)).unwrap();
        assert_eq!(out.len(), 3 * 240);
        assert_eq!(s.flush().len(), 8 * 240);
        assert_eq!(s.emitted_samples(), 23 * 240);
        assert!(s.vocode_chunk(&Frames::zeros(1, 8)).is_err());
    }

    #[test]
    fn short_streams_are_held_entirely() {
        let v = ToyVocoder::synthesis();
        let mut s = VocoderStream::<f64>::new(v);
        assert!(s.vocode_chunk(&Frames::zeros(5, 8)).unwrap().is_empty());
        assert_eq!(s.flush().len(), 5 * 240);
    }

    #[test]
    fn constant_mel_has_no_seam() {
        let v = ToyVocoder::synthesis();
        let mel = Frames::from_vec(8, vec![0.8; 60 * 8]);
        let full = toy_vocode_full(&v, &mel).unwrap().samples;
        let chunked = stream(&v, &mel, &[30]);
        let max_diff = |w: &[f64]| w.windows(2).map(|p| (p[1] - p[0]).abs()).fold(0.0, f64::max);
        assert_eq!(chunked.len(), full.len());
        assert!(max_diff(&chunked) <= max_diff(&full) + 1e-9);
    }

    #[test]
    fn chunked_render_tracks_full_render() {
        let v = ToyVocoder::synthesis();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mel = random_mel(&mut rng, 150);
            let chunks: Vec<usize> = (0..4).map(|_| rng.gen_range(10..60)).collect();
            let full = toy_vocode_full(&v, &mel).unwrap().samples;
            let chunked = stream(&v, &mel, &chunks);
            assert_eq!(chunked.len(), full.len());
            let snr = snr_db(&full[8 * 240..], &chunked[8 * 240..]);
            assert!(snr >= 40.0, "seed {seed}: {snr:.1} dB");
        }
    }

    #[test]
    fn analysis_recovers_steady_amplitudes() {
        let v = ToyVocoder::synthesis();
        let row: Vec<f64> = vec![0.2, 0.5, 0.9, 0.1, 0.0, 0.7, 0.3, 0.6];
        let mel = Frames::from_rows(8, &vec![row.clone(); 10]);
        let est = v.analyze(&v.render(&mel).unwrap());
        for (a, b) in est.row(9).iter().zip(&row) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn single_precision_stream() {
        let v = ToyVocoder::synthesis();
        let mel: Frames<f32> = random_mel(&mut ChaCha8Rng::seed_from_u64(4), 40).cast();
        let mut s = VocoderStream::<f32>::new(v);
        let mut n = s.vocode_chunk(&mel.slice(0, 25)).unwrap().len();
        n += s.vocode_chunk(&mel.slice(25, 40)).unwrap().len();
        n += s.flush().len();
        assert_eq!(n, 40 * 240);
    }
}
