use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{OpqError, ToyCodec};
use crate::corpus::CorpusItem;
use crate::frames::Frames;
use crate::nn::{tanh_grad, Adam, Parameterized};
use crate::scalar::Scalar;

/// Paired analysis input and synthesis target.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecExample<T> {
    pub wave16k: Vec<T>,
    pub wave24k: Vec<T>,
}

impl<T: Scalar> CodecExample<T> {
    pub fn from_item(item: &CorpusItem) -> Self {
        Self {
            wave16k: item.wave16k.iter().map(|&v| T::lit(v)).collect(),
            wave24k: item.wave24k.iter().map(|&v| T::lit(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecTrainConfig {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub segments: usize,
    pub segment_frames: usize,
    pub ema_decay: f64,
    pub commitment: f64,
    /// Codewords whose EMA usage falls below this are re-seeded from the batch.
    pub dead_threshold: f64,
    pub reinit_every: usize,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            stage1_steps: 5000,
            stage2_steps: 1500,
            seed: 0,
            learning_rate: 1e-3,
            segments: 4,
            segment_frames: 8,
            ema_decay: 0.99,
            commitment: 0.25,
            dead_threshold: 0.03,
            reinit_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecTrainReport {
    pub stage1_losses: Vec<f64>,
    pub stage2_losses: Vec<f64>,
    /// Full-stream waveform MSE over the training set before training,
    /// after stage 1 and after stage 2.
    pub baseline_mse: f64,
    pub stage1_mse: f64,
    pub stage2_mse: f64,
}

impl CodecTrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,step,loss\n");
        for (stage, losses) in [(1, &self.stage1_losses), (2, &self.stage2_losses)] {
            for (i, l) in losses.iter().enumerate() {
                s.push_str(&format!("{stage},{i},{l}\n"));
            }
        }
        s
    }
}

struct Ema<T> {
    counts: Vec<Vec<T>>,
    sums: Vec<Vec<T>>,
}

impl<T: Scalar> Ema<T> {
    fn new(codec: &ToyCodec<T>) -> Self {
        let q = &codec.quantizer;
        let k = q.codebook_size() as usize;
        Self {
            counts: vec![vec![T::zero(); k]; q.n_streams()],
            sums: vec![vec![T::zero(); k * q.group_dim()]; q.n_streams()],
        }
    }

    fn update(&mut self, codec: &mut ToyCodec<T>, e: &Frames<T>, ids: &[Vec<u32>], decay: f64) {
        let q = &mut codec.quantizer;
        let (gd, k) = (q.group_dim(), q.codebook_size() as usize);
        let decay = T::lit(decay);
        let keep = T::one() - decay;
        let eps = T::lit(1e-5);
        for g in 0..q.n_streams() {
            let mut n = vec![T::zero(); k];
            let mut s = vec![T::zero(); k * gd];
            for (row, col) in e.rows().zip(ids) {
                let id = col[g] as usize;
                n[id] += T::one();
                for (d, &v) in row[g * gd..(g + 1) * gd].iter().enumerate() {
                    s[id * gd + d] += v;
                }
            }
            for (c, nc) in self.counts[g].iter_mut().zip(&n) {
                *c = decay * *c + keep * *nc;
            }
            for (c, sc) in self.sums[g].iter_mut().zip(&s) {
                *c = decay * *c + keep * *sc;
            }
            let total: T = self.counts[g].iter().copied().sum();
            for id in 0..k {
                let smoothed = (self.counts[g][id] + eps) / (total + T::from_count(k) * eps) * total;
                if smoothed > T::zero() {
                    for d in 0..gd {
                        q.codebooks[g].data[id * gd + d] = self.sums[g][id * gd + d] / smoothed;
                    }
                }
            }
        }
    }

    /// Re-seeds rarely used codewords from random batch sub-vectors.
    fn reinit_dead(&mut self, codec: &mut ToyCodec<T>, e: &Frames<T>, threshold: f64, rng: &mut ChaCha8Rng) {
        let q = &mut codec.quantizer;
        let (gd, k) = (q.group_dim(), q.codebook_size() as usize);
        for g in 0..q.n_streams() {
            let mean = self.counts[g].iter().copied().sum::<T>() / T::from_count(k);
            let seed_count = if mean > T::zero() { mean } else { T::one() };
            for id in 0..k {
                if self.counts[g][id] >= T::lit(threshold) {
                    continue;
                }
                let row = e.row(rng.gen_range(0..e.len()));
                for d in 0..gd {
                    let jitter: f64 = StandardNormal.sample(rng);
                    let v = row[g * gd + d] + T::lit(0.01 * jitter);
                    q.codebooks[g].data[id * gd + d] = v;
                    self.sums[g][id * gd + d] = v * seed_count;
                }
                self.counts[g][id] = seed_count;
            }
        }
    }
}

/// Forward/backward over one segment batch.
pub(crate) struct BatchPass<T> {
    pub rec_loss: T,
    pub grads: Vec<Vec<T>>,
    pub embeddings: Frames<T>,
    pub ids: Vec<Vec<u32>>,
}

/// Reconstruction MSE plus `commitment · mean ‖e − q‖²`, with
/// straight-through gradients for the quantizer. Gradients follow
/// `params()` order; codebook slots stay zero (codebooks move by EMA).
pub(crate) fn batch_pass<T: Scalar>(
    codec: &ToyCodec<T>,
    batch: &[(Frames<T>, Frames<T>, usize)],
    commitment: f64,
) -> Result<BatchPass<T>, OpqError> {
    let n_out: usize = batch.iter().map(|(_, y, _)| y.as_slice().len()).sum();
    let n_emb: usize = batch.iter().map(|(x, _, _)| x.len() * codec.cfg.embed_dim).sum();
    let scale = T::lit(2.0) / T::from_count(n_out.max(1));
    let cscale = T::lit(2.0 * commitment) / T::from_count(n_emb.max(1));
    let mut g_enc_in = codec.enc_in.zero_grads();
    let mut g_dec_out = codec.dec_out.zero_grads();
    let mut g_enc_conv = (vec![T::zero(); codec.enc_conv.weight.len()], vec![T::zero(); codec.enc_conv.bias.len()]);
    let mut g_dec_conv = g_enc_conv.clone();
    let mut rec = T::zero();
    let mut embeddings = Frames::new(codec.cfg.embed_dim);
    let mut all_ids = Vec::new();
    let gd = codec.cfg.group_dim();
    let q = &codec.quantizer;
    for (x, target, keep) in batch {
        let a = codec.enc_in.forward(x);
        let e = codec.enc_conv.forward_full(&a)?.map(|v| v.tanh());
        let ids = q.encode_frames(&e)?;
        let q_full = q.decode_columns(&ids, q.n_streams())?;
        let q_kept = q.decode_columns(&ids, *keep)?;
        let h = codec.dec_conv.forward_full(&q_kept)?.map(|v| v.tanh());
        let y = codec.dec_out.forward(&h);
        let gy = Frames::from_vec(
            y.dim(),
            y.as_slice().iter().zip(target.as_slice()).map(|(&a, &b)| (a - b) * scale).collect(),
        );
        rec += y.as_slice().iter().zip(target.as_slice()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
        let gh = codec.dec_out.backward(&h, &gy, &mut g_dec_out);
        let gu = Frames::from_vec(gh.dim(), gh.as_slice().iter().zip(h.as_slice()).map(|(&g, &v)| g * tanh_grad(v)).collect());
        let (gq, cg) = codec.dec_conv.backward_full(&q_kept, &gu);
        add(&mut g_dec_conv.0, &cg.weight);
        add(&mut g_dec_conv.1, &cg.bias);
        // straight-through on kept groups; commitment pulls every group
        let mut ge = Frames::zeros(e.len(), e.dim());
        for t in 0..e.len() {
            let (er, qr, gqr) = (e.row(t), q_full.row(t), gq.row(t));
            for (i, g) in ge.row_mut(t).iter_mut().enumerate() {
                let st = if i / gd < *keep { gqr[i] } else { T::zero() };
                *g = (st + cscale * (er[i] - qr[i])) * tanh_grad(er[i]);
            }
        }
        let (ga, cg) = codec.enc_conv.backward_full(&a, &ge);
        add(&mut g_enc_conv.0, &cg.weight);
        add(&mut g_enc_conv.1, &cg.bias);
        codec.enc_in.backward(x, &ga, &mut g_enc_in);
        embeddings.extend(&e);
        all_ids.extend(ids);
    }
    let mut grads = g_enc_in.into_tensors();
    grads.push(g_enc_conv.0);
    grads.push(g_enc_conv.1);
    grads.extend(q.codebooks.iter().map(|c| vec![T::zero(); c.len()]));
    grads.push(g_dec_conv.0);
    grads.push(g_dec_conv.1);
    grads.extend(g_dec_out.into_tensors());
    Ok(BatchPass { rec_loss: rec / T::from_count(n_out.max(1)), grads, embeddings, ids: all_ids })
}

fn add<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn sample_segment<T: Scalar>(
    codec: &ToyCodec<T>,
    ex: &CodecExample<T>,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> (Frames<T>, Frames<T>) {
    let (na, ns) = (codec.cfg.analysis_samples, codec.cfg.synthesis_samples);
    let total = ex.wave16k.len().div_ceil(na);
    let len = frames.min(total);
    let start = rng.gen_range(0..=total - len);
    let x = codec.frame_wave(&ex.wave16k[start * na..((start + len) * na).min(ex.wave16k.len())]);
    let mut y: Vec<T> = ex.wave24k[(start * ns).min(ex.wave24k.len())..((start + len) * ns).min(ex.wave24k.len())].to_vec();
    y.resize(len * ns, T::zero());
    let mut x = x;
    while x.len() < len {
        x.push(&vec![T::zero(); na]);
    }
    (x, Frames::from_vec(ns, y))
}

/// Mean squared waveform error of full-pass decoding at `keep_k` streams.
pub fn eval_reconstruction<T: Scalar>(codec: &ToyCodec<T>, data: &[CodecExample<T>], keep_k: usize) -> Result<f64, OpqError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for ex in data {
        let y = codec.decode(&codec.encode(&ex.wave16k)?, keep_k)?;
        for (a, b) in y.iter().zip(&ex.wave24k) {
            sum += (a.as_f64() - b.as_f64()).powi(2);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// The first `n` pre-quantization embeddings of `data`, item by item.
pub fn held_out_embeddings<T: Scalar>(codec: &ToyCodec<T>, data: &[CodecExample<T>], n: usize) -> Result<Frames<T>, OpqError> {
    let mut out = Frames::new(codec.cfg.embed_dim);
    for ex in data {
        if out.len() >= n {
            break;
        }
        out.extend(&codec.embed(&ex.wave16k)?);
    }
    Ok(out.slice(0, n.min(out.len())))
}

/// Stage 1 trains everything with `keep_k ~ U{1..8}` per segment; stage 2
/// freezes encoder and codebooks and trains the decoder on all 8 streams.
pub fn train_codec<T: Scalar>(
    codec: &mut ToyCodec<T>,
    data: &[CodecExample<T>],
    cfg: &CodecTrainConfig,
) -> Result<CodecTrainReport, OpqError> {
    if data.is_empty() {
        return Err(OpqError::NoData);
    }
    let full = codec.cfg.n_streams;
    let baseline_mse = eval_reconstruction(codec, data, full)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ema = Ema::new(codec);
    let mut adam = Adam::for_params(cfg.learning_rate, &codec.params());
    let mut stage1_losses = Vec::with_capacity(cfg.stage1_steps);
    for step in 0..cfg.stage1_steps {
        let batch: Vec<_> = (0..cfg.segments)
            .map(|_| {
                let ex = &data[rng.gen_range(0..data.len())];
                let (x, y) = sample_segment(codec, ex, cfg.segment_frames, &mut rng);
                (x, y, rng.gen_range(1..=full))
            })
            .collect();
        if step % cfg.reinit_every.max(1) == 0 {
            let e = codec.embed_frames_batch(&batch)?;
            ema.reinit_dead(codec, &e, cfg.dead_threshold, &mut rng);
        }
        let pass = batch_pass(codec, &batch, cfg.commitment)?;
        let loss = pass.rec_loss.as_f64();
        if !loss.is_finite() || pass.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(OpqError::NonFinite { stage: 1, step });
        }
        adam.update(&mut codec.params_mut(), &pass.grads);
        ema.update(codec, &pass.embeddings, &pass.ids, cfg.ema_decay);
        stage1_losses.push(loss);
    }
    let stage1_mse = eval_reconstruction(codec, data, full)?;

    let n_enc = codec.encoder_params().len() + codec.quantizer.codebooks.len();
    let mut adam = Adam::for_params(cfg.learning_rate, &codec.decoder_params());
    let mut stage2_losses = Vec::with_capacity(cfg.stage2_steps);
    for step in 0..cfg.stage2_steps {
        let batch: Vec<_> = (0..cfg.segments)
            .map(|_| {
                let ex = &data[rng.gen_range(0..data.len())];
                let (x, y) = sample_segment(codec, ex, cfg.segment_frames, &mut rng);
                (x, y, full)
            })
            .collect();
        let pass = batch_pass(codec, &batch, cfg.commitment)?;
        let loss = pass.rec_loss.as_f64();
        if !loss.is_finite() || pass.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(OpqError::NonFinite { stage: 2, step });
        }
        let mut dec = codec.params_mut().split_off(n_enc);
        adam.update(&mut dec, &pass.grads[n_enc..]);
        stage2_losses.push(loss);
    }
    let stage2_mse = eval_reconstruction(codec, data, full)?;
    Ok(CodecTrainReport { stage1_losses, stage2_losses, baseline_mse, stage1_mse, stage2_mse })
}

impl<T: Scalar> ToyCodec<T> {
    fn embed_frames_batch(&self, batch: &[(Frames<T>, Frames<T>, usize)]) -> Result<Frames<T>, OpqError> {
        let mut e = Frames::new(self.cfg.embed_dim);
        for (x, _, _) in batch {
            e.extend(&self.enc_conv.forward_full(&self.enc_in.forward(x))?.map(|v| v.tanh()));
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SynthCorpusSpec};

    fn data(n: usize, seed: u64) -> Vec<CodecExample<f64>> {
        let spec = SynthCorpusSpec { n_items: n, seed, ..Default::default() };
        generate_corpus(&spec).unwrap().iter().map(CodecExample::from_item).collect()
    }

    fn total_loss(codec: &ToyCodec<f64>, batch: &[(Frames<f64>, Frames<f64>, usize)]) -> f64 {
        batch_pass(codec, batch, 0.25).unwrap().rec_loss
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let codec = ToyCodec::<f64>::toy(1);
        let d = data(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<_> = (0..2)
            .map(|i| {
                let (x, y) = sample_segment(&codec, &d[i], 4, &mut rng);
                (x, y, 3 + i)
            })
            .collect();
        let pass = batch_pass(&codec, &batch, 0.25).unwrap();
        let first_dec = codec.encoder_params().len() + 8;
        let eps = 1e-5;
        for (slot, grads) in pass.grads.iter().enumerate().skip(first_dec) {
            for idx in (0..grads.len()).step_by(grads.len() / 7 + 1) {
                let mut p = codec.clone();
                p.params_mut()[slot].data[idx] += eps;
                let mut m = codec.clone();
                m.params_mut()[slot].data[idx] -= eps;
                let fd = (total_loss(&p, &batch) - total_loss(&m, &batch)) / (2.0 * eps);
                let err = (fd - grads[idx]).abs() / fd.abs().max(grads[idx].abs()).max(1e-9);
                assert!(err < 1e-5, "slot {slot} idx {idx}: {fd} vs {}", grads[idx]);
            }
        }
        assert!(pass.grads[first_dec - 8..first_dec].iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_steps_is_untrained_passthrough() {
        let d = data(3, 2);
        let mut codec = ToyCodec::<f64>::toy(7);
        let cfg = CodecTrainConfig { stage1_steps: 0, stage2_steps: 0, ..Default::default() };
        let r = train_codec(&mut codec, &d, &cfg).unwrap();
        assert_eq!(codec, ToyCodec::toy(7));
        assert_eq!(r.stage2_mse, eval_reconstruction(&ToyCodec::toy(7), &d, 8).unwrap());
        assert_eq!(r.baseline_mse, r.stage2_mse);
    }

    #[test]
    fn short_training_is_deterministic_and_stage2_helps() {
        let d = data(12, 3);
        let cfg = CodecTrainConfig { stage1_steps: 300, stage2_steps: 100, seed: 4, ..Default::default() };
        let mut a = ToyCodec::<f64>::toy(1);
        let ra = train_codec(&mut a, &d, &cfg).unwrap();
        let mut b = ToyCodec::<f64>::toy(1);
        let rb = train_codec(&mut b, &d, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert!(ra.stage1_mse < ra.baseline_mse, "{ra:?}");
        assert!(ra.stage2_mse < ra.stage1_mse, "{} vs {}", ra.stage2_mse, ra.stage1_mse);
        assert!(a.quantizer.is_finite());
        assert!(ra.to_csv().lines().count() == 401);
    }

    #[test]
    fn empty_data_is_rejected() {
        let mut c = ToyCodec::<f64>::toy(1);
        assert!(matches!(train_codec(&mut c, &[], &CodecTrainConfig::default()), Err(OpqError::NoData)));
    }
}
