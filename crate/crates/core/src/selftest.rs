//! Fast invariant suites behind `streamtts selftest`. Each suite returns the
//! first violated property as its error message.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention_masks::{build_mask, streaming_consistency_check, MaskSpec, MaskVariant};
use crate::checkpoint::Checkpoint;
use crate::flow_decoder::{sample_reference, FlowModel, FlowStreamConfig, FlowStreamer};
use crate::frames::Frames;
use crate::opq_codec::ToyCodec;
use crate::pipeline::{theoretical_latency_fm, theoretical_latency_lm, LatencyBudget};
use crate::streaming_kernels::{upsample_step, CausalConv1d, LookaheadConv, WindowedAttention};
use crate::token_streams::{apply_delay_pattern, remove_delay_pattern, DelayConfig, MultiStreamGrid};
use crate::vocoder_stream::{crossfade, snr_db, toy_vocode_full, ToyVocoder, VocoderStream};

pub const SUITES: [&str; 6] = ["delay", "streaming", "masks", "crossfade", "opq", "bounds"];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions<'a> {
    /// Substring match on suite names.
    pub filter: Option<&'a str>,
    /// Checkpoint the opq suite should load instead of a fresh toy codec.
    pub codec_checkpoint: Option<&'a Path>,
}

pub fn run_selftest(opts: &SelftestOptions<'_>) -> Vec<SuiteResult> {
    SUITES
        .iter()
        .filter(|s| opts.filter.map_or(true, |f| s.contains(f)))
        .map(|&name| {
            let outcome = match name {
                "delay" => delay_suite(),
                "streaming" => streaming_suite(),
                "masks" => masks_suite(),
                "crossfade" => crossfade_suite(),
                "opq" => opq_suite(opts.codec_checkpoint),
                _ => bounds_suite(),
            };
            SuiteResult { name, outcome }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn noise(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Frames<f64> {
    Frames::from_vec(dim, (0..len * dim).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect())
}

/// Feeds `x` through `step` in pieces cycling over `sizes`.
fn chunked(x: &Frames<f64>, sizes: &[usize], mut step: impl FnMut(&Frames<f64>, bool) -> Frames<f64>) -> Frames<f64> {
    let mut out: Option<Frames<f64>> = None;
    let mut start = 0;
    let mut k = 0;
    loop {
        let end = (start + sizes[k % sizes.len()]).min(x.len());
        let y = step(&x.slice(start, end), end == x.len());
        match &mut out {
            Some(o) => o.extend(&y),
            None => out = Some(y),
        }
        if end == x.len() {
            break;
        }
        start = end;
        k += 1;
    }
    out.unwrap_or_else(|| Frames::new(x.dim()))
}

fn delay_suite() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = DelayConfig::for_codebook(64);
    for s in 1..=8 {
        for t in [0usize, 1, 2, 7, 33] {
            let rows = (0..s).map(|_| (0..t).map(|_| rng.gen_range(0..64)).collect()).collect();
            let grid = MultiStreamGrid::from_rows(64, rows).map_err(|e| e.to_string())?;
            let delayed = apply_delay_pattern(&grid, &cfg).map_err(|e| e.to_string())?;
            let back = remove_delay_pattern(&delayed, &cfg).map_err(|e| e.to_string())?;
            ensure(back == grid, || format!("remove(apply(g)) != g for S={s} T={t}"))?;
        }
    }
    Ok(())
}

fn streaming_suite() -> Result<(), String> {
    let tol = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = noise(&mut rng, 37, 3);
    let conv = CausalConv1d::<f64>::new("c", 3, 4, 3, &mut rng);
    let look = LookaheadConv::<f64>::new("l", 3, 2, 2, 3, &mut rng);
    let conv_full = conv.forward_full(&x).map_err(|e| e.to_string())?;
    let look_full = look.forward_full(&x).map_err(|e| e.to_string())?;
    let up_full = upsample_step(&x, 4).map_err(|e| e.to_string())?;
    for sizes in [&[1usize][..], &[2, 5], &[37]] {
        let mut st = conv.init_state();
        let got = chunked(&x, sizes, |c, _| conv.step(&mut st, c).unwrap());
        ensure(got.max_abs_diff(&conv_full) <= tol, || format!("causal conv chunking {sizes:?}"))?;
        let mut st = look.init_state();
        let got = chunked(&x, sizes, |c, last| look.step(&mut st, c, last).unwrap());
        ensure(got.max_abs_diff(&look_full) <= tol, || format!("look-ahead conv chunking {sizes:?}"))?;
        let got = chunked(&x, sizes, |c, _| upsample_step(c, 4).unwrap());
        ensure(got == up_full, || format!("upsampler chunking {sizes:?}"))?;
    }

    let att = WindowedAttention::<f64>::new("a", 3, 4, 3, &mut rng);
    for chunk in [2u32, 5] {
        let spec = MaskSpec::new(MaskVariant::ChunkCausal { chunk_ms: chunk * 1000 }, 1.0).with_cap_seconds(Some(10.0));
        let full = att.forward_masked(&x, &build_mask(&spec, x.len()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut st = att.init_state();
        let got = chunked(&x, &[chunk as usize], |c, _| att.step(&mut st, c, &spec).unwrap());
        ensure(got.max_abs_diff(&full) <= tol, || format!("windowed attention chunk {chunk}"))?;
    }

    let model = Arc::new(FlowModel::<f64>::toy(3));
    let spk = vec![0.2, -0.1, 0.4, 0.0];
    let toks: Vec<u32> = (0..31).map(|_| rng.gen_range(0..512)).collect();
    let cfg = FlowStreamConfig { chunk_tokens: 10, euler_steps: 2, noise_seed: 5, ..Default::default() };
    let (ts, ms) = cfg.specs(&model.cfg).map_err(|e| e.to_string())?;
    let want = sample_reference(&model, &toks, &spk, None, &ts, &ms, cfg.euler_steps, cfg.noise_seed).map_err(|e| e.to_string())?;
    for piece in [1usize, 7, 31] {
        let mut s = FlowStreamer::new(model.clone(), cfg, spk.clone(), None).map_err(|e| e.to_string())?;
        let mut got = Frames::new(want.dim());
        for c in toks.chunks(piece) {
            for m in s.push_tokens(c).map_err(|e| e.to_string())? {
                got.extend(&m);
            }
        }
        for m in s.finish().map_err(|e| e.to_string())? {
            got.extend(&m);
        }
        ensure(got.len() == want.len() && got.max_abs_diff(&want) <= tol, || format!("flow chunk sampling, pushes of {piece}"))?;
    }
    Ok(())
}

fn masks_suite() -> Result<(), String> {
    let rate = 100.0;
    let len = 450;
    let mut built = Vec::new();
    for v in [MaskVariant::Full, MaskVariant::CHUNK_2S, MaskVariant::CHUNK_1S, MaskVariant::FullyCausal] {
        let spec = MaskSpec::new(v, rate);
        let m = build_mask(&spec, len).map_err(|e| e.to_string())?;
        ensure((0..len).all(|i| m.allows(i, i)), || format!("{v:?}: diagonal not allowed"))?;
        if let Some(c) = spec.chunk_frames().map_err(|e| e.to_string())? {
            ensure(streaming_consistency_check(&m, c), || format!("{v:?}: not streamable at its chunk"))?;
        }
        built.push((v, m));
    }
    for w in built.windows(2) {
        ensure(w[0].1.contains(&w[1].1), || format!("{:?} does not contain {:?}", w[0].0, w[1].0))?;
    }
    let capped = build_mask(&MaskSpec::with_default_cap(MaskVariant::CHUNK_1S, rate), len).map_err(|e| e.to_string())?;
    for i in 0..len {
        let n = capped.row(i).iter().filter(|&&b| b).count();
        ensure(n <= 200, || format!("capped 1 s mask row {i} sees {n} frames"))?;
    }
    Ok(())
}

fn crossfade_suite() -> Result<(), String> {
    let v = vec![0.3f64; 97];
    ensure(crossfade(&v, &v).map_err(|e| e.to_string())? == v, || "constant crossfade not bit-exact".into())?;
    let voc = ToyVocoder::synthesis();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for seed in 0..5u64 {
        let n = 40 + seed as usize * 7;
        let mel = Frames::from_vec(voc.bins(), (0..n * voc.bins()).map(|_| rng.gen_range(0.0..0.3)).collect());
        let full = toy_vocode_full(&voc, &mel).map_err(|e| e.to_string())?;
        let mut st = VocoderStream::new(voc.clone());
        let mut got = Vec::new();
        let mut i = 0;
        while i < n {
            let j = (i + 5 + (i % 3)).min(n);
            got.extend(st.vocode_chunk(&mel.slice(i, j)).map_err(|e| e.to_string())?.samples);
            i = j;
        }
        got.extend(st.flush().samples);
        ensure(got.len() == full.len(), || format!("chunked render length {} != {}", got.len(), full.len()))?;
        let skip = 8 * voc.hop();
        let snr = snr_db(&full.samples[skip..], &got[skip..]);
        ensure(snr >= 40.0, || format!("chunked vocoder SNR {snr:.1} dB < 40 dB (stream {seed})"))?;
    }
    Ok(())
}

fn opq_suite(checkpoint: Option<&Path>) -> Result<(), String> {
    let codec = match checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(|e| format!("codec checkpoint {}: {e}", p.display()))?;
            ToyCodec::<f64>::from_checkpoint(&ck).map_err(|e| format!("codec checkpoint {}: {e}", p.display()))?
        }
        None => ToyCodec::<f64>::toy(15),
    };
    let q = &codec.quantizer;
    ensure(q.is_finite(), || "codebooks contain non-finite values".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = q.group_dim();
    for n in 0..200 {
        let v: Vec<f64> = (0..q.dim()).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) * 0.5).collect();
        let ids = q.encode(&v).map_err(|e| e.to_string())?;
        for (s, &id) in ids.iter().enumerate() {
            let sub = &v[s * g..(s + 1) * g];
            let dist = |k: u32| q.codeword(s, k).iter().zip(sub).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..q.codebook_size()).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap_or(0);
            ensure(dist(id) <= dist(best), || format!("vector {n} stream {s}: id {id} is not the nearest codeword"))?;
        }
    }
    let wave: Vec<f64> = (0..640 * 9 + 100).map(|i| (i as f64 * 0.013).sin() * 0.4).collect();
    let full = codec.encode(&wave).map_err(|e| e.to_string())?;
    let mut st = codec.init_encoder();
    let mut cols = Vec::new();
    for (k, c) in wave.chunks(777).enumerate() {
        let last = (k + 1) * 777 >= wave.len();
        let part = codec.encode_chunk(&mut st, c, last).map_err(|e| e.to_string())?;
        cols.extend((0..part.frames()).map(|f| part.column(f)));
    }
    ensure((0..full.frames()).map(|f| full.column(f)).eq(cols.iter().cloned()), || "chunked encode differs from full".into())?;
    Ok(())
}

fn bounds_suite() -> Result<(), String> {
    let fm = LatencyBudget { t_s_ms: 9.0, t_a_ms: 30.0, t_c_ms: 18.0, l: 25, d: 8, m: 8, holdback_frames: 3 };
    let got = theoretical_latency_fm(&fm);
    ensure(got == 300.0, || format!("fm bound {got} != 300"))?;
    let lm = LatencyBudget { t_s_ms: 6.0, t_a_ms: 5.0, t_c_ms: 4.0, ..fm };
    let got = theoretical_latency_lm(&lm);
    ensure(got == 134.0, || format!("lm bound {got} != 134"))?;
    for l in [5usize, 10, 25, 50] {
        let b = LatencyBudget { l, ..fm };
        let want = (l as f64 + 3.0) * 9.0 + 48.0;
        ensure(theoretical_latency_fm(&b) == want, || format!("fm bound at l={l}"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_a_clean_build() {
        let results = run_selftest(&SelftestOptions::default());
        assert_eq!(results.len(), SUITES.len());
        for r in results {
            assert!(r.passed(), "{}: {:?}", r.name, r.outcome);
        }
    }

    #[test]
    fn filter_selects_one_suite() {
        let results = run_selftest(&SelftestOptions { filter: Some("masks"), ..Default::default() });
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].name, "masks");
    }

    #[test]
    fn corrupted_checkpoint_fails_opq_suite() {
        let dir = std::env::temp_dir().join(format!("streamtts-selftest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("codec.ckpt");
        let mut bytes = ToyCodec::<f64>::toy(1).to_checkpoint().to_bytes();
        let n = bytes.len();
        bytes.truncate(n - 9);
        std::fs::write(&path, bytes).unwrap();
        let results = run_selftest(&SelftestOptions { filter: Some("opq"), codec_checkpoint: Some(&path) });
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(results[0].name, "opq");
        assert!(results[0].outcome.as_ref().unwrap_err().contains("codec checkpoint"));
    }
}
