//! Synthetic paired corpus: random text, its motif token sequence, a target
//! mel that depends on the tokens and the speaker, and 16/24 kHz renders of
//! that mel through the toy vocoder.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constants::{MEL_FRAMES_PER_TOKEN, TOY_MEL_BINS, TOY_SEMANTIC_VOCAB, TOY_SPEAKER_DIM};
use crate::frames::Frames;
use crate::semantic::{speaker_embedding_for_id, text_to_semantic};
use crate::token_streams::{read_msgrid, write_msgrid, MultiStreamGrid, TokenError};
use crate::vocoder_stream::{toy_vocode_full, ToyVocoder};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("malformed mel file {0}")]
    MelFormat(String),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("invalid corpus spec: {0}")]
    Spec(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    pub n_items: usize,
    pub alphabet: String,
    pub min_chars: usize,
    pub max_chars: usize,
    pub n_speakers: u64,
    pub seed: u64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self {
            n_items: 64,
            alphabet: "abcdefghijklmnopqrstuvwxyz ".to_string(),
            min_chars: 4,
            max_chars: 12,
            n_speakers: 4,
            seed: 0,
        }
    }
}

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.alphabet.is_empty() {
            return Err(CorpusError::Spec("alphabet is empty".into()));
        }
        if self.min_chars == 0 || self.min_chars > self.max_chars {
            return Err(CorpusError::Spec(format!("bad length range {}..={}", self.min_chars, self.max_chars)));
        }
        if self.n_speakers == 0 {
            return Err(CorpusError::Spec("need at least one speaker".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: usize,
    pub text: String,
    pub speaker_id: u64,
    pub speaker: Vec<f64>,
    pub semantic: Vec<u32>,
    pub mel: Frames<f64>,
    pub wave16k: Vec<f64>,
    pub wave24k: Vec<f64>,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bin level of token `s` before speaker coloring, in [0.2, 1.4).
fn token_profile(s: u32, bin: usize) -> f64 {
    let h = mix64(((s as u64) << 8) ^ bin as u64 ^ 0x9e37_79b9_7f4a_7c15);
    0.2 + 1.2 * (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Fixed projection from speaker embedding to per-bin gain.
fn speaker_gains(speaker: &[f64]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a1e);
    (0..TOY_MEL_BINS)
        .map(|_| {
            let dot: f64 = speaker.iter().map(|s| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).sum();
            1.0 + 0.3 * dot.tanh()
        })
        .collect()
}

/// Target mel: each token holds for four 10 ms frames, ramping linearly from
/// the previous token's levels; levels are scaled per bin by the speaker.
pub fn render_target_mel(semantic: &[u32], speaker: &[f64]) -> Frames<f64> {
    let gains = speaker_gains(speaker);
    let mut out = Frames::new(TOY_MEL_BINS);
    let mut prev: Option<Vec<f64>> = None;
    for &s in semantic {
        let cur: Vec<f64> = (0..TOY_MEL_BINS).map(|b| token_profile(s, b) * gains[b]).collect();
        let from = prev.unwrap_or_else(|| cur.clone());
        for j in 0..MEL_FRAMES_PER_TOKEN {
            let a = (j + 1) as f64 / MEL_FRAMES_PER_TOKEN as f64;
            let row: Vec<f64> = from.iter().zip(&cur).map(|(p, c)| p + (c - p) * a).collect();
            out.push(&row);
        }
        prev = Some(cur);
    }
    out
}

pub fn build_item(id: usize, text: &str, speaker_id: u64) -> CorpusItem {
    let speaker = speaker_embedding_for_id(speaker_id, TOY_SPEAKER_DIM);
    let semantic = text_to_semantic(text);
    let mel = render_target_mel(&semantic, &speaker);
    let wave16k = toy_vocode_full(&ToyVocoder::analysis_rate(), &mel).expect("finite mel").samples;
    let wave24k = toy_vocode_full(&ToyVocoder::synthesis(), &mel).expect("finite mel").samples;
    CorpusItem { id, text: text.to_string(), speaker_id, speaker, semantic, mel, wave16k, wave24k }
}

pub fn random_text(rng: &mut impl Rng, spec: &SynthCorpusSpec) -> String {
    let chars: Vec<char> = spec.alphabet.chars().collect();
    let n = rng.gen_range(spec.min_chars..=spec.max_chars);
    (0..n).map(|_| chars[rng.gen_range(0..chars.len())]).collect()
}

pub fn generate_corpus(spec: &SynthCorpusSpec) -> Result<Vec<CorpusItem>, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_items)
        .map(|id| {
            let text = random_text(&mut rng, spec);
            let speaker_id = rng.gen_range(0..spec.n_speakers);
            build_item(id, &text, speaker_id)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub speaker_id: u64,
    pub n_tokens: usize,
    pub text_file: String,
    pub semantic_file: String,
    pub mel_file: String,
    pub wave16k_file: String,
    /// SHA-256 (hex) of each file, in the order above.
    pub sha256: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthCorpusSpec,
    pub items: Vec<ManifestEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const MEL_MAGIC: &[u8; 4] = b"MEL1";

fn mel_bytes(mel: &Frames<f64>) -> Vec<u8> {
    let mut out = MEL_MAGIC.to_vec();
    out.extend((mel.len() as u32).to_le_bytes());
    out.extend((mel.dim() as u32).to_le_bytes());
    for v in mel.as_slice() {
        out.extend(v.to_le_bytes());
    }
    out
}

fn parse_mel(bytes: &[u8], name: &str) -> Result<Frames<f64>, CorpusError> {
    let bad = || CorpusError::MelFormat(name.to_string());
    if bytes.len() < 12 || &bytes[..4] != MEL_MAGIC {
        return Err(bad());
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().map_err(|_| bad())?) as usize;
    let bins = u32::from_le_bytes(bytes[8..12].try_into().map_err(|_| bad())?) as usize;
    let body = &bytes[12..];
    if body.len() != frames * bins * 8 || bins == 0 {
        return Err(bad());
    }
    Ok(Frames::from_vec(bins, body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8"))).collect()))
}

/// Writes text, semantic grid (MSGRID, one stream), mel and 16 kHz WAV per
/// item plus `manifest.json` with checksums.
pub fn write_corpus(dir: &Path, spec: &SynthCorpusSpec, items: &[CorpusItem]) -> Result<Manifest, CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(items.len());
    for item in items {
        let stem = format!("item_{:05}", item.id);
        let grid = MultiStreamGrid::from_rows(TOY_SEMANTIC_VOCAB, vec![item.semantic.clone()])?;
        let mut grid_bytes = Vec::new();
        write_msgrid(&mut grid_bytes, &grid)?;
        let files: [(String, Vec<u8>); 4] = [
            (format!("{stem}.txt"), item.text.as_bytes().to_vec()),
            (format!("{stem}.msgrid"), grid_bytes),
            (format!("{stem}.mel"), mel_bytes(&item.mel)),
            (format!("{stem}.wav"), crate::audio_io::wav_bytes(&item.wave16k, crate::constants::ANALYSIS_RATE_HZ)),
        ];
        let mut sums = Vec::new();
        for (name, bytes) in &files {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(io_err(&p))?;
            sums.push(hex(&Sha256::digest(bytes)));
        }
        let [t, s, m, w] = files.map(|(n, _)| n);
        entries.push(ManifestEntry {
            id: item.id,
            speaker_id: item.speaker_id,
            n_tokens: item.semantic.len(),
            text_file: t,
            semantic_file: s,
            mel_file: m,
            wave16k_file: w,
            sha256: sums,
        });
    }
    let manifest = Manifest { spec: spec.clone(), items: entries };
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_vec_pretty(&manifest)?).map_err(io_err(&p))?;
    Ok(manifest)
}

/// Reads a corpus directory back, verifying every checksum. Waveforms are
/// re-rendered from the stored mel so loaded and generated items agree.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusItem>, CorpusError> {
    let mp = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_reader(BufReader::new(fs::File::open(&mp).map_err(io_err(&mp))?))?;
    let mut items = Vec::with_capacity(manifest.items.len());
    for e in &manifest.items {
        let names = [&e.text_file, &e.semantic_file, &e.mel_file, &e.wave16k_file];
        let mut blobs = Vec::new();
        for (name, sum) in names.iter().zip(&e.sha256) {
            let p = dir.join(name);
            let bytes = fs::read(&p).map_err(io_err(&p))?;
            if &hex(&Sha256::digest(&bytes)) != sum {
                return Err(CorpusError::Checksum(name.to_string()));
            }
            blobs.push(bytes);
        }
        let text = String::from_utf8_lossy(&blobs[0]).into_owned();
        let grid = read_msgrid(&mut blobs[1].as_slice())?;
        let mel = parse_mel(&blobs[2], &e.mel_file)?;
        let item = build_item(e.id, &text, e.speaker_id);
        if grid.row(0) != item.semantic.as_slice() || mel != item.mel {
            return Err(CorpusError::Checksum(format!("{} (content disagrees with text)", e.mel_file)));
        }
        items.push(item);
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_has_four_frames_per_token() {
        let item = build_item(0, "ab", 1);
        assert_eq!(item.semantic.len(), 4);
        assert_eq!(item.mel.len(), 16);
        assert_eq!(item.wave16k.len(), 16 * 160);
        assert_eq!(item.wave24k.len(), 16 * 240);
        // 640 samples at 16 kHz per token, 960 at 24 kHz
        assert_eq!(item.wave16k.len() / item.semantic.len(), 640);
    }

    #[test]
    fn speaker_changes_the_mel() {
        assert_ne!(build_item(0, "abc", 0).mel, build_item(0, "abc", 1).mel);
    }

    #[test]
    fn corpus_is_deterministic() {
        let spec = SynthCorpusSpec { n_items: 5, ..Default::default() };
        assert_eq!(generate_corpus(&spec).unwrap(), generate_corpus(&spec).unwrap());
    }

    #[test]
    fn write_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthCorpusSpec { n_items: 3, seed: 9, ..Default::default() };
        let items = generate_corpus(&spec).unwrap();
        let m = write_corpus(dir.path(), &spec, &items).unwrap();
        assert_eq!(m.items.len(), 3);
        assert_eq!(load_corpus(dir.path()).unwrap(), items);
        // tamper with one mel file
        let p = dir.path().join(&m.items[1].mel_file);
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(CorpusError::Checksum(_))));
    }

    #[test]
    fn empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthCorpusSpec { n_items: 0, ..Default::default() };
        let m = write_corpus(dir.path(), &spec, &generate_corpus(&spec).unwrap()).unwrap();
        assert!(m.items.is_empty());
        assert!(load_corpus(dir.path()).unwrap().is_empty());
    }
}
