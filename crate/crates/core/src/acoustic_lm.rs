//! Multi-stream autoregressive decode loop over delayed acoustic columns.
//!
//! Step `i` feeds `sem[i - d] + ac[i]` to the model (zero semantic term for
//! `i < d` and once the semantic stream is exhausted) and receives one
//! delayed column of `S` ids. The loop starts once `m` semantic tokens are
//! in and afterwards needs one more token per step, until the semantic
//! stream ends. With `N` semantic tokens the aligned grid has `N + d` frames
//! so that the last token is merged into a real step; the delayed grid then
//! has `N + d + S - 1` columns.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constants::{ACOUSTIC_STREAMS, MERGE_DELAY, START_GATE, TOY_ACOUSTIC_CODEBOOK_SIZE, TOY_SEMANTIC_VOCAB};
use crate::frames::Frames;
use crate::nn::Param;
use crate::token_streams::{DelayConfig, GridLayout, MultiStreamGrid, TokenError};

#[derive(Debug, Error, PartialEq)]
pub enum AcousticError {
    #[error("merge config needs d >= 1 and m >= 1 (got d={d}, m={m})")]
    InvalidConfig { d: usize, m: usize },
    #[error("model returned {got} streams, expected {expected}")]
    StreamCount { expected: usize, got: usize },
    #[error("model id {id} on stream {stream} outside codebook of size {size}")]
    IdOutOfRange { stream: usize, id: u32, size: u32 },
    #[error("semantic token {token} outside vocabulary of size {vocab}")]
    SemanticOutOfRange { token: u32, vocab: u32 },
    #[error("embedding dims differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("semantic stream already ended")]
    Ended,
    #[error(transparent)]
    Token(#[from] TokenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeConfig {
    /// Semantic time delay.
    pub d: usize,
    /// Semantic tokens required before the first acoustic step.
    pub m: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { d: MERGE_DELAY, m: START_GATE }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), AcousticError> {
        if self.d == 0 || self.m == 0 {
            return Err(AcousticError::InvalidConfig { d: self.d, m: self.m });
        }
        Ok(())
    }

    /// Aligned frames produced for `n` semantic tokens.
    pub fn aligned_frames(&self, n: usize) -> usize {
        if n == 0 {
            0
        } else {
            n + self.d
        }
    }
}

/// `merged[i] = sem[i - d] + ac[i]`, with missing semantic rows as zero.
pub fn merge_embeddings(sem: &Frames<f64>, ac: &Frames<f64>, d: usize) -> Result<Frames<f64>, AcousticError> {
    if !ac.is_empty() && !sem.is_empty() && sem.dim() != ac.dim() {
        return Err(AcousticError::DimMismatch(sem.dim(), ac.dim()));
    }
    let mut out = ac.clone();
    for i in d..ac.len() {
        if i - d < sem.len() {
            for (o, s) in out.row_mut(i).iter_mut().zip(sem.row(i - d)) {
                *o += *s;
            }
        }
    }
    Ok(out)
}

/// Fixed random embedding tables for the merged step input.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeEmbedder {
    pub semantic: Param<f64>,
    /// `[streams, codebook + 1, dim]`; the last row of each stream embeds the pad.
    pub acoustic: Param<f64>,
    vocab: u32,
    streams: usize,
    codebook_size: u32,
    dim: usize,
}

impl MergeEmbedder {
    pub fn new(vocab: u32, streams: usize, codebook_size: u32, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (dim as f64).sqrt();
        Self {
            semantic: Param::normal("merge.semantic", &[vocab as usize, dim], std, &mut rng),
            acoustic: Param::normal("merge.acoustic", &[streams, codebook_size as usize + 1, dim], std, &mut rng),
            vocab,
            streams,
            codebook_size,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn semantic_row(&self, token: u32) -> Result<&[f64], AcousticError> {
        if token >= self.vocab {
            return Err(AcousticError::SemanticOutOfRange { token, vocab: self.vocab });
        }
        Ok(&self.semantic.data[token as usize * self.dim..(token as usize + 1) * self.dim])
    }

    /// Sum of per-stream embeddings of one delayed column (pads included).
    pub fn acoustic_row(&self, column: &[u32]) -> Vec<f64> {
        let k1 = self.codebook_size as usize + 1;
        let mut out = vec![0.0; self.dim];
        for (r, &id) in column.iter().enumerate().take(self.streams) {
            let id = (id as usize).min(k1 - 1);
            let base = (r * k1 + id) * self.dim;
            for (o, w) in out.iter_mut().zip(&self.acoustic.data[base..base + self.dim]) {
                *o += *w;
            }
        }
        out
    }
}

/// What a model sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub step: usize,
    pub delay: usize,
    /// Semantic tokens with index `<= step - d` (empty while `step < d`).
    pub semantic: &'a [u32],
    /// Delayed columns emitted so far.
    pub history: &'a [Vec<u32>],
    pub merged: &'a [f64],
}

/// Single-function model interface: one delayed column per step.
pub trait AcousticModel {
    fn next_column(&mut self, ctx: &StepContext<'_>) -> Vec<u32>;
}

/// Window of semantic tokens the oracle hashes per aligned frame.
pub const ORACLE_WINDOW: usize = 4;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The oracle id of stream `row` given the semantic window ending at
/// `anchor` (inclusive). Indices before the start hash as a sentinel.
pub fn oracle_id(semantic: &[u32], anchor: isize, row: usize, codebook_size: u32) -> u32 {
    let mut h = mix64(0x5eed ^ row as u64);
    for j in (anchor - ORACLE_WINDOW as isize + 1)..=anchor {
        let tok = if j < 0 { u32::MAX } else { semantic[j as usize] };
        h = mix64(h ^ tok as u64);
    }
    (h % codebook_size as u64) as u32
}

/// Deterministic stand-in for a trained acoustic LM: aligned frame `f`
/// of stream `r` is a hash of the semantic tokens `f-d-3 ..= f-d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleAcousticModel {
    pub streams: usize,
    pub codebook_size: u32,
}

impl OracleAcousticModel {
    pub fn toy() -> Self {
        Self { streams: ACOUSTIC_STREAMS, codebook_size: TOY_ACOUSTIC_CODEBOOK_SIZE }
    }
}

impl AcousticModel for OracleAcousticModel {
    fn next_column(&mut self, ctx: &StepContext<'_>) -> Vec<u32> {
        (0..self.streams)
            .map(|r| {
                // delayed column i, row r holds aligned frame i - r
                let anchor = ctx.step as isize - r as isize - ctx.delay as isize;
                let visible = ctx.semantic.len() as isize;
                let anchor = anchor.min(visible - 1);
                oracle_id(ctx.semantic, anchor, r, self.codebook_size)
            })
            .collect()
    }
}

/// Aligned grid the oracle model must produce for `semantic`.
pub fn oracle_aligned_grid(semantic: &[u32], cfg: &MergeConfig, streams: usize, codebook_size: u32) -> MultiStreamGrid {
    let t = cfg.aligned_frames(semantic.len());
    let rows = (0..streams)
        .map(|r| {
            (0..t)
                .map(|f| {
                    let anchor = (f as isize - cfg.d as isize).min(semantic.len() as isize - 1);
                    oracle_id(semantic, anchor, r, codebook_size)
                })
                .collect()
        })
        .collect();
    MultiStreamGrid::from_rows(codebook_size, rows).expect("oracle ids lie in the codebook")
}

/// Decode-loop state: semantic buffer, emitted delayed columns, step index.
pub struct AcousticLoop<M> {
    cfg: MergeConfig,
    streams: usize,
    codebook_size: u32,
    delay: DelayConfig,
    embedder: MergeEmbedder,
    model: M,
    semantic: Vec<u32>,
    ended: bool,
    columns: Vec<Vec<u32>>,
    merged: Vec<f64>,
}

impl<M: AcousticModel> AcousticLoop<M> {
    pub fn new(cfg: MergeConfig, streams: usize, codebook_size: u32, model: M, embed_seed: u64) -> Result<Self, AcousticError> {
        cfg.validate()?;
        let embedder = MergeEmbedder::new(TOY_SEMANTIC_VOCAB, streams, codebook_size, 16, embed_seed);
        Ok(Self {
            cfg,
            streams,
            codebook_size,
            delay: DelayConfig::for_codebook(codebook_size),
            embedder,
            model,
            semantic: Vec::new(),
            ended: false,
            columns: Vec::new(),
            merged: Vec::new(),
        })
    }

    pub fn config(&self) -> MergeConfig {
        self.cfg
    }

    pub fn semantic_received(&self) -> usize {
        self.semantic.len()
    }

    pub fn steps_taken(&self) -> usize {
        self.columns.len()
    }

    pub fn emitted(&self) -> &[Vec<u32>] {
        &self.columns
    }

    pub fn has_ended(&self) -> bool {
        self.ended
    }

    /// Merged embedding fed to the most recent step.
    pub fn last_merged(&self) -> &[f64] {
        &self.merged
    }

    /// Total delayed columns, known once the semantic stream has ended.
    pub fn total_columns(&self) -> Option<usize> {
        self.ended.then(|| {
            let t = self.cfg.aligned_frames(self.semantic.len());
            if t == 0 {
                0
            } else {
                t + self.streams - 1
            }
        })
    }

    pub fn is_finished(&self) -> bool {
        self.total_columns().is_some_and(|n| self.columns.len() >= n)
    }

    /// Whether the next step may run now.
    pub fn ready(&self) -> bool {
        match self.total_columns() {
            Some(n) => self.columns.len() < n,
            None => self.semantic.len() >= self.cfg.m + self.columns.len(),
        }
    }

    pub fn push_semantic(&mut self, tokens: &[u32]) -> Result<(), AcousticError> {
        if self.ended {
            return Err(AcousticError::Ended);
        }
        for &t in tokens {
            self.embedder.semantic_row(t)?;
        }
        self.semantic.extend_from_slice(tokens);
        Ok(())
    }

    pub fn end_semantic(&mut self) {
        self.ended = true;
    }

    /// Runs one step if ready; returns its delayed column.
    pub fn step(&mut self) -> Result<Option<Vec<u32>>, AcousticError> {
        if !self.ready() {
            return Ok(None);
        }
        let i = self.columns.len();
        let d = self.cfg.d;
        let pad = self.delay.pad_token();
        let prev = self.columns.last().cloned().unwrap_or_else(|| vec![pad; self.streams]);
        let mut merged = self.embedder.acoustic_row(&prev);
        let visible = if i >= d { (i - d + 1).min(self.semantic.len()) } else { 0 };
        if i >= d && i - d < self.semantic.len() {
            for (m, s) in merged.iter_mut().zip(self.embedder.semantic_row(self.semantic[i - d])?) {
                *m += *s;
            }
        }
        let ctx = StepContext { step: i, delay: d, semantic: &self.semantic[..visible], history: &self.columns, merged: &merged };
        let mut col = self.model.next_column(&ctx);
        if col.len() != self.streams {
            return Err(AcousticError::StreamCount { expected: self.streams, got: col.len() });
        }
        if let Some((stream, &id)) = col.iter().enumerate().find(|(_, &id)| id >= self.codebook_size) {
            return Err(AcousticError::IdOutOfRange { stream, id, size: self.codebook_size });
        }
        let t = self.ended.then(|| self.cfg.aligned_frames(self.semantic.len()));
        for (r, id) in col.iter_mut().enumerate() {
            let leading = i < r;
            let trailing = t.is_some_and(|t| i >= r + t);
            if leading || trailing {
                *id = pad;
            }
        }
        self.merged = merged;
        self.columns.push(col.clone());
        Ok(Some(col))
    }

    /// Runs every step that is ready now.
    pub fn run_ready(&mut self) -> Result<Vec<Vec<u32>>, AcousticError> {
        let mut out = Vec::new();
        while let Some(c) = self.step()? {
            out.push(c);
        }
        Ok(out)
    }

    /// Delayed grid emitted so far.
    pub fn delayed_grid(&self) -> Result<MultiStreamGrid, AcousticError> {
        let n = self.columns.len();
        let mut flat = vec![0u32; n * self.streams];
        for (c, col) in self.columns.iter().enumerate() {
            for (r, &id) in col.iter().enumerate() {
                flat[r * n + c] = id;
            }
        }
        Ok(MultiStreamGrid::from_flat(
            self.streams,
            n,
            self.codebook_size,
            GridLayout::Delayed { pad_token: self.delay.pad_token() },
            flat,
        )?)
    }

    pub fn delay_config(&self) -> DelayConfig {
        self.delay
    }
}

/// Feeds `semantic` in the given chunk sizes, then ends the stream, and
/// returns the complete delayed grid.
pub fn run_oracle_chunked(semantic: &[u32], chunks: &[usize], cfg: MergeConfig) -> Result<MultiStreamGrid, AcousticError> {
    let mut lp = AcousticLoop::new(cfg, ACOUSTIC_STREAMS, TOY_ACOUSTIC_CODEBOOK_SIZE, OracleAcousticModel::toy(), 0)?;
    let mut pos = 0;
    let mut sizes = chunks.iter().cycle();
    while pos < semantic.len() {
        let n = (*sizes.next().unwrap_or(&1)).max(1).min(semantic.len() - pos);
        lp.push_semantic(&semantic[pos..pos + n])?;
        pos += n;
        lp.run_ready()?;
    }
    lp.end_semantic();
    lp.run_ready()?;
    lp.delayed_grid()
}
