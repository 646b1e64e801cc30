//! The delay pattern: row `r` of a multi-stream grid is shifted right by `r`
//! steps so that one autoregressive step predicts one staggered column.
//!
//! ```text
//!   aligned (S=3, T=4)        delayed (T' = T + S - 1 = 6)
//!   a1 a2 a3 a4               a1 a2 a3 a4 P  P
//!   b1 b2 b3 b4               P  b1 b2 b3 b4 P
//!   c1 c2 c3 c4               P  P  c1 c2 c3 c4
//! ```

use super::{GridLayout, MultiStreamGrid, TokenError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayConfig {
    pad_token: u32,
}

impl DelayConfig {
    /// Pad id equal to the codebook size, the first id outside the codebook.
    pub fn for_codebook(codebook_size: u32) -> Self {
        Self { pad_token: codebook_size }
    }

    pub fn with_pad(pad_token: u32, codebook_size: u32) -> Result<Self, TokenError> {
        if pad_token < codebook_size {
            return Err(TokenError::PadInsideCodebook { pad: pad_token, codebook_size });
        }
        Ok(Self { pad_token })
    }

    pub fn pad_token(&self) -> u32 {
        self.pad_token
    }

    /// Each row is delayed one step relative to the previous one.
    pub fn per_row_delay(&self) -> usize {
        1
    }
}

fn check_pad(cfg: &DelayConfig, grid: &MultiStreamGrid) -> Result<(), TokenError> {
    if cfg.pad_token < grid.codebook_size() {
        return Err(TokenError::PadInsideCodebook { pad: cfg.pad_token, codebook_size: grid.codebook_size() });
    }
    Ok(())
}

/// Staggers `grid` into the delay layout. The output has `T + S - 1` frames.
pub fn apply_delay_pattern(grid: &MultiStreamGrid, cfg: &DelayConfig) -> Result<MultiStreamGrid, TokenError> {
    check_pad(cfg, grid)?;
    let (s, t) = (grid.streams(), grid.frames());
    if let Some(i) = grid.as_flat().iter().position(|&tok| tok == cfg.pad_token) {
        return Err(TokenError::PadInInput { row: i / t, col: i % t });
    }
    let out_t = t + s - 1;
    let mut tokens = vec![cfg.pad_token; s * out_t];
    for r in 0..s {
        tokens[r * out_t + r..r * out_t + r + t].copy_from_slice(grid.row(r));
    }
    MultiStreamGrid::from_flat(s, out_t, grid.codebook_size(), GridLayout::Delayed { pad_token: cfg.pad_token }, tokens)
}

/// Inverts [`apply_delay_pattern`]. Every cell is checked: pads must sit
/// exactly where `apply` would put them and nowhere else. The first offending
/// cell in row-major order is reported.
pub fn remove_delay_pattern(grid: &MultiStreamGrid, cfg: &DelayConfig) -> Result<MultiStreamGrid, TokenError> {
    check_pad(cfg, grid)?;
    let (s, out_t) = (grid.streams(), grid.frames());
    if out_t + 1 < s {
        return Err(TokenError::TooShort { frames: out_t, min: s - 1, streams: s });
    }
    let t = out_t + 1 - s;
    let mut rows = Vec::with_capacity(s);
    for r in 0..s {
        let row = grid.row(r);
        for (c, &tok) in row.iter().enumerate() {
            let expect_pad = c < r || c >= r + t;
            if expect_pad != (tok == cfg.pad_token) {
                return Err(TokenError::MalformedPadLayout { row: r, col: c });
            }
        }
        rows.push(row[r..r + t].to_vec());
    }
    let tokens = rows.concat();
    MultiStreamGrid::from_flat(s, t, grid.codebook_size(), GridLayout::Aligned, tokens)
}

/// Checks that a partially emitted sequence of delayed columns is consistent
/// with some aligned grid. `total_frames` is the aligned length once known
/// (end of stream); before that only leading pads are constrained.
pub fn check_delayed_prefix(
    columns: &[Vec<u32>],
    streams: usize,
    cfg: &DelayConfig,
    total_frames: Option<usize>,
) -> Result<(), TokenError> {
    for col in columns {
        if col.len() != streams {
            return Err(TokenError::ColumnWidth { got: col.len(), expected: streams });
        }
    }
    // Without a known length, the first non-leading pad fixes it.
    let total_frames = total_frames.or_else(|| {
        columns.iter().enumerate().find_map(|(c, col)| {
            col.iter().enumerate().find_map(|(r, &tok)| (c >= r && tok == cfg.pad_token).then(|| c - r))
        })
    });
    for (c, col) in columns.iter().enumerate() {
        for (r, &tok) in col.iter().enumerate() {
            let leading = c < r;
            let trailing = total_frames.is_some_and(|t| c >= r + t);
            let is_pad = tok == cfg.pad_token;
            let pad_expected = leading || trailing;
            if pad_expected != is_pad {
                return Err(TokenError::MalformedPadLayout { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Streaming inverse of the delay pattern: accepts delayed columns one at a
/// time and releases aligned frames as soon as all their rows have arrived.
/// Aligned frame `f` is complete once delayed column `f + S - 1` is in.
#[derive(Debug, Clone)]
pub struct Undelayer {
    streams: usize,
    pad_token: u32,
    /// Partially filled aligned frames, oldest first.
    pending: std::collections::VecDeque<Vec<Option<u32>>>,
    columns_seen: usize,
    frames_released: usize,
}

impl Undelayer {
    pub fn new(streams: usize, cfg: &DelayConfig) -> Self {
        Self {
            streams,
            pad_token: cfg.pad_token,
            pending: Default::default(),
            columns_seen: 0,
            frames_released: 0,
        }
    }

    pub fn frames_released(&self) -> usize {
        self.frames_released
    }

    /// Feeds one delayed column; returns aligned frames completed by it.
    pub fn push(&mut self, column: &[u32]) -> Result<Vec<Vec<u32>>, TokenError> {
        if column.len() != self.streams {
            return Err(TokenError::ColumnWidth { got: column.len(), expected: self.streams });
        }
        let c = self.columns_seen;
        // Row 0 opens a new aligned frame unless the stream is draining.
        if column[0] != self.pad_token {
            self.pending.push_back(vec![None; self.streams]);
        }
        for (r, &tok) in column.iter().enumerate() {
            if c < r {
                if tok != self.pad_token {
                    return Err(TokenError::MalformedPadLayout { row: r, col: c });
                }
                continue;
            }
            let frame = c - r;
            if tok == self.pad_token {
                // Trailing pad: the frame must not exist.
                if frame < self.frames_released + self.pending.len() {
                    return Err(TokenError::MalformedPadLayout { row: r, col: c });
                }
                continue;
            }
            let Some(idx) = frame.checked_sub(self.frames_released) else {
                return Err(TokenError::MalformedPadLayout { row: r, col: c });
            };
            match self.pending.get_mut(idx) {
                Some(slot) => slot[r] = Some(tok),
                None => return Err(TokenError::MalformedPadLayout { row: r, col: c }),
            }
        }
        self.columns_seen += 1;
        let mut done = Vec::new();
        while let Some(front) = self.pending.front() {
            if front.iter().all(Option::is_some) {
                let f = self.pending.pop_front().expect("front exists");
                done.push(f.into_iter().map(|t| t.expect("complete")).collect());
                self.frames_released += 1;
            } else {
                break;
            }
        }
        Ok(done)
    }

    /// True when no partially assembled frames remain.
    pub fn is_drained(&self) -> bool {
        self.pending.is_empty()
    }
}
