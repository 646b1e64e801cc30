use super::TokenError;
use crate::constants::FRAMESHIFT_MS;

/// Whether a grid holds plain per-frame columns or the staggered delay layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridLayout {
    Aligned,
    Delayed { pad_token: u32 },
}

/// S x T grid of token ids, one row per codebook stream, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiStreamGrid {
    streams: usize,
    frames: usize,
    codebook_size: u32,
    layout: GridLayout,
    tokens: Vec<u32>,
}

impl MultiStreamGrid {
    /// Builds an aligned grid from rows, validating ids against `codebook_size`.
    pub fn from_rows(codebook_size: u32, rows: Vec<Vec<u32>>) -> Result<Self, TokenError> {
        if rows.is_empty() {
            return Err(TokenError::NoStreams);
        }
        let frames = rows[0].len();
        let streams = rows.len();
        let mut tokens = Vec::with_capacity(streams * frames);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != frames {
                return Err(TokenError::RaggedRows { row: r, len: row.len(), expected: frames });
            }
            tokens.extend(row);
        }
        Self::from_flat(streams, frames, codebook_size, GridLayout::Aligned, tokens)
    }

    /// Builds a grid from a row-major buffer. Delayed grids may contain their pad id.
    pub fn from_flat(
        streams: usize,
        frames: usize,
        codebook_size: u32,
        layout: GridLayout,
        tokens: Vec<u32>,
    ) -> Result<Self, TokenError> {
        if streams == 0 {
            return Err(TokenError::NoStreams);
        }
        assert_eq!(tokens.len(), streams * frames, "buffer size must be streams * frames");
        let pad = match layout {
            GridLayout::Aligned => None,
            GridLayout::Delayed { pad_token } => {
                if pad_token < codebook_size {
                    return Err(TokenError::PadInsideCodebook { pad: pad_token, codebook_size });
                }
                Some(pad_token)
            }
        };
        for (i, &t) in tokens.iter().enumerate() {
            if t >= codebook_size && Some(t) != pad {
                return Err(TokenError::TokenOutOfRange {
                    row: i / frames.max(1),
                    col: i % frames.max(1),
                    token: t,
                    codebook_size,
                });
            }
        }
        Ok(Self { streams, frames, codebook_size, layout, tokens })
    }

    /// Empty aligned grid with `streams` rows.
    pub fn empty(streams: usize, codebook_size: u32) -> Self {
        Self { streams: streams.max(1), frames: 0, codebook_size, layout: GridLayout::Aligned, tokens: Vec::new() }
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    pub fn layout(&self) -> GridLayout {
        self.layout
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.tokens[row * self.frames + col]
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.tokens[row * self.frames..(row + 1) * self.frames]
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        (0..self.streams).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn column(&self, col: usize) -> Vec<u32> {
        (0..self.streams).map(|r| self.get(r, col)).collect()
    }

    pub fn as_flat(&self) -> &[u32] {
        &self.tokens
    }

    /// Appends one column (one frame across all streams) to an aligned grid.
    pub fn push_column(&mut self, column: &[u32]) -> Result<(), TokenError> {
        if column.len() != self.streams {
            return Err(TokenError::ColumnWidth { got: column.len(), expected: self.streams });
        }
        if let Some((r, &t)) = column.iter().enumerate().find(|(_, &t)| t >= self.codebook_size) {
            return Err(TokenError::TokenOutOfRange { row: r, col: self.frames, token: t, codebook_size: self.codebook_size });
        }
        let mut rows = self.rows();
        for (row, &t) in rows.iter_mut().zip(column) {
            row.push(t);
        }
        self.frames += 1;
        self.tokens = rows.concat();
        Ok(())
    }
}

/// A single-stream semantic token sequence at the 40 ms frameshift.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SemanticSequence {
    pub tokens: Vec<u32>,
}

impl SemanticSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self { tokens }
    }

    pub fn frameshift_ms(&self) -> u32 {
        FRAMESHIFT_MS
    }

    pub fn duration_ms(&self) -> u64 {
        self.tokens.len() as u64 * FRAMESHIFT_MS as u64
    }

    pub fn validate(&self, codebook_size: u32) -> Result<(), TokenError> {
        match self.tokens.iter().position(|&t| t >= codebook_size) {
            Some(col) => Err(TokenError::TokenOutOfRange { row: 0, col, token: self.tokens[col], codebook_size }),
            None => Ok(()),
        }
    }

    /// Semantic sequences are stored as single-stream grids.
    pub fn to_grid(&self, codebook_size: u32) -> Result<MultiStreamGrid, TokenError> {
        MultiStreamGrid::from_rows(codebook_size, vec![self.tokens.clone()])
    }
}
