//! "MSGRID v1" token grid files.
//!
//! Layout (all little-endian): magic `MSG1`, `u32 S`, `u32 T`, `u32 K`,
//! `u32 pad_token`, then `S*T` `u32` ids row-major. Bit 31 of the pad field is
//! a reserved flag marking a delayed grid; the pad id itself uses bits 0..31.

use std::io::{Read, Write};

use super::{GridLayout, MultiStreamGrid, TokenError};

pub const MSGRID_MAGIC: [u8; 4] = *b"MSG1";
const DELAYED_FLAG: u32 = 1 << 31;

pub fn write_msgrid(w: &mut impl Write, grid: &MultiStreamGrid) -> Result<(), TokenError> {
    let pad_field = match grid.layout() {
        GridLayout::Aligned => grid.codebook_size(),
        GridLayout::Delayed { pad_token } => pad_token | DELAYED_FLAG,
    };
    let mut buf = Vec::with_capacity(20 + 4 * grid.as_flat().len());
    buf.extend_from_slice(&MSGRID_MAGIC);
    for v in [grid.streams() as u32, grid.frames() as u32, grid.codebook_size(), pad_field] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &t in grid.as_flat() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_msgrid(r: &mut impl Read) -> Result<MultiStreamGrid, TokenError> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head).map_err(|e| TokenError::Format(format!("truncated header: {e}")))?;
    if head[..4] != MSGRID_MAGIC {
        return Err(TokenError::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let (s, t, k, pad_field) = (word(0) as usize, word(1) as usize, word(2), word(3));
    let layout = if pad_field & DELAYED_FLAG != 0 {
        GridLayout::Delayed { pad_token: pad_field & !DELAYED_FLAG }
    } else {
        GridLayout::Aligned
    };
    let mut body = vec![0u8; s * t * 4];
    r.read_exact(&mut body).map_err(|e| TokenError::Format(format!("truncated body: {e}")))?;
    let tokens = body.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    MultiStreamGrid::from_flat(s, t, k, layout, tokens)
}
