//! Binary window cache.
//!
//! Layout: `b"DMAE"`, one version byte, then little-endian `u32` count, `n`,
//! `T`; `count * n * T` row-major `f32` values; and the masks as bits packed
//! least-significant-first, padded to a whole byte.

use std::io::{Read, Write};

use crate::data::MtsWindow;
use crate::error::{DmaeError, Result};
use crate::nn::Tensor;

pub const CACHE_MAGIC: &[u8; 4] = b"DMAE";
pub const CACHE_VERSION: u8 = 1;

pub fn write_cache<W: Write>(windows: &[MtsWindow], mut out: W) -> Result<()> {
    let (n, len) = windows.first().map_or((0, 0), |w| (w.num_attributes(), w.len()));
    let io = |e| DmaeError::io("<cache>", e);
    out.write_all(CACHE_MAGIC).map_err(io)?;
    out.write_all(&[CACHE_VERSION]).map_err(io)?;
    for v in [windows.len(), n, len] {
        out.write_all(&(v as u32).to_le_bytes()).map_err(io)?;
    }
    let mut bits = Vec::new();
    for w in windows {
        if w.num_attributes() != n || w.len() != len {
            return Err(DmaeError::dim("cached window", format!("[{n}, {len}]"), format!("{:?}", w.values().shape())));
        }
        for &v in w.values().data() {
            out.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
        bits.extend(w.mask().data().iter().map(|&m| m == 1.0));
    }
    let packed: Vec<u8> = bits
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |b, (i, &on)| b | ((on as u8) << i)))
        .collect();
    out.write_all(&packed).map_err(io)?;
    Ok(())
}

pub fn read_cache<R: Read>(mut input: R) -> Result<Vec<MtsWindow>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| DmaeError::io("<cache>", e))?;
    if bytes.len() < 5 || &bytes[..4] != CACHE_MAGIC {
        return Err(DmaeError::BadMagic("window cache".into()));
    }
    if bytes[4] != CACHE_VERSION {
        return Err(DmaeError::VersionMismatch { found: bytes[4] as u32, expected: CACHE_VERSION as u32 });
    }
    let header = bytes.get(5..17).ok_or_else(|| DmaeError::Truncated("cache header".into()))?;
    let u = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (count, n, len) = (u(0), u(1), u(2));
    let cells = count * n * len;
    let values_end = 17 + 4 * cells;
    let mask_end = values_end + cells.div_ceil(8);
    if bytes.len() < mask_end {
        return Err(DmaeError::Truncated("window cache".into()));
    }
    if bytes.len() > mask_end {
        return Err(DmaeError::Inconsistent("trailing bytes after window cache".into()));
    }
    let values = &bytes[17..values_end];
    let bits = &bytes[values_end..mask_end];
    (0..count)
        .map(|w| {
            let base = w * n * len;
            let v: Vec<f64> = (base..base + n * len)
                .map(|i| f32::from_le_bytes(values[4 * i..4 * i + 4].try_into().unwrap()) as f64)
                .collect();
            let m: Vec<f64> = (base..base + n * len).map(|i| ((bits[i / 8] >> (i % 8)) & 1) as f64).collect();
            MtsWindow::new(Tensor::from_vec(&[n, len], v)?, Tensor::from_vec(&[n, len], m)?, w)
        })
        .collect()
}
