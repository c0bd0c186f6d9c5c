//! Binary (P5) PGM frames and frame-stack ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples.
    pub samples: Vec<u16>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("PGM header: missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Format(format!("PGM header: {what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PGM size {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::Format("PGM header not terminated by whitespace".into())),
    }
    let wide = maxval > 255;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM size overflows".into()))?;
    let need = count
        .checked_mul(if wide { 2 } else { 1 })
        .ok_or_else(|| Error::Format("PGM size overflows".into()))?;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(Error::Format(format!(
            "PGM raster has {} bytes, expected {need}",
            raster.len()
        )));
    }
    let samples: Vec<u16> = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(bad) = samples.iter().find(|&&s| s as usize > maxval) {
        return Err(Error::Format(format!("PGM sample {bad} exceeds maxval {maxval}")));
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

/// Stacks frames into a `height × width × frames` tensor scaled to `[0, 1]`.
pub fn frames_to_tensor(frames: &[PgmImage]) -> Result<Tensor3> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Format("no frames to convert".into()))?;
    let (h, w) = (first.height, first.width);
    if let Some(f) = frames.iter().find(|f| (f.height, f.width) != (h, w)) {
        return Err(Error::Format(format!(
            "frame size {}x{} differs from {}x{}",
            f.width, f.height, w, h
        )));
    }
    Ok(Tensor3::from_fn((h, w, frames.len()), |i, j, t| {
        let f = &frames[t];
        f.samples[i * w + j] as f64 / f.maxval as f64
    }))
}

/// Reads every `*.pgm` file in `dir`, in file-name order.
pub fn read_frame_dir(dir: impl AsRef<Path>) -> Result<Tensor3> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    let frames = paths
        .iter()
        .map(|p| decode_pgm(&fs::read(p)?))
        .collect::<Result<Vec<_>>>()?;
    frames_to_tensor(&frames)
}
