//! Minimal binary PGM (P5) and PPM (P6) codecs.
//!
//! Only 8-bit rasters are written. The reader accepts any maxval up to 255
//! and tolerates `#` comments in the header.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
}

/// A decoded raster: `channels` is 1 for PGM and 3 for PPM. Samples are
/// interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn encode_pgm(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    debug_assert_eq!(data.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn decode(bytes: &[u8], path: &str) -> Result<Raster, PnmError> {
    let malformed = |reason: &str| PnmError::Malformed {
        path: path.to_string(),
        reason: reason.to_string(),
    };

    let mut cursor = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while cursor < bytes.len() {
            match bytes[cursor] {
                b'#' => {
                    while cursor < bytes.len() && bytes[cursor] != b'\n' {
                        cursor += 1;
                    }
                }
                b if b.is_ascii_whitespace() => cursor += 1,
                _ => break,
            }
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() && bytes[cursor] != b'#' {
            cursor += 1;
        }
        if start == cursor {
            return Err(malformed("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..cursor]).map_err(|_| malformed("non-ascii header"))?);
    }
    // exactly one whitespace byte separates the header from the raster
    if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
        return Err(malformed("missing raster separator"));
    }
    cursor += 1;

    let channels = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        other => return Err(malformed(&format!("unsupported magic {other:?}"))),
    };
    let parse = |s: &str, what: &str| -> Result<usize, PnmError> {
        s.parse::<usize>().map_err(|_| malformed(&format!("bad {what} {s:?}")))
    };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed(&format!("unsupported maxval {maxval}")));
    }
    let expected = width * height * channels;
    let raster = &bytes[cursor..];
    if raster.len() != expected {
        return Err(malformed(&format!(
            "expected {expected} raster bytes, found {}",
            raster.len()
        )));
    }
    let data = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8)
            .collect()
    };
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

pub fn read(path: &Path) -> Result<Raster, PnmError> {
    let bytes = fs::read(path).map_err(|source| PnmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes, &path.display().to_string())
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), PnmError> {
    fs::write(path, bytes).map_err(|source| PnmError::Io {
        path: path.display().to_string(),
        source,
    })
}
