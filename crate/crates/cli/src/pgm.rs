//! Plain (ASCII) PGM export for spectrogram matrices — inspectable in
//! tests and terminals without an image decoder.

use crate::error::{io_ctx, CliError, Result};
use melstyle_core::numerics::Array;
use std::io::Write;
use std::path::Path;

/// Renders a matrix as a P2 PGM: width = columns (frames), height = rows
/// (bands), maxval 255, image row 0 = the highest band. Values map
/// linearly from [min, max] onto [0, 255]; a constant matrix maps to 0.
pub fn encode_pgm(mat: &Array) -> Result<String> {
    if mat.shape().len() != 2 {
        return Err(CliError::Core(melstyle_core::CoreError::ShapeMismatch {
            context: "encode_pgm expects a 2-D matrix",
            expected: vec![2],
            got: vec![mat.shape().len()],
        }));
    }
    if mat.data().iter().any(|v| !v.is_finite()) {
        return Err(CliError::Core(melstyle_core::CoreError::NonFinite {
            context: "encode_pgm input".to_string(),
        }));
    }
    let (h, w) = (mat.rows(), mat.cols());
    let min = mat.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = mat.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = format!("P2\n{w} {h}\n255\n");
    for r in (0..h).rev() {
        for c in 0..w {
            let px = if span == 0.0 {
                0
            } else {
                ((mat.at(r, c) - min) / span * 255.0).round() as u32
            };
            if c > 0 {
                out.push(' ');
            }
            out.push_str(&px.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_pgm(mat: &Array, path: &Path) -> Result<()> {
    let text = encode_pgm(mat)?;
    let ctx = path.display().to_string();
    let mut f = io_ctx(std::fs::File::create(path), &ctx)?;
    io_ctx(f.write_all(text.as_bytes()), &ctx)
}

/// Reads a P2 PGM back as a matrix of raw pixel values in image
/// orientation (row 0 = top of the image).
pub fn read_pgm(path: &Path) -> Result<Array> {
    let text = io_ctx(std::fs::read_to_string(path), &path.display().to_string())?;
    let mut tokens = text.split_whitespace();
    let magic = tokens.next().unwrap_or("");
    if magic != "P2" {
        return Err(CliError::Integrity {
            context: format!("not a plain PGM (magic '{magic}')"),
        });
    }
    let mut dims = Vec::with_capacity(3);
    for _ in 0..3 {
        let t = tokens.next().ok_or_else(|| CliError::Integrity {
            context: "truncated PGM header".to_string(),
        })?;
        dims.push(t.parse::<usize>().map_err(|_| CliError::Integrity {
            context: format!("bad PGM header token '{t}'"),
        })?);
    }
    let (w, h, _maxval) = (dims[0], dims[1], dims[2]);
    let mut data = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let t = tokens.next().ok_or_else(|| CliError::Integrity {
            context: "PGM body shorter than its header claims".to_string(),
        })?;
        data.push(t.parse::<f64>().map_err(|_| CliError::Integrity {
            context: format!("bad PGM pixel '{t}'"),
        })?);
    }
    Array::new(vec![h, w], data).map_err(CliError::Core)
}
